//! A lock-free size-class allocator in the style of LRMalloc, with
//! persistent allocations whose addresses stay readable after they are
//! freed, and an optimistic-access memory reclamation layer built on them.
//!
//! ```
//! use oamalloc::Allocator;
//!
//! let alloc = Allocator::global();
//! let p = alloc.palloc(64).unwrap();
//! unsafe { alloc.free(p) };
//! // Still safe to read, though the contents are unspecified.
//! let _ = unsafe { std::ptr::read_volatile(p.as_ptr()) };
//! ```

pub mod alloc_api;
pub mod error;
pub mod heap;
pub mod lockfree;
pub mod oa_reclaim;
pub mod pagemap;
pub mod size_classes;
pub mod thread_cache;
pub mod vm_backend;

pub use alloc_api::{Allocator, AllocatorConfig};
pub use error::AllocError;
pub use size_classes::{ClassIndex, SizeClassTable, SizeRequest};
pub use vm_backend::BackendKind;
pub use lockfree::{ConcurrentSet, OaHashMap, OaList};
pub use oa_reclaim::{Domain, LocalHandle, ProtectResult, ReclaimConfig, ReclaimScheme};

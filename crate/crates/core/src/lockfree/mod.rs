//! Lock-free sets built on optimistic-access reclamation. Nodes are
//! allocated with `palloc`, so traversals may read nodes that have already
//! been freed.

pub mod hashmap;
pub mod list;

use std::ptr::NonNull;
use std::sync::Arc;

pub use hashmap::OaHashMap;
pub use list::OaList;

use crate::alloc_api::Allocator;
use crate::error::AllocError;
use crate::oa_reclaim::{Domain, ReclaimConfig};

/// Operations shared by the list and the hash map.
pub trait ConcurrentSet: Send + Sync {
    fn search(&self, key: u64) -> bool;
    /// False if the key was already present.
    fn insert(&self, key: u64, value: u64) -> Result<bool, AllocError>;
    /// False if the key was absent.
    fn remove(&self, key: u64) -> bool;
    fn domain(&self) -> &Arc<Domain>;
    /// Present keys in ascending order. Only exact when quiescent.
    fn keys(&self) -> Vec<u64>;

    fn len(&self) -> usize {
        self.keys().len()
    }
}

/// A reclamation domain that frees nodes back into `alloc`.
pub fn allocator_domain(config: ReclaimConfig, alloc: &'static Allocator) -> Result<Arc<Domain>, AllocError> {
    Domain::new(
        config,
        Box::new(move |addr| {
            // SAFETY: domains only receive retired nodes allocated from `alloc`.
            unsafe { alloc.free(NonNull::new_unchecked(addr as *mut u8)) }
        }),
    )
}

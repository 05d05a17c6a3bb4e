//! Allocator facade: `malloc`, `palloc` and `free` over a heap and
//! per-thread caches, plus C-ABI entry points bound to the process-wide
//! allocator.

use std::cell::RefCell;
use std::ffi::c_void;
use std::ptr::{self, NonNull};
use std::sync::OnceLock;

use crate::error::{fatal, AllocError};
use crate::heap::{Heap, SlotClass};
use crate::size_classes::{SizeClassTable, SizeRequest, SUPERBLOCK_SIZE};
use crate::thread_cache::{ThreadCache, DEFAULT_CAPACITY};
use crate::vm_backend::{BackendKind, VmBackend};

#[derive(Clone, Debug)]
pub struct AllocatorConfig {
    pub backend: BackendKind,
    /// Length of the shared region mapped over neutralized persistent
    /// superblocks under [`BackendKind::SharedRemap`].
    pub shared_region_len: usize,
    pub cache_capacity: usize,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        AllocatorConfig {
            backend: BackendKind::default(),
            shared_region_len: SUPERBLOCK_SIZE,
            cache_capacity: DEFAULT_CAPACITY,
        }
    }
}

impl AllocatorConfig {
    pub fn with_backend(backend: BackendKind) -> Self {
        AllocatorConfig { backend, ..Self::default() }
    }
}

#[derive(Debug)]
pub struct Allocator {
    heap: Heap,
    cache_capacity: usize,
}

struct CacheEntry {
    owner: &'static Allocator,
    cache: ThreadCache,
}

struct LocalCaches(Vec<CacheEntry>);

impl Drop for LocalCaches {
    fn drop(&mut self) {
        for entry in &mut self.0 {
            entry.cache.drain(&entry.owner.heap);
        }
    }
}

thread_local! {
    static LOCAL: RefCell<LocalCaches> = const { RefCell::new(LocalCaches(Vec::new())) };
}

static GLOBAL: OnceLock<&'static Allocator> = OnceLock::new();
static PER_BACKEND: [OnceLock<&'static Allocator>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];

impl Allocator {
    /// Creates an allocator with its own heap. Allocators live for the rest
    /// of the process because freed persistent blocks must stay readable.
    pub fn new(config: AllocatorConfig) -> Result<&'static Allocator, AllocError> {
        if config.cache_capacity == 0 {
            return Err(AllocError::InvalidConfig("cache capacity must be positive".into()));
        }
        let vm = VmBackend::new(config.backend, config.shared_region_len)?;
        let heap = Heap::new(SizeClassTable::standard(), vm);
        Ok(Box::leak(Box::new(Allocator { heap, cache_capacity: config.cache_capacity })))
    }

    /// The process-wide allocator, with the backend chosen by
    /// `OAMALLOC_BACKEND` on first use.
    pub fn global() -> &'static Allocator {
        GLOBAL.get_or_init(|| {
            let kind = BackendKind::from_env().unwrap_or_else(|e| {
                eprintln!("oamalloc: {e}; using {}", BackendKind::KeepResident);
                BackendKind::KeepResident
            });
            Self::for_backend(kind).unwrap_or_else(|e| fatal(format_args!("oamalloc: {e}")))
        })
    }

    /// One shared allocator per backend kind.
    pub fn for_backend(kind: BackendKind) -> Result<&'static Allocator, AllocError> {
        let cell = &PER_BACKEND[kind as usize];
        if let Some(a) = cell.get() {
            return Ok(a);
        }
        let fresh = Self::new(AllocatorConfig::with_backend(kind))?;
        // A racing initializer may win; the loser's empty heap is leaked.
        Ok(cell.get_or_init(|| fresh))
    }

    pub fn heap(&self) -> &Heap {
        &self.heap
    }

    pub fn backend(&self) -> BackendKind {
        self.heap.backend()
    }

    /// Runs `f` on this thread's cache for this allocator. Falls back to a
    /// temporary cache that is drained afterwards when the thread-local is
    /// unavailable (thread teardown) or already borrowed.
    pub fn with_thread_cache<R>(&'static self, f: impl FnOnce(&mut ThreadCache, &Heap) -> R) -> R {
        let mut f = Some(f);
        let fast = LOCAL.try_with(|local| {
            let Ok(mut local) = local.try_borrow_mut() else {
                return None;
            };
            let idx = match local.0.iter().position(|e| ptr::eq(e.owner, self)) {
                Some(i) => i,
                None => {
                    local.0.push(CacheEntry {
                        owner: self,
                        cache: ThreadCache::for_heap(&self.heap, self.cache_capacity),
                    });
                    local.0.len() - 1
                }
            };
            let f = f.take().expect("closure already used");
            Some(f(&mut local.0[idx].cache, &self.heap))
        });
        match fast {
            Ok(Some(r)) => r,
            _ => {
                let mut cache = ThreadCache::for_heap(&self.heap, self.cache_capacity);
                let f = f.take().expect("closure already used");
                let r = f(&mut cache, &self.heap);
                cache.drain(&self.heap);
                r
            }
        }
    }

    fn alloc(&'static self, size: usize, persistent: bool) -> Result<NonNull<u8>, AllocError> {
        let addr = match self.heap.table().class_for_size(size)? {
            SizeRequest::Class(class) => self.with_thread_cache(|tc, heap| tc.alloc(heap, class, persistent))?,
            SizeRequest::Large if persistent => return Err(AllocError::UnsupportedSize(size)),
            SizeRequest::Large => self.heap.alloc_large(size)?,
        };
        Ok(NonNull::new(addr as *mut u8).expect("allocator returned null"))
    }

    pub fn malloc(&'static self, size: usize) -> Result<NonNull<u8>, AllocError> {
        self.alloc(size, false)
    }

    /// Allocates a block whose address stays readable for the life of the
    /// process, including after it is freed. Limited to size-class sizes.
    pub fn palloc(&'static self, size: usize) -> Result<NonNull<u8>, AllocError> {
        self.alloc(size, true)
    }

    /// Frees a block from [`malloc`](Self::malloc) or [`palloc`](Self::palloc).
    ///
    /// # Safety
    /// `ptr` must have been returned by this allocator and not freed since.
    pub unsafe fn free(&'static self, ptr: NonNull<u8>) {
        let addr = ptr.as_ptr() as usize;
        match self.heap.pagemap().lookup(addr) {
            None => fatal(format_args!("invalid free of {addr:#x}: not allocated here")),
            Some(info) if info.class == SlotClass::Large => self.heap.free_large(info.descriptor, addr),
            Some(_) => self.with_thread_cache(|tc, heap| tc.free(heap, addr)),
        }
    }

    /// Usable size of a live allocation, if `ptr` belongs to this allocator.
    pub fn usable_size(&self, ptr: NonNull<u8>) -> Option<usize> {
        let info = self.heap.pagemap().lookup(ptr.as_ptr() as usize)?;
        Some(match info.class {
            SlotClass::Large => info.descriptor.large_len(),
            SlotClass::Class(c) => self.heap.table().block_size(c).ok()?,
        })
    }

    /// Returns every block cached by the calling thread to the heap.
    pub fn flush_thread_cache(&'static self) {
        self.with_thread_cache(|tc, heap| tc.drain(heap));
    }
}

/// Allocates `size` bytes from the process-wide allocator; null on failure.
#[no_mangle]
pub extern "C" fn malloc_(size: usize) -> *mut c_void {
    Allocator::global().malloc(size).map_or(ptr::null_mut(), |p| p.as_ptr().cast())
}

/// Persistent allocation from the process-wide allocator; null on failure.
#[no_mangle]
pub extern "C" fn palloc(size: usize) -> *mut c_void {
    Allocator::global().palloc(size).map_or(ptr::null_mut(), |p| p.as_ptr().cast())
}

/// # Safety
/// `ptr` must be null or a live pointer from [`malloc_`] or [`palloc`].
#[no_mangle]
pub unsafe extern "C" fn free_(ptr: *mut c_void) {
    if let Some(p) = NonNull::new(ptr.cast::<u8>()) {
        Allocator::global().free(p);
    }
}

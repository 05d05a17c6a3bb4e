//! Harris-Michael sorted linked list under optimistic access.
//!
//! The bucket functions operate on a bare head word so the hash map can reuse
//! them for its buckets. Every hop reads the node, then checks for a warning
//! before using anything it read; a warning restarts from the head.

use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use super::{allocator_domain, ConcurrentSet};
use crate::alloc_api::Allocator;
use crate::error::AllocError;
use crate::oa_reclaim::{Domain, LocalHandle, ReclaimConfig, ReclaimScheme};

const MARK: usize = 1;

const PREV: usize = 0;
const CURR: usize = 1;
const NEXT: usize = 2;

#[repr(C)]
pub(crate) struct Node {
    key: AtomicU64,
    value: AtomicU64,
    next: AtomicUsize,
}

pub(crate) const NODE_SIZE: usize = std::mem::size_of::<Node>();

/// # Safety
/// `addr` must point into memory from `palloc` (readable forever).
unsafe fn node<'a>(addr: usize) -> &'a Node {
    &*(addr as *const Node)
}

struct Position<'a> {
    prev: &'a AtomicUsize,
    /// Node owning `prev`, or 0 for the bucket head.
    prev_node: usize,
    curr: usize,
    next: usize,
    found: bool,
}

/// Locates the first unmarked node with key ≥ `key`, unlinking marked nodes
/// on the way.
fn find<'a>(head: &'a AtomicUsize, h: &LocalHandle, key: u64) -> Position<'a> {
    'restart: loop {
        let mut prev = head;
        let mut prev_node = 0;
        let mut curr = head.load(Ordering::Acquire);
        loop {
            if curr == 0 {
                return Position { prev, prev_node, curr, next: 0, found: false };
            }
            // SAFETY: nodes are persistent allocations; the values read are
            // only used once the warning check below has passed.
            let n = unsafe { node(curr) };
            let next = n.next.load(Ordering::Acquire);
            let ckey = n.key.load(Ordering::Relaxed);
            if h.check_warning() {
                h.note_restart();
                continue 'restart;
            }
            if next & MARK != 0 {
                let succ = next & !MARK;
                h.set_hazard(PREV, prev_node);
                h.set_hazard(CURR, curr);
                h.set_hazard(NEXT, succ);
                if !h.validate().is_valid()
                    || prev.compare_exchange(curr, succ, Ordering::AcqRel, Ordering::Relaxed).is_err()
                {
                    h.note_restart();
                    continue 'restart;
                }
                curr = succ;
                continue;
            }
            if ckey >= key {
                return Position { prev, prev_node, curr, next, found: ckey == key };
            }
            prev = &n.next;
            prev_node = curr;
            curr = next;
        }
    }
}

pub(crate) fn search(head: &AtomicUsize, h: &LocalHandle, key: u64) -> bool {
    'restart: loop {
        let mut curr = head.load(Ordering::Acquire);
        loop {
            if curr == 0 {
                return false;
            }
            // SAFETY: as in `find`.
            let n = unsafe { node(curr) };
            let next = n.next.load(Ordering::Acquire);
            let ckey = n.key.load(Ordering::Relaxed);
            if h.check_warning() {
                h.note_restart();
                continue 'restart;
            }
            if ckey > key {
                return false;
            }
            if ckey == key && next & MARK == 0 {
                return true;
            }
            curr = next & !MARK;
        }
    }
}

pub(crate) fn insert(
    head: &AtomicUsize,
    h: &LocalHandle,
    alloc: &'static Allocator,
    key: u64,
    value: u64,
) -> Result<bool, AllocError> {
    let fresh = alloc.palloc(NODE_SIZE)?.as_ptr() as usize;
    // SAFETY: freshly allocated and private to us.
    let n = unsafe { node(fresh) };
    n.key.store(key, Ordering::Relaxed);
    n.value.store(value, Ordering::Relaxed);
    loop {
        let pos = find(head, h, key);
        if pos.found {
            h.unprotect_all();
            // Never published, so no reclamation is needed.
            unsafe { alloc.free(NonNull::new_unchecked(fresh as *mut u8)) };
            return Ok(false);
        }
        n.next.store(pos.curr, Ordering::Relaxed);
        h.set_hazard(PREV, pos.prev_node);
        h.set_hazard(CURR, pos.curr);
        if !h.validate().is_valid() {
            h.note_restart();
            continue;
        }
        if pos.prev.compare_exchange(pos.curr, fresh, Ordering::AcqRel, Ordering::Relaxed).is_ok() {
            h.unprotect_all();
            return Ok(true);
        }
    }
}

pub(crate) fn remove(head: &AtomicUsize, h: &LocalHandle, key: u64) -> bool {
    loop {
        let pos = find(head, h, key);
        if !pos.found {
            h.unprotect_all();
            return false;
        }
        h.set_hazard(PREV, pos.prev_node);
        h.set_hazard(CURR, pos.curr);
        h.set_hazard(NEXT, pos.next);
        if !h.validate().is_valid() {
            h.note_restart();
            continue;
        }
        // SAFETY: protected by a validated hazard.
        let n = unsafe { node(pos.curr) };
        if n.next
            .compare_exchange(pos.next, pos.next | MARK, Ordering::AcqRel, Ordering::Relaxed)
            .is_err()
        {
            continue;
        }
        if pos.prev.compare_exchange(pos.curr, pos.next, Ordering::AcqRel, Ordering::Relaxed).is_err() {
            // Someone else changed prev; a full search unlinks our node.
            find(head, h, key);
        }
        h.unprotect_all();
        if h.domain().scheme() != ReclaimScheme::None {
            h.retire(pos.curr);
        }
        return true;
    }
}

/// Keys in list order. Only meaningful while no operation is in flight.
pub(crate) fn keys(head: &AtomicUsize) -> Vec<u64> {
    let mut out = Vec::new();
    let mut curr = head.load(Ordering::Acquire);
    while curr != 0 {
        // SAFETY: quiescent, so every reachable node is live.
        let n = unsafe { node(curr) };
        let next = n.next.load(Ordering::Acquire);
        if next & MARK == 0 {
            out.push(n.key.load(Ordering::Relaxed));
        }
        curr = next & !MARK;
    }
    out
}

/// Frees every node reachable from `head`. Requires exclusive access.
pub(crate) fn free_all(head: &AtomicUsize, alloc: &'static Allocator) {
    let mut curr = head.swap(0, Ordering::AcqRel);
    while curr != 0 {
        // SAFETY: exclusive access; nodes are live until freed here.
        let next = unsafe { node(curr) }.next.load(Ordering::Relaxed) & !MARK;
        unsafe { alloc.free(NonNull::new_unchecked(curr as *mut u8)) };
        curr = next;
    }
}

/// A lock-free sorted set of integer keys.
pub struct OaList {
    head: AtomicUsize,
    domain: Arc<Domain>,
    alloc: &'static Allocator,
}

impl std::fmt::Debug for OaList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OaList").field("scheme", &self.domain.scheme()).finish()
    }
}

impl OaList {
    /// `domain` must free nodes into `alloc`.
    pub fn with_domain(domain: Arc<Domain>, alloc: &'static Allocator) -> Self {
        OaList { head: AtomicUsize::new(0), domain, alloc }
    }

    pub fn new(config: ReclaimConfig, alloc: &'static Allocator) -> Result<Self, AllocError> {
        Ok(Self::with_domain(allocator_domain(config, alloc)?, alloc))
    }

    pub fn search_with(&self, h: &LocalHandle, key: u64) -> bool {
        search(&self.head, h, key)
    }

    pub fn insert_with(&self, h: &LocalHandle, key: u64, value: u64) -> Result<bool, AllocError> {
        insert(&self.head, h, self.alloc, key, value)
    }

    pub fn remove_with(&self, h: &LocalHandle, key: u64) -> bool {
        remove(&self.head, h, key)
    }
}

impl ConcurrentSet for OaList {
    fn search(&self, key: u64) -> bool {
        self.domain.with_local(|h| self.search_with(h, key))
    }

    fn insert(&self, key: u64, value: u64) -> Result<bool, AllocError> {
        self.domain.with_local(|h| self.insert_with(h, key, value))
    }

    fn remove(&self, key: u64) -> bool {
        self.domain.with_local(|h| self.remove_with(h, key))
    }

    fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    fn keys(&self) -> Vec<u64> {
        keys(&self.head)
    }
}

impl Drop for OaList {
    fn drop(&mut self) {
        free_all(&self.head, self.alloc);
    }
}

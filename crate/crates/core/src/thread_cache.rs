//! Per-thread stacks of free blocks.

use crate::error::{fatal, AllocError};
use crate::heap::{Heap, SlotClass};
use crate::size_classes::ClassIndex;

pub const DEFAULT_CAPACITY: usize = 64;

/// Bounded stacks of free blocks, one per (class, persistence) pair.
///
/// A cache must only be used by one thread at a time; it may move between
/// threads while idle.
#[derive(Debug)]
pub struct ThreadCache {
    stacks: Box<[Vec<usize>]>,
    capacity: usize,
    scratch: Vec<usize>,
    fills: u64,
    flushes: u64,
}

fn slot(class: ClassIndex, persistent: bool) -> usize {
    class.index() * 2 + persistent as usize
}

impl ThreadCache {
    pub fn new(classes: usize, capacity: usize) -> Self {
        assert!(capacity >= 1, "cache capacity must be positive");
        ThreadCache {
            stacks: (0..classes * 2).map(|_| Vec::with_capacity(capacity)).collect(),
            capacity,
            scratch: Vec::with_capacity(capacity),
            fills: 0,
            flushes: 0,
        }
    }

    pub fn for_heap(heap: &Heap, capacity: usize) -> Self {
        Self::new(heap.table().len(), capacity)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Pops a block, filling the stack from `heap` first if it is empty.
    pub fn alloc(&mut self, heap: &Heap, class: ClassIndex, persistent: bool) -> Result<usize, AllocError> {
        let stack = &mut self.stacks[slot(class, persistent)];
        if let Some(block) = stack.pop() {
            return Ok(block);
        }
        self.fills += 1;
        heap.fill_cache(class, persistent, stack, self.capacity)?;
        Ok(stack.pop().expect("fill_cache returned no blocks"))
    }

    /// Pushes a block resolved through the pagemap. Large allocations are
    /// returned to the OS immediately.
    pub fn free(&mut self, heap: &Heap, addr: usize) {
        let Some(info) = heap.pagemap().lookup(addr) else {
            fatal(format_args!("invalid free of {addr:#x}: not allocated here"));
        };
        match info.class {
            SlotClass::Large => heap.free_large(info.descriptor, addr),
            SlotClass::Class(class) => {
                heap.block_index(info.descriptor, addr);
                self.push(heap, addr, class, info.descriptor.is_persistent());
            }
        }
    }

    fn push(&mut self, heap: &Heap, addr: usize, class: ClassIndex, persistent: bool) {
        let stack = &mut self.stacks[slot(class, persistent)];
        if stack.len() >= self.capacity {
            let half = (self.capacity / 2).max(1);
            self.scratch.extend(stack.drain(..half));
            heap.flush_cache(&mut self.scratch);
            self.scratch.clear();
            self.flushes += 1;
        }
        stack.push(addr);
    }

    /// Returns every cached block to the heap.
    pub fn drain(&mut self, heap: &Heap) {
        for stack in self.stacks.iter_mut() {
            if !stack.is_empty() {
                heap.flush_cache(stack);
                stack.clear();
                self.flushes += 1;
            }
        }
    }

    pub fn len(&self, class: ClassIndex, persistent: bool) -> usize {
        self.stacks[slot(class, persistent)].len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacks.iter().all(Vec::is_empty)
    }

    pub fn cached_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.stacks.iter().flatten().copied()
    }

    /// Heap interactions so far: (fills, flushes).
    pub fn heap_calls(&self) -> (u64, u64) {
        (self.fills, self.flushes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::size_classes::{SizeClassTable, SUPERBLOCK_SIZE};
    use crate::vm_backend::{BackendKind, VmBackend};

    fn heap() -> Heap {
        Heap::new(
            SizeClassTable::standard(),
            VmBackend::new(BackendKind::KeepResident, SUPERBLOCK_SIZE).unwrap(),
        )
    }

    fn c64() -> ClassIndex {
        SizeClassTable::standard().class_index(4).unwrap()
    }

    #[test]
    fn pop_without_heap_traffic() {
        let h = heap();
        let mut tc = ThreadCache::for_heap(&h, 64);
        let first = tc.alloc(&h, c64(), false).unwrap();
        assert_eq!(tc.heap_calls(), (1, 0));
        assert_eq!(tc.len(c64(), false), 63);
        let second = tc.alloc(&h, c64(), false).unwrap();
        assert_ne!(first, second);
        assert_eq!(tc.heap_calls(), (1, 0));
        assert_eq!(tc.len(c64(), false), 62);
    }

    #[test]
    fn overflow_flushes_half() {
        let h = heap();
        let mut tc = ThreadCache::for_heap(&h, 8);
        let blocks: Vec<_> = (0..9).map(|_| tc.alloc(&h, c64(), false).unwrap()).collect();
        assert_eq!(tc.len(c64(), false), 7);
        let mut fresh = Vec::new();
        for b in blocks {
            tc.free(&h, b);
            fresh.push(tc.len(c64(), false));
        }
        assert_eq!(fresh, [8, 5, 6, 7, 8, 5, 6, 7, 8]);
        assert_eq!(tc.heap_calls(), (2, 2));
    }

    #[test]
    fn boundary_alternation_has_hysteresis() {
        let h = heap();
        let mut tc = ThreadCache::for_heap(&h, 8);
        // Fill the stack exactly to capacity.
        let held: Vec<_> = (0..8).map(|_| tc.alloc(&h, c64(), false).unwrap()).collect();
        for &b in &held {
            tc.free(&h, b);
        }
        assert_eq!(tc.len(c64(), false), 8);
        let before = tc.heap_calls();
        let extra = h.new_superblock(c64(), false).unwrap().base();
        tc.free(&h, extra);
        let after_first = tc.heap_calls();
        assert_eq!(after_first.1, before.1 + 1);
        for _ in 0..1000 {
            let b = tc.alloc(&h, c64(), false).unwrap();
            tc.free(&h, b);
        }
        assert_eq!(tc.heap_calls(), after_first);
    }

    #[test]
    fn persistent_and_regular_use_separate_stacks() {
        let h = heap();
        let mut tc = ThreadCache::for_heap(&h, 16);
        let p = tc.alloc(&h, c64(), true).unwrap();
        let r = tc.alloc(&h, c64(), false).unwrap();
        assert_ne!(p & !(SUPERBLOCK_SIZE - 1), r & !(SUPERBLOCK_SIZE - 1));
        tc.free(&h, p);
        tc.free(&h, r);
        assert_eq!(tc.len(c64(), true), 16);
        assert_eq!(tc.len(c64(), false), 16);
    }

    #[test]
    fn drain_empties_and_restores_counts() {
        let h = heap();
        let mut tc = ThreadCache::for_heap(&h, 64);
        let b = tc.alloc(&h, c64(), false).unwrap();
        let d = h.pagemap().lookup(b).unwrap().descriptor;
        tc.free(&h, b);
        tc.drain(&h);
        assert!(tc.is_empty());
        assert_eq!(d.anchor().count, d.block_count());
        tc.drain(&h);
        assert!(tc.is_empty());
    }
}

//! Superblock management.
//!
//! Free blocks inside a superblock form a list threaded through the blocks
//! themselves. A free block's first word stores `next - (index + 1)`, so
//! freshly mapped (zeroed) memory already encodes the list `0 -> 1 -> ... ->
//! block_count` and carving a new superblock touches none of its pages.
//!
//! Filling a cache from a partial superblock first reserves blocks by
//! lowering the anchor count and only then walks the list. While a
//! reservation is outstanding the superblock cannot become empty, so those
//! reads always hit mapped memory.
//!
//! A superblock that becomes empty may still sit on its partial list. Its
//! memory is released (or neutralized) right away by the thread that emptied
//! it, but the descriptor is only recycled once that thread and the thread
//! that pops it off the partial list have both voted.

mod anchor;
mod descriptor;
mod stack;

use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU64, AtomicUsize, Ordering};

pub use anchor::{Anchor, SuperblockState, MAX_BLOCKS};
pub use descriptor::{Descriptor, SlotClass};
pub use stack::DescriptorStack;

use crate::error::{fatal, AllocError};
use crate::pagemap::{PageInfo, Pagemap};
use crate::size_classes::{ClassIndex, SizeClassTable, SUPERBLOCK_SIZE};
use crate::vm_backend::{BackendKind, VmBackend};

const SB_MASK: usize = !(SUPERBLOCK_SIZE - 1);

#[derive(Debug, Default)]
pub struct HeapStats {
    pub fills: AtomicU64,
    pub flushes: AtomicU64,
    /// Superblocks backed by a fresh OS reservation.
    pub reservations: AtomicU64,
    /// Persistent superblocks that reused a pooled virtual range.
    pub range_reuses: AtomicU64,
    pub retirements: AtomicU64,
    pub descriptors_created: AtomicU64,
    transitions: [[AtomicU64; SuperblockState::COUNT]; SuperblockState::COUNT],
}

impl HeapStats {
    fn transition(&self, from: SuperblockState, to: SuperblockState) {
        self.transitions[from as usize][to as usize].fetch_add(1, Ordering::Relaxed);
    }

    /// Number of observed anchor transitions `from -> to`.
    pub fn transitions(&self, from: SuperblockState, to: SuperblockState) -> u64 {
        self.transitions[from as usize][to as usize].load(Ordering::Relaxed)
    }

    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }
}

pub struct Heap {
    table: &'static SizeClassTable,
    vm: VmBackend,
    pagemap: Pagemap,
    /// One list per (class, persistent) pair, indexed by [`list_index`].
    partial: Box<[DescriptorStack]>,
    generic_pool: DescriptorStack,
    persistent_pool: DescriptorStack,
    registry: AtomicPtr<Descriptor>,
    registry_len: AtomicUsize,
    stats: HeapStats,
}

impl std::fmt::Debug for Heap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Heap")
            .field("backend", &self.vm.kind())
            .field("descriptors", &self.registry_len.load(Ordering::Relaxed))
            .finish()
    }
}

fn list_index(class: ClassIndex, persistent: bool) -> usize {
    class.index() * 2 + persistent as usize
}

fn link(desc: &Descriptor, index: u32) -> &std::sync::atomic::AtomicUsize {
    // SAFETY: callers only pass indices of blocks inside a mapped superblock,
    // and every block is word-aligned and at least one word long.
    unsafe { &*(desc.block_addr(index) as *const std::sync::atomic::AtomicUsize) }
}

fn read_next(desc: &Descriptor, index: u32) -> u32 {
    let stored = link(desc, index).load(Ordering::Relaxed) as u32;
    index.wrapping_add(1).wrapping_add(stored)
}

fn write_next(desc: &Descriptor, index: u32, next: u32) {
    let stored = next.wrapping_sub(index.wrapping_add(1));
    link(desc, index).store(stored as usize, Ordering::Relaxed);
}

impl Heap {
    pub fn new(table: &'static SizeClassTable, vm: VmBackend) -> Self {
        let partial = (0..table.len() * 2).map(|_| DescriptorStack::new()).collect();
        Heap {
            table,
            vm,
            pagemap: Pagemap::new(),
            partial,
            generic_pool: DescriptorStack::new(),
            persistent_pool: DescriptorStack::new(),
            registry: AtomicPtr::new(ptr::null_mut()),
            registry_len: AtomicUsize::new(0),
            stats: HeapStats::default(),
        }
    }

    pub fn table(&self) -> &'static SizeClassTable {
        self.table
    }

    pub fn vm(&self) -> &VmBackend {
        &self.vm
    }

    pub fn backend(&self) -> BackendKind {
        self.vm.kind()
    }

    pub fn pagemap(&self) -> &Pagemap {
        &self.pagemap
    }

    pub fn stats(&self) -> &HeapStats {
        &self.stats
    }

    pub fn generic_pool_len(&self) -> usize {
        self.generic_pool.len()
    }

    pub fn persistent_pool_len(&self) -> usize {
        self.persistent_pool.len()
    }

    pub fn partial_len(&self, class: ClassIndex, persistent: bool) -> usize {
        self.partial[list_index(class, persistent)].len()
    }

    /// Every descriptor this heap has ever created.
    pub fn descriptors(&self) -> impl Iterator<Item = &'static Descriptor> {
        let mut cur = self.registry.load(Ordering::Acquire);
        std::iter::from_fn(move || {
            // SAFETY: registry entries are leaked and never freed.
            let d = unsafe { cur.as_ref::<'static>()? };
            cur = d.registry_next.load(Ordering::Relaxed);
            Some(d)
        })
    }

    fn alloc_descriptor(&self) -> &'static Descriptor {
        let d: &'static Descriptor = Box::leak(Box::new(Descriptor::new()));
        let mut head = self.registry.load(Ordering::Relaxed);
        loop {
            d.registry_next.store(head, Ordering::Relaxed);
            match self.registry.compare_exchange_weak(
                head,
                d as *const _ as *mut _,
                Ordering::Release,
                Ordering::Relaxed,
            ) {
                Ok(_) => break,
                Err(h) => head = h,
            }
        }
        self.registry_len.fetch_add(1, Ordering::Relaxed);
        self.stats.descriptors_created.fetch_add(1, Ordering::Relaxed);
        d
    }

    /// Obtains a superblock for `class` in state Full, with every block owned
    /// by the caller. Persistent requests first try a pooled, neutralized
    /// range; every request then tries a recycled descriptor with a fresh
    /// reservation, then a brand-new descriptor.
    pub fn new_superblock(&self, class: ClassIndex, persistent: bool) -> Result<&'static Descriptor, AllocError> {
        let block_size = self.table.block_size(class)?;
        let blocks = (SUPERBLOCK_SIZE / block_size) as u32;

        if persistent {
            if let Some(d) = self.persistent_pool.pop() {
                let base = d.base();
                if let Err(e) = self.vm.rearm_superblock(base) {
                    self.persistent_pool.push(d);
                    return Err(e);
                }
                d.init_superblock(base, class, block_size, blocks, true);
                self.pagemap.register_range(
                    base,
                    SUPERBLOCK_SIZE,
                    PageInfo { descriptor: d, class: SlotClass::Class(class) },
                );
                self.stats.range_reuses.fetch_add(1, Ordering::Relaxed);
                self.stats.transition(SuperblockState::Empty, SuperblockState::Full);
                return Ok(d);
            }
        }

        let (d, recycled) = match self.generic_pool.pop() {
            Some(d) => (d, true),
            None => (self.alloc_descriptor(), false),
        };
        let base = match self.vm.reserve_superblock() {
            Ok(b) => b,
            Err(e) => {
                self.generic_pool.push(d);
                return Err(e);
            }
        };
        d.init_superblock(base, class, block_size, blocks, persistent);
        self.pagemap.register_range(
            base,
            SUPERBLOCK_SIZE,
            PageInfo { descriptor: d, class: SlotClass::Class(class) },
        );
        self.stats.reservations.fetch_add(1, Ordering::Relaxed);
        if recycled {
            self.stats.transition(SuperblockState::Empty, SuperblockState::Full);
        }
        Ok(d)
    }

    /// Appends up to `capacity - out.len()` blocks of `class` to `out`,
    /// taking from partial superblocks of the same persistence first.
    pub fn fill_cache(
        &self,
        class: ClassIndex,
        persistent: bool,
        out: &mut Vec<usize>,
        capacity: usize,
    ) -> Result<(), AllocError> {
        self.stats.fills.fetch_add(1, Ordering::Relaxed);
        let list = &self.partial[list_index(class, persistent)];
        while out.len() < capacity {
            let Some(d) = list.pop() else {
                match self.fill_from_new(class, persistent, out, capacity) {
                    Ok(()) => continue,
                    Err(_) if !out.is_empty() => return Ok(()),
                    Err(e) => return Err(e),
                }
            };
            match self.reserve(d, capacity - out.len()) {
                None => self.retire_vote(d),
                Some((taken, left)) => {
                    self.pop_reserved(d, taken, out);
                    if left > 0 {
                        list.push(d);
                    }
                }
            }
        }
        Ok(())
    }

    fn fill_from_new(
        &self,
        class: ClassIndex,
        persistent: bool,
        out: &mut Vec<usize>,
        capacity: usize,
    ) -> Result<(), AllocError> {
        let d = self.new_superblock(class, persistent)?;
        let blocks = d.block_count();
        let take = blocks.min((capacity - out.len()) as u32);
        out.extend((0..take).map(|i| d.block_addr(i)));
        if take < blocks {
            // No other thread can hold blocks of this superblock yet.
            let a = d.anchor();
            let rest = Anchor { state: SuperblockState::Partial, avail: take, count: blocks - take, tag: a.tag }.bump();
            d.anchor.store(rest.pack(), Ordering::Release);
            self.stats.transition(SuperblockState::Full, SuperblockState::Partial);
            self.partial[list_index(class, persistent)].push(d);
        }
        Ok(())
    }

    /// Lowers the free count by up to `want`. Returns `(taken, left)`, or
    /// `None` if the superblock turned out to be empty.
    fn reserve(&self, d: &'static Descriptor, want: usize) -> Option<(u32, u32)> {
        let mut cur = d.anchor.load(Ordering::Acquire);
        loop {
            let a = Anchor::unpack(cur);
            if a.state == SuperblockState::Empty {
                return None;
            }
            let take = a.count.min(want as u32);
            if take == 0 {
                return Some((0, 0));
            }
            let left = a.count - take;
            let state = if left == 0 { SuperblockState::Full } else { SuperblockState::Partial };
            let next = Anchor { state, count: left, ..a }.bump();
            match d.anchor.compare_exchange_weak(cur, next.pack(), Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => {
                    if state != a.state {
                        self.stats.transition(a.state, state);
                    }
                    return Some((take, left));
                }
                Err(c) => cur = c,
            }
        }
    }

    /// Pops `k` previously reserved blocks off the in-superblock list.
    fn pop_reserved(&self, d: &'static Descriptor, k: u32, out: &mut Vec<usize>) {
        if k == 0 {
            return;
        }
        let blocks = d.block_count();
        let start = out.len();
        let mut cur = d.anchor.load(Ordering::Acquire);
        loop {
            let a = Anchor::unpack(cur);
            let mut idx = a.avail;
            let mut consistent = true;
            for _ in 0..k {
                // A concurrent popper may have handed a block we are walking
                // to the application; its garbage link fails the tag check,
                // but must not send us outside the superblock first.
                if idx >= blocks {
                    consistent = false;
                    break;
                }
                out.push(d.block_addr(idx));
                idx = read_next(d, idx);
            }
            if consistent && idx <= blocks {
                let next = Anchor { avail: idx, ..a }.bump();
                match d.anchor.compare_exchange_weak(cur, next.pack(), Ordering::AcqRel, Ordering::Acquire) {
                    Ok(_) => return,
                    Err(c) => cur = c,
                }
            } else {
                cur = d.anchor.load(Ordering::Acquire);
            }
            out.truncate(start);
        }
    }

    /// Returns blocks to their superblocks. Blocks may belong to any number
    /// of superblocks; `blocks` is reordered in place.
    pub fn flush_cache(&self, blocks: &mut [usize]) {
        if blocks.is_empty() {
            return;
        }
        self.stats.flushes.fetch_add(1, Ordering::Relaxed);
        blocks.sort_unstable();
        let mut scratch = Vec::new();
        for group in blocks.chunk_by(|a, b| a & SB_MASK == b & SB_MASK) {
            let Some(info) = self.pagemap.lookup(group[0]) else {
                fatal(format_args!("flush of unknown address {:#x}", group[0]));
            };
            let d = info.descriptor;
            scratch.clear();
            scratch.extend(group.iter().map(|&addr| self.block_index(d, addr)));
            self.return_blocks(d, &scratch);
        }
    }

    pub(crate) fn block_index(&self, d: &Descriptor, addr: usize) -> u32 {
        let base = d.base();
        let size = d.block_size();
        let offset = addr.wrapping_sub(base);
        if offset >= SUPERBLOCK_SIZE || offset % size != 0 || offset / size >= d.block_count() as usize {
            fatal(format_args!("invalid free of {addr:#x}: not a block start"));
        }
        (offset / size) as u32
    }

    fn return_blocks(&self, d: &'static Descriptor, indices: &[u32]) {
        // Stable while we hold blocks of this superblock.
        let base = d.base();
        let blocks = d.block_count();
        let persistent = d.is_persistent();
        let class = match d.class() {
            SlotClass::Class(c) => c,
            SlotClass::Large => fatal(format_args!("cache flush of a large allocation")),
        };
        let can_empty = !persistent || self.vm.kind().releases_memory();

        let mut rest = indices;
        while !rest.is_empty() {
            let mut cur = d.anchor.load(Ordering::Acquire);
            loop {
                let a = Anchor::unpack(cur);
                debug_assert_ne!(a.state, SuperblockState::Empty, "flush into an empty superblock");
                let mut m = rest.len() as u32;
                let reaches_all = a.count + m == blocks;
                // Full -> Empty is not a legal transition; go through Partial.
                if reaches_all && can_empty && a.state == SuperblockState::Full && m > 1 {
                    m -= 1;
                }
                let chain = &rest[..m as usize];
                for pair in chain.windows(2) {
                    write_next(d, pair[0], pair[1]);
                }
                write_next(d, chain[chain.len() - 1], a.avail);
                let count = a.count + m;
                let state = if count == blocks && can_empty {
                    SuperblockState::Empty
                } else {
                    SuperblockState::Partial
                };
                let next = Anchor { state, avail: chain[0], count, tag: a.tag }.bump();
                match d.anchor.compare_exchange_weak(cur, next.pack(), Ordering::AcqRel, Ordering::Acquire) {
                    Ok(_) => {
                        rest = &rest[m as usize..];
                        if a.state != state {
                            self.stats.transition(a.state, state);
                        }
                        if a.state == SuperblockState::Full {
                            self.partial[list_index(class, persistent)].push(d);
                        }
                        if state == SuperblockState::Empty {
                            self.retire_superblock(d, base, persistent);
                        }
                        break;
                    }
                    Err(c) => cur = c,
                }
            }
        }
    }

    /// Releases the memory of an empty superblock. Non-persistent ranges are
    /// unmapped and unregistered; persistent ranges are neutralized and stay
    /// registered so that they remain readable.
    fn retire_superblock(&self, d: &'static Descriptor, base: usize, persistent: bool) {
        self.stats.retirements.fetch_add(1, Ordering::Relaxed);
        if persistent {
            debug_assert!(self.vm.kind().releases_memory());
            if let Err(e) = self.vm.neutralize_superblock(base) {
                fatal(format_args!("neutralize {base:#x}: {e}"));
            }
        } else {
            self.pagemap.unregister_range(base, SUPERBLOCK_SIZE);
            if let Err(e) = self.vm.release_superblock(base) {
                fatal(format_args!("release {base:#x}: {e}"));
            }
        }
        self.retire_vote(d);
    }

    fn retire_vote(&self, d: &'static Descriptor) {
        if d.retire_votes.fetch_add(1, Ordering::AcqRel) == 1 {
            if d.is_persistent() {
                self.persistent_pool.push(d);
            } else {
                self.generic_pool.push(d);
            }
        }
    }

    /// Drains every partial list, finishing the retirement of empty
    /// superblocks and re-listing the rest. Returns how many descriptors
    /// were recycled into a pool by this call.
    pub fn collect_empty(&self) -> usize {
        let before = self.generic_pool.len() + self.persistent_pool.len();
        let mut keep = Vec::new();
        for list in self.partial.iter() {
            while let Some(d) = list.pop() {
                if d.anchor().state == SuperblockState::Empty {
                    self.retire_vote(d);
                } else {
                    keep.push(d);
                }
            }
            for d in keep.drain(..).rev() {
                list.push(d);
            }
        }
        (self.generic_pool.len() + self.persistent_pool.len()).saturating_sub(before)
    }

    /// Maps a dedicated superblock-aligned range for a large request.
    pub fn alloc_large(&self, size: usize) -> Result<usize, AllocError> {
        let len = size.next_multiple_of(self.table.page_size());
        let d = self.generic_pool.pop().unwrap_or_else(|| self.alloc_descriptor());
        let base = match self.vm.reserve_aligned(len) {
            Ok(b) => b,
            Err(e) => {
                self.generic_pool.push(d);
                return Err(e);
            }
        };
        d.init_large(base, len);
        self.pagemap.register_range(base, len, PageInfo { descriptor: d, class: SlotClass::Large });
        Ok(base)
    }

    pub fn free_large(&self, d: &'static Descriptor, addr: usize) {
        let base = d.base();
        if addr != base {
            fatal(format_args!("invalid free of {addr:#x}: inside a large allocation"));
        }
        let len = d.large_len();
        self.pagemap.unregister_range(base, len);
        if let Err(e) = self.vm.release(base, len) {
            fatal(format_args!("release {base:#x}: {e}"));
        }
        d.mark_large_free();
        self.generic_pool.push(d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heap(kind: BackendKind) -> Heap {
        Heap::new(SizeClassTable::standard(), VmBackend::new(kind, SUPERBLOCK_SIZE).unwrap())
    }

    fn class_of(size: usize) -> ClassIndex {
        match SizeClassTable::standard().class_for_size(size).unwrap() {
            crate::size_classes::SizeRequest::Class(c) => c,
            _ => unreachable!(),
        }
    }

    fn desc_of(h: &Heap, addr: usize) -> &'static Descriptor {
        h.pagemap().lookup(addr).unwrap().descriptor
    }

    #[test]
    fn fresh_superblock_is_full_and_registered() {
        let h = heap(BackendKind::KeepResident);
        let c = class_of(64);
        let d = h.new_superblock(c, false).unwrap();
        let a = d.anchor();
        assert_eq!(a.state, SuperblockState::Full);
        assert_eq!(a.count, 0);
        assert_eq!(d.block_count(), 32768);
        assert_eq!(d.base() % SUPERBLOCK_SIZE, 0);
        assert!(std::ptr::eq(desc_of(&h, d.base() + 12345), d));
        // The implicit free list threads every block in order.
        for i in 0..100 {
            assert_eq!(read_next(d, i), i + 1);
        }
    }

    #[test]
    fn fill_from_partial_then_new_superblock() {
        let h = heap(BackendKind::KeepResident);
        let c = class_of(16384);
        let mut out = Vec::new();
        // 128 blocks per superblock: first fill takes 123, leaving 5 free.
        h.fill_cache(c, false, &mut out, 123).unwrap();
        assert_eq!(out.len(), 123);
        let d = desc_of(&h, out[0]);
        assert_eq!(d.anchor().count, 5);
        assert_eq!(d.anchor().state, SuperblockState::Partial);
        assert_eq!(h.stats().reservations.load(Ordering::Relaxed), 1);

        let mut out2 = Vec::new();
        h.fill_cache(c, false, &mut out2, 64).unwrap();
        assert_eq!(out2.len(), 64);
        let from_first = out2.iter().filter(|&&b| b & SB_MASK == d.base()).count();
        assert_eq!(from_first, 5);
        assert_eq!(d.anchor().state, SuperblockState::Full);
        assert_eq!(h.stats().reservations.load(Ordering::Relaxed), 2);
        let all: std::collections::HashSet<_> = out.iter().chain(&out2).collect();
        assert_eq!(all.len(), 123 + 64);
    }

    #[test]
    fn flush_transitions_and_retires_non_persistent() {
        let h = heap(BackendKind::KeepResident);
        let c = class_of(16384);
        let mut out = Vec::new();
        h.fill_cache(c, false, &mut out, 128).unwrap();
        let d = desc_of(&h, out[0]);
        assert_eq!(d.anchor().state, SuperblockState::Full);

        let mut one = vec![out.pop().unwrap()];
        h.flush_cache(&mut one);
        assert_eq!(d.anchor().state, SuperblockState::Partial);
        assert_eq!(d.anchor().count, 1);
        assert_eq!(h.partial_len(c, false), 1);

        let base = d.base();
        h.flush_cache(&mut out);
        assert_eq!(d.anchor().state, SuperblockState::Empty);
        assert!(h.pagemap().lookup(base).is_none());
        assert!(!crate::vm_backend::is_readable(base));
        assert_eq!(h.stats().retirements.load(Ordering::Relaxed), 1);

        assert_eq!(h.generic_pool_len(), 0);
        assert_eq!(h.collect_empty(), 1);
        assert_eq!(h.generic_pool_len(), 1);
        assert_eq!(h.partial_len(c, false), 0);
        assert_eq!(h.stats().transitions(SuperblockState::Full, SuperblockState::Empty), 0);
    }

    #[test]
    fn flush_of_whole_full_superblock_goes_through_partial() {
        let h = heap(BackendKind::KeepResident);
        let c = class_of(16384);
        let mut out = Vec::new();
        h.fill_cache(c, false, &mut out, 128).unwrap();
        h.flush_cache(&mut out);
        let s = h.stats();
        assert_eq!(s.transitions(SuperblockState::Full, SuperblockState::Empty), 0);
        assert_eq!(s.transitions(SuperblockState::Partial, SuperblockState::Empty), 1);
    }

    #[test]
    fn persistent_keep_never_empties() {
        let h = heap(BackendKind::KeepResident);
        let c = class_of(16384);
        let mut out = Vec::new();
        h.fill_cache(c, true, &mut out, 64).unwrap();
        let d = desc_of(&h, out[0]);
        assert!(d.is_persistent());
        h.flush_cache(&mut out);
        let a = d.anchor();
        assert_eq!(a.state, SuperblockState::Partial);
        assert_eq!(a.count, d.block_count());
        assert_eq!(h.persistent_pool_len(), 0);
        assert_eq!(h.collect_empty(), 0);
        // Reused for the next persistent fill without a new reservation.
        let mut again = Vec::new();
        h.fill_cache(c, true, &mut again, 64).unwrap();
        assert!(again.iter().all(|&b| b & SB_MASK == d.base()));
        assert_eq!(h.stats().reservations.load(Ordering::Relaxed), 1);
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn persistent_advise_pools_range_and_reuses_it() {
        let h = heap(BackendKind::AdviseRelease);
        let c = class_of(16384);
        let mut out = Vec::new();
        h.fill_cache(c, true, &mut out, 128).unwrap();
        let d = desc_of(&h, out[0]);
        let base = d.base();
        h.flush_cache(&mut out);
        assert_eq!(d.anchor().state, SuperblockState::Empty);
        assert!(h.pagemap().lookup(base).is_some());
        assert_eq!(h.collect_empty(), 1);
        assert_eq!(h.persistent_pool_len(), 1);
        assert_eq!(h.generic_pool_len(), 0);
        assert!(crate::vm_backend::is_readable(base + 4096));

        // A non-persistent request must not take the pooled range.
        let mut plain = Vec::new();
        h.fill_cache(c, false, &mut plain, 1).unwrap();
        assert_ne!(plain[0] & SB_MASK, base);
        assert_eq!(h.persistent_pool_len(), 1);

        // A persistent request of another class reuses it.
        let small = class_of(64);
        let mut p = Vec::new();
        let reservations = h.stats().reservations.load(Ordering::Relaxed);
        h.fill_cache(small, true, &mut p, 64).unwrap();
        assert!(p.iter().all(|&b| b & SB_MASK == base));
        assert_eq!(h.stats().reservations.load(Ordering::Relaxed), reservations);
        assert_eq!(h.stats().range_reuses.load(Ordering::Relaxed), 1);
        assert_eq!(h.pagemap().lookup(base).unwrap().class, SlotClass::Class(small));
        assert_eq!(h.stats().transitions(SuperblockState::Empty, SuperblockState::Full), 1);
    }

    #[test]
    fn concurrent_flushes_count_exactly() {
        let h: &'static Heap = Box::leak(Box::new(heap(BackendKind::KeepResident)));
        let c = class_of(64);
        let mut out = Vec::new();
        h.fill_cache(c, false, &mut out, 2000).unwrap();
        let d = desc_of(h, out[0]);
        let before = d.anchor().count;
        let (a, b) = out.split_at(1000);
        let (a, b) = (a.to_vec(), b.to_vec());
        let t1 = std::thread::spawn(move || {
            for chunk in a.chunks(7) {
                h.flush_cache(&mut chunk.to_vec());
            }
        });
        let t2 = std::thread::spawn(move || {
            for chunk in b.chunks(5) {
                h.flush_cache(&mut chunk.to_vec());
            }
        });
        t1.join().unwrap();
        t2.join().unwrap();
        assert_eq!(d.anchor().count, before + 2000);
    }

    #[test]
    fn large_allocations_round_trip() {
        let h = heap(BackendKind::KeepResident);
        let addr = h.alloc_large(5 << 20).unwrap();
        let info = h.pagemap().lookup(addr + (3 << 20)).unwrap();
        assert_eq!(info.class, SlotClass::Large);
        assert_eq!(info.descriptor.large_len(), 5 << 20);
        h.free_large(info.descriptor, addr);
        assert!(h.pagemap().lookup(addr).is_none());
        assert_eq!(h.generic_pool_len(), 1);
        // The recycled descriptor serves the next superblock.
        let d = h.new_superblock(class_of(32), false).unwrap();
        assert!(std::ptr::eq(d, info.descriptor));
        assert_eq!(h.stats().descriptors_created.load(Ordering::Relaxed), 1);
    }
}

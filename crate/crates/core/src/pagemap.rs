//! Lock-free map from addresses to the descriptor of the superblock (or
//! large allocation) that covers them.
//!
//! Superblocks are superblock-aligned, so one entry per aligned
//! [`SUPERBLOCK_SIZE`] slot suffices. The map is a two-level radix tree over
//! a 48-bit address space; leaves are allocated lazily and never freed.
//! Each entry is a single word (descriptor pointer | class code), so readers
//! see either nothing or a complete entry.

use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicUsize, Ordering};

use crate::heap::{Descriptor, SlotClass};
use crate::size_classes::{SUPERBLOCK_SHIFT, SUPERBLOCK_SIZE};

const ADDRESS_BITS: u32 = 48;
const LEAF_BITS: u32 = 14;
const ROOT_BITS: u32 = ADDRESS_BITS - SUPERBLOCK_SHIFT - LEAF_BITS;
const LEAF_LEN: usize = 1 << LEAF_BITS;
const ROOT_LEN: usize = 1 << ROOT_BITS;
const CLASS_MASK: usize = 63;

struct Leaf {
    entries: [AtomicUsize; LEAF_LEN],
}

/// What the pagemap records for a registered slot.
#[derive(Clone, Copy, Debug)]
pub struct PageInfo {
    pub descriptor: &'static Descriptor,
    pub class: SlotClass,
}

impl PageInfo {
    fn encode(self) -> usize {
        let p = self.descriptor as *const Descriptor as usize;
        debug_assert_eq!(p & CLASS_MASK, 0);
        p | self.class.code() as usize
    }

    fn decode(word: usize) -> Option<Self> {
        if word == 0 {
            return None;
        }
        // SAFETY: non-zero entries always encode a never-freed descriptor.
        let descriptor = unsafe { &*((word & !CLASS_MASK) as *const Descriptor) };
        Some(PageInfo {
            descriptor,
            class: SlotClass::from_code((word & CLASS_MASK) as u8),
        })
    }
}

pub struct Pagemap {
    root: Box<[AtomicPtr<Leaf>]>,
}

impl Default for Pagemap {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Pagemap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let leaves = self.root.iter().filter(|l| !l.load(Ordering::Relaxed).is_null()).count();
        f.debug_struct("Pagemap").field("leaves", &leaves).finish()
    }
}

fn split(slot: usize) -> (usize, usize) {
    (slot >> LEAF_BITS, slot & (LEAF_LEN - 1))
}

impl Pagemap {
    pub fn new() -> Self {
        let root = (0..ROOT_LEN).map(|_| AtomicPtr::new(ptr::null_mut())).collect();
        Pagemap { root }
    }

    fn slots(base: usize, length: usize) -> std::ops::Range<usize> {
        let first = base >> SUPERBLOCK_SHIFT;
        first..first + length.div_ceil(SUPERBLOCK_SIZE)
    }

    fn entry(&self, slot: usize) -> Option<&AtomicUsize> {
        let (r, l) = split(slot);
        let leaf = self.root.get(r)?.load(Ordering::Acquire);
        // SAFETY: published leaves are never freed.
        (!leaf.is_null()).then(|| unsafe { &(*leaf).entries[l] })
    }

    fn entry_or_create(&self, slot: usize) -> &AtomicUsize {
        let (r, l) = split(slot);
        let cell = &self.root[r];
        let mut leaf = cell.load(Ordering::Acquire);
        if leaf.is_null() {
            // SAFETY: AtomicUsize is valid when zeroed.
            let fresh: Box<Leaf> = unsafe { Box::new_zeroed().assume_init() };
            let fresh = Box::into_raw(fresh);
            match cell.compare_exchange(ptr::null_mut(), fresh, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => leaf = fresh,
                Err(winner) => {
                    // SAFETY: ours was never published.
                    drop(unsafe { Box::from_raw(fresh) });
                    leaf = winner;
                }
            }
        }
        // SAFETY: published leaves are never freed.
        unsafe { &(*leaf).entries[l] }
    }

    /// Registers `[base, base + length)`. `base` must be superblock-aligned.
    ///
    /// Re-registering a range already owned by the same descriptor updates
    /// its class (recycled persistent ranges change class on reuse);
    /// overlapping a different descriptor is a logic error.
    pub fn register_range(&self, base: usize, length: usize, info: PageInfo) {
        assert_eq!(base % SUPERBLOCK_SIZE, 0, "pagemap ranges must be superblock-aligned");
        assert!(base >> ADDRESS_BITS == 0, "address above the mapped address space");
        let word = info.encode();
        for slot in Self::slots(base, length) {
            let prev = self.entry_or_create(slot).swap(word, Ordering::Release);
            debug_assert!(
                prev == 0 || prev & !CLASS_MASK == word & !CLASS_MASK,
                "pagemap overlap at slot {slot:#x}"
            );
        }
    }

    pub fn lookup(&self, addr: usize) -> Option<PageInfo> {
        let word = self.entry(addr >> SUPERBLOCK_SHIFT)?.load(Ordering::Acquire);
        PageInfo::decode(word)
    }

    pub fn unregister_range(&self, base: usize, length: usize) {
        for slot in Self::slots(base, length) {
            let prev = self.entry(slot).map(|e| e.swap(0, Ordering::Release)).unwrap_or(0);
            debug_assert!(prev != 0, "unregistering an unregistered slot {slot:#x}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::size_classes::SizeClassTable;
    use std::collections::BTreeMap;

    const SB: usize = SUPERBLOCK_SIZE;

    fn info(class: usize) -> PageInfo {
        let t = SizeClassTable::standard();
        PageInfo {
            descriptor: Descriptor::detached(),
            class: SlotClass::Class(t.class_index(class).unwrap()),
        }
    }

    #[test]
    fn register_lookup_mid_superblock() {
        let pm = Pagemap::new();
        let base = 0x7f00_0000_0000usize;
        let i = info(3);
        pm.register_range(base, SB, i);
        let got = pm.lookup(base).unwrap();
        assert!(std::ptr::eq(got.descriptor, i.descriptor));
        assert_eq!(got.class, i.class);
        let mid = pm.lookup(base + 5000).unwrap();
        assert!(std::ptr::eq(mid.descriptor, i.descriptor));
        assert!(pm.lookup(base + SB).is_none());
    }

    #[test]
    fn adjacent_superblocks_against_shadow_map() {
        let pm = Pagemap::new();
        let base = 0x5500_0000_0000usize;
        let a = info(1);
        let b = info(2);
        pm.register_range(base, SB, a);
        pm.register_range(base + SB, SB, b);
        let mut shadow = BTreeMap::new();
        shadow.insert(base, a.descriptor as *const _ as usize);
        shadow.insert(base + SB, b.descriptor as *const _ as usize);
        for addr in (base - SB..base + 3 * SB).step_by(4093) {
            let expected = shadow.range(..=addr).next_back().filter(|(&s, _)| addr < s + SB).map(|(_, &d)| d);
            let got = pm.lookup(addr).map(|i| i.descriptor as *const _ as usize);
            assert_eq!(got, expected, "addr {addr:#x}");
        }
    }

    #[test]
    fn unregister_makes_lookup_fail() {
        let pm = Pagemap::new();
        let base = 0x1000_0000_0000usize;
        pm.register_range(base, SB, info(0));
        pm.unregister_range(base, SB);
        assert!(pm.lookup(base).is_none());
        assert!(pm.lookup(base + 100).is_none());
    }

    #[test]
    fn large_ranges_cover_every_slot() {
        let pm = Pagemap::new();
        let base = 0x2000_0000_0000usize;
        let d = Descriptor::detached();
        pm.register_range(base, 3 * SB + 4096, PageInfo { descriptor: d, class: SlotClass::Large });
        for k in 0..4 {
            assert_eq!(pm.lookup(base + k * SB).unwrap().class, SlotClass::Large);
        }
        assert!(pm.lookup(base + 4 * SB).is_none());
    }

    #[test]
    fn same_descriptor_may_rewrite_class() {
        let pm = Pagemap::new();
        let base = 0x3000_0000_0000usize;
        let first = info(4);
        pm.register_range(base, SB, first);
        let t = SizeClassTable::standard();
        let again = PageInfo { descriptor: first.descriptor, class: SlotClass::Class(t.class_index(9).unwrap()) };
        pm.register_range(base, SB, again);
        assert_eq!(pm.lookup(base).unwrap().class, again.class);
    }

    #[test]
    fn unmapped_high_addresses_are_not_found() {
        let pm = Pagemap::new();
        assert!(pm.lookup(usize::MAX).is_none());
        assert!(pm.lookup(0).is_none());
    }

    #[test]
    fn concurrent_readers_see_none_or_complete_entry() {
        let pm = std::sync::Arc::new(Pagemap::new());
        let base = 0x4000_0000_0000usize;
        let i = info(5);
        let expected = i.descriptor as *const _ as usize;
        let reader = {
            let pm = pm.clone();
            std::thread::spawn(move || {
                for _ in 0..200_000 {
                    if let Some(got) = pm.lookup(base + 77) {
                        assert_eq!(got.descriptor as *const _ as usize, expected);
                        assert_eq!(got.class.code(), 5);
                    }
                }
            })
        };
        for _ in 0..2_000 {
            pm.register_range(base, SB, i);
            pm.unregister_range(base, SB);
        }
        reader.join().unwrap();
    }
}

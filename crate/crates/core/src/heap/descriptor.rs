use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU32, AtomicU64, AtomicU8, AtomicUsize, Ordering};

use super::anchor::{Anchor, SuperblockState};
use crate::size_classes::{ClassIndex, LARGE_CLASS_CODE};

/// Metadata for one superblock (or one large allocation).
///
/// Descriptors are never deallocated. When their superblock dies they go to
/// one of the heap's recycling pools and are rewritten on reuse. All fields
/// are atomics because stale readers (stack poppers, pagemap lookups racing
/// an invalid free) may observe a descriptor while it is being recycled.
#[repr(align(64))]
#[derive(Debug)]
pub struct Descriptor {
    pub(crate) anchor: AtomicU64,
    base: AtomicUsize,
    class: AtomicU8,
    persistent: AtomicBool,
    block_size: AtomicUsize,
    block_count: AtomicU32,
    /// Length of a large allocation; zero for size-class superblocks.
    large_len: AtomicUsize,
    /// Retirement handshake between the thread that empties the superblock
    /// and the thread that pops it off its partial list.
    pub(crate) retire_votes: AtomicU8,
    /// Link for whichever descriptor stack currently holds this descriptor.
    pub(crate) stack_next: AtomicUsize,
    /// Link in the append-only registry of every descriptor.
    pub(crate) registry_next: AtomicPtr<Descriptor>,
}

/// Class tag stored in a descriptor or pagemap entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SlotClass {
    Class(ClassIndex),
    Large,
}

impl SlotClass {
    pub(crate) fn code(self) -> u8 {
        match self {
            SlotClass::Class(c) => c.index() as u8,
            SlotClass::Large => LARGE_CLASS_CODE,
        }
    }

    pub(crate) fn from_code(code: u8) -> Self {
        if code == LARGE_CLASS_CODE {
            SlotClass::Large
        } else {
            SlotClass::Class(ClassIndex::from_raw(code))
        }
    }
}

impl Descriptor {
    pub(crate) fn new() -> Self {
        Descriptor {
            anchor: AtomicU64::new(
                Anchor { state: SuperblockState::Empty, avail: 0, count: 0, tag: 0 }.pack(),
            ),
            base: AtomicUsize::new(0),
            class: AtomicU8::new(LARGE_CLASS_CODE),
            persistent: AtomicBool::new(false),
            block_size: AtomicUsize::new(0),
            block_count: AtomicU32::new(0),
            large_len: AtomicUsize::new(0),
            retire_votes: AtomicU8::new(0),
            stack_next: AtomicUsize::new(0),
            registry_next: AtomicPtr::new(ptr::null_mut()),
        }
    }

    /// A descriptor outside any heap, for exercising the pagemap directly.
    pub fn detached() -> &'static Descriptor {
        Box::leak(Box::new(Descriptor::new()))
    }

    pub(crate) fn init_superblock(
        &self,
        base: usize,
        class: ClassIndex,
        block_size: usize,
        block_count: u32,
        persistent: bool,
    ) {
        self.base.store(base, Ordering::Relaxed);
        self.class.store(class.index() as u8, Ordering::Relaxed);
        self.block_size.store(block_size, Ordering::Relaxed);
        self.block_count.store(block_count, Ordering::Relaxed);
        self.persistent.store(persistent, Ordering::Relaxed);
        self.large_len.store(0, Ordering::Relaxed);
        self.retire_votes.store(0, Ordering::Relaxed);
        let old = self.anchor();
        let fresh = Anchor { state: SuperblockState::Full, avail: block_count, count: 0, tag: old.tag }.bump();
        self.anchor.store(fresh.pack(), Ordering::Release);
    }

    pub(crate) fn init_large(&self, base: usize, len: usize) {
        self.base.store(base, Ordering::Relaxed);
        self.class.store(LARGE_CLASS_CODE, Ordering::Relaxed);
        self.block_size.store(len, Ordering::Relaxed);
        self.block_count.store(1, Ordering::Relaxed);
        self.persistent.store(false, Ordering::Relaxed);
        self.large_len.store(len, Ordering::Relaxed);
        let old = self.anchor();
        let live = Anchor { state: SuperblockState::Full, avail: 1, count: 0, tag: old.tag }.bump();
        self.anchor.store(live.pack(), Ordering::Release);
    }

    pub(crate) fn mark_large_free(&self) {
        let old = self.anchor();
        let dead = Anchor { state: SuperblockState::Empty, avail: 1, count: 1, tag: old.tag }.bump();
        self.anchor.store(dead.pack(), Ordering::Release);
    }

    pub fn base(&self) -> usize {
        self.base.load(Ordering::Relaxed)
    }

    pub fn class(&self) -> SlotClass {
        SlotClass::from_code(self.class.load(Ordering::Relaxed))
    }

    pub fn is_persistent(&self) -> bool {
        self.persistent.load(Ordering::Relaxed)
    }

    pub fn block_size(&self) -> usize {
        self.block_size.load(Ordering::Relaxed)
    }

    pub fn block_count(&self) -> u32 {
        self.block_count.load(Ordering::Relaxed)
    }

    pub fn large_len(&self) -> usize {
        self.large_len.load(Ordering::Relaxed)
    }

    pub fn anchor(&self) -> Anchor {
        Anchor::unpack(self.anchor.load(Ordering::Acquire))
    }

    pub(crate) fn block_addr(&self, index: u32) -> usize {
        self.base() + index as usize * self.block_size()
    }
}

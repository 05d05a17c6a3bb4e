//! The superblock anchor: state, first free block, free count and ABA tag
//! packed into one 64-bit word that only changes by compare-and-swap.

/// Superblock state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SuperblockState {
    /// No free blocks.
    Full = 0,
    /// Some free and some allocated blocks.
    Partial = 1,
    /// Every block free; the superblock is being retired.
    Empty = 2,
}

impl SuperblockState {
    pub(crate) const COUNT: usize = 3;

    fn from_bits(bits: u64) -> Self {
        match bits {
            0 => SuperblockState::Full,
            1 => SuperblockState::Partial,
            2 => SuperblockState::Empty,
            _ => unreachable!("corrupt anchor state {bits}"),
        }
    }
}

const STATE_BITS: u32 = 2;
const INDEX_BITS: u32 = 18;
const TAG_BITS: u32 = 64 - STATE_BITS - 2 * INDEX_BITS;

const INDEX_MASK: u64 = (1 << INDEX_BITS) - 1;
const TAG_MASK: u64 = (1 << TAG_BITS) - 1;
const AVAIL_SHIFT: u32 = STATE_BITS;
const COUNT_SHIFT: u32 = STATE_BITS + INDEX_BITS;
const TAG_SHIFT: u32 = STATE_BITS + 2 * INDEX_BITS;

/// Largest block index / count representable in an anchor.
pub const MAX_BLOCKS: u32 = INDEX_MASK as u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Anchor {
    pub state: SuperblockState,
    /// Index of the first free block; `block_count` when the list is empty.
    pub avail: u32,
    /// Free blocks not yet reserved by a filling thread.
    pub count: u32,
    pub tag: u32,
}

impl Anchor {
    pub fn pack(self) -> u64 {
        debug_assert!(self.avail <= MAX_BLOCKS && self.count <= MAX_BLOCKS);
        (self.state as u64)
            | (u64::from(self.avail) & INDEX_MASK) << AVAIL_SHIFT
            | (u64::from(self.count) & INDEX_MASK) << COUNT_SHIFT
            | (u64::from(self.tag) & TAG_MASK) << TAG_SHIFT
    }

    pub fn unpack(word: u64) -> Self {
        Anchor {
            state: SuperblockState::from_bits(word & ((1 << STATE_BITS) - 1)),
            avail: ((word >> AVAIL_SHIFT) & INDEX_MASK) as u32,
            count: ((word >> COUNT_SHIFT) & INDEX_MASK) as u32,
            tag: ((word >> TAG_SHIFT) & TAG_MASK) as u32,
        }
    }

    /// Same anchor with the tag advanced (wrapping within its field).
    pub(crate) fn bump(mut self) -> Self {
        self.tag = ((u64::from(self.tag) + 1) & TAG_MASK) as u32;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state() -> impl Strategy<Value = SuperblockState> {
        prop_oneof![
            Just(SuperblockState::Full),
            Just(SuperblockState::Partial),
            Just(SuperblockState::Empty)
        ]
    }

    proptest! {
        #[test]
        fn pack_round_trips(
            state in state(),
            avail in 0..=MAX_BLOCKS,
            count in 0..=MAX_BLOCKS,
            tag in 0u32..(1 << TAG_BITS),
        ) {
            let a = Anchor { state, avail, count, tag };
            prop_assert_eq!(Anchor::unpack(a.pack()), a);
        }
    }

    #[test]
    fn capacity_covers_smallest_class() {
        // 2 MiB / 16 B blocks, plus the end-of-list sentinel index.
        assert!(MAX_BLOCKS >= 131072);
    }

    #[test]
    fn tag_wraps() {
        let a = Anchor { state: SuperblockState::Full, avail: 0, count: 0, tag: TAG_MASK as u32 };
        assert_eq!(a.bump().tag, 0);
    }
}

//! Size-class table and block geometry.
//!
//! Every request up to [`MAX_CLASS_SIZE`] is rounded up to the nearest class.
//! Each class carves [`SUPERBLOCK_SIZE`] superblocks into equal blocks.
//! Requests above the largest class take the large-allocation path.

use std::sync::OnceLock;

use crate::error::AllocError;

/// Largest block size served from superblocks.
pub const MAX_CLASS_SIZE: usize = 16 * 1024;
/// Every size-class superblock has this size and alignment.
pub const SUPERBLOCK_SIZE: usize = 2 * 1024 * 1024;
/// log2 of [`SUPERBLOCK_SIZE`].
pub const SUPERBLOCK_SHIFT: u32 = SUPERBLOCK_SIZE.trailing_zeros();

/// Worst-case `block_size / request` ratio of the standard table for
/// requests of at least 16 bytes.
pub const WASTE_FACTOR: f64 = 1.5;

/// Class code reserved for large allocations in packed metadata.
pub(crate) const LARGE_CLASS_CODE: u8 = 63;
const MAX_CLASSES: usize = LARGE_CLASS_CODE as usize;

const WORD: usize = std::mem::size_of::<usize>();

/// Index into a [`SizeClassTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassIndex(u8);

impl ClassIndex {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_raw(raw: u8) -> Self {
        ClassIndex(raw)
    }
}

/// Where a request of a given size is served from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeRequest {
    Class(ClassIndex),
    Large,
}

#[derive(Debug)]
pub struct SizeClassTable {
    classes: Vec<usize>,
    /// Class index for every word-rounded request size, indexed by
    /// `ceil(request / WORD)`.
    lookup: Vec<u8>,
    page_size: usize,
}

impl SizeClassTable {
    /// Builds a table from strictly increasing block sizes ending at
    /// [`MAX_CLASS_SIZE`]. Every size must be a multiple of the word size so
    /// that free blocks can hold their list link in place.
    pub fn new(classes: Vec<usize>) -> Result<Self, AllocError> {
        if classes.is_empty() {
            return Err(AllocError::InvalidTable("no classes"));
        }
        if classes.len() > MAX_CLASSES {
            return Err(AllocError::InvalidTable("too many classes"));
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AllocError::InvalidTable("classes must be strictly increasing"));
        }
        if *classes.last().unwrap() != MAX_CLASS_SIZE {
            return Err(AllocError::InvalidTable("last class must equal the maximum class size"));
        }
        if classes.iter().any(|&c| c < WORD || c % WORD != 0) {
            return Err(AllocError::InvalidTable("classes must be word-size multiples"));
        }
        let page_size = crate::vm_backend::page_size();
        if SUPERBLOCK_SIZE % page_size != 0 {
            return Err(AllocError::InvalidTable("superblock size must be a page multiple"));
        }

        let mut lookup = vec![0u8; MAX_CLASS_SIZE / WORD + 1];
        let mut class = 0;
        for (words, slot) in lookup.iter_mut().enumerate() {
            let size = words * WORD;
            while classes[class] < size {
                class += 1;
            }
            *slot = class as u8;
        }
        Ok(SizeClassTable {
            classes,
            lookup,
            page_size,
        })
    }

    /// The process-wide default table: 8-byte steps up to 32 bytes, 16-byte
    /// steps up to 128 bytes, then four classes per power of two.
    pub fn standard() -> &'static SizeClassTable {
        static TABLE: OnceLock<SizeClassTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            SizeClassTable::new(standard_classes()).expect("standard size-class table is valid")
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn superblock_size(&self) -> usize {
        SUPERBLOCK_SIZE
    }

    pub fn max_class_size(&self) -> usize {
        MAX_CLASS_SIZE
    }

    pub fn last_class(&self) -> ClassIndex {
        ClassIndex((self.classes.len() - 1) as u8)
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassIndex> + '_ {
        (0..self.classes.len()).map(|i| ClassIndex(i as u8))
    }

    pub fn class_for_size(&self, request: usize) -> Result<SizeRequest, AllocError> {
        if request == 0 {
            return Err(AllocError::ZeroSize);
        }
        if request > MAX_CLASS_SIZE {
            return Ok(SizeRequest::Large);
        }
        let words = request.div_ceil(WORD);
        Ok(SizeRequest::Class(ClassIndex(self.lookup[words])))
    }

    pub fn class_index(&self, raw: usize) -> Result<ClassIndex, AllocError> {
        if raw < self.classes.len() {
            Ok(ClassIndex(raw as u8))
        } else {
            Err(AllocError::InvalidClass(raw))
        }
    }

    pub fn block_size(&self, class: ClassIndex) -> Result<usize, AllocError> {
        self.classes
            .get(class.index())
            .copied()
            .ok_or(AllocError::InvalidClass(class.index()))
    }

    pub fn blocks_per_superblock(&self, class: ClassIndex) -> usize {
        SUPERBLOCK_SIZE / self.classes[class.index()]
    }

    /// Guaranteed alignment of every block of `class`: the largest power of
    /// two dividing the block size, capped at the page size.
    pub fn alignment(&self, class: ClassIndex) -> usize {
        let size = self.classes[class.index()];
        (1usize << size.trailing_zeros()).min(self.page_size)
    }
}

fn standard_classes() -> Vec<usize> {
    let mut classes = vec![16, 24, 32, 48, 64, 80, 96, 112, 128];
    let mut base = 128;
    while base < MAX_CLASS_SIZE {
        let step = base / 4;
        classes.extend((1..=4).map(|i| base + i * step));
        base *= 2;
    }
    classes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_scan(table: &SizeClassTable, request: usize) -> Option<usize> {
        table
            .classes()
            .map(|c| table.block_size(c).unwrap())
            .position(|size| size >= request)
    }

    #[test]
    fn minimum_request_maps_to_smallest_class() {
        let t = SizeClassTable::standard();
        assert_eq!(t.class_for_size(1).unwrap(), SizeRequest::Class(ClassIndex(0)));
    }

    #[test]
    fn max_class_boundary() {
        let t = SizeClassTable::standard();
        assert_eq!(t.class_for_size(16384).unwrap(), SizeRequest::Class(t.last_class()));
        assert_eq!(t.class_for_size(16385).unwrap(), SizeRequest::Large);
        assert_eq!(t.block_size(t.last_class()).unwrap(), 16384);
    }

    #[test]
    fn class_24_exists_and_is_found() {
        let t = SizeClassTable::standard();
        let expected = linear_scan(t, 24).unwrap();
        assert_eq!(t.block_size(ClassIndex(expected as u8)).unwrap(), 24);
        assert_eq!(t.class_for_size(24).unwrap(), SizeRequest::Class(ClassIndex(expected as u8)));
    }

    #[test]
    fn zero_request_rejected() {
        assert!(matches!(SizeClassTable::standard().class_for_size(0), Err(AllocError::ZeroSize)));
    }

    #[test]
    fn out_of_range_class_rejected() {
        let t = SizeClassTable::standard();
        assert!(matches!(t.block_size(ClassIndex(60)), Err(AllocError::InvalidClass(60))));
        assert!(t.class_index(t.len()).is_err());
    }

    #[test]
    fn blocks_per_superblock_examples() {
        let t = SizeClassTable::standard();
        let c64 = match t.class_for_size(64).unwrap() {
            SizeRequest::Class(c) => c,
            _ => unreachable!(),
        };
        assert_eq!(t.blocks_per_superblock(c64), 32768);
        assert_eq!(t.blocks_per_superblock(t.last_class()), 128);
        for c in t.classes() {
            assert!(t.blocks_per_superblock(c) * t.block_size(c).unwrap() <= SUPERBLOCK_SIZE);
        }
    }

    #[test]
    fn table_invariants() {
        let t = SizeClassTable::standard();
        let sizes: Vec<_> = t.classes().map(|c| t.block_size(c).unwrap()).collect();
        assert!(sizes.windows(2).all(|w| w[0] < w[1]));
        assert!(sizes.iter().all(|&s| s >= WORD));
        assert_eq!(SUPERBLOCK_SIZE % t.page_size(), 0);
    }

    #[test]
    fn waste_bound_holds_exhaustively() {
        let t = SizeClassTable::standard();
        for r in 16..=MAX_CLASS_SIZE {
            let SizeRequest::Class(c) = t.class_for_size(r).unwrap() else { panic!() };
            let b = t.block_size(c).unwrap();
            assert!(b as f64 / r as f64 <= WASTE_FACTOR, "request {r} -> {b}");
        }
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(SizeClassTable::new(vec![]).is_err());
        assert!(SizeClassTable::new(vec![32, 16, 16384]).is_err());
        assert!(SizeClassTable::new(vec![16, 32]).is_err());
        assert!(SizeClassTable::new(vec![4, 16384]).is_err());
        assert!(SizeClassTable::new(vec![12, 16384]).is_err());
        assert!(SizeClassTable::new(vec![16, 16384]).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn round_trip_matches_linear_scan(r in 1usize..=MAX_CLASS_SIZE) {
            let t = SizeClassTable::standard();
            let SizeRequest::Class(c) = t.class_for_size(r).unwrap() else { panic!() };
            proptest::prop_assert!(t.block_size(c).unwrap() >= r);
            proptest::prop_assert_eq!(Some(c.index()), linear_scan(t, r));
        }
    }
}

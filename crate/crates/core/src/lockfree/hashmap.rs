//! Michael's lock-free hash table: a fixed array of Harris-Michael buckets.

use std::sync::atomic::AtomicUsize;
use std::sync::Arc;

use super::{allocator_domain, list, ConcurrentSet};
use crate::alloc_api::Allocator;
use crate::error::AllocError;
use crate::oa_reclaim::{Domain, LocalHandle, ReclaimConfig};

pub const LOAD_FACTOR: f64 = 0.75;

/// Bucket count giving `LOAD_FACTOR` at `expected` keys.
pub fn bucket_count_for(expected: usize) -> usize {
    ((expected as f64 / LOAD_FACTOR).ceil() as usize).max(1)
}

pub struct OaHashMap {
    buckets: Box<[AtomicUsize]>,
    domain: Arc<Domain>,
    alloc: &'static Allocator,
}

impl std::fmt::Debug for OaHashMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OaHashMap")
            .field("buckets", &self.buckets.len())
            .field("scheme", &self.domain.scheme())
            .finish()
    }
}

impl OaHashMap {
    pub fn with_domain(domain: Arc<Domain>, alloc: &'static Allocator, bucket_count: usize) -> Self {
        assert!(bucket_count > 0, "a hash map needs at least one bucket");
        OaHashMap {
            buckets: (0..bucket_count).map(|_| AtomicUsize::new(0)).collect(),
            domain,
            alloc,
        }
    }

    /// Sized for `expected` keys at a load factor of 0.75.
    pub fn new(config: ReclaimConfig, alloc: &'static Allocator, expected: usize) -> Result<Self, AllocError> {
        Ok(Self::with_domain(allocator_domain(config, alloc)?, alloc, bucket_count_for(expected)))
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket_of(&self, key: u64) -> usize {
        let h = key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        ((h as u128 * self.buckets.len() as u128) >> 64) as usize
    }

    fn head(&self, key: u64) -> &AtomicUsize {
        &self.buckets[self.bucket_of(key)]
    }

    pub fn search_with(&self, h: &LocalHandle, key: u64) -> bool {
        list::search(self.head(key), h, key)
    }

    pub fn insert_with(&self, h: &LocalHandle, key: u64, value: u64) -> Result<bool, AllocError> {
        list::insert(self.head(key), h, self.alloc, key, value)
    }

    pub fn remove_with(&self, h: &LocalHandle, key: u64) -> bool {
        list::remove(self.head(key), h, key)
    }

    /// Keys of one bucket in list order, at quiescence.
    pub fn bucket_keys(&self, bucket: usize) -> Vec<u64> {
        list::keys(&self.buckets[bucket])
    }
}

impl ConcurrentSet for OaHashMap {
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
        let mut all: Vec<u64> = self.buckets.iter().flat_map(list::keys).collect();
        all.sort_unstable();
        all
    }
}

impl Drop for OaHashMap {
    fn drop(&mut self) {
        for b in self.buckets.iter() {
            list::free_all(b, self.alloc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oa_reclaim::ReclaimScheme;
    use crate::vm_backend::BackendKind;

    fn map(expected: usize) -> OaHashMap {
        let alloc = Allocator::for_backend(BackendKind::KeepResident).unwrap();
        OaHashMap::new(ReclaimConfig::new(ReclaimScheme::Bit), alloc, expected).unwrap()
    }

    #[test]
    fn sized_for_load_factor() {
        assert_eq!(bucket_count_for(10_000), 13_334);
        assert_eq!(map(10_000).bucket_count(), 13_334);
        assert_eq!(bucket_count_for(3), 4);
    }

    #[test]
    fn round_trip() {
        let m = map(100);
        assert!(m.insert(42, 1).unwrap());
        assert!(m.search(42));
        assert!(m.remove(42));
        assert!(!m.search(42));
    }

    #[test]
    fn buckets_are_sorted_and_stable() {
        let m = map(16);
        for k in (0..200).rev() {
            m.insert(k, k).unwrap();
        }
        assert_eq!(m.keys(), (0..200).collect::<Vec<_>>());
        for b in 0..m.bucket_count() {
            let keys = m.bucket_keys(b);
            assert!(keys.windows(2).all(|w| w[0] < w[1]));
            assert!(keys.iter().all(|&k| m.bucket_of(k) == b));
        }
    }

    #[test]
    fn hash_spreads_sequential_keys() {
        let m = map(10_000);
        let mut used = vec![0u32; m.bucket_count()];
        for k in 0..10_000 {
            used[m.bucket_of(k)] += 1;
        }
        assert!(*used.iter().max().unwrap() <= 8);
    }
}

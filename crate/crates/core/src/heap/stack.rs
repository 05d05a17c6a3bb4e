//! Treiber stack of descriptors with an ABA tag in the head word.

use std::sync::atomic::{AtomicIsize, AtomicU64, Ordering};

use super::descriptor::Descriptor;

// Descriptors are 64-byte aligned and live below 2^48, so the pointer
// shifted right by 6 fits in 42 bits and leaves 22 bits of tag.
const PTR_SHIFT: u32 = 6;
const PTR_BITS: u32 = 42;
const PTR_MASK: u64 = (1 << PTR_BITS) - 1;

fn pack(ptr: *const Descriptor, tag: u64) -> u64 {
    let p = ptr as u64;
    debug_assert_eq!(p & ((1 << PTR_SHIFT) - 1), 0);
    debug_assert!(p >> (PTR_BITS + PTR_SHIFT) == 0, "descriptor above 2^48");
    (p >> PTR_SHIFT) | (tag << PTR_BITS)
}

fn unpack(word: u64) -> (*const Descriptor, u64) {
    (((word & PTR_MASK) << PTR_SHIFT) as *const Descriptor, word >> PTR_BITS)
}

#[derive(Debug, Default)]
pub struct DescriptorStack {
    head: AtomicU64,
    /// Exact at quiescent points only.
    len: AtomicIsize,
}

impl DescriptorStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, desc: &'static Descriptor) {
        let mut head = self.head.load(Ordering::Acquire);
        loop {
            let (top, tag) = unpack(head);
            desc.stack_next.store(top as usize, Ordering::Relaxed);
            match self.head.compare_exchange_weak(
                head,
                pack(desc, tag.wrapping_add(1)),
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => break,
                Err(h) => head = h,
            }
        }
        self.len.fetch_add(1, Ordering::Relaxed);
    }

    pub fn pop(&self) -> Option<&'static Descriptor> {
        let mut head = self.head.load(Ordering::Acquire);
        loop {
            let (top, tag) = unpack(head);
            if top.is_null() {
                return None;
            }
            // SAFETY: descriptors are never freed, so a stale top is still
            // a valid object; the tagged CAS rejects stale links.
            let next = unsafe { (*top).stack_next.load(Ordering::Relaxed) } as *const Descriptor;
            match self.head.compare_exchange_weak(
                head,
                pack(next, tag.wrapping_add(1)),
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => {
                    self.len.fetch_sub(1, Ordering::Relaxed);
                    // SAFETY: see above.
                    return Some(unsafe { &*top });
                }
                Err(h) => head = h,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len.load(Ordering::Relaxed).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        unpack(self.head.load(Ordering::Acquire)).0.is_null()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    #[test]
    fn lifo_order() {
        let s = DescriptorStack::new();
        let a = Descriptor::detached();
        let b = Descriptor::detached();
        s.push(a);
        s.push(b);
        assert_eq!(s.len(), 2);
        assert!(std::ptr::eq(s.pop().unwrap(), b));
        assert!(std::ptr::eq(s.pop().unwrap(), a));
        assert!(s.pop().is_none());
        assert!(s.is_empty());
    }

    #[test]
    fn concurrent_push_pop_preserves_elements() {
        let s = Arc::new(DescriptorStack::new());
        let descs: Vec<&'static Descriptor> = (0..64).map(|_| Descriptor::detached()).collect();
        for d in &descs {
            s.push(d);
        }
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let s = s.clone();
                std::thread::spawn(move || {
                    for _ in 0..20_000 {
                        if let Some(d) = s.pop() {
                            s.push(d);
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let mut seen = HashSet::new();
        while let Some(d) = s.pop() {
            assert!(seen.insert(d as *const Descriptor as usize));
        }
        assert_eq!(seen.len(), 64);
    }
}

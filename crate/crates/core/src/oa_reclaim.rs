//! Optimistic-access memory reclamation over persistent allocations.
//!
//! Readers traverse without protection and call [`LocalHandle::check_warning`]
//! after each read; a warning means some node may have been freed since the
//! last check, so the reader restarts from a known-valid root. Reads of freed
//! nodes cannot fault because nodes come from `palloc`. Before a mutating
//! compare-and-swap the thread publishes hazard slots for every node involved
//! and validates them with a single warning check.
//!
//! Two warning mechanisms are provided. [`ReclaimScheme::Bit`] sets a flag on
//! every registered thread before each scan. [`ReclaimScheme::Ver`] uses a
//! global clock; a thread that sees the clock move since its last retire may
//! scan without sending a warning of its own.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::marker::PhantomData;
use std::ptr;
use std::rc::Rc;
use std::sync::atomic::{fence, AtomicBool, AtomicPtr, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::AllocError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ReclaimScheme {
    /// Per-thread warning bits.
    Bit,
    /// Global warning clock.
    #[default]
    Ver,
    /// No reclamation: retired nodes are leaked.
    None,
}

impl ReclaimScheme {
    pub const ALL: [ReclaimScheme; 3] = [ReclaimScheme::Bit, ReclaimScheme::Ver, ReclaimScheme::None];

    pub fn as_str(self) -> &'static str {
        match self {
            ReclaimScheme::Bit => "bit",
            ReclaimScheme::Ver => "ver",
            ReclaimScheme::None => "none",
        }
    }
}

impl fmt::Display for ReclaimScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ReclaimScheme {
    type Err = AllocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bit" => Ok(ReclaimScheme::Bit),
            "ver" => Ok(ReclaimScheme::Ver),
            "none" | "nr" => Ok(ReclaimScheme::None),
            other => Err(AllocError::InvalidConfig(format!("unknown reclamation scheme `{other}`"))),
        }
    }
}

pub const DEFAULT_LIMBO_CAPACITY: usize = 64;
pub const DEFAULT_HAZARD_SLOTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReclaimConfig {
    pub scheme: ReclaimScheme,
    /// Limbo size that triggers reclamation (`R`).
    pub limbo_capacity: usize,
    /// Minimum limbo size for a clock-driven scan (`X`).
    pub scan_threshold: usize,
    /// Hazard slots per thread (`K`).
    pub hazard_slots: usize,
    /// Record validated protections and count frees of nodes a thread still
    /// holds under a validated hazard.
    pub audit: bool,
}

impl Default for ReclaimConfig {
    fn default() -> Self {
        Self::new(ReclaimScheme::default())
    }
}

impl ReclaimConfig {
    pub fn new(scheme: ReclaimScheme) -> Self {
        ReclaimConfig {
            scheme,
            limbo_capacity: DEFAULT_LIMBO_CAPACITY,
            scan_threshold: DEFAULT_LIMBO_CAPACITY / 2,
            hazard_slots: DEFAULT_HAZARD_SLOTS,
            audit: false,
        }
    }

    /// Sets `R` and resets `X` to `R / 2`.
    pub fn with_limbo_capacity(mut self, r: usize) -> Self {
        self.limbo_capacity = r;
        self.scan_threshold = r / 2;
        self
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        if self.limbo_capacity == 0 {
            return Err(AllocError::InvalidConfig("limbo capacity must be positive".into()));
        }
        if self.scan_threshold >= self.limbo_capacity {
            return Err(AllocError::InvalidConfig("scan threshold must be below limbo capacity".into()));
        }
        if self.hazard_slots == 0 {
            return Err(AllocError::InvalidConfig("at least one hazard slot is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtectResult {
    Valid,
    MustRestart,
}

impl ProtectResult {
    pub fn is_valid(self) -> bool {
        self == ProtectResult::Valid
    }
}

/// Aggregated counters of a domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReclaimStats {
    pub retired: u64,
    pub freed: u64,
    /// Nodes still waiting in limbo lists, including orphaned ones.
    pub in_limbo: u64,
    pub scans: u64,
    /// Warning broadcasts (bit) or successful clock increments (ver).
    pub warnings: u64,
    pub restarts: u64,
    pub audit_violations: u64,
    pub clock: u64,
}

#[derive(Default)]
struct Counters {
    retired: AtomicU64,
    freed: AtomicU64,
    limbo: AtomicU64,
    scans: AtomicU64,
    warnings: AtomicU64,
    restarts: AtomicU64,
    audit_violations: AtomicU64,
}

fn bump(c: &AtomicU64, n: u64) {
    c.fetch_add(n, Ordering::Relaxed);
}

struct ThreadRecord {
    next: *mut ThreadRecord,
    in_use: AtomicBool,
    warning: AtomicBool,
    hazards: Box<[AtomicUsize]>,
    validated: Box<[AtomicUsize]>,
    counters: Counters,
}

struct OrphanBatch {
    next: *mut OrphanBatch,
    /// Clock value when the batch was orphaned; every node in it was
    /// unlinked before this reading.
    stamp: u64,
    nodes: Vec<usize>,
}

pub type FreeFn = Box<dyn Fn(usize) + Send + Sync>;

/// Shared reclamation state: the thread registry, the warning clock and
/// orphaned limbo lists of exited threads.
pub struct Domain {
    config: ReclaimConfig,
    clock: AtomicU64,
    records: AtomicPtr<ThreadRecord>,
    orphans: AtomicPtr<OrphanBatch>,
    orphaned: AtomicU64,
    free: FreeFn,
}

// SAFETY: records and orphan batches are only reached through atomics; the
// raw links are immutable once published (records) or owned by whoever
// detached the chain (orphans).
unsafe impl Send for Domain {}
unsafe impl Sync for Domain {}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Domain").field("config", &self.config).field("stats", &self.stats()).finish()
    }
}

impl Domain {
    /// `free` receives every reclaimed node address.
    pub fn new(config: ReclaimConfig, free: FreeFn) -> Result<Arc<Domain>, AllocError> {
        config.validate()?;
        Ok(Arc::new(Domain {
            config,
            clock: AtomicU64::new(0),
            records: AtomicPtr::new(ptr::null_mut()),
            orphans: AtomicPtr::new(ptr::null_mut()),
            orphaned: AtomicU64::new(0),
            free,
        }))
    }

    pub fn config(&self) -> &ReclaimConfig {
        &self.config
    }

    pub fn scheme(&self) -> ReclaimScheme {
        self.config.scheme
    }

    pub fn clock(&self) -> u64 {
        self.clock.load(Ordering::SeqCst)
    }

    fn records(&self) -> impl Iterator<Item = &ThreadRecord> {
        let mut cur = self.records.load(Ordering::Acquire);
        std::iter::from_fn(move || {
            // SAFETY: records live until the domain is dropped.
            let r = unsafe { cur.as_ref()? };
            cur = r.next;
            Some(r)
        })
    }

    /// Registers the calling thread, reusing a released record if one exists.
    pub fn register(self: &Arc<Self>) -> LocalHandle {
        let record = self
            .records()
            .find(|r| {
                !r.in_use.load(Ordering::Relaxed)
                    && r.in_use.compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed).is_ok()
            })
            .map(|r| r as *const ThreadRecord)
            .unwrap_or_else(|| self.push_record());
        // SAFETY: just acquired; lives as long as the domain.
        let rec = unsafe { &*record };
        rec.warning.store(false, Ordering::Relaxed);
        let clock = self.clock();
        LocalHandle {
            domain: self.clone(),
            record,
            local_clock: Cell::new(clock),
            last_retire: Cell::new(clock),
            limbo: RefCell::new(Vec::with_capacity(self.config.limbo_capacity + 1)),
            scratch: RefCell::new(Vec::new()),
            _not_send: PhantomData,
        }
    }

    fn push_record(&self) -> *const ThreadRecord {
        let k = self.config.hazard_slots;
        let rec = Box::into_raw(Box::new(ThreadRecord {
            next: ptr::null_mut(),
            in_use: AtomicBool::new(true),
            warning: AtomicBool::new(false),
            hazards: (0..k).map(|_| AtomicUsize::new(0)).collect(),
            validated: (0..k).map(|_| AtomicUsize::new(0)).collect(),
            counters: Counters::default(),
        }));
        let mut head = self.records.load(Ordering::Relaxed);
        loop {
            // SAFETY: unpublished, exclusively ours.
            unsafe { (*rec).next = head };
            match self.records.compare_exchange_weak(head, rec, Ordering::Release, Ordering::Relaxed) {
                Ok(_) => return rec,
                Err(h) => head = h,
            }
        }
    }

    /// Sets every registered thread's warning bit, in registration order.
    pub fn broadcast_warning(&self) {
        for r in self.records() {
            r.warning.store(true, Ordering::SeqCst);
        }
    }

    /// Fires a clock warning (`v -> v + 1`) on behalf of no registered
    /// thread. Returns the new clock value.
    pub fn advance_clock(&self) -> u64 {
        let mut v = self.clock.load(Ordering::SeqCst);
        loop {
            match self.clock.compare_exchange(v, v + 1, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return v + 1,
                Err(now) => v = now,
            }
        }
    }

    fn push_orphans(&self, batch: Box<OrphanBatch>) {
        let batch = Box::into_raw(batch);
        let mut head = self.orphans.load(Ordering::Relaxed);
        loop {
            // SAFETY: unpublished, exclusively ours.
            unsafe { (*batch).next = head };
            match self.orphans.compare_exchange_weak(head, batch, Ordering::Release, Ordering::Relaxed) {
                Ok(_) => return,
                Err(h) => head = h,
            }
        }
    }

    fn take_orphans(&self) -> Vec<Box<OrphanBatch>> {
        let mut cur = self.orphans.swap(ptr::null_mut(), Ordering::Acquire);
        let mut out = Vec::new();
        while !cur.is_null() {
            // SAFETY: the detached chain is exclusively ours.
            let b = unsafe { Box::from_raw(cur) };
            cur = b.next;
            out.push(b);
        }
        out
    }

    pub fn stats(&self) -> ReclaimStats {
        let mut s = ReclaimStats { clock: self.clock(), ..Default::default() };
        for r in self.records() {
            let c = &r.counters;
            s.retired += c.retired.load(Ordering::Relaxed);
            s.freed += c.freed.load(Ordering::Relaxed);
            s.in_limbo += c.limbo.load(Ordering::Relaxed);
            s.scans += c.scans.load(Ordering::Relaxed);
            s.warnings += c.warnings.load(Ordering::Relaxed);
            s.restarts += c.restarts.load(Ordering::Relaxed);
            s.audit_violations += c.audit_violations.load(Ordering::Relaxed);
        }
        s.in_limbo += self.orphaned.load(Ordering::Relaxed);
        s
    }

    /// Runs `f` with the calling thread's handle for this domain, registering
    /// on first use. The handle is kept until the thread exits or calls
    /// [`Domain::release_current_thread`].
    pub fn with_local<R>(self: &Arc<Self>, f: impl FnOnce(&LocalHandle) -> R) -> R {
        let cached = HANDLES.try_with(|handles| {
            let mut hs = handles.borrow_mut();
            match hs.iter().find(|h| Arc::ptr_eq(&h.domain, self)) {
                Some(h) => h.clone(),
                None => {
                    let h = Rc::new(self.register());
                    hs.push(h.clone());
                    h
                }
            }
        });
        match cached {
            Ok(h) => f(&h),
            Err(_) => f(&self.register()),
        }
    }

    /// Drops the calling thread's cached handle, orphaning its limbo list.
    pub fn release_current_thread(self: &Arc<Self>) {
        let handle = HANDLES
            .try_with(|handles| {
                let mut hs = handles.borrow_mut();
                hs.iter().position(|h| Arc::ptr_eq(&h.domain, self)).map(|i| hs.swap_remove(i))
            })
            .ok()
            .flatten();
        drop(handle);
    }
}

impl Drop for Domain {
    fn drop(&mut self) {
        for batch in self.take_orphans() {
            for &n in &batch.nodes {
                (self.free)(n);
            }
        }
        let mut cur = *self.records.get_mut();
        while !cur.is_null() {
            // SAFETY: no handles remain (they hold an Arc), so we own them.
            let r = unsafe { Box::from_raw(cur) };
            cur = r.next;
        }
    }
}

thread_local! {
    static HANDLES: RefCell<Vec<Rc<LocalHandle>>> = const { RefCell::new(Vec::new()) };
}

/// A thread's registration in a [`Domain`]. Not `Send`: hazard slots and the
/// limbo list belong to the registering thread.
pub struct LocalHandle {
    domain: Arc<Domain>,
    record: *const ThreadRecord,
    local_clock: Cell<u64>,
    last_retire: Cell<u64>,
    limbo: RefCell<Vec<usize>>,
    scratch: RefCell<Vec<usize>>,
    _not_send: PhantomData<*const ()>,
}

impl fmt::Debug for LocalHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalHandle")
            .field("local_clock", &self.local_clock.get())
            .field("last_retire", &self.last_retire.get())
            .field("limbo", &self.limbo.borrow().len())
            .finish()
    }
}

impl LocalHandle {
    fn rec(&self) -> &ThreadRecord {
        // SAFETY: the record outlives the domain we hold an Arc to.
        unsafe { &*self.record }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn local_clock(&self) -> u64 {
        self.local_clock.get()
    }

    pub fn last_retire_time(&self) -> u64 {
        self.last_retire.get()
    }

    pub fn limbo_len(&self) -> usize {
        self.limbo.borrow().len()
    }

    pub fn limbo(&self) -> Vec<usize> {
        self.limbo.borrow().clone()
    }

    /// True if a warning arrived since the last check; consumes it.
    ///
    /// Call after reading shared nodes: the acquire fence orders those reads
    /// before the warning load.
    #[inline]
    pub fn check_warning(&self) -> bool {
        fence(Ordering::Acquire);
        match self.domain.config.scheme {
            ReclaimScheme::Bit => {
                let w = &self.rec().warning;
                w.load(Ordering::Relaxed) && w.swap(false, Ordering::AcqRel)
            }
            ReclaimScheme::Ver => {
                let now = self.domain.clock.load(Ordering::Acquire);
                if now > self.local_clock.get() {
                    self.local_clock.set(now);
                    true
                } else {
                    false
                }
            }
            ReclaimScheme::None => false,
        }
    }

    /// Publishes `addr` in hazard slot `slot` without validating.
    #[inline]
    pub fn set_hazard(&self, slot: usize, addr: usize) {
        let rec = self.rec();
        if self.domain.config.audit {
            rec.validated[slot].store(0, Ordering::SeqCst);
        }
        rec.hazards[slot].store(addr, Ordering::Relaxed);
    }

    /// One validity check covering every hazard slot set so far.
    #[inline]
    pub fn validate(&self) -> ProtectResult {
        fence(Ordering::SeqCst);
        if self.check_warning() {
            return ProtectResult::MustRestart;
        }
        if self.domain.config.audit {
            let rec = self.rec();
            for (h, v) in rec.hazards.iter().zip(rec.validated.iter()) {
                v.store(h.load(Ordering::Relaxed), Ordering::SeqCst);
            }
        }
        ProtectResult::Valid
    }

    pub fn protect(&self, slot: usize, addr: usize) -> ProtectResult {
        self.set_hazard(slot, addr);
        self.validate()
    }

    pub fn unprotect_all(&self) {
        let rec = self.rec();
        for (h, v) in rec.hazards.iter().zip(rec.validated.iter()) {
            v.store(0, Ordering::Relaxed);
            h.store(0, Ordering::Release);
        }
    }

    pub fn note_restart(&self) {
        bump(&self.rec().counters.restarts, 1);
    }

    /// Retires an unlinked node with the domain's scheme. Under the clock
    /// scheme the local clock is refreshed first, so nodes are stamped with
    /// a clock reading taken after they were unlinked. Must be called
    /// outside any traversal: it may consume a pending warning.
    pub fn retire(&self, node: usize) {
        match self.domain.config.scheme {
            ReclaimScheme::Bit => self.retire_bit(node),
            ReclaimScheme::Ver => {
                self.check_warning();
                self.retire_ver(node);
            }
            ReclaimScheme::None => {}
        }
    }

    /// Warning-bit retire: add, and when the limbo is full warn every
    /// thread and free what no hazard slot protects.
    pub fn retire_bit(&self, node: usize) {
        self.limbo.borrow_mut().push(node);
        let c = &self.rec().counters;
        bump(&c.retired, 1);
        bump(&c.limbo, 1);
        if self.limbo.borrow().len() >= self.domain.config.limbo_capacity {
            let orphans = self.domain.take_orphans();
            self.domain.broadcast_warning();
            bump(&c.warnings, 1);
            self.scan(orphans);
        }
    }

    /// Clock retire, step for step: bump the clock when the limbo is full
    /// and no warning has been seen since the previous retire; scan when a
    /// warning has been seen and the limbo holds more than `X` nodes.
    pub fn retire_ver(&self, node: usize) {
        let cfg = &self.domain.config;
        let c = &self.rec().counters;
        if self.limbo.borrow().len() >= cfg.limbo_capacity && self.last_retire.get() == self.local_clock.get() {
            let local = self.local_clock.get();
            if self
                .domain
                .clock
                .compare_exchange(local, local + 1, Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
            {
                bump(&c.warnings, 1);
            }
            self.local_clock.set(self.domain.clock.load(Ordering::SeqCst));
        }
        if self.last_retire.get() < self.local_clock.get() && self.limbo.borrow().len() > cfg.scan_threshold {
            let local = self.local_clock.get();
            let mut eligible = Vec::new();
            for batch in self.domain.take_orphans() {
                if batch.stamp < local {
                    eligible.push(batch);
                } else {
                    self.domain.push_orphans(batch);
                }
            }
            self.scan(eligible);
        }
        self.last_retire.set(self.local_clock.get());
        self.limbo.borrow_mut().push(node);
        bump(&c.retired, 1);
        bump(&c.limbo, 1);
    }

    fn scan(&self, orphans: Vec<Box<OrphanBatch>>) {
        fence(Ordering::SeqCst);
        let domain = &*self.domain;
        let c = &self.rec().counters;
        bump(&c.scans, 1);
        let mut set = self.scratch.borrow_mut();
        set.clear();
        for r in domain.records() {
            set.extend(r.hazards.iter().map(|h| h.load(Ordering::SeqCst)).filter(|&a| a != 0));
        }
        set.sort_unstable();
        let audit = domain.config.audit;
        let free_one = |n: usize| {
            if audit && domain.records().any(|r| r.validated.iter().any(|v| v.load(Ordering::SeqCst) == n)) {
                bump(&c.audit_violations, 1);
            }
            (domain.free)(n);
        };

        let mut limbo = self.limbo.borrow_mut();
        let before = limbo.len();
        limbo.retain(|&n| {
            let keep = set.binary_search(&n).is_ok();
            if !keep {
                free_one(n);
            }
            keep
        });
        let freed = (before - limbo.len()) as u64;
        bump(&c.freed, freed);
        c.limbo.fetch_sub(freed, Ordering::Relaxed);

        for mut batch in orphans {
            let before = batch.nodes.len();
            batch.nodes.retain(|&n| {
                let keep = set.binary_search(&n).is_ok();
                if !keep {
                    free_one(n);
                }
                keep
            });
            let freed = (before - batch.nodes.len()) as u64;
            bump(&c.freed, freed);
            domain.orphaned.fetch_sub(freed, Ordering::Relaxed);
            if !batch.nodes.is_empty() {
                domain.push_orphans(batch);
            }
        }
    }
}

impl Drop for LocalHandle {
    fn drop(&mut self) {
        self.unprotect_all();
        let nodes = std::mem::take(self.limbo.get_mut());
        let rec = self.rec();
        if !nodes.is_empty() {
            let n = nodes.len() as u64;
            rec.counters.limbo.fetch_sub(n, Ordering::Relaxed);
            self.domain.orphaned.fetch_add(n, Ordering::Relaxed);
            let stamp = self.domain.clock();
            self.domain.push_orphans(Box::new(OrphanBatch { next: ptr::null_mut(), stamp, nodes }));
        }
        rec.in_use.store(false, Ordering::Release);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn recording(config: ReclaimConfig) -> (Arc<Domain>, Arc<Mutex<Vec<usize>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        let sink = log.clone();
        let d = Domain::new(config, Box::new(move |n| sink.lock().unwrap().push(n))).unwrap();
        (d, log)
    }

    fn cfg(scheme: ReclaimScheme, r: usize) -> ReclaimConfig {
        ReclaimConfig::new(scheme).with_limbo_capacity(r)
    }

    #[test]
    fn no_warning_means_false() {
        for scheme in [ReclaimScheme::Bit, ReclaimScheme::Ver] {
            let (d, _) = recording(cfg(scheme, 4));
            let h = d.register();
            assert!(!h.check_warning());
            assert_eq!(h.protect(0, 0x1000), ProtectResult::Valid);
        }
    }

    #[test]
    fn bit_warning_seen_exactly_once() {
        let (d, _) = recording(cfg(ReclaimScheme::Bit, 4));
        let a = d.register();
        let b = d.register();
        d.broadcast_warning();
        assert!(a.check_warning());
        assert!(!a.check_warning());
        assert_eq!(b.protect(0, 0x40), ProtectResult::MustRestart);
        assert_eq!(b.protect(0, 0x40), ProtectResult::Valid);
    }

    #[test]
    fn ver_warnings_coalesce() {
        let (d, _) = recording(cfg(ReclaimScheme::Ver, 4));
        let h = d.register();
        d.advance_clock();
        d.advance_clock();
        assert!(h.check_warning());
        assert_eq!(h.local_clock(), 2);
        assert!(!h.check_warning());
    }

    #[test]
    fn bit_scan_frees_unprotected_and_keeps_protected() {
        let (d, log) = recording(cfg(ReclaimScheme::Bit, 4));
        let h = d.register();
        let other = d.register();
        other.set_hazard(1, 0x300);
        for n in [0x100, 0x200, 0x300] {
            h.retire(n);
        }
        assert!(log.lock().unwrap().is_empty());
        h.retire(0x400);
        let mut freed = log.lock().unwrap().clone();
        freed.sort();
        assert_eq!(freed, [0x100, 0x200, 0x400]);
        assert_eq!(h.limbo(), [0x300]);
        let s = d.stats();
        assert_eq!((s.retired, s.freed, s.in_limbo, s.warnings, s.scans), (4, 3, 1, 1, 1));
        assert!(other.check_warning());
    }

    #[test]
    fn ver_single_thread_bumps_once_then_scans() {
        let (d, log) = recording(cfg(ReclaimScheme::Ver, 4));
        let h = d.register();
        for n in 1..=4 {
            h.retire(n * 16);
        }
        assert_eq!(d.clock(), 0);
        assert_eq!(h.limbo_len(), 4);
        h.retire(80);
        assert_eq!(d.clock(), 1);
        assert_eq!(*log.lock().unwrap(), [16, 32, 48, 64]);
        assert_eq!(h.limbo(), [80]);
        assert_eq!(h.last_retire_time(), 1);
    }

    #[test]
    fn ver_reuses_foreign_warning() {
        let (d, log) = recording(cfg(ReclaimScheme::Ver, 4));
        let a = d.register();
        let b = d.register();
        for n in 1..=3 {
            b.retire(n * 16);
        }
        // A warning fired elsewhere after b's nodes were retired.
        a.check_warning();
        let before = d.clock();
        d.clock.compare_exchange(before, before + 1, Ordering::SeqCst, Ordering::SeqCst).unwrap();
        b.retire(64);
        assert_eq!(d.clock(), before + 1);
        assert_eq!(*log.lock().unwrap(), [16, 32, 48]);
        assert_eq!(d.stats().warnings, 0);
    }

    #[test]
    fn ver_failed_cas_still_enables_scan() {
        let (d, log) = recording(cfg(ReclaimScheme::Ver, 2));
        let h = d.register();
        h.retire_ver(16);
        h.retire_ver(32);
        // Another thread bumps; h's local clock is stale so its CAS fails.
        d.clock.store(1, Ordering::SeqCst);
        h.retire_ver(48);
        assert_eq!(h.local_clock(), 1);
        assert_eq!(*log.lock().unwrap(), [16, 32]);
        assert_eq!(d.stats().warnings, 0);
    }

    #[test]
    fn unprotect_is_idempotent_and_unblocks_freeing() {
        let (d, log) = recording(cfg(ReclaimScheme::Bit, 2));
        let h = d.register();
        let reader = d.register();
        reader.protect(0, 0x500);
        h.retire(0x500);
        h.retire(0x600);
        assert_eq!(*log.lock().unwrap(), [0x600]);
        reader.unprotect_all();
        reader.unprotect_all();
        h.retire(0x700);
        assert!(log.lock().unwrap().contains(&0x500));
    }

    #[test]
    fn exited_thread_limbo_is_adopted() {
        let (d, log) = recording(cfg(ReclaimScheme::Bit, 4));
        {
            let h = d.register();
            h.retire(0x10);
            h.retire(0x20);
        }
        assert_eq!(d.stats().in_limbo, 2);
        let h = d.register();
        for n in [0x30, 0x40, 0x50, 0x60] {
            h.retire(n);
        }
        let mut freed = log.lock().unwrap().clone();
        freed.sort();
        assert_eq!(freed, [0x10, 0x20, 0x30, 0x40, 0x50, 0x60]);
        let s = d.stats();
        assert_eq!(s.retired, s.freed + s.in_limbo);
    }

    #[test]
    fn records_are_reused_after_release() {
        let (d, _) = recording(cfg(ReclaimScheme::Ver, 4));
        for _ in 0..10 {
            drop(d.register());
        }
        assert_eq!(d.records().count(), 1);
        d.with_local(|_| ());
        d.with_local(|_| ());
        assert_eq!(d.records().count(), 1);
        d.release_current_thread();
    }

    #[test]
    fn none_never_frees() {
        let (d, log) = recording(cfg(ReclaimScheme::None, 2));
        let h = d.register();
        for n in 1..100 {
            h.retire(n * 8);
        }
        assert!(log.lock().unwrap().is_empty());
        assert!(!h.check_warning());
        assert_eq!(d.stats().retired, 0);
    }

    #[test]
    fn config_validation() {
        assert!(ReclaimConfig::new(ReclaimScheme::Bit).with_limbo_capacity(0).validate().is_err());
        let mut c = ReclaimConfig::default();
        c.scan_threshold = c.limbo_capacity;
        assert!(c.validate().is_err());
        assert_eq!("ver".parse::<ReclaimScheme>().unwrap(), ReclaimScheme::Ver);
        assert!("epoch".parse::<ReclaimScheme>().is_err());
    }
}

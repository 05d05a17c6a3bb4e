//! Operating-system virtual memory: superblock reservation and release, and
//! the strategies that give up the physical frames of a persistent
//! superblock while keeping its address range readable.
//!
//! Neutralized ranges are never written by the heap. Reads from them return
//! unspecified data (zeros for [`BackendKind::AdviseRelease`], the shared
//! region's contents for [`BackendKind::SharedRemap`]) but never fault.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use crate::error::AllocError;
use crate::size_classes::SUPERBLOCK_SIZE;

/// Environment variable selecting the backend of the global allocator.
pub const BACKEND_ENV: &str = "OAMALLOC_BACKEND";

/// How empty persistent superblocks give memory back.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum BackendKind {
    /// Persistent superblocks keep their frames and never become empty.
    #[default]
    KeepResident,
    /// `madvise(MADV_DONTNEED)`: the range reverts to zero-fill-on-demand.
    AdviseRelease,
    /// The range is remapped onto one process-wide shared region.
    SharedRemap,
}

impl BackendKind {
    pub const ALL: [BackendKind; 3] = [
        BackendKind::KeepResident,
        BackendKind::AdviseRelease,
        BackendKind::SharedRemap,
    ];

    /// Whether persistent superblocks can become empty and release frames.
    pub fn releases_memory(self) -> bool {
        !matches!(self, BackendKind::KeepResident)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::KeepResident => "keep",
            BackendKind::AdviseRelease => "advise",
            BackendKind::SharedRemap => "shared",
        }
    }

    /// Reads [`BACKEND_ENV`]; unset means [`BackendKind::KeepResident`].
    pub fn from_env() -> Result<Self, AllocError> {
        match std::env::var(BACKEND_ENV) {
            Ok(v) => v.parse(),
            Err(std::env::VarError::NotPresent) => Ok(BackendKind::default()),
            Err(e) => Err(AllocError::InvalidConfig(format!("{BACKEND_ENV}: {e}"))),
        }
    }

    /// Whether this platform implements the backend.
    pub fn is_supported(self) -> bool {
        cfg!(target_os = "linux") || self == BackendKind::KeepResident
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = AllocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "keep" => Ok(BackendKind::KeepResident),
            "advise" => Ok(BackendKind::AdviseRelease),
            "shared" => Ok(BackendKind::SharedRemap),
            other => Err(AllocError::InvalidConfig(format!(
                "unknown backend {other:?} (expected keep, advise or shared)"
            ))),
        }
    }
}

pub fn page_size() -> usize {
    static PAGE: OnceLock<usize> = OnceLock::new();
    // SAFETY: sysconf has no preconditions.
    *PAGE.get_or_init(|| unsafe { libc::sysconf(libc::_SC_PAGESIZE) as usize })
}

/// Best-effort resident-set size of the process, from `/proc/self/statm`.
pub fn resident_bytes() -> Option<usize> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: usize = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * page_size())
}

/// A file-backed shared mapping that every neutralized superblock of a
/// [`BackendKind::SharedRemap`] backend is mapped onto.
#[derive(Debug)]
pub struct SharedRegion {
    fd: libc::c_int,
    base: usize,
    len: usize,
}

impl SharedRegion {
    fn create(len: usize) -> Result<Self, AllocError> {
        #[cfg(target_os = "linux")]
        {
            // SAFETY: the name is a valid NUL-terminated string.
            let fd = unsafe { libc::memfd_create(c"oamalloc-shared".as_ptr(), libc::MFD_CLOEXEC) };
            if fd < 0 {
                return Err(AllocError::last_os("memfd_create"));
            }
            // SAFETY: fd is a fresh memfd we own.
            if unsafe { libc::ftruncate(fd, len as libc::off_t) } != 0 {
                let err = AllocError::last_os("ftruncate");
                unsafe { libc::close(fd) };
                return Err(err);
            }
            // The region's own writable view. It stays mapped for the process
            // lifetime, which keeps the single backing frame set alive.
            // SAFETY: new mapping at a kernel-chosen address.
            let base = unsafe {
                libc::mmap(
                    std::ptr::null_mut(),
                    len,
                    libc::PROT_READ | libc::PROT_WRITE,
                    libc::MAP_SHARED,
                    fd,
                    0,
                )
            };
            if base == libc::MAP_FAILED {
                let err = AllocError::last_os("mmap(shared region)");
                unsafe { libc::close(fd) };
                return Err(err);
            }
            Ok(SharedRegion {
                fd,
                base: base as usize,
                len,
            })
        }
        #[cfg(not(target_os = "linux"))]
        {
            let _ = len;
            Err(AllocError::InvalidConfig("shared remapping requires Linux".into()))
        }
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Writes through the region's own mapping; visible from every
    /// neutralized superblock at the same offset modulo the region length.
    pub fn write_byte(&self, offset: usize, value: u8) {
        assert!(offset < self.len);
        // SAFETY: in bounds of our writable shared view.
        unsafe { std::ptr::write_volatile((self.base + offset) as *mut u8, value) }
    }

    pub fn read_byte(&self, offset: usize) -> u8 {
        assert!(offset < self.len);
        // SAFETY: in bounds of our shared view.
        unsafe { std::ptr::read_volatile((self.base + offset) as *const u8) }
    }
}

/// Counters of OS interactions.
#[derive(Debug, Default)]
pub struct VmStats {
    pub reserves: AtomicU64,
    pub releases: AtomicU64,
    pub neutralizes: AtomicU64,
    pub rearms: AtomicU64,
    /// Mapping system calls issued by neutralize and rearm.
    pub remap_syscalls: AtomicU64,
}

#[derive(Debug)]
pub struct VmBackend {
    kind: BackendKind,
    shared_len: usize,
    shared: OnceLock<SharedRegion>,
    stats: VmStats,
}

impl VmBackend {
    /// `shared_region_len` must be a page multiple dividing the superblock
    /// size. It is only used by [`BackendKind::SharedRemap`].
    pub fn new(kind: BackendKind, shared_region_len: usize) -> Result<Self, AllocError> {
        if !kind.is_supported() {
            return Err(AllocError::InvalidConfig(format!(
                "backend {kind} is not supported on this platform"
            )));
        }
        let page = page_size();
        if shared_region_len < page
            || shared_region_len > SUPERBLOCK_SIZE
            || shared_region_len % page != 0
            || SUPERBLOCK_SIZE % shared_region_len != 0
        {
            return Err(AllocError::InvalidConfig(format!(
                "shared region length {shared_region_len} must be a page multiple dividing {SUPERBLOCK_SIZE}"
            )));
        }
        Ok(VmBackend {
            kind,
            shared_len: shared_region_len,
            shared: OnceLock::new(),
            stats: VmStats::default(),
        })
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    pub fn stats(&self) -> &VmStats {
        &self.stats
    }

    /// The shared region, created on first use.
    pub fn shared_region(&self) -> Result<&SharedRegion, AllocError> {
        if let Some(r) = self.shared.get() {
            return Ok(r);
        }
        let region = SharedRegion::create(self.shared_len)?;
        match self.shared.set(region) {
            Ok(()) => {}
            // Lost the race: drop ours, keep the winner's.
            Err(ours) => unsafe {
                libc::munmap(ours.base as *mut libc::c_void, ours.len);
                libc::close(ours.fd);
            },
        }
        Ok(self.shared.get().unwrap())
    }

    pub fn reserve_superblock(&self) -> Result<usize, AllocError> {
        self.reserve_aligned(SUPERBLOCK_SIZE)
    }

    /// Maps `len` bytes (rounded up to pages) of zeroed private memory at a
    /// superblock-aligned address.
    pub fn reserve_aligned(&self, len: usize) -> Result<usize, AllocError> {
        let len = len.next_multiple_of(page_size());
        let span = len + SUPERBLOCK_SIZE;
        // SAFETY: fresh anonymous mapping.
        let raw = unsafe {
            libc::mmap(
                std::ptr::null_mut(),
                span,
                libc::PROT_READ | libc::PROT_WRITE,
                libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_NORESERVE,
                -1,
                0,
            )
        };
        if raw == libc::MAP_FAILED {
            return Err(AllocError::last_os("mmap(reserve)"));
        }
        let raw = raw as usize;
        let base = raw.next_multiple_of(SUPERBLOCK_SIZE);
        let head = base - raw;
        let tail = span - head - len;
        // SAFETY: trimming the unaligned slack of our own mapping.
        unsafe {
            if head > 0 {
                libc::munmap(raw as *mut libc::c_void, head);
            }
            if tail > 0 {
                libc::munmap((base + len) as *mut libc::c_void, tail);
            }
        }
        self.stats.reserves.fetch_add(1, Ordering::Relaxed);
        Ok(base)
    }

    pub fn release_superblock(&self, base: usize) -> Result<(), AllocError> {
        self.release(base, SUPERBLOCK_SIZE)
    }

    pub fn release(&self, base: usize, len: usize) -> Result<(), AllocError> {
        let len = len.next_multiple_of(page_size());
        // SAFETY: caller passes a range previously returned by reserve.
        if unsafe { libc::munmap(base as *mut libc::c_void, len) } != 0 {
            return Err(AllocError::last_os("munmap"));
        }
        self.stats.releases.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Gives up the physical frames behind an empty persistent superblock
    /// while keeping every address of it readable.
    pub fn neutralize_superblock(&self, base: usize) -> Result<(), AllocError> {
        debug_assert_eq!(base % SUPERBLOCK_SIZE, 0);
        match self.kind {
            BackendKind::KeepResident => return Ok(()),
            BackendKind::AdviseRelease => {
                // SAFETY: the range is a private anonymous mapping we own.
                let rc = unsafe {
                    libc::madvise(base as *mut libc::c_void, SUPERBLOCK_SIZE, libc::MADV_DONTNEED)
                };
                if rc != 0 {
                    return Err(AllocError::last_os("madvise(MADV_DONTNEED)"));
                }
                self.stats.remap_syscalls.fetch_add(1, Ordering::Relaxed);
            }
            BackendKind::SharedRemap => {
                let region = self.shared_region()?;
                for offset in (0..SUPERBLOCK_SIZE).step_by(region.len) {
                    // SAFETY: replaces part of our own superblock with a
                    // read-only view of the shared region.
                    let rc = unsafe {
                        libc::mmap(
                            (base + offset) as *mut libc::c_void,
                            region.len,
                            libc::PROT_READ,
                            libc::MAP_SHARED | libc::MAP_FIXED,
                            region.fd,
                            0,
                        )
                    };
                    if rc == libc::MAP_FAILED {
                        return Err(AllocError::last_os("mmap(MAP_FIXED|MAP_SHARED)"));
                    }
                    self.stats.remap_syscalls.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        self.stats.neutralizes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Makes a neutralized range private, writable and zeroed again.
    pub fn rearm_superblock(&self, base: usize) -> Result<(), AllocError> {
        debug_assert_eq!(base % SUPERBLOCK_SIZE, 0);
        if self.kind == BackendKind::SharedRemap {
            // SAFETY: replaces our own neutralized range.
            let rc = unsafe {
                libc::mmap(
                    base as *mut libc::c_void,
                    SUPERBLOCK_SIZE,
                    libc::PROT_READ | libc::PROT_WRITE,
                    libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_FIXED | libc::MAP_NORESERVE,
                    -1,
                    0,
                )
            };
            if rc == libc::MAP_FAILED {
                return Err(AllocError::last_os("mmap(MAP_FIXED|MAP_PRIVATE)"));
            }
            self.stats.remap_syscalls.fetch_add(1, Ordering::Relaxed);
        }
        self.stats.rearms.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }
}

/// Whether `addr` can be read without faulting, probed through a system
/// call (which reports `EFAULT` instead of raising a signal).
pub fn is_readable(addr: usize) -> bool {
    let mut fds = [0; 2];
    // SAFETY: plain pipe creation.
    if unsafe { libc::pipe(fds.as_mut_ptr()) } != 0 {
        return false;
    }
    // SAFETY: the kernel validates the source address.
    let n = unsafe { libc::write(fds[1], addr as *const libc::c_void, 1) };
    unsafe {
        libc::close(fds[0]);
        libc::close(fds[1]);
    }
    n == 1
}

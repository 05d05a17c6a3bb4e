use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use oamalloc::vm_backend::resident_bytes;
use oamalloc::{AllocError, Allocator, ConcurrentSet, OaHashMap, OaList};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::config::{ConfigError, Structure, WorkloadConfig};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

const RSS_INTERVAL: Duration = Duration::from_millis(10);

/// One timed run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub threads: usize,
    pub run: usize,
    pub ops: u64,
    pub per_thread_ops: Vec<u64>,
    pub seconds: f64,
    pub throughput: f64,
    pub warnings: u64,
    pub scans: u64,
    pub freed: u64,
    pub retired: u64,
    pub restarts: u64,
    pub audit_violations: u64,
    /// (seconds since start, resident bytes).
    pub rss_samples: Vec<(f64, usize)>,
    pub rss_peak: usize,
    /// Structure size and key digest after the run.
    pub final_size: usize,
    pub digest: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: WorkloadConfig,
    pub runs: Vec<RunRecord>,
}

impl RunReport {
    pub fn mean_throughput(&self) -> f64 {
        self.runs.iter().map(|r| r.throughput).sum::<f64>() / self.runs.len() as f64
    }

    /// Sample standard deviation of throughput; zero for a single run.
    pub fn stddev_throughput(&self) -> f64 {
        let n = self.runs.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_throughput();
        let var = self.runs.iter().map(|r| (r.throughput - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    }

    pub fn total_warnings(&self) -> u64 {
        self.runs.iter().map(|r| r.warnings).sum()
    }

    pub fn total_freed(&self) -> u64 {
        self.runs.iter().map(|r| r.freed).sum()
    }
}

fn build(cfg: &WorkloadConfig, alloc: &'static Allocator) -> Result<Arc<dyn ConcurrentSet>, AllocError> {
    let reclaim = cfg.reclaim_config();
    Ok(match cfg.structure {
        Structure::List => Arc::new(OaList::new(reclaim, alloc)?),
        Structure::Map => Arc::new(OaHashMap::new(reclaim, alloc, cfg.prefill)?),
    })
}

fn digest(keys: &[u64]) -> u64 {
    keys.iter().fold(0xcbf2_9ce4_8422_2325, |h, &k| (h ^ k).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Draws an operation by the configured mix and applies it to a uniform key.
fn step(set: &dyn ConcurrentSet, cfg: &WorkloadConfig, rng: &mut SmallRng) -> Result<(), AllocError> {
    let op = rng.gen_range(0..100);
    let key = rng.gen_range(0..cfg.key_range());
    if op < cfg.search_pct {
        set.search(key);
    } else if op < cfg.search_pct + cfg.insert_pct {
        set.insert(key, key)?;
    } else {
        set.remove(key);
    }
    Ok(())
}

pub fn run_benchmark(cfg: &WorkloadConfig) -> Result<RunReport, BenchError> {
    cfg.validate()?;
    let runs = (0..cfg.runs).map(|run| run_once(cfg, run)).collect::<Result<_, _>>()?;
    Ok(RunReport { config: cfg.clone(), runs })
}

/// Runs `base` once per thread count.
pub fn run_sweep(base: &WorkloadConfig, threads: impl IntoIterator<Item = usize>) -> Result<Vec<RunReport>, BenchError> {
    threads
        .into_iter()
        .map(|t| run_benchmark(&WorkloadConfig { threads: t, ..base.clone() }))
        .collect()
}

fn run_once(cfg: &WorkloadConfig, run: usize) -> Result<RunRecord, BenchError> {
    let alloc = Allocator::for_backend(cfg.backend)?;
    let set = build(cfg, alloc)?;

    let mut rng = SmallRng::seed_from_u64(cfg.seed ^ 0x5eed_0000_0000_0000);
    let mut size = 0;
    while size < cfg.prefill {
        let k = rng.gen_range(0..cfg.key_range());
        if set.insert(k, k)? {
            size += 1;
        }
    }
    set.domain().release_current_thread();

    let warmup = if cfg.ops_limit.is_some() { Duration::ZERO } else { cfg.warmup };
    let start_gate = Arc::new(Barrier::new(cfg.threads + 1));
    let timed_gate = Arc::new(Barrier::new(cfg.threads + 1));
    let warm_stop = Arc::new(AtomicBool::new(warmup.is_zero()));
    let stop = Arc::new(AtomicBool::new(false));

    let workers: Vec<_> = (0..cfg.threads)
        .map(|t| {
            let (set, cfg) = (set.clone(), cfg.clone());
            let (start_gate, timed_gate) = (start_gate.clone(), timed_gate.clone());
            let (warm_stop, stop) = (warm_stop.clone(), stop.clone());
            std::thread::spawn(move || -> Result<u64, AllocError> {
                let mut rng = SmallRng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
                start_gate.wait();
                while !warm_stop.load(Ordering::Relaxed) {
                    step(&*set, &cfg, &mut rng)?;
                }
                timed_gate.wait();
                let mut ops = 0u64;
                let limit = cfg.ops_limit.unwrap_or(u64::MAX);
                while ops < limit && !stop.load(Ordering::Relaxed) {
                    step(&*set, &cfg, &mut rng)?;
                    ops += 1;
                }
                set.domain().release_current_thread();
                Ok(ops)
            })
        })
        .collect();

    start_gate.wait();
    if !warmup.is_zero() {
        std::thread::sleep(warmup);
        warm_stop.store(true, Ordering::Relaxed);
    }
    let before = set.domain().stats();
    timed_gate.wait();
    let started = Instant::now();

    let sampler = {
        let stop = stop.clone();
        std::thread::spawn(move || {
            let mut samples = Vec::new();
            loop {
                if let Some(rss) = resident_bytes() {
                    samples.push((started.elapsed().as_secs_f64(), rss));
                }
                if stop.load(Ordering::Relaxed) {
                    return samples;
                }
                std::thread::sleep(RSS_INTERVAL);
            }
        })
    };

    if cfg.ops_limit.is_none() {
        std::thread::sleep(cfg.duration);
        stop.store(true, Ordering::Relaxed);
    }
    let mut per_thread_ops = Vec::with_capacity(cfg.threads);
    let mut failure = None;
    for w in workers {
        match w.join().expect("benchmark worker panicked") {
            Ok(n) => per_thread_ops.push(n),
            Err(e) => failure = Some(e),
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    stop.store(true, Ordering::Relaxed);
    let rss_samples = sampler.join().expect("rss sampler panicked");
    if let Some(e) = failure {
        return Err(e.into());
    }

    let after = set.domain().stats();
    let ops: u64 = per_thread_ops.iter().sum();
    let keys = set.keys();
    Ok(RunRecord {
        threads: cfg.threads,
        run,
        ops,
        per_thread_ops,
        seconds,
        throughput: ops as f64 / seconds,
        warnings: after.warnings - before.warnings,
        scans: after.scans - before.scans,
        freed: after.freed - before.freed,
        retired: after.retired - before.retired,
        restarts: after.restarts - before.restarts,
        audit_violations: after.audit_violations,
        rss_peak: rss_samples.iter().map(|s| s.1).max().unwrap_or(0),
        rss_samples,
        final_size: keys.len(),
        digest: digest(&keys),
    })
}

use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use oabench::{run_benchmark, write_csv, ConfigError, RunReport, Structure, WorkloadConfig};
use oamalloc::{BackendKind, ReclaimScheme};

#[derive(Debug, Parser)]
#[command(name = "oabench", version, about = "Throughput benchmark for lock-free sets under optimistic-access reclamation")]
struct Args {
    /// Data structure under test: list or map.
    #[arg(long, default_value = "list", value_parser = parse_structure)]
    structure: Structure,
    /// Keys inserted before timing starts; keys are drawn from 0..2*prefill.
    #[arg(long, default_value_t = 5000)]
    prefill: usize,
    #[arg(long, default_value_t = 50)]
    search: u32,
    #[arg(long, default_value_t = 25)]
    insert: u32,
    #[arg(long, default_value_t = 25)]
    remove: u32,
    #[arg(long, default_value_t = 1, conflicts_with = "sweep")]
    threads: usize,
    /// Inclusive thread range, e.g. 1..32.
    #[arg(long, value_parser = parse_range)]
    sweep: Option<(usize, usize)>,
    /// Seconds per timed run.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// bit, ver or none.
    #[arg(long, default_value = "ver", value_parser = parse_scheme)]
    scheme: ReclaimScheme,
    /// keep, advise or shared.
    #[arg(long, default_value = "keep", value_parser = parse_backend)]
    backend: BackendKind,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write results here instead of standard output.
    #[arg(long)]
    csv: Option<std::path::PathBuf>,
    #[arg(long)]
    limbo_capacity: Option<usize>,
    #[arg(long)]
    scan_threshold: Option<usize>,
    #[arg(long)]
    hazard_slots: Option<usize>,
    /// Fixed operations per thread instead of a timed run (disables warm-up).
    #[arg(long)]
    ops: Option<u64>,
    /// Untimed warm-up before each run, in milliseconds.
    #[arg(long, default_value_t = 100)]
    warmup_ms: u64,
}

fn parse_structure(s: &str) -> Result<Structure, String> {
    s.parse().map_err(|e: ConfigError| e.to_string())
}

fn parse_scheme(s: &str) -> Result<ReclaimScheme, String> {
    s.parse().map_err(|e: oamalloc::AllocError| e.to_string())
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: oamalloc::AllocError| e.to_string())
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once("..").ok_or("expected LOW..HIGH")?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
    let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
    if lo == 0 || lo > hi {
        return Err(format!("empty or zero-based range {lo}..{hi}"));
    }
    Ok((lo, hi))
}

fn to_config(args: &Args) -> Result<WorkloadConfig, String> {
    if !(args.duration >= 0.0 && args.duration.is_finite()) {
        return Err(format!("invalid duration {}", args.duration));
    }
    let mut cfg = WorkloadConfig {
        structure: args.structure,
        prefill: args.prefill,
        search_pct: args.search,
        insert_pct: args.insert,
        remove_pct: args.remove,
        threads: args.threads,
        duration: Duration::from_secs_f64(args.duration),
        runs: args.runs,
        scheme: args.scheme,
        backend: args.backend,
        seed: args.seed,
        ops_limit: args.ops,
        warmup: Duration::from_millis(args.warmup_ms),
        ..WorkloadConfig::default()
    };
    if let Some(r) = args.limbo_capacity {
        cfg.limbo_capacity = r;
        cfg.scan_threshold = r / 2;
    }
    if let Some(x) = args.scan_threshold {
        cfg.scan_threshold = x;
    }
    if let Some(k) = args.hazard_slots {
        cfg.hazard_slots = k;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let base = match to_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("oabench: {e}");
            return ExitCode::from(2);
        }
    };
    let thread_counts: Vec<usize> = match args.sweep {
        Some((lo, hi)) => (lo..=hi).collect(),
        None => vec![base.threads],
    };

    let mut reports: Vec<RunReport> = Vec::new();
    for threads in thread_counts {
        let cfg = WorkloadConfig { threads, ..base.clone() };
        match run_benchmark(&cfg) {
            Ok(r) => {
                eprintln!(
                    "{} {} {} threads={threads}: {:.0} ± {:.0} ops/s, warnings={}, freed={}",
                    cfg.structure,
                    cfg.scheme,
                    cfg.backend,
                    r.mean_throughput(),
                    r.stddev_throughput(),
                    r.total_warnings(),
                    r.total_freed(),
                );
                reports.push(r);
            }
            Err(e) => {
                eprintln!("oabench: {e}");
                return ExitCode::FAILURE;
            }
        }
    }

    let written = match &args.csv {
        Some(path) => std::fs::File::create(path).map_err(Into::into).and_then(|f| write_csv(&reports, f)),
        None => write_csv(&reports, std::io::stdout().lock()),
    };
    if let Err(e) = written {
        eprintln!("oabench: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

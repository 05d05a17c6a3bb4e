use std::time::Duration;

use oabench::{emit_csv, read_csv, rows, run_benchmark, run_sweep, Structure, WorkloadConfig};
use oamalloc::ReclaimScheme;

fn quick(structure: Structure, scheme: ReclaimScheme) -> WorkloadConfig {
    WorkloadConfig {
        structure,
        prefill: 500,
        runs: 1,
        duration: Duration::from_millis(100),
        warmup: Duration::from_millis(10),
        scheme,
        ..WorkloadConfig::default()
    }
}

#[test]
fn list_run_has_throughput() {
    let r = run_benchmark(&WorkloadConfig { prefill: 5000, ..quick(Structure::List, ReclaimScheme::Ver) }).unwrap();
    assert_eq!(r.runs.len(), 1);
    assert!(r.runs[0].ops > 0);
    assert!(r.mean_throughput() > 0.0);
    assert_eq!(r.runs[0].per_thread_ops.len(), 1);
}

#[test]
fn balanced_mix_keeps_size_near_prefill() {
    let cfg = WorkloadConfig {
        prefill: 10_000,
        search_pct: 0,
        insert_pct: 50,
        remove_pct: 50,
        duration: Duration::from_millis(300),
        ..quick(Structure::Map, ReclaimScheme::Bit)
    };
    let r = run_benchmark(&cfg).unwrap();
    let size = r.runs[0].final_size as f64;
    assert!((size - 10_000.0).abs() < 1_000.0, "size drifted to {size}");
}

#[test]
fn no_reclamation_frees_nothing() {
    let base = WorkloadConfig { ops_limit: Some(20_000), ..quick(Structure::Map, ReclaimScheme::None) };
    let none = run_benchmark(&base).unwrap();
    let ver = run_benchmark(&WorkloadConfig { scheme: ReclaimScheme::Ver, ..base }).unwrap();
    assert_eq!(none.total_freed(), 0);
    assert!(ver.total_freed() > 0);
}

#[test]
fn one_thread_runs_are_deterministic() {
    for structure in [Structure::List, Structure::Map] {
        let cfg = WorkloadConfig { ops_limit: Some(5_000), runs: 3, ..quick(structure, ReclaimScheme::Bit) };
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        let fingerprint = |r: &oabench::RunReport| -> Vec<_> { r.runs.iter().map(|x| (x.ops, x.final_size, x.digest)).collect() };
        assert_eq!(fingerprint(&a), fingerprint(&b));
        assert!(a.runs.windows(2).all(|w| w[0].digest == w[1].digest));
    }
}

#[test]
fn csv_round_trips() {
    let cfg = WorkloadConfig { runs: 10, ops_limit: Some(200), ..quick(Structure::List, ReclaimScheme::Ver) };
    let report = run_benchmark(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    emit_csv(std::slice::from_ref(&report), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "structure,scheme,backend,threads,run,ops,seconds,throughput,warnings,scans,freed,rss_peak"
    );
    let back = read_csv(&path).unwrap();
    assert_eq!(back.len(), 10);
    assert_eq!(back, rows(&report));
}

#[test]
fn sweep_produces_a_row_per_thread_count_and_run() {
    let cfg = WorkloadConfig { prefill: 16, runs: 10, ops_limit: Some(50), ..quick(Structure::Map, ReclaimScheme::Ver) };
    let reports = run_sweep(&cfg, 1..=32).unwrap();
    let all: Vec<_> = reports.iter().flat_map(rows).collect();
    assert_eq!(all.len(), 320);
    assert_eq!(all.iter().filter(|r| r.threads == 32).count(), 10);
}

#[test]
fn invalid_config_is_rejected() {
    let cfg = WorkloadConfig { insert_pct: 40, remove_pct: 10, ..WorkloadConfig::default() };
    assert!(matches!(run_benchmark(&cfg), Err(oabench::BenchError::Config(_))));
}

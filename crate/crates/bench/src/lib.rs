//! Throughput benchmarks for lock-free sets under optimistic-access
//! reclamation: configurable operation mix, thread sweeps, repeated runs,
//! RSS sampling and CSV output.

pub mod config;
pub mod csv_io;
pub mod runner;

pub use config::{ConfigError, Structure, WorkloadConfig};
pub use csv_io::{emit_csv, parse_csv, read_csv, rows, write_csv, CsvRow};
pub use runner::{run_benchmark, run_sweep, BenchError, RunRecord, RunReport};

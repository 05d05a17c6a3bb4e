use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::runner::{BenchError, RunReport};

/// One CSV row: a single run of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub structure: String,
    pub scheme: String,
    pub backend: String,
    pub threads: usize,
    pub run: usize,
    pub ops: u64,
    pub seconds: f64,
    pub throughput: f64,
    pub warnings: u64,
    pub scans: u64,
    pub freed: u64,
    pub rss_peak: usize,
}

pub fn rows(report: &RunReport) -> Vec<CsvRow> {
    let c = &report.config;
    report
        .runs
        .iter()
        .map(|r| CsvRow {
            structure: c.structure.to_string(),
            scheme: c.scheme.to_string(),
            backend: c.backend.to_string(),
            threads: r.threads,
            run: r.run,
            ops: r.ops,
            seconds: r.seconds,
            throughput: r.throughput,
            warnings: r.warnings,
            scans: r.scans,
            freed: r.freed,
            rss_peak: r.rss_peak,
        })
        .collect()
}

pub fn write_csv<W: Write>(reports: &[RunReport], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for report in reports {
        for row in rows(report) {
            w.serialize(row)?;
        }
    }
    if reports.iter().all(|r| r.runs.is_empty()) {
        w.write_record([
            "structure", "scheme", "backend", "threads", "run", "ops", "seconds", "throughput", "warnings", "scans",
            "freed", "rss_peak",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(reports: &[RunReport], path: impl AsRef<Path>) -> Result<(), BenchError> {
    write_csv(reports, std::fs::File::create(path)?)
}

pub fn parse_csv<R: Read>(input: R) -> Result<Vec<CsvRow>, BenchError> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(BenchError::from)).collect()
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>, BenchError> {
    parse_csv(std::fs::File::open(path)?)
}

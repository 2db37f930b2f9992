//! Benchmark reports and their on-disk form.
//!
//! A report directory holds `report.json` (metadata, counters, latency
//! statistics, settlement series), `samples.csv` (one row per request, the
//! raw latency dump) and `settlement.csv`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use zkrollup_core::stats::Summary;
use zkrollup_core::{SettlementRecord, SettlementStatus};

use crate::workload::{Mode, WorkloadSpec};

pub const REPORT_FILE: &str = "report.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SETTLEMENT_FILE: &str = "settlement.csv";

/// One request as seen by a virtual user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub vu: usize,
    /// Issue time relative to the start of the run.
    pub start_us: u64,
    pub latency_us: u64,
    /// HTTP status, 0 for transport errors.
    pub status: u16,
    pub ok: bool,
    /// Tracking id from a 202 acceptance.
    pub id: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportMeta {
    pub mode: Mode,
    pub virtual_users: usize,
    pub duration_sec: u64,
    pub think_time_ms: u64,
    pub target: String,
    pub endpoint: String,
    pub seed: u64,
    pub started_at: u64,
    /// Wall time from first issue until the last in-flight request finished.
    pub elapsed_ms: f64,
    pub topology: String,
    pub generator: String,
}

impl ReportMeta {
    pub fn new(spec: &WorkloadSpec, started_at: u64, elapsed_ms: f64) -> Self {
        ReportMeta {
            mode: spec.mode,
            virtual_users: spec.virtual_users,
            duration_sec: spec.duration_sec,
            think_time_ms: spec.think_time_ms,
            target: spec.target.clone(),
            endpoint: spec.mode.endpoint().to_string(),
            seed: spec.seed,
            started_at,
            elapsed_ms,
            topology: "single service exposing both endpoints; per-organization client ports collapsed".into(),
            generator: "random alphanumeric assetId/participant suffixes, synthetic assetCid".into(),
        }
    }
}

/// Per-batch stage timings taken from the sequencer's settlement log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SettlementRow {
    pub batch_number: u64,
    pub attempt: u32,
    pub real_count: usize,
    pub proof_gen_ms: f64,
    pub upload_ms: f64,
    pub l1_commit_ms: f64,
    pub finished_at: u64,
}

impl SettlementRow {
    /// `None` for failed attempts or records missing a stage timing.
    pub fn from_record(r: &SettlementRecord) -> Option<Self> {
        if r.status != SettlementStatus::Committed {
            return None;
        }
        Some(SettlementRow {
            batch_number: r.batch_number,
            attempt: r.attempt,
            real_count: r.real_count,
            proof_gen_ms: r.proof_gen_ms?,
            upload_ms: r.upload_ms?,
            l1_commit_ms: r.l1_commit_ms?,
            finished_at: r.finished_at,
        })
    }
}

/// Reads a settlement log (one JSON record per line).
pub fn read_settlement_log(path: &Path) -> anyhow::Result<Vec<SettlementRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchReport {
    pub meta: ReportMeta,
    pub requests: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub success_rate: f64,
    /// Successful requests per second of elapsed time.
    pub throughput: f64,
    /// Milliseconds, over successful requests.
    pub latency: Summary,
    pub status_counts: BTreeMap<u16, u64>,
    pub accepted_ids: Vec<u64>,
    pub settlement: Vec<SettlementRow>,
    /// Shipped as `samples.csv`, not inside the JSON.
    #[serde(skip)]
    pub samples: Vec<Sample>,
}

fn latency_summary(samples: &[Sample]) -> Summary {
    let ms: Vec<f64> = samples.iter().filter(|s| s.ok).map(|s| s.latency_us as f64 / 1e3).collect();
    Summary::of(&ms)
}

impl BenchReport {
    pub fn from_samples(meta: ReportMeta, mut samples: Vec<Sample>) -> Self {
        samples.sort_by_key(|s| (s.start_us, s.vu));
        let requests = samples.len() as u64;
        let succeeded = samples.iter().filter(|s| s.ok).count() as u64;
        let mut status_counts = BTreeMap::new();
        for s in &samples {
            *status_counts.entry(s.status).or_insert(0) += 1;
        }
        let throughput = if meta.elapsed_ms > 0.0 { succeeded as f64 * 1e3 / meta.elapsed_ms } else { 0.0 };
        BenchReport {
            requests,
            succeeded,
            failed: requests - succeeded,
            success_rate: if requests == 0 { 0.0 } else { succeeded as f64 / requests as f64 },
            throughput,
            latency: latency_summary(&samples),
            status_counts,
            accepted_ids: samples.iter().filter_map(|s| s.id).collect(),
            settlement: Vec::new(),
            samples,
            meta,
        }
    }

    /// Attaches committed batches from a settlement log that finished during
    /// or after this run.
    pub fn attach_settlement(&mut self, records: &[SettlementRecord]) {
        self.settlement = records
            .iter()
            .filter(|r| r.started_at >= self.meta.started_at)
            .filter_map(SettlementRow::from_record)
            .collect();
    }

    /// Recomputes the statistics from the raw samples.
    pub fn recomputed_latency(&self) -> Summary {
        latency_summary(&self.samples)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REPORT_FILE), serde_json::to_vec_pretty(self)?)?;
        let mut w = csv::Writer::from_path(dir.join(SAMPLES_FILE))?;
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(SETTLEMENT_FILE))?;
        for r in &self.settlement {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a report directory (or a bare `report.json`) with its samples.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let dir = if path.is_dir() { path } else { path.parent().unwrap_or(Path::new(".")) };
        let json = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
        let text = fs::read(&json).with_context(|| format!("reading {}", json.display()))?;
        let mut report: BenchReport = serde_json::from_slice(&text)?;
        let samples = dir.join(SAMPLES_FILE);
        if samples.exists() {
            let mut r = csv::Reader::from_path(&samples)?;
            report.samples = r.deserialize().collect::<Result<_, _>>()?;
            if report.samples.len() as u64 != report.requests {
                bail!("{} has {} rows, report counts {}", samples.display(), report.samples.len(), report.requests);
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(vu: usize, start_us: u64, latency_us: u64, ok: bool) -> Sample {
        Sample { vu, start_us, latency_us, status: if ok { 202 } else { 503 }, ok, id: ok.then_some(start_us) }
    }

    fn meta(elapsed_ms: f64) -> ReportMeta {
        ReportMeta::new(&WorkloadSpec::new(Mode::Rollup, "http://x"), 0, elapsed_ms)
    }

    #[test]
    fn counters_and_throughput() {
        let r = BenchReport::from_samples(
            meta(2000.0),
            vec![sample(0, 10, 1000, true), sample(1, 5, 3000, true), sample(0, 20, 50, false)],
        );
        assert_eq!((r.requests, r.succeeded, r.failed), (3, 2, 1));
        assert_eq!(r.throughput, 1.0);
        assert_eq!(r.latency.mean, 2.0);
        assert_eq!(r.accepted_ids, vec![5, 10]);
        assert_eq!(r.status_counts[&503], 1);
    }

    #[test]
    fn empty_run_is_zero() {
        let r = BenchReport::from_samples(meta(0.0), vec![]);
        assert_eq!((r.requests, r.throughput, r.success_rate), (0, 0.0, 0.0));
    }

    #[test]
    fn written_report_recomputes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let samples = (0..500).map(|i| sample(i % 7, i as u64 * 13, 100 + (i as u64 * 7919) % 5000, i % 11 != 0)).collect();
        let r = BenchReport::from_samples(meta(30_000.0), samples);
        r.write(dir.path()).unwrap();
        let back = BenchReport::load(dir.path()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.recomputed_latency(), r.latency);
    }
}

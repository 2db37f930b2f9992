//! Side-by-side comparison of a baseline and a rollup report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use zkrollup_core::stats::Summary;

use crate::report::{BenchReport, SettlementRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatRow {
    pub stat: String,
    pub baseline: f64,
    pub rollup: f64,
    /// `baseline / rollup`; above 1 means the rollup path is faster.
    pub reduction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub baseline_throughput: f64,
    pub rollup_throughput: f64,
    /// `rollup / baseline`.
    pub throughput_ratio: f64,
    pub latency: Vec<StatRow>,
    /// Proof generation versus upload time per committed batch.
    pub settlement: Vec<SettlementRow>,
    pub warnings: Vec<String>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

fn rows(b: &Summary, r: &Summary) -> Vec<StatRow> {
    [
        ("min", b.min, r.min),
        ("avg", b.mean, r.mean),
        ("p50", b.p50, r.p50),
        ("p90", b.p90, r.p90),
        ("p95", b.p95, r.p95),
        ("max", b.max, r.max),
    ]
    .into_iter()
    .map(|(stat, baseline, rollup)| StatRow {
        stat: stat.into(),
        baseline,
        rollup,
        reduction: ratio(baseline, rollup),
    })
    .collect()
}

pub fn compare(baseline: &BenchReport, rollup: &BenchReport) -> Comparison {
    let mut warnings = Vec::new();
    if baseline.meta.duration_sec != rollup.meta.duration_sec {
        warnings.push(format!(
            "durations differ: baseline {} s, rollup {} s",
            baseline.meta.duration_sec, rollup.meta.duration_sec
        ));
    }
    if baseline.succeeded == 0 || rollup.succeeded == 0 {
        warnings.push("a report has no successful requests".into());
    }
    Comparison {
        baseline_throughput: baseline.throughput,
        rollup_throughput: rollup.throughput,
        throughput_ratio: ratio(rollup.throughput, baseline.throughput),
        latency: rows(&baseline.latency, &rollup.latency),
        settlement: rollup.settlement.clone(),
        warnings,
    }
}

impl Comparison {
    pub fn mean_latency_reduction(&self) -> f64 {
        self.latency.iter().find(|r| r.stat == "avg").map_or(f64::NAN, |r| r.reduction)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        for w in &self.warnings {
            let _ = writeln!(s, "> warning: {w}\n");
        }
        let _ = writeln!(s, "| | baseline | rollup | ratio |");
        let _ = writeln!(s, "|---|---:|---:|---:|");
        let _ = writeln!(
            s,
            "| throughput (req/s) | {:.2} | {:.2} | {:.2}x |",
            self.baseline_throughput, self.rollup_throughput, self.throughput_ratio
        );
        for r in &self.latency {
            let _ = writeln!(
                s,
                "| latency {} (ms) | {:.2} | {:.2} | {:.2}x lower |",
                r.stat, r.baseline, r.rollup, r.reduction
            );
        }
        if !self.settlement.is_empty() {
            let _ = writeln!(s, "\n| batch | txs | proof gen (ms) | upload (ms) | l1 commit (ms) |");
            let _ = writeln!(s, "|---:|---:|---:|---:|---:|");
            for r in &self.settlement {
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.2} | {:.2} | {:.2} |",
                    r.batch_number, r.real_count, r.proof_gen_ms, r.upload_ms, r.l1_commit_ms
                );
            }
        }
        s
    }

    /// Writes `comparison.json`, `comparison.csv`, `settlement_series.csv`
    /// and `comparison.md`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("comparison.json"), serde_json::to_vec_pretty(self)?)?;
        let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
        w.write_record(["metric", "baseline", "rollup", "ratio"])?;
        w.write_record([
            "throughput".to_string(),
            self.baseline_throughput.to_string(),
            self.rollup_throughput.to_string(),
            self.throughput_ratio.to_string(),
        ])?;
        for r in &self.latency {
            w.write_record([
                format!("latency_{}_ms", r.stat),
                r.baseline.to_string(),
                r.rollup.to_string(),
                r.reduction.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("settlement_series.csv"))?;
        for r in &self.settlement {
            w.serialize(r)?;
        }
        w.flush()?;
        fs::write(dir.join("comparison.md"), self.to_markdown())?;
        Ok(())
    }
}

//! Closed-loop HTTP load generator.
//!
//! Each virtual user keeps exactly one request in flight: it builds a random
//! asset transaction, posts it, waits for the response and immediately issues
//! the next one until the duration elapses. Requests already in flight when
//! time runs out are allowed to finish.

use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use reqwest::header::RETRY_AFTER;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;
use zkrollup_core::sequencer::epoch_ms;
use zkrollup_core::tx::random_transaction;

use crate::report::{BenchReport, ReportMeta, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `/submit-direct`: every request waits for the ledger commit.
    Baseline,
    /// `/submit`: requests return on pool acceptance.
    Rollup,
}

impl Mode {
    pub fn endpoint(self) -> &'static str {
        match self {
            Mode::Baseline => "/submit-direct",
            Mode::Rollup => "/submit",
        }
    }

    pub fn default_virtual_users(self) -> usize {
        match self {
            Mode::Baseline => 20,
            Mode::Rollup => 50,
        }
    }

    fn success(self) -> StatusCode {
        match self {
            Mode::Baseline => StatusCode::OK,
            Mode::Rollup => StatusCode::ACCEPTED,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Rollup => "rollup",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "rollup" => Ok(Mode::Rollup),
            other => Err(format!("unknown mode `{other}` (expected baseline or rollup)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkloadSpec {
    pub mode: Mode,
    pub virtual_users: usize,
    pub duration_sec: u64,
    /// Service base URL, e.g. `http://127.0.0.1:8080`.
    pub target: String,
    pub think_time_ms: u64,
    /// Seeds the transaction generators; user `i` draws from ChaCha stream `i`
    /// under this seed, so nearby seeds never replay each other's assets.
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(mode: Mode, target: impl Into<String>) -> Self {
        WorkloadSpec {
            mode,
            virtual_users: mode.default_virtual_users(),
            duration_sec: 30,
            target: target.into().trim_end_matches('/').to_string(),
            think_time_ms: 0,
            seed: epoch_ms(),
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("target {target} is unreachable: {source}")]
    Unreachable { target: String, source: reqwest::Error },
    #[error("target {target} answered /health with {status}")]
    Unhealthy { target: String, status: StatusCode },
    #[error("http client: {0}")]
    Client(#[from] reqwest::Error),
}

fn client() -> Result<reqwest::Client, reqwest::Error> {
    reqwest::Client::builder()
        .pool_max_idle_per_host(usize::MAX)
        .timeout(Duration::from_secs(120))
        .build()
}

/// Fails fast when the service is not answering.
pub async fn check_target(target: &str) -> Result<(), WorkloadError> {
    let resp = client()?
        .get(format!("{target}/health"))
        .timeout(Duration::from_secs(5))
        .send()
        .await
        .map_err(|source| WorkloadError::Unreachable { target: target.to_string(), source })?;
    if !resp.status().is_success() {
        return Err(WorkloadError::Unhealthy { target: target.to_string(), status: resp.status() });
    }
    Ok(())
}

#[derive(Deserialize)]
struct Accepted {
    id: u64,
}

pub async fn run_workload(spec: &WorkloadSpec) -> Result<BenchReport, WorkloadError> {
    let started_at = epoch_ms();
    if spec.virtual_users == 0 {
        return Ok(BenchReport::from_samples(ReportMeta::new(spec, started_at, 0.0), Vec::new()));
    }
    check_target(&spec.target).await?;
    let client = client()?;
    let (sink, mut samples) = mpsc::unbounded_channel::<Sample>();
    let start = Instant::now();
    let deadline = start + Duration::from_secs(spec.duration_sec);

    let mut users = Vec::with_capacity(spec.virtual_users);
    for vu in 0..spec.virtual_users {
        let client = client.clone();
        let sink = sink.clone();
        let url = format!("{}{}", spec.target, spec.mode.endpoint());
        let spec = spec.clone();
        users.push(tokio::spawn(async move {
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            rng.set_stream(vu as u64);
            while Instant::now() < deadline {
                let tx = random_transaction(&mut rng, epoch_ms());
                let issued = Instant::now();
                let result = client.post(&url).json(&tx).send().await;
                let mut sample = Sample {
                    vu,
                    start_us: issued.duration_since(start).as_micros() as u64,
                    latency_us: 0,
                    status: 0,
                    ok: false,
                    id: None,
                };
                let mut pause = Duration::from_millis(spec.think_time_ms);
                match result {
                    Ok(resp) => {
                        let status = resp.status();
                        let retry_after = resp
                            .headers()
                            .get(RETRY_AFTER)
                            .and_then(|v| v.to_str().ok())
                            .and_then(|v| v.parse::<u64>().ok());
                        let body = resp.bytes().await;
                        sample.latency_us = issued.elapsed().as_micros() as u64;
                        sample.status = status.as_u16();
                        sample.ok = status == spec.mode.success() && body.is_ok();
                        if sample.ok && spec.mode == Mode::Rollup {
                            sample.id = body
                                .ok()
                                .and_then(|b| serde_json::from_slice::<Accepted>(&b).ok())
                                .map(|a| a.id);
                        }
                        if status == StatusCode::SERVICE_UNAVAILABLE {
                            pause = pause.max(Duration::from_secs(retry_after.unwrap_or(1)));
                        }
                    }
                    Err(_) => {
                        sample.latency_us = issued.elapsed().as_micros() as u64;
                        pause = pause.max(Duration::from_millis(100));
                    }
                }
                if sink.send(sample).is_err() {
                    return;
                }
                if !pause.is_zero() {
                    tokio::time::sleep_until((Instant::now() + pause).min(deadline).into()).await;
                }
            }
        }));
    }
    drop(sink);
    let mut all = Vec::new();
    while let Some(s) = samples.recv().await {
        all.push(s);
    }
    for u in users {
        let _ = u.await;
    }
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(BenchReport::from_samples(ReportMeta::new(spec, started_at, elapsed_ms), all))
}

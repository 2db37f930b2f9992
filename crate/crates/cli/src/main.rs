use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;
use zkrollup_cli::report::read_settlement_log;
use zkrollup_cli::{compare, reconcile, run_workload, BenchReport, Mode, WorkloadSpec};
use zkrollup_core::ledger::LatencyModel;
use zkrollup_core::proof::BackendTag;
use zkrollup_core::sim::{self, SimConfig};
use zkrollup_core::{App, Config};

#[derive(Parser)]
#[command(name = "zkrollup", version, about = "Rollup sequencer service and benchmark driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sequencer HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `server.listen`.
        #[arg(long)]
        listen: Option<String>,
        /// Overrides `proof.backend`.
        #[arg(long)]
        backend: Option<BackendTag>,
    },
    /// Print the default configuration as TOML.
    Config,
    /// Drive closed-loop load against a running service.
    Run {
        #[arg(long, default_value = "baseline")]
        mode: Mode,
        /// Defaults to 20 for baseline and 50 for rollup.
        #[arg(long)]
        vus: Option<usize>,
        #[arg(long, default_value_t = 30)]
        duration: u64,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        target: String,
        #[arg(long, default_value_t = 0)]
        think_ms: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Sequencer settlement log to attach (rollup runs).
        #[arg(long)]
        settlement_log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a baseline report with a rollup report.
    Compare {
        baseline: PathBuf,
        rollup: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that every accepted id of a rollup report settled exactly once.
    Reconcile {
        report: PathBuf,
        /// Defaults to the report's target.
        #[arg(long)]
        target: Option<String>,
        /// Wait up to this many seconds for the pool to drain first.
        #[arg(long, default_value_t = 0)]
        wait: u64,
    },
    /// Deterministic simulated-time run (no network, no wall clock).
    Simulate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        direct: usize,
        #[arg(long, default_value_t = 50)]
        rollup: usize,
        #[arg(long, default_value_t = 30)]
        duration: u64,
        #[arg(long, default_value_t = 2048)]
        pool_capacity: usize,
        /// Writes `sim.json` and `blocks.jsonl` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep block interval and block size against target baseline figures.
    Calibrate {
        #[arg(long, default_value_t = 20)]
        clients: usize,
        #[arg(long, default_value_t = 30)]
        duration: u64,
        #[arg(long, default_value_t = 6.0)]
        target_tps: f64,
        #[arg(long, default_value_t = 3000.0)]
        target_latency_ms: f64,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    match rt.block_on(dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

async fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Serve { config, listen, backend } => {
            let mut config = match config {
                Some(path) => Config::load(&path)?,
                None => Config::default(),
            };
            if let Some(l) = listen {
                config.server.listen = l;
            }
            if let Some(b) = backend {
                config.proof.backend = b;
            }
            config.validate()?;
            let listener = tokio::net::TcpListener::bind(&config.server.listen)
                .await
                .with_context(|| format!("binding {}", config.server.listen))?;
            tracing::info!(addr = %listener.local_addr()?, backend = %config.proof.backend, "listening");
            let app = App::build(config)?;
            app.serve(listener, async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await?;
        }
        Command::Config => print!("{}", Config::default().to_toml()),
        Command::Run { mode, vus, duration, target, think_ms, seed, settlement_log, out } => {
            let mut spec = WorkloadSpec::new(mode, target);
            spec.virtual_users = vus.unwrap_or(mode.default_virtual_users());
            spec.duration_sec = duration;
            spec.think_time_ms = think_ms;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let mut report = run_workload(&spec).await?;
            if let Some(log) = settlement_log {
                report.attach_settlement(&read_settlement_log(&log)?);
            }
            report.write(&out)?;
            println!(
                "{mode}: {} requests, {} ok, {:.2} req/s, mean {:.2} ms, p95 {:.2} ms -> {}",
                report.requests,
                report.succeeded,
                report.throughput,
                report.latency.mean,
                report.latency.p95,
                out.display()
            );
        }
        Command::Compare { baseline, rollup, out } => {
            let c = compare(&BenchReport::load(&baseline)?, &BenchReport::load(&rollup)?);
            if let Some(dir) = out {
                c.write(&dir)?;
            }
            print!("{}", c.to_markdown());
        }
        Command::Reconcile { report, target, wait } => {
            let report = BenchReport::load(&report)?;
            let target = target.unwrap_or_else(|| report.meta.target.clone());
            if wait > 0 {
                wait_for_drain(&target, Duration::from_secs(wait)).await?;
            }
            let r = reconcile(&target, &report.accepted_ids).await?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if !r.is_clean() {
                eprintln!("reconciliation failed: {} lost, {} duplicated", r.lost.len(), r.duplicated.len());
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Simulate { seed, direct, rollup, duration, pool_capacity, out } => {
            let cfg = SimConfig {
                seed,
                direct_clients: direct,
                rollup_clients: rollup,
                duration_ms: duration * 1000,
                pool_capacity,
                ..SimConfig::default()
            };
            let report = sim::run(&cfg)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("sim.json"), serde_json::to_vec_pretty(&report)?)?;
                std::fs::write(dir.join("blocks.jsonl"), report.block_log())?;
            }
            println!(
                "direct: {:.2} req/s mean {:.0} ms | rollup: {:.2} req/s | {} batches, {} blocks, {} pending",
                report.direct.throughput(),
                report.direct.latency().mean,
                report.rollup.throughput(),
                report.batches.len(),
                report.blocks.len(),
                report.pending_at_end
            );
        }
        Command::Calibrate { clients, duration, target_tps, target_latency_ms, top } => {
            let points = sim::calibrate(
                LatencyModel::CALIBRATED,
                &[500, 1000, 1500, 2000, 2500, 3000],
                &[5, 8, 10, 13, 16, 20, 25],
                clients,
                duration * 1000,
                target_tps,
                target_latency_ms,
            )?;
            println!("| blockIntervalMs | maxTxPerBlock | req/s | mean ms | error |");
            println!("|---:|---:|---:|---:|---:|");
            for p in points.iter().take(top) {
                println!(
                    "| {} | {} | {:.2} | {:.0} | {:.3} |",
                    p.model.block_interval_ms, p.model.max_tx_per_block, p.throughput, p.mean_latency_ms, p.error
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

async fn wait_for_drain(target: &str, timeout: Duration) -> anyhow::Result<()> {
    #[derive(serde::Deserialize)]
    #[serde(rename_all = "camelCase")]
    struct Pool {
        pending: Vec<u64>,
        in_flight: Vec<u64>,
    }
    let deadline = Instant::now() + timeout;
    let client = reqwest::Client::new();
    loop {
        let pool: Pool = client.get(format!("{target}/pool")).send().await?.json().await?;
        if pool.pending.is_empty() && pool.in_flight.is_empty() {
            return Ok(());
        }
        if Instant::now() >= deadline {
            bail!("pool still holds {} transactions", pool.pending.len() + pool.in_flight.len());
        }
        tokio::time::sleep(Duration::from_millis(500)).await;
    }
}

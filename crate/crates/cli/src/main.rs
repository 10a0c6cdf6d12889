use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use meshflood_core::api::{self, AppState};
use meshflood_core::harness::HarnessError;
use meshflood_core::metrics::{export_report, load_report};
use meshflood_core::{
    run_paper_workload, verify_determinism, Action, Controller, Registry, ReportFormat, Scenario, WorkloadConfig,
};

#[derive(Parser)]
#[command(name = "meshflood", version, about = "LoRa controlled-flooding mesh simulator and SDN controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the request workload and write a metrics report.
    Run {
        /// Scenario file; the bundled campus deployment when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Simulated seconds of requests.
        #[arg(long, default_value_t = 3600)]
        duration: u64,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report path; .json or .csv. Printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report format, overriding the --out extension.
        #[arg(long)]
        format: Option<ReportFormat>,
        /// Also write the event trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Set every link's error probability.
        #[arg(long)]
        p_err: Option<f64>,
        /// Seconds to pause between requests.
        #[arg(long, default_value_t = 1.0)]
        pause: f64,
        /// Comma-separated action names or IDs to cycle through.
        #[arg(long, value_delimiter = ',')]
        actions: Option<Vec<Action>>,
    },
    /// Print success and error rates from a JSON report.
    Rates {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Check that repeated runs with one seed are identical.
    Verify {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 3600)]
        duration: u64,
    },
    /// Serve the controller's HTTP API.
    Serve {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Persist the device registry to this JSON file.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Write the bundled campus scenario, as a starting point for edits.
    Scenario {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => Scenario::load(p).with_context(|| format!("loading scenario {}", p.display())),
        None => Ok(Scenario::campus()),
    }
}

fn positive_secs(secs: f64, what: &str) -> Result<Duration> {
    if !(secs.is_finite() && secs >= 0.0) {
        bail!("{what} must be a non-negative number of seconds, got {secs}");
    }
    Ok(Duration::from_secs_f64(secs))
}

fn write_or_print(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenario: Option<PathBuf>,
    duration: u64,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<ReportFormat>,
    trace: Option<PathBuf>,
    p_err: Option<f64>,
    pause: f64,
    actions: Option<Vec<Action>>,
) -> Result<()> {
    let mut scenario = load_scenario(scenario.as_deref())?;
    if let Some(p) = p_err {
        scenario = scenario.with_uniform_p_err(p);
        scenario.validate()?;
    }
    let mut config = WorkloadConfig {
        duration: Duration::from_secs(duration),
        inter_request: positive_secs(pause, "--pause")?,
        seed,
        ..Default::default()
    };
    if let Some(actions) = actions {
        config.actions = actions;
    }
    let format = match (format, &out) {
        (Some(f), _) => f,
        (None, Some(p)) => ReportFormat::from_path(p)?,
        (None, None) => ReportFormat::Json,
    };
    let run = run_paper_workload(&scenario, &config)?;
    match &out {
        Some(p) => export_report(&run.report, p, format)?,
        None => print!("{}", run.report.render(format)),
    }
    if let Some(t) = &trace {
        write_or_print(Some(t), &run.trace_jsonl())?;
    }
    if let Some(agg) = run.report.aggregate {
        log::info!(
            "{} requests, aggregate error rate {:.2}%",
            run.report.run.requests,
            agg.error_rate * 100.0
        );
    }
    Ok(())
}

fn rates(input: &Path) -> Result<()> {
    let report = load_report(input)?;
    println!("{:<40} {:>9} {:>9}", "device", "success%", "error%");
    for d in &report.devices {
        match d.rates {
            Some(r) => println!(
                "{:<40} {:>9.2} {:>9.2}",
                d.name,
                r.success_rate * 100.0,
                r.error_rate * 100.0
            ),
            None => println!("{:<40} {:>9} {:>9}", d.name, "-", "-"),
        }
    }
    match report.aggregate {
        Some(r) => println!(
            "{:<40} {:>9.2} {:>9.2}",
            "aggregate",
            r.success_rate * 100.0,
            r.error_rate * 100.0
        ),
        None => bail!("report has no receptions to rate"),
    }
    Ok(())
}

fn verify(scenario: Option<PathBuf>, seed: u64, reps: usize, duration: u64) -> Result<()> {
    let scenario = load_scenario(scenario.as_deref())?;
    let config = WorkloadConfig {
        duration: Duration::from_secs(duration),
        ..Default::default()
    };
    match verify_determinism(&scenario, seed, reps, &config) {
        Ok(true) => {
            println!("deterministic: {reps} runs with seed {seed} are identical");
            Ok(())
        }
        Ok(false) => bail!("runs with seed {seed} differ"),
        Err(HarnessError::TooFewRepetitions(n)) => bail!("--reps must be at least 2, got {n}"),
        Err(e) => Err(e.into()),
    }
}

async fn serve(scenario: Option<PathBuf>, addr: SocketAddr, registry: Option<PathBuf>) -> Result<()> {
    let scenario = load_scenario(scenario.as_deref())?;
    let controller = match registry {
        Some(path) => {
            let reg = Registry::with_snapshot(&path)?;
            Controller::with_registry(&scenario, reg)?
        }
        None => Controller::from_scenario(&scenario)?,
    };
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("serving on http://{}", listener.local_addr()?);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    };
    api::serve(listener, AppState::new(controller), shutdown).await?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            duration,
            seed,
            out,
            format,
            trace,
            p_err,
            pause,
            actions,
        } => run(scenario, duration, seed, out, format, trace, p_err, pause, actions),
        Command::Rates { input } => rates(&input),
        Command::Verify {
            scenario,
            seed,
            reps,
            duration,
        } => verify(scenario, seed, reps, duration),
        Command::Serve {
            scenario,
            addr,
            registry,
        } => tokio::runtime::Runtime::new()
            .context("starting runtime")
            .and_then(|rt| rt.block_on(serve(scenario, addr, registry))),
        Command::Scenario { out } => write_or_print(out.as_deref(), &(Scenario::campus().to_json() + "\n")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

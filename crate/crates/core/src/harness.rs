//! The one-request-per-second workload and determinism checks.

use std::time::Duration;

use thiserror::Error;

use crate::controller::{ActionRequest, Controller, ControllerError, Targets};
use crate::metrics::MetricsReport;
use crate::node::Action;
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{trace_to_jsonl, TraceEvent};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("scenario has no devices besides the gateway")]
    NoDevices,
    #[error("need at least 2 repetitions, got {0}")]
    TooFewRepetitions(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadConfig {
    pub duration: Duration,
    /// Pause after each request completes.
    pub inter_request: Duration,
    pub actions: Vec<Action>,
    pub timeout: Duration,
    pub retries: u32,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            duration: Duration::from_secs(3600),
            inter_request: Duration::from_secs(1),
            actions: vec![
                Action::ApConnectionCount,
                Action::ConnectivityCheck,
                Action::SensorStatus,
                Action::ApStatus,
            ],
            timeout: crate::controller::DEFAULT_TIMEOUT,
            retries: crate::controller::DEFAULT_RETRIES,
            seed: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorkloadRun {
    pub report: MetricsReport,
    pub trace: Vec<TraceEvent>,
}

impl WorkloadRun {
    pub fn trace_jsonl(&self) -> String {
        trace_to_jsonl(&self.trace)
    }
}

/// Issues requests one at a time from the gateway, each followed by a
/// pause, cycling over non-gateway devices and `config.actions`, until
/// `config.duration` of simulated time has passed. The mesh is then left
/// to drain before counters are read.
pub fn run_paper_workload(scenario: &Scenario, config: &WorkloadConfig) -> Result<WorkloadRun, HarnessError> {
    let mut scenario = scenario.clone();
    if let Some(seed) = config.seed {
        scenario.seed = seed;
    }
    let mut controller = Controller::from_scenario(&scenario)?;
    let end = SimTime::ZERO + config.duration;
    controller.set_defaults(config.timeout, config.retries);

    let gateway = controller.gateway();
    let targets: Vec<u32> = controller.registry().ids().filter(|id| *id != gateway).collect();
    if targets.is_empty() || config.actions.is_empty() {
        return Err(HarnessError::NoDevices);
    }

    // No new request starts after `end`; the last one still gets its full
    // timeout and retries.
    let mut i = 0usize;
    while controller.now() < end {
        let request = ActionRequest::new(
            Targets::Device(targets[i % targets.len()]),
            config.actions[i % config.actions.len()],
        );
        match controller.dispatch_action(&request) {
            Ok(_) => i += 1,
            Err(ControllerError::GatewayDown(_)) => {}
            Err(e) => return Err(e.into()),
        }
        if controller.now() < end {
            let next = (controller.now() + config.inter_request).min(end);
            controller.advance_to(next);
        }
    }
    // Let frames still queued behind the duty-cycle budget go out so every
    // delivered request has had its chance to be answered.
    controller.drain();
    log::info!(
        "workload finished: {} requests, mesh settled at {}",
        controller.request_count(),
        controller.now()
    );
    let mut report = controller.metrics();
    report.run.duration_s = config.duration.as_secs_f64();
    report.run.settled_s = Some(controller.now().as_secs_f64());
    let trace = controller.sim_mut().take_trace();
    Ok(WorkloadRun { report, trace })
}

/// True iff `reps` runs with `seed` give identical reports and traces.
pub fn verify_determinism(
    scenario: &Scenario,
    seed: u64,
    reps: usize,
    config: &WorkloadConfig,
) -> Result<bool, HarnessError> {
    let config = WorkloadConfig {
        seed: Some(seed),
        ..config.clone()
    };
    verify_determinism_with(reps, || {
        let run = run_paper_workload(scenario, &config)?;
        Ok((
            run.report.render(crate::metrics::ReportFormat::Json),
            run.trace_jsonl(),
        ))
    })
}

/// Runs `run` `reps` times and compares the outputs byte for byte.
pub fn verify_determinism_with<F>(reps: usize, mut run: F) -> Result<bool, HarnessError>
where
    F: FnMut() -> Result<(String, String), HarnessError>,
{
    if reps < 2 {
        return Err(HarnessError::TooFewRepetitions(reps));
    }
    let first = run()?;
    for _ in 1..reps {
        if run()? != first {
            return Ok(false);
        }
    }
    Ok(true)
}

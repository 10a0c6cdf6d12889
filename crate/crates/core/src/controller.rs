//! SDN controller over the simulated mesh.
//!
//! The controller owns the [`Simulation`] and the device [`Registry`].
//! Requests become frames originated at the gateway node; answers come back
//! as frames addressed to the gateway and are matched to the outstanding
//! request by sender and the action prefix of the packed code, since a
//! response carries its own message ID rather than echoing the request's.
//!
//! A request's timeout runs from the moment its frame goes on air, so time
//! spent waiting for duty-cycle budget at the gateway does not count.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{unpack_response, ControlFrame, BROADCAST};
use crate::metrics::{MetricsReport, RunInfo};
use crate::node::{Action, NodeState};
use crate::registry::{DeviceRecord, DeviceUpdate, Registry, RegistryError};
use crate::scenario::{sensor_capable, Scenario, ScenarioError};
use crate::sim::{Notice, Simulation};
use crate::time::SimTime;
use crate::topology::{Link, TopologyError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("unknown action {0}")]
    UnknownAction(String),
    #[error("request has no targets")]
    NoTargets,
    #[error("gateway node {0} is not running")]
    GatewayDown(u32),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("unknown dispatch {0}")]
    UnknownDispatch(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Targets {
    Device(u32),
    List(Vec<u32>),
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionRequest {
    pub targets: Targets,
    pub action: Action,
    pub timeout: Option<Duration>,
    pub retries: Option<u32>,
}

impl ActionRequest {
    pub fn new(targets: Targets, action: Action) -> Self {
        ActionRequest {
            targets,
            action,
            timeout: None,
            retries: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TargetResult {
    Answered {
        action: u32,
        value: u32,
        #[serde(rename = "rtt_ms", with = "duration_ms")]
        rtt: Duration,
    },
    TimedOut,
}

impl TargetResult {
    pub fn value(&self) -> Option<u32> {
        match self {
            TargetResult::Answered { value, .. } => Some(*value),
            TargetResult::TimedOut => None,
        }
    }

    pub fn is_answered(&self) -> bool {
        matches!(self, TargetResult::Answered { .. })
    }
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        f64::deserialize(d).map(|ms| Duration::from_secs_f64(ms / 1e3))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationState {
    Pending,
    Answered { value: u32, at: SimTime },
    TimedOut,
}

#[derive(Clone, Debug)]
pub struct CorrelationEntry {
    pub target: u32,
    pub msg_id: u32,
    pub issued_at: SimTime,
    /// Set once the request frame is on air.
    pub deadline: Option<SimTime>,
    pub retries_left: u32,
    pub state: CorrelationState,
}

/// What [`Controller::correlate_response`] did with a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationUpdate {
    Answered { dispatch: u64, target: u32, value: u32 },
    Duplicate,
    UnknownSender,
    Unmatched,
}

#[derive(Clone, Debug)]
struct Dispatch {
    action: Action,
    timeout: Duration,
    broadcast: bool,
    entries: Vec<CorrelationEntry>,
    frames: Vec<ControlFrame>,
    started: SimTime,
}

impl Dispatch {
    fn is_complete(&self) -> bool {
        self.entries.iter().all(|e| e.state != CorrelationState::Pending)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DispatchOutcome {
    pub action: Action,
    pub results: BTreeMap<u32, TargetResult>,
    /// Every frame originated for this request, retries included.
    pub frames: Vec<ControlFrame>,
    pub started: SimTime,
    pub finished: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Connectivity {
    pub reachable: bool,
    #[serde(rename = "rtt_ms", with = "opt_duration_ms")]
    pub rtt: Option<Duration>,
}

mod opt_duration_ms {
    use serde::Serializer;
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_some(&(d.as_secs_f64() * 1e3)),
            None => s.serialize_none(),
        }
    }
}

pub struct Controller {
    sim: Simulation,
    registry: Registry,
    scenario_name: String,
    default_timeout: Duration,
    default_retries: u32,
    horizon: Option<SimTime>,
    active: BTreeMap<u64, Dispatch>,
    next_dispatch: u64,
    requests: u64,
    answered: u64,
    timed_out: u64,
    unmatched: u64,
}

impl Controller {
    /// A controller whose registry holds every scenario node.
    pub fn from_scenario(scenario: &Scenario) -> Result<Self, ScenarioError> {
        let mut registry = Registry::new();
        for node in &scenario.nodes {
            registry
                .register(node.device_record())
                .map_err(|source| ScenarioError::Node { id: node.id, source })?;
        }
        Self::with_registry(scenario, registry)
    }

    /// A controller over `scenario` using an existing registry. An empty
    /// registry is seeded from the scenario; registered devices missing
    /// from the scenario join the simulation unlinked.
    pub fn with_registry(scenario: &Scenario, mut registry: Registry) -> Result<Self, ScenarioError> {
        let mut sim = scenario.simulation()?;
        if registry.is_empty() {
            for node in &scenario.nodes {
                registry
                    .register(node.device_record())
                    .map_err(|source| ScenarioError::Node { id: node.id, source })?;
            }
        }
        for record in registry.list() {
            if sim.node(record.device_id).is_none() {
                sim.add_node(node_for(&record, scenario))
                    .expect("node absent from simulation");
            }
        }
        Ok(Controller {
            sim,
            registry,
            scenario_name: scenario.name.clone(),
            default_timeout: DEFAULT_TIMEOUT,
            default_retries: DEFAULT_RETRIES,
            horizon: None,
            active: BTreeMap::new(),
            next_dispatch: 0,
            requests: 0,
            answered: 0,
            timed_out: 0,
            unmatched: 0,
        })
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn sim_mut(&mut self) -> &mut Simulation {
        &mut self.sim
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn now(&self) -> SimTime {
        self.sim.now()
    }

    pub fn gateway(&self) -> u32 {
        self.sim.gateway()
    }

    pub fn set_defaults(&mut self, timeout: Duration, retries: u32) {
        self.default_timeout = timeout;
        self.default_retries = retries;
    }

    /// Simulated time past which no request waits; anything still pending
    /// then times out.
    pub fn set_horizon(&mut self, horizon: Option<SimTime>) {
        self.horizon = horizon;
    }

    /// Number of requests dispatched so far.
    pub fn request_count(&self) -> u64 {
        self.requests
    }

    /// Lets the mesh run for `span` of simulated time.
    pub fn advance(&mut self, span: Duration) {
        let until = self.sim.now() + span;
        self.advance_to(until);
    }

    pub fn advance_to(&mut self, until: SimTime) {
        while self.sim.peek_time().is_some_and(|t| t <= until) {
            self.sim.step();
            self.process_notices();
        }
        self.sim.run_until(until);
        self.process_notices();
    }

    /// Runs until nothing is scheduled: queued and deferred frames all go
    /// out. Requests still pending afterwards time out.
    pub fn drain(&mut self) {
        while self.sim.step() {
            self.process_notices();
        }
        self.process_notices();
        self.time_out_everything();
    }

    // Registry

    pub fn register_device(&mut self, record: DeviceRecord) -> Result<DeviceRecord, ControllerError> {
        let stored = self.registry.register(record)?;
        if self.sim.node(stored.device_id).is_none() {
            let mut node = NodeState::new(stored.device_id, stored.mesh_role, &Default::default());
            node.sensor_capable = sensor_capable(&stored.sensor_type);
            node.sensor_active = node.sensor_capable;
            node.ap_active = true;
            self.sim.add_node(node).expect("node absent from simulation");
        }
        Ok(stored)
    }

    pub fn update_device(&mut self, id: u32, update: DeviceUpdate) -> Result<DeviceRecord, ControllerError> {
        Ok(self.registry.update(id, update)?)
    }

    /// Removes a device. Requests still waiting on it time out.
    pub fn delete_device(&mut self, id: u32) -> Result<DeviceRecord, ControllerError> {
        let removed = self.registry.delete(id)?;
        for dispatch in self.active.values_mut() {
            for entry in dispatch
                .entries
                .iter_mut()
                .filter(|e| e.target == id && e.state == CorrelationState::Pending)
            {
                entry.state = CorrelationState::TimedOut;
            }
        }
        Ok(removed)
    }

    pub fn get_device(&self, id: u32) -> Result<&DeviceRecord, ControllerError> {
        Ok(self.registry.get(id)?)
    }

    pub fn list_devices(&self) -> Vec<DeviceRecord> {
        self.registry.list()
    }

    pub fn update_link(
        &mut self,
        a: u32,
        b: u32,
        p_err: Option<f64>,
        enabled: Option<bool>,
    ) -> Result<Link, ControllerError> {
        Ok(self.sim.topology_mut().upsert_link(a, b, p_err, enabled)?)
    }

    // Dispatch

    /// Sends the request's frames and returns a handle to wait on with
    /// [`Controller::complete`].
    pub fn begin_dispatch(&mut self, request: &ActionRequest) -> Result<u64, ControllerError> {
        let gateway = self.sim.gateway();
        if !self.sim.node(gateway).is_some_and(|n| n.is_up(self.sim.now())) {
            return Err(ControllerError::GatewayDown(gateway));
        }
        let (targets, broadcast) = match &request.targets {
            Targets::All => (
                self.registry.ids().filter(|id| *id != gateway).collect::<Vec<_>>(),
                true,
            ),
            Targets::Device(id) => (vec![*id], false),
            Targets::List(ids) => {
                let mut ids = ids.clone();
                ids.sort_unstable();
                ids.dedup();
                (ids, false)
            }
        };
        if targets.is_empty() {
            return Err(ControllerError::NoTargets);
        }
        if !broadcast {
            for id in &targets {
                self.registry.get(*id)?;
            }
        }

        let now = self.sim.now();
        let action = request.action;
        let retries = if broadcast {
            0
        } else {
            request.retries.unwrap_or(self.default_retries)
        };
        let mut dispatch = Dispatch {
            action,
            timeout: request.timeout.unwrap_or(self.default_timeout),
            broadcast,
            entries: Vec::with_capacity(targets.len()),
            frames: Vec::new(),
            started: now,
        };
        if broadcast {
            let frame = self.originate(BROADCAST, action);
            dispatch.frames.push(frame);
            dispatch.entries = targets
                .iter()
                .map(|&target| CorrelationEntry {
                    target,
                    msg_id: frame.msg_id,
                    issued_at: now,
                    deadline: None,
                    retries_left: 0,
                    state: CorrelationState::Pending,
                })
                .collect();
        } else {
            for target in targets {
                let frame = self.originate(target, action);
                dispatch.frames.push(frame);
                dispatch.entries.push(CorrelationEntry {
                    target,
                    msg_id: frame.msg_id,
                    issued_at: now,
                    deadline: None,
                    retries_left: retries,
                    state: CorrelationState::Pending,
                });
            }
        }
        let id = self.next_dispatch;
        self.next_dispatch += 1;
        self.requests += 1;
        self.active.insert(id, dispatch);
        Ok(id)
    }

    fn originate(&mut self, dst: u32, action: Action) -> ControlFrame {
        let gateway = self.sim.gateway();
        self.sim
            .originate(gateway, dst, action.id())
            .expect("gateway exists")
    }

    /// Runs the simulation until dispatch `id` has an answer or a timeout
    /// for every target.
    pub fn complete(&mut self, id: u64) -> Result<DispatchOutcome, ControllerError> {
        if !self.active.contains_key(&id) {
            return Err(ControllerError::UnknownDispatch(id));
        }
        loop {
            self.process_notices();
            self.expire();
            if self.active[&id].is_complete() {
                break;
            }
            let now = self.sim.now();
            if self.horizon.is_some_and(|h| now >= h) {
                self.time_out_everything();
                break;
            }
            let next_deadline = self
                .active
                .values()
                .flat_map(|d| d.entries.iter())
                .filter(|e| e.state == CorrelationState::Pending)
                .filter_map(|e| e.deadline)
                .min();
            let limit = match (next_deadline, self.horizon) {
                (Some(d), Some(h)) => Some(d.min(h)),
                (d, h) => d.or(h),
            };
            match (self.sim.peek_time(), limit) {
                (Some(t), Some(limit)) if t > limit => self.sim.run_until(limit),
                (Some(_), _) => {
                    self.sim.step();
                }
                (None, Some(limit)) => self.sim.run_until(limit),
                (None, None) => {
                    // Nothing scheduled and nothing on air: the request
                    // frames were discarded and can never be answered.
                    self.time_out_everything();
                    break;
                }
            }
        }
        let dispatch = self.active.remove(&id).expect("dispatch present");
        let mut results = BTreeMap::new();
        for entry in &dispatch.entries {
            let result = match entry.state {
                CorrelationState::Answered { value, at } => {
                    self.answered += 1;
                    TargetResult::Answered {
                        action: dispatch.action.id(),
                        value,
                        rtt: at.since(entry.issued_at),
                    }
                }
                _ => {
                    self.timed_out += 1;
                    TargetResult::TimedOut
                }
            };
            results.insert(entry.target, result);
        }
        Ok(DispatchOutcome {
            action: dispatch.action,
            results,
            frames: dispatch.frames,
            started: dispatch.started,
            finished: self.sim.now(),
        })
    }

    pub fn dispatch_action(&mut self, request: &ActionRequest) -> Result<DispatchOutcome, ControllerError> {
        let id = self.begin_dispatch(request)?;
        self.complete(id)
    }

    /// Probes a device with a connectivity check.
    pub fn connectivity_check(&mut self, id: u32) -> Result<Connectivity, ControllerError> {
        self.registry.get(id)?;
        let outcome = self.dispatch_action(&ActionRequest::new(Targets::Device(id), Action::ConnectivityCheck))?;
        Ok(match outcome.results[&id] {
            TargetResult::Answered { rtt, .. } => Connectivity {
                reachable: true,
                rtt: Some(rtt),
            },
            TargetResult::TimedOut => Connectivity {
                reachable: false,
                rtt: None,
            },
        })
    }

    fn time_out_everything(&mut self) {
        for entry in self.active.values_mut().flat_map(|d| d.entries.iter_mut()) {
            if entry.state == CorrelationState::Pending {
                entry.state = CorrelationState::TimedOut;
            }
        }
    }

    fn process_notices(&mut self) {
        for notice in self.sim.drain_notices() {
            match notice {
                Notice::Committed { frame, at } => {
                    for dispatch in self.active.values_mut() {
                        let timeout = dispatch.timeout;
                        for entry in dispatch.entries.iter_mut().filter(|e| {
                            e.msg_id == frame.msg_id
                                && e.deadline.is_none()
                                && e.state == CorrelationState::Pending
                                && (frame.dst == BROADCAST || frame.dst == e.target)
                        }) {
                            entry.deadline = Some(at + timeout);
                        }
                    }
                }
                Notice::Uplink { frame, at } => {
                    self.correlate_response(frame, at);
                }
            }
        }
    }

    /// Resends or gives up on every request whose deadline has passed.
    fn expire(&mut self) {
        let now = self.sim.now();
        let gateway = self.sim.gateway();
        let mut resend = Vec::new();
        for (id, dispatch) in self.active.iter_mut() {
            for (idx, entry) in dispatch.entries.iter_mut().enumerate() {
                if entry.state != CorrelationState::Pending || entry.deadline.is_none_or(|d| d > now) {
                    continue;
                }
                if entry.retries_left > 0 && !dispatch.broadcast {
                    resend.push((*id, idx));
                } else {
                    entry.state = CorrelationState::TimedOut;
                }
            }
        }
        for (id, idx) in resend {
            let dispatch = &self.active[&id];
            let (target, action) = (dispatch.entries[idx].target, dispatch.action);
            let frame = self
                .sim
                .originate(gateway, target, action.id())
                .expect("gateway exists");
            let dispatch = self.active.get_mut(&id).expect("dispatch present");
            dispatch.frames.push(frame);
            let entry = &mut dispatch.entries[idx];
            entry.msg_id = frame.msg_id;
            entry.deadline = None;
            entry.issued_at = now;
            entry.retries_left -= 1;
            log::debug!("retrying {} for device {} as msg {}", action, target, frame.msg_id);
        }
    }

    /// Matches a frame received by the gateway against outstanding requests.
    pub fn correlate_response(&mut self, frame: ControlFrame, at: SimTime) -> CorrelationUpdate {
        let code = unpack_response(frame.action);
        let mut duplicate = false;
        for (id, dispatch) in self.active.iter_mut() {
            if dispatch.action.id() != code.action {
                continue;
            }
            for entry in dispatch.entries.iter_mut().filter(|e| e.target == frame.src) {
                match entry.state {
                    CorrelationState::Pending => {
                        entry.state = CorrelationState::Answered { value: code.value, at };
                        return CorrelationUpdate::Answered {
                            dispatch: *id,
                            target: frame.src,
                            value: code.value,
                        };
                    }
                    CorrelationState::Answered { .. } => duplicate = true,
                    CorrelationState::TimedOut => {}
                }
            }
        }
        if duplicate {
            log::debug!("duplicate response {frame}");
            return CorrelationUpdate::Duplicate;
        }
        self.unmatched += 1;
        if !self.registry.contains(frame.src) {
            log::warn!("response {frame} from unregistered device {}", frame.src);
            CorrelationUpdate::UnknownSender
        } else {
            log::info!("unmatched response {frame}");
            CorrelationUpdate::Unmatched
        }
    }

    /// Responses that matched no outstanding request.
    pub fn unmatched_responses(&self) -> u64 {
        self.unmatched
    }

    /// Counter snapshot for every registered device.
    pub fn metrics(&self) -> MetricsReport {
        let devices = self
            .registry
            .list()
            .into_iter()
            .filter_map(|d| {
                self.sim
                    .node(d.device_id)
                    .map(|n| (d.device_id, d.name.clone(), n.counters))
            })
            .collect();
        MetricsReport::build(
            RunInfo {
                scenario: self.scenario_name.clone(),
                seed: self.sim.seed(),
                duration_s: self.sim.now().as_secs_f64(),
                requests: self.requests,
                answered: self.answered,
                timed_out: self.timed_out,
                settled_s: None,
            },
            devices,
        )
    }
}

fn node_for(record: &DeviceRecord, scenario: &Scenario) -> NodeState {
    let mut node = NodeState::new(record.device_id, record.mesh_role, &scenario.protocol);
    node.sensor_capable = sensor_capable(&record.sensor_type);
    node.sensor_active = node.sensor_capable;
    node.ap_active = true;
    node
}

//! LoRa controlled-flooding control plane.
//!
//! - [`codec`]: the four-field control frame and packed responses.
//! - [`node`]: per-device flooding state machine, action catalog, counters.
//! - [`radio`] and [`topology`]: airtime, hop schedule, duty cycle, links.
//! - [`sim`]: the discrete-event simulation tying nodes to the medium.
//! - [`registry`] and [`controller`]: the SDN controller over the simulated mesh.
//! - [`api`]: the controller's HTTP interface.
//! - [`harness`] and [`metrics`]: the request workload and its report.

pub mod api;
pub mod codec;
pub mod controller;
pub mod harness;
pub mod metrics;
pub mod node;
pub mod radio;
pub mod registry;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod topology;

pub use codec::{
    baseline_verbose_size, decode_frame, encode_frame, pack_response, unpack_response, CodecError, ControlFrame,
    PackError, PackedResponse, BROADCAST,
};
pub use controller::{ActionRequest, Controller, ControllerError, DispatchOutcome, TargetResult, Targets};
pub use harness::{run_paper_workload, verify_determinism, HarnessError, WorkloadConfig, WorkloadRun};
pub use metrics::{compute_rates, export_report, load_report, MetricsError, MetricsReport, Rates, ReportFormat};
pub use node::{Action, MeshRole, MessageCounters, NodeConfig, NodeState};
pub use radio::{airtime, current_channel, HopMode, RadioConfig};
pub use registry::{DeviceRecord, DeviceUpdate, Registry};
pub use scenario::Scenario;
pub use sim::{Simulation, TraceEvent};
pub use time::SimTime;
pub use topology::Topology;

//! Scenario files: nodes, links, radio parameters and seed.
//!
//! ```json
//! {
//!   "name": "campus-four-device",
//!   "seed": 2024,
//!   "gateway": 1,
//!   "nodes": [{"id": 1, "name": "LoRa Gateway", "role": "MPP", "sensor_type": "none",
//!              "lat": 39.735, "lon": -8.821, "ap_clients": 0}],
//!   "links": [{"a": 1, "b": 2, "p_err": 0.05, "enabled": true}],
//!   "radio": {"air_rate_bps": 2400, "slot_ms": 500, "hop_mode": "round-robin"},
//!   "protocol": {"dedup_capacity": 1024, "boot_delay_ms": 5000}
//! }
//! ```
//!
//! `name`, `gateway`, `radio`, `protocol`, `seed` and the per-node
//! `ap_clients`, `notes`, `sensor_active`, `ap_active` and `alive` are
//! optional. Without `gateway` the lowest-ID `MPP` node is used.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{MeshRole, NodeConfig, NodeState};
use crate::radio::{RadioConfig, RadioConfigError};
use crate::registry::{DeviceRecord, RegistryError};
use crate::sim::Simulation;
use crate::topology::{Topology, TopologyError};

const CAMPUS: &str = include_str!("../scenarios/campus.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] io::Error),
    #[error("parsing scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("node {id}: {source}")]
    Node {
        id: u32,
        #[source]
        source: RegistryError,
    },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Radio(#[from] RadioConfigError),
    #[error("scenario has no nodes")]
    Empty,
    #[error("no gateway: set \"gateway\" or give a node the MPP role")]
    NoGateway,
    #[error("gateway {0} is not a node of the scenario")]
    UnknownGateway(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: u32,
    pub name: String,
    pub role: MeshRole,
    #[serde(default)]
    pub sensor_type: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub ap_clients: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_active: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap_active: Option<bool>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub alive: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl NodeSpec {
    pub fn sensor_capable(&self) -> bool {
        sensor_capable(&self.sensor_type)
    }

    pub fn device_record(&self) -> DeviceRecord {
        DeviceRecord {
            name: self.name.clone(),
            device_id: self.id,
            sensor_type: self.sensor_type.clone(),
            latitude: self.lat,
            longitude: self.lon,
            notes: self.notes.clone(),
            mesh_role: self.role,
        }
    }

    pub fn node_state(&self, config: &NodeConfig) -> NodeState {
        let mut node = NodeState::new(self.id, self.role, config);
        node.sensor_capable = self.sensor_capable();
        node.sensor_active = self.sensor_active.unwrap_or(node.sensor_capable) && node.sensor_capable;
        node.ap_active = self.ap_active.unwrap_or(true);
        node.wifi_active = true;
        node.set_ap_clients(self.ap_clients);
        node.alive = self.alive;
        node
    }
}

/// Sensor types that mean "no sensor fitted".
pub fn sensor_capable(sensor_type: &str) -> bool {
    let t = sensor_type.trim();
    !(t.is_empty() || t.eq_ignore_ascii_case("none"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: u32,
    pub b: u32,
    pub p_err: f64,
    #[serde(default = "yes")]
    pub enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateway: Option<u32>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub protocol: NodeConfig,
}

impl Scenario {
    /// The bundled four-device campus deployment: LoRa gateway (1), HaLow
    /// gateway (2), temperature/humidity sensor (3) and traffic light (4),
    /// all within radio range of one another.
    pub fn campus() -> Scenario {
        serde_json::from_str(CAMPUS).expect("bundled scenario parses")
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Sets every link's error probability.
    pub fn with_uniform_p_err(mut self, p: f64) -> Scenario {
        for link in &mut self.links {
            link.p_err = p;
        }
        self
    }

    pub fn gateway_id(&self) -> Result<u32, ScenarioError> {
        match self.gateway {
            Some(id) if self.nodes.iter().any(|n| n.id == id) => Ok(id),
            Some(id) => Err(ScenarioError::UnknownGateway(id)),
            None => self
                .nodes
                .iter()
                .filter(|n| n.role == MeshRole::Portal)
                .map(|n| n.id)
                .min()
                .ok_or(ScenarioError::NoGateway),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.nodes.is_empty() {
            return Err(ScenarioError::Empty);
        }
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            node.device_record()
                .validate()
                .map_err(|source| ScenarioError::Node { id: node.id, source })?;
            if !seen.insert(node.id) {
                return Err(ScenarioError::Node {
                    id: node.id,
                    source: RegistryError::DuplicateDeviceId(node.id),
                });
            }
        }
        self.topology()?;
        self.radio.validate()?;
        self.gateway_id()?;
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, TopologyError> {
        let mut topo = Topology::new();
        for node in &self.nodes {
            topo.add_node(node.id)?;
        }
        for link in &self.links {
            topo.add_link(link.a, link.b, link.p_err, link.enabled)?;
        }
        Ok(topo)
    }

    pub fn simulation(&self) -> Result<Simulation, ScenarioError> {
        self.simulation_with_seed(self.seed)
    }

    pub fn simulation_with_seed(&self, seed: u64) -> Result<Simulation, ScenarioError> {
        self.validate()?;
        let nodes = self.nodes.iter().map(|n| n.node_state(&self.protocol));
        let sim = Simulation::new(self.radio.clone(), seed, self.topology()?, nodes, self.gateway_id()?)
            .expect("validated scenario builds");
        Ok(sim)
    }
}

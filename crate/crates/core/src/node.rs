//! Per-device protocol state: controlled-flooding reception, the action
//! catalog and message counters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{pack_response, ControlFrame, BROADCAST, RESPONSE_RADIX};
use crate::time::SimTime;

/// Request action IDs lie in `1..RESPONSE_RADIX`; anything else on the
/// wire is a packed response.
pub fn is_request(action: u32) -> bool {
    (1..RESPONSE_RADIX).contains(&action)
}

/// Role of a device in the mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeshRole {
    /// Mesh point portal, bridging the mesh to outside networks.
    #[serde(rename = "MPP")]
    Portal,
    /// Ordinary mesh point.
    #[serde(rename = "MP")]
    Point,
}

/// The fixed action catalog. Discriminants are the on-wire action IDs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u32)]
pub enum Action {
    SensorOn = 1,
    SensorOff = 2,
    WifiOn = 3,
    WifiOff = 4,
    ApConnectionCount = 5,
    SensorToAp = 6,
    ApToSensor = 7,
    Reboot = 8,
    ConnectivityCheck = 9,
    SensorStatus = 10,
    ApStatus = 11,
}

impl Action {
    pub const ALL: [Action; 11] = [
        Action::SensorOn,
        Action::SensorOff,
        Action::WifiOn,
        Action::WifiOff,
        Action::ApConnectionCount,
        Action::SensorToAp,
        Action::ApToSensor,
        Action::Reboot,
        Action::ConnectivityCheck,
        Action::SensorStatus,
        Action::ApStatus,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn from_id(id: u32) -> Option<Action> {
        Action::ALL.iter().copied().find(|a| a.id() == id)
    }

    /// Stable machine name, as used by the HTTP API.
    pub fn name(self) -> &'static str {
        match self {
            Action::SensorOn => "sensor-on",
            Action::SensorOff => "sensor-off",
            Action::WifiOn => "wifi-on",
            Action::WifiOff => "wifi-off",
            Action::ApConnectionCount => "ap-connection-count",
            Action::SensorToAp => "sensor-to-ap",
            Action::ApToSensor => "ap-to-sensor",
            Action::Reboot => "reboot",
            Action::ConnectivityCheck => "connectivity-check",
            Action::SensorStatus => "sensor-status",
            Action::ApStatus => "ap-status",
        }
    }

    /// Queries read state; everything else is a command.
    pub fn is_query(self) -> bool {
        matches!(
            self,
            Action::ApConnectionCount
                | Action::ConnectivityCheck
                | Action::SensorStatus
                | Action::ApStatus
        )
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown action {0:?}")]
pub struct UnknownAction(pub String);

impl FromStr for Action {
    type Err = UnknownAction;

    /// Accepts the numeric ID or the machine name, case-insensitively, with
    /// spaces or underscores in place of dashes ("AP Connection Count").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if let Ok(id) = trimmed.parse::<u32>() {
            return Action::from_id(id).ok_or_else(|| UnknownAction(s.to_string()));
        }
        let normalized: String = trimmed
            .chars()
            .map(|c| match c {
                ' ' | '_' => '-',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name() == normalized)
            .ok_or_else(|| UnknownAction(s.to_string()))
    }
}

/// Reception and transmission counters of one device.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageCounters {
    /// Receptions that could not be decoded.
    pub errors: u64,
    /// First-sight frames addressed to another device, relayed onward.
    pub retransmitted: u64,
    /// First-sight frames addressed to this device or broadcast.
    pub received: u64,
    /// Frames originated by this device and put on air.
    pub sent: u64,
    /// Duplicates of frames already received or relayed.
    pub ignored: u64,
}

impl MessageCounters {
    pub fn successes(&self) -> u64 {
        self.retransmitted + self.received + self.ignored
    }

    pub fn receptions(&self) -> u64 {
        self.errors + self.successes()
    }
}

/// Bounded least-recently-used set of `(src, msg_id)` pairs.
#[derive(Clone, Debug)]
pub struct DedupCache {
    capacity: usize,
    stamp: u64,
    by_key: HashMap<(u32, u32), u64>,
    by_age: BTreeMap<u64, (u32, u32)>,
}

impl DedupCache {
    pub fn new(capacity: usize) -> Self {
        DedupCache {
            capacity,
            stamp: 0,
            by_key: HashMap::new(),
            by_age: BTreeMap::new(),
        }
    }

    pub fn contains(&self, key: &(u32, u32)) -> bool {
        self.by_key.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    /// Inserts or refreshes `key`, evicting the least recently used entry
    /// when full.
    pub fn insert(&mut self, key: (u32, u32)) {
        if self.capacity == 0 {
            return;
        }
        self.stamp += 1;
        if let Some(old) = self.by_key.insert(key, self.stamp) {
            self.by_age.remove(&old);
        } else if self.by_key.len() > self.capacity {
            if let Some((_, evicted)) = self.by_age.pop_first() {
                self.by_key.remove(&evicted);
            }
        }
        self.by_age.insert(self.stamp, key);
    }

    /// Marks `key` as recently used if present.
    pub fn touch(&mut self, key: &(u32, u32)) {
        if self.contains(key) {
            self.insert(*key);
        }
    }

    pub fn clear(&mut self) {
        self.by_key.clear();
        self.by_age.clear();
    }
}

/// Protocol parameters shared by every node of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeConfig {
    pub dedup_capacity: usize,
    #[serde(rename = "boot_delay_ms", with = "millis")]
    pub boot_delay: Duration,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            dedup_capacity: 1024,
            boot_delay: Duration::from_secs(5),
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// What a radio handed up to the node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reception {
    Frame(ControlFrame),
    Corrupted,
}

/// Side effects requested by the node; the simulator carries them out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Effect {
    /// Originate a response frame.
    Respond(ControlFrame),
    /// Relay a received frame unchanged.
    Forward(ControlFrame),
    /// Hand a frame addressed to the controller-attached node up to the controller.
    Uplink(ControlFrame),
    /// Restart once every queued transmission has left.
    Reboot,
}

/// Runtime state of one device.
#[derive(Clone, Debug)]
pub struct NodeState {
    pub device_id: u32,
    pub role: MeshRole,
    /// The controller-attached gateway passes self-addressed frames up
    /// instead of executing them.
    pub uplink: bool,
    pub sensor_capable: bool,
    pub sensor_active: bool,
    pub wifi_active: bool,
    pub ap_active: bool,
    ap_clients: u32,
    pub alive: bool,
    pub boot_until: SimTime,
    pub reboot_pending: bool,
    pub next_msg_id: u32,
    pub counters: MessageCounters,
    dedup_received: DedupCache,
    dedup_forwarded: DedupCache,
    boot_delay: Duration,
}

impl NodeState {
    pub fn new(device_id: u32, role: MeshRole, config: &NodeConfig) -> Self {
        NodeState {
            device_id,
            role,
            uplink: false,
            sensor_capable: true,
            sensor_active: true,
            wifi_active: true,
            ap_active: false,
            ap_clients: 0,
            alive: true,
            boot_until: SimTime::ZERO,
            reboot_pending: false,
            next_msg_id: 1,
            counters: MessageCounters::default(),
            dedup_received: DedupCache::new(config.dedup_capacity),
            dedup_forwarded: DedupCache::new(config.dedup_capacity),
            boot_delay: config.boot_delay,
        }
    }

    pub fn ap_clients(&self) -> u32 {
        self.ap_clients
    }

    /// Sets the number of clients attached to the access point, clamped to
    /// what a packed response can carry.
    pub fn set_ap_clients(&mut self, clients: u32) {
        self.ap_clients = clients.min(99);
    }

    /// Whether the node can transmit and receive at `now`.
    pub fn is_up(&self, now: SimTime) -> bool {
        self.alive && now >= self.boot_until
    }

    pub fn duplicate_seen(&self, src: u32, msg_id: u32) -> bool {
        let key = (src, msg_id);
        self.dedup_received.contains(&key) || self.dedup_forwarded.contains(&key)
    }

    /// Builds a new frame from this node. The frame is recorded as already
    /// handled so echoes relayed back by neighbours are ignored.
    pub fn originate(&mut self, dst: u32, action: u32) -> ControlFrame {
        let frame = ControlFrame::new(self.device_id, dst, self.next_msg_id, action);
        self.next_msg_id = match self.next_msg_id {
            u32::MAX => 1,
            n => n + 1,
        };
        self.dedup_forwarded.insert(frame.key());
        frame
    }

    /// Counts a frame originated here as having gone on air.
    pub fn note_sent(&mut self) {
        self.counters.sent += 1;
    }

    /// Classifies one reception and returns what should happen next.
    pub fn handle_reception(&mut self, reception: Reception, now: SimTime) -> Vec<Effect> {
        if !self.is_up(now) {
            return Vec::new();
        }
        let frame = match reception {
            Reception::Corrupted => {
                self.counters.errors += 1;
                return Vec::new();
            }
            Reception::Frame(frame) => frame,
        };
        let key = frame.key();
        if self.dedup_received.contains(&key) || self.dedup_forwarded.contains(&key) {
            self.counters.ignored += 1;
            self.dedup_received.touch(&key);
            self.dedup_forwarded.touch(&key);
            return Vec::new();
        }

        let for_me = frame.dst == self.device_id;
        if !for_me && frame.dst != BROADCAST {
            self.counters.retransmitted += 1;
            self.dedup_forwarded.insert(key);
            return vec![Effect::Forward(frame)];
        }

        self.counters.received += 1;
        self.dedup_received.insert(key);
        if for_me && self.uplink {
            return vec![Effect::Uplink(frame)];
        }

        let mut effects = Vec::with_capacity(3);
        if !is_request(frame.action) {
            // A response code or an empty action: delivered, never answered,
            // otherwise two devices would answer each other forever.
            if frame.is_broadcast() {
                effects.push(Effect::Forward(frame));
            }
            return effects;
        }
        let code = match self.execute_action(frame.action, now) {
            Ok(value) => pack_response(frame.action, value),
            Err(_) => {
                log::debug!("node {}: unknown action {}", self.device_id, frame.action);
                pack_response(frame.action, 0)
            }
        }
        .expect("request IDs are below the response radix");
        effects.push(Effect::Respond(self.originate(frame.src, code)));
        if frame.is_broadcast() {
            effects.push(Effect::Forward(frame));
        }
        if self.reboot_pending {
            effects.push(Effect::Reboot);
        }
        effects
    }

    /// Runs one catalog action. Commands answer 1 on success and 0 on
    /// failure; queries answer the status bit or the client count.
    pub fn execute_action(&mut self, action_id: u32, _now: SimTime) -> Result<u32, UnknownAction> {
        let action = Action::from_id(action_id).ok_or_else(|| UnknownAction(action_id.to_string()))?;
        let value = match action {
            Action::SensorOn => {
                if self.sensor_capable {
                    self.sensor_active = true;
                }
                u32::from(self.sensor_capable)
            }
            Action::SensorOff => {
                self.sensor_active = false;
                1
            }
            Action::WifiOn => {
                self.wifi_active = true;
                1
            }
            Action::WifiOff => {
                self.wifi_active = false;
                self.ap_active = false;
                1
            }
            Action::ApConnectionCount => {
                if self.ap_active {
                    self.ap_clients
                } else {
                    0
                }
            }
            Action::SensorToAp => {
                self.sensor_active = false;
                self.wifi_active = true;
                self.ap_active = true;
                1
            }
            Action::ApToSensor => {
                if self.sensor_capable {
                    self.ap_active = false;
                    self.sensor_active = true;
                }
                u32::from(self.sensor_capable)
            }
            Action::Reboot => {
                self.reboot_pending = true;
                1
            }
            Action::ConnectivityCheck => 1,
            Action::SensorStatus => u32::from(self.sensor_active),
            Action::ApStatus => u32::from(self.ap_active),
        };
        Ok(value)
    }

    /// Goes silent for the boot delay and forgets every cached frame.
    /// Counters are kept.
    pub fn begin_reboot(&mut self, now: SimTime) {
        self.reboot_pending = false;
        self.boot_until = now + self.boot_delay;
        self.dedup_received.clear();
        self.dedup_forwarded.clear();
    }
}

//! Shared-medium model: time on air, the slotted hop schedule, duty-cycle
//! budgeting and per-link reception draws.

use std::collections::VecDeque;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::MAX_ENCODED_LEN;
use crate::time::SimTime;
use crate::topology::Topology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HopMode {
    RoundRobin,
    SeededPermutation,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioConfigError {
    #[error("channel list is empty")]
    NoChannels,
    #[error("duty limit {0} outside (0, 1]")]
    DutyLimit(f64),
    #[error("slot duration must be positive")]
    ZeroSlot,
    #[error("air rate must be positive")]
    ZeroRate,
    #[error("duty budget {budget:?} is smaller than the airtime of a full frame {frame:?}")]
    BudgetTooSmall { budget: Duration, frame: Duration },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    pub air_rate_bps: u32,
    pub preamble_bytes: u32,
    pub channels_mhz: Vec<f64>,
    pub slot_ms: u64,
    pub hop_mode: HopMode,
    pub duty_limit: f64,
    pub duty_window_s: u64,
    /// Upper bound of the uniform delay before relaying or answering.
    pub jitter_ms: u64,
    /// Listen before talk: defer while a neighbour's transmission is heard
    /// on the current channel.
    pub carrier_sense: bool,
    /// Corrupt receptions that overlap on the same channel at a receiver.
    pub collisions: bool,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            air_rate_bps: 2400,
            preamble_bytes: 8,
            channels_mhz: vec![865.0, 866.0, 867.0, 868.0],
            slot_ms: 500,
            hop_mode: HopMode::RoundRobin,
            duty_limit: 0.01,
            duty_window_s: 3600,
            jitter_ms: 200,
            carrier_sense: true,
            collisions: true,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<(), RadioConfigError> {
        if self.channels_mhz.is_empty() {
            return Err(RadioConfigError::NoChannels);
        }
        if !(self.duty_limit > 0.0 && self.duty_limit <= 1.0) {
            return Err(RadioConfigError::DutyLimit(self.duty_limit));
        }
        if self.slot_ms == 0 {
            return Err(RadioConfigError::ZeroSlot);
        }
        if self.air_rate_bps == 0 {
            return Err(RadioConfigError::ZeroRate);
        }
        let frame = airtime(MAX_ENCODED_LEN, self);
        if self.duty_budget() < frame {
            return Err(RadioConfigError::BudgetTooSmall {
                budget: self.duty_budget(),
                frame,
            });
        }
        Ok(())
    }

    pub fn duty_window(&self) -> Duration {
        Duration::from_secs(self.duty_window_s)
    }

    /// Airtime a sender may use within one window.
    pub fn duty_budget(&self) -> Duration {
        Duration::from_nanos((self.duty_limit * self.duty_window().as_nanos() as f64).floor() as u64)
    }

    pub fn slot(&self) -> Duration {
        Duration::from_millis(self.slot_ms)
    }

    pub fn jitter(&self) -> Duration {
        Duration::from_millis(self.jitter_ms)
    }
}

/// Time on air of a payload: preamble plus payload bits at the serial air
/// rate, rounded up to the nanosecond.
pub fn airtime(payload_len: usize, config: &RadioConfig) -> Duration {
    let bits = (u64::from(config.preamble_bytes) + payload_len as u64) * 8;
    let rate = u64::from(config.air_rate_bps);
    Duration::from_nanos((bits * 1_000_000_000).div_ceil(rate))
}

/// Channel index every node listens on at `t`.
pub fn current_channel(t: SimTime, config: &RadioConfig, seed: u64) -> usize {
    let count = config.channels_mhz.len();
    let slot = t.as_nanos() / config.slot().as_nanos() as u64;
    match config.hop_mode {
        HopMode::RoundRobin => (slot % count as u64) as usize,
        HopMode::SeededPermutation => {
            let cycle = slot / count as u64;
            let position = (slot % count as u64) as usize;
            hop_permutation(seed, cycle, count)[position]
        }
    }
}

/// Channel order for one hop cycle, derived from the run seed alone so
/// every node computes the same sequence.
pub fn hop_permutation(seed: u64, cycle: u64, count: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cycle);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    order
}

/// Sliding-window airtime ledger of one sender.
///
/// A transmission starting at `t` with airtime `a` is admitted when the
/// airtime of every earlier transmission ending after `t - window`, plus
/// `a`, fits the budget. Any window that overlaps a transmission lies inside
/// that span, so no window ever holds more than the budget.
#[derive(Clone, Debug, Default)]
pub struct DutyLedger {
    entries: VecDeque<(SimTime, SimTime)>,
}

impl DutyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// End of the latest recorded transmission.
    pub fn busy_until(&self) -> SimTime {
        self.entries.back().map_or(SimTime::ZERO, |(_, end)| *end)
    }

    /// Earliest start at or after `requested` that keeps the sender within
    /// budget and after its previous transmission.
    pub fn earliest_start(&self, requested: SimTime, airtime: Duration, config: &RadioConfig) -> SimTime {
        let window = config.duty_window();
        let budget = config.duty_budget();
        let mut t = requested.max(self.busy_until());
        let live: Vec<&(SimTime, SimTime)> = self.entries.iter().filter(|(_, end)| *end + window > t).collect();
        let mut used: Duration = live.iter().map(|(s, e)| e.since(*s)).sum();
        for (start, end) in live {
            if used + airtime <= budget {
                break;
            }
            used -= end.since(*start);
            t = t.max(*end + window);
        }
        t
    }

    /// Records a committed transmission. Entries that can no longer affect
    /// any start at or after `start` are dropped.
    pub fn record(&mut self, start: SimTime, airtime: Duration, config: &RadioConfig) {
        let window = config.duty_window();
        while let Some((_, end)) = self.entries.front() {
            if *end + window <= start {
                self.entries.pop_front();
            } else {
                break;
            }
        }
        self.entries.push_back((start, start + airtime));
    }
}

/// One frame on air.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmissionEvent {
    pub id: u64,
    pub sender: u32,
    pub bytes: Vec<u8>,
    pub start: SimTime,
    pub airtime: Duration,
    pub channel: usize,
}

impl TransmissionEvent {
    pub fn end(&self) -> SimTime {
        self.start + self.airtime
    }
}

/// Per-link outcome of one transmission, before collisions are considered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkOutcome {
    pub receiver: u32,
    pub corrupted: bool,
}

/// Draws one Bernoulli trial per enabled link of the sender, in ascending
/// receiver order.
pub fn deliver<R: Rng + ?Sized>(tx: &TransmissionEvent, topology: &Topology, rng: &mut R) -> Vec<LinkOutcome> {
    topology
        .neighbors(tx.sender)
        .into_iter()
        .map(|(receiver, p_err)| LinkOutcome {
            receiver,
            corrupted: rng.random::<f64>() < p_err,
        })
        .collect()
}

//! Discrete-event simulation of the LoRa control mesh.
//!
//! The simulation owns every [`NodeState`], the [`Topology`] and a single
//! seeded PRNG. Events are processed in `(time, node, insertion)` order, so a
//! given scenario and seed always produce the same trace.
//!
//! A node's outgoing frames sit in a FIFO outbox. When the head frame is due
//! the node checks its duty-cycle ledger (deferring if the budget is spent)
//! and, with carrier sense enabled, the channel (backing off while a
//! neighbour is heard). Only then does the frame go on air. Frames are never
//! dropped for lack of budget.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{encode_frame, ControlFrame};
use crate::node::{Effect, MessageCounters, NodeState, Reception};
use crate::radio::{airtime, current_channel, deliver, DutyLedger, RadioConfig, TransmissionEvent};
use crate::time::SimTime;
use crate::topology::Topology;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error("node {0} already exists")]
    DuplicateNode(u32),
}

/// Why a frame is on air.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Originated,
    Forwarded,
}

/// How a reception was classified by the receiving node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxClass {
    Error,
    Retransmitted,
    Received,
    Ignored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxOutcome {
    Ok,
    /// Lost to the link's error probability.
    LinkError,
    /// Overlapped another transmission on the same channel.
    Collision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferReason {
    DutyCycle,
    ChannelBusy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Tx {
        t: SimTime,
        tx: u64,
        sender: u32,
        kind: TxKind,
        frame: ControlFrame,
        len: usize,
        airtime_ns: u64,
        channel: usize,
    },
    Rx {
        t: SimTime,
        tx: u64,
        receiver: u32,
        sender: u32,
        sender_channel: usize,
        receiver_channel: usize,
        outcome: RxOutcome,
        /// `None` when the receiver was down and discarded the reception.
        class: Option<RxClass>,
    },
    Deferred {
        t: SimTime,
        node: u32,
        until: SimTime,
        reason: DeferReason,
    },
    Reboot {
        t: SimTime,
        node: u32,
        until: SimTime,
    },
    Discarded {
        t: SimTime,
        node: u32,
        frames: usize,
    },
}

impl TraceEvent {
    pub fn time(&self) -> SimTime {
        match self {
            TraceEvent::Tx { t, .. }
            | TraceEvent::Rx { t, .. }
            | TraceEvent::Deferred { t, .. }
            | TraceEvent::Reboot { t, .. }
            | TraceEvent::Discarded { t, .. } => *t,
        }
    }
}

/// Something the controller-attached gateway observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Notice {
    /// A frame originated by the gateway went on air.
    Committed { frame: ControlFrame, at: SimTime },
    /// A frame addressed to the gateway arrived.
    Uplink { frame: ControlFrame, at: SimTime },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Attempt { node: u32 },
    TxEnd { tx: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Scheduled {
    time: SimTime,
    node: u32,
    seq: u64,
    event: Event,
}

#[derive(Clone, Debug)]
struct Outgoing {
    frame: ControlFrame,
    kind: TxKind,
    ready_at: SimTime,
}

#[derive(Clone, Debug, Default)]
struct Outbox {
    queue: VecDeque<Outgoing>,
    attempt_pending: bool,
    transmitting: bool,
}

#[derive(Clone, Debug)]
struct OnAir {
    event: TransmissionEvent,
    frame: ControlFrame,
    receivers: Vec<u32>,
}

#[derive(Clone, Copy, Debug)]
struct ActiveRx {
    tx: u64,
    end: SimTime,
    channel: usize,
    link_error: bool,
    collided: bool,
}

pub struct Simulation {
    config: RadioConfig,
    seed: u64,
    topology: Topology,
    nodes: BTreeMap<u32, NodeState>,
    gateway: u32,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now: SimTime,
    next_tx: u64,
    outboxes: BTreeMap<u32, Outbox>,
    ledgers: BTreeMap<u32, DutyLedger>,
    on_air: BTreeMap<u64, OnAir>,
    receiving: BTreeMap<u32, Vec<ActiveRx>>,
    trace: Vec<TraceEvent>,
    notices: VecDeque<Notice>,
}

impl Simulation {
    /// Builds a simulation over `topology`. Every node in the topology must
    /// have a state in `nodes`; `gateway` is the controller-attached node.
    pub fn new(
        config: RadioConfig,
        seed: u64,
        topology: Topology,
        nodes: impl IntoIterator<Item = NodeState>,
        gateway: u32,
    ) -> Result<Self, SimError> {
        let mut states = BTreeMap::new();
        for node in nodes {
            let id = node.device_id;
            if states.insert(id, node).is_some() {
                return Err(SimError::DuplicateNode(id));
            }
        }
        if let Some(missing) = topology.nodes().find(|id| !states.contains_key(id)) {
            return Err(SimError::UnknownNode(missing));
        }
        if let Some(extra) = states.keys().find(|id| !topology.contains(**id)) {
            return Err(SimError::UnknownNode(*extra));
        }
        let gw = states.get_mut(&gateway).ok_or(SimError::UnknownNode(gateway))?;
        gw.uplink = true;
        Ok(Simulation {
            config,
            seed,
            topology,
            nodes: states,
            gateway,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            next_tx: 0,
            outboxes: BTreeMap::new(),
            ledgers: BTreeMap::new(),
            on_air: BTreeMap::new(),
            receiving: BTreeMap::new(),
            trace: Vec::new(),
            notices: VecDeque::new(),
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &RadioConfig {
        &self.config
    }

    pub fn gateway(&self) -> u32 {
        self.gateway
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn topology_mut(&mut self) -> &mut Topology {
        &mut self.topology
    }

    pub fn node(&self, id: u32) -> Option<&NodeState> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: u32) -> Option<&mut NodeState> {
        self.nodes.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.values()
    }

    pub fn counters(&self) -> BTreeMap<u32, MessageCounters> {
        self.nodes.iter().map(|(id, n)| (*id, n.counters)).collect()
    }

    /// Adds an unlinked node at runtime.
    pub fn add_node(&mut self, node: NodeState) -> Result<(), SimError> {
        let id = node.device_id;
        if self.nodes.contains_key(&id) {
            return Err(SimError::DuplicateNode(id));
        }
        self.topology.add_node(id).map_err(|_| SimError::DuplicateNode(id))?;
        self.nodes.insert(id, node);
        Ok(())
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.trace)
    }

    pub fn drain_notices(&mut self) -> Vec<Notice> {
        self.notices.drain(..).collect()
    }

    /// Originates a frame at `src` and queues it for immediate transmission.
    pub fn originate(&mut self, src: u32, dst: u32, action: u32) -> Result<ControlFrame, SimError> {
        let node = self.nodes.get_mut(&src).ok_or(SimError::UnknownNode(src))?;
        let frame = node.originate(dst, action);
        let now = self.now;
        self.enqueue(src, frame, TxKind::Originated, now);
        Ok(frame)
    }

    /// Frames waiting in a node's outbox, not counting one on air.
    pub fn queued(&self, node: u32) -> usize {
        self.outboxes.get(&node).map_or(0, |o| o.queue.len())
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(s)| s.time)
    }

    /// Processes the next event. Returns false when nothing is scheduled.
    pub fn step(&mut self) -> bool {
        let Some(Reverse(next)) = self.queue.pop() else {
            return false;
        };
        self.now = self.now.max(next.time);
        match next.event {
            Event::Attempt { node } => self.attempt(node),
            Event::TxEnd { tx } => self.finish(tx),
        }
        true
    }

    /// Processes every event scheduled at or before `until`, then moves the
    /// clock to `until`.
    pub fn run_until(&mut self, until: SimTime) {
        while self.peek_time().is_some_and(|t| t <= until) {
            self.step();
        }
        self.now = self.now.max(until);
    }

    /// Runs until no events remain.
    pub fn run_to_quiescence(&mut self) {
        while self.step() {}
    }

    fn schedule(&mut self, time: SimTime, node: u32, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            time,
            node,
            seq: self.seq,
            event,
        }));
    }

    fn jitter(&mut self) -> Duration {
        let bound = self.config.jitter().as_nanos() as u64;
        Duration::from_nanos(self.rng.random_range(0..=bound))
    }

    fn enqueue(&mut self, node: u32, frame: ControlFrame, kind: TxKind, ready_at: SimTime) {
        let outbox = self.outboxes.entry(node).or_default();
        outbox.queue.push_back(Outgoing { frame, kind, ready_at });
        if !outbox.attempt_pending && !outbox.transmitting {
            outbox.attempt_pending = true;
            let at = ready_at.max(self.now);
            self.schedule(at, node, Event::Attempt { node });
        }
    }

    /// Latest end among neighbour transmissions heard on `channel` at `t`.
    fn channel_busy_until(&self, node: u32, channel: usize, t: SimTime) -> Option<SimTime> {
        self.on_air
            .values()
            .filter(|a| a.event.channel == channel && a.event.start <= t && a.event.end() > t)
            .filter(|a| a.receivers.contains(&node))
            .map(|a| a.event.end())
            .max()
    }

    fn attempt(&mut self, node: u32) {
        let now = self.now;
        let Some(outbox) = self.outboxes.get_mut(&node) else {
            return;
        };
        outbox.attempt_pending = false;
        let Some(head) = outbox.queue.front().cloned() else {
            return;
        };

        let up = self.nodes.get(&node).is_some_and(|n| n.is_up(now));
        if !up {
            let frames = outbox.queue.len();
            outbox.queue.clear();
            self.trace.push(TraceEvent::Discarded { t: now, node, frames });
            return;
        }
        if head.ready_at > now {
            outbox.attempt_pending = true;
            self.schedule(head.ready_at, node, Event::Attempt { node });
            return;
        }

        let bytes = encode_frame(&head.frame);
        let air = airtime(bytes.len(), &self.config);
        let start = self
            .ledgers
            .entry(node)
            .or_default()
            .earliest_start(now, air, &self.config);
        if start > now {
            self.defer(node, start, DeferReason::DutyCycle);
            return;
        }

        let channel = current_channel(now, &self.config, self.seed);
        if self.config.carrier_sense {
            if let Some(busy) = self.channel_busy_until(node, channel, now) {
                let retry = busy + self.jitter();
                self.defer(node, retry, DeferReason::ChannelBusy);
                return;
            }
        }

        let outbox = self.outboxes.get_mut(&node).expect("outbox exists");
        outbox.queue.pop_front();
        outbox.transmitting = true;
        self.ledgers
            .get_mut(&node)
            .expect("ledger exists")
            .record(now, air, &self.config);
        if head.kind == TxKind::Originated {
            if let Some(n) = self.nodes.get_mut(&node) {
                n.note_sent();
            }
            if node == self.gateway {
                self.notices.push_back(Notice::Committed {
                    frame: head.frame,
                    at: now,
                });
            }
        }

        let id = self.next_tx;
        self.next_tx += 1;
        let event = TransmissionEvent {
            id,
            sender: node,
            bytes,
            start: now,
            airtime: air,
            channel,
        };
        self.trace.push(TraceEvent::Tx {
            t: now,
            tx: id,
            sender: node,
            kind: head.kind,
            frame: head.frame,
            len: event.bytes.len(),
            airtime_ns: air.as_nanos() as u64,
            channel,
        });

        let outcomes = deliver(&event, &self.topology, &mut self.rng);
        let end = event.end();
        let collisions = self.config.collisions;
        for outcome in &outcomes {
            let active = self.receiving.entry(outcome.receiver).or_default();
            active.retain(|rx| rx.end > now);
            let mut collided = false;
            if collisions {
                for rx in active.iter_mut().filter(|rx| rx.channel == channel) {
                    rx.collided = true;
                    collided = true;
                }
            }
            active.push(ActiveRx {
                tx: id,
                end,
                channel,
                link_error: outcome.corrupted,
                collided,
            });
        }
        self.on_air.insert(
            id,
            OnAir {
                frame: head.frame,
                receivers: outcomes.iter().map(|o| o.receiver).collect(),
                event,
            },
        );
        self.schedule(end, node, Event::TxEnd { tx: id });
    }

    fn defer(&mut self, node: u32, until: SimTime, reason: DeferReason) {
        self.trace.push(TraceEvent::Deferred {
            t: self.now,
            node,
            until,
            reason,
        });
        if let Some(outbox) = self.outboxes.get_mut(&node) {
            outbox.attempt_pending = true;
        }
        self.schedule(until, node, Event::Attempt { node });
    }

    fn finish(&mut self, tx: u64) {
        let now = self.now;
        let Some(air) = self.on_air.remove(&tx) else {
            return;
        };
        let sender = air.event.sender;
        for receiver in air.receivers {
            let rx = {
                let active = self.receiving.entry(receiver).or_default();
                let pos = active.iter().position(|r| r.tx == tx).expect("reception tracked");
                active.remove(pos)
            };
            let outcome = if rx.collided {
                RxOutcome::Collision
            } else if rx.link_error {
                RxOutcome::LinkError
            } else {
                RxOutcome::Ok
            };
            let reception = match outcome {
                RxOutcome::Ok => Reception::Frame(air.frame),
                _ => Reception::Corrupted,
            };
            let node = self.nodes.get_mut(&receiver).expect("receiver exists");
            let before = node.counters;
            let effects = node.handle_reception(reception, now);
            let class = classify(&before, &node.counters);
            self.trace.push(TraceEvent::Rx {
                t: now,
                tx,
                receiver,
                sender,
                sender_channel: air.event.channel,
                receiver_channel: current_channel(air.event.start, &self.config, self.seed),
                outcome,
                class,
            });
            for effect in effects {
                match effect {
                    Effect::Respond(frame) => {
                        let ready = now + self.jitter();
                        self.enqueue(receiver, frame, TxKind::Originated, ready);
                    }
                    Effect::Forward(frame) => {
                        let ready = now + self.jitter();
                        self.enqueue(receiver, frame, TxKind::Forwarded, ready);
                    }
                    Effect::Uplink(frame) => {
                        self.notices.push_back(Notice::Uplink { frame, at: now });
                    }
                    Effect::Reboot => {}
                }
            }
            self.maybe_reboot(receiver);
        }

        let outbox = self.outboxes.get_mut(&sender).expect("sender outbox");
        outbox.transmitting = false;
        if let Some(head) = outbox.queue.front() {
            if !outbox.attempt_pending {
                outbox.attempt_pending = true;
                let at = head.ready_at.max(now);
                self.schedule(at, sender, Event::Attempt { node: sender });
            }
        }
        self.maybe_reboot(sender);
    }

    /// A node asked to reboot does so once its outbox has drained.
    fn maybe_reboot(&mut self, id: u32) {
        let idle = self
            .outboxes
            .get(&id)
            .is_none_or(|o| o.queue.is_empty() && !o.transmitting);
        let now = self.now;
        if let Some(node) = self.nodes.get_mut(&id) {
            if node.reboot_pending && idle {
                node.begin_reboot(now);
                self.trace.push(TraceEvent::Reboot {
                    t: now,
                    node: id,
                    until: node.boot_until,
                });
            }
        }
    }
}

fn classify(before: &MessageCounters, after: &MessageCounters) -> Option<RxClass> {
    if after.errors > before.errors {
        Some(RxClass::Error)
    } else if after.retransmitted > before.retransmitted {
        Some(RxClass::Retransmitted)
    } else if after.received > before.received {
        Some(RxClass::Received)
    } else if after.ignored > before.ignored {
        Some(RxClass::Ignored)
    } else {
        None
    }
}

/// Serializes a trace as one JSON object per line.
pub fn trace_to_jsonl(trace: &[TraceEvent]) -> String {
    let mut out = String::new();
    for event in trace {
        out.push_str(&serde_json::to_string(event).expect("trace events serialize"));
        out.push('\n');
    }
    out
}

//! Deterministic discrete-event engine.
//!
//! One run is strictly single-threaded: a seeded config produces a
//! bit-identical event trace and report every time. Randomness is split
//! into named streams (topology, placement, capabilities, churn,
//! workload, jitter) so that toggling the broadcast arm cannot shift
//! the draws of any other concern.
//!
//! Broadcasts fan out one delivery per current neighbor after the
//! per-hop delay; a unicast whose link is gone triggers link-break
//! handling at the sender, standing in for MAC-layer loss detection.
//! Messages in flight across an edge that churns away before delivery
//! are dropped.

mod config;
mod topology;

pub use config::{named_stream, ConfigError, ScenarioConfig};
pub use topology::{apply_churn, build_topology, ChurnOutcome, Topology};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::{MetricsReport, RequestOutcome, RequestRecord};
use crate::node_engine::{
    begin_discovery, forward_data, on_link_down, on_rerr, on_srep, on_sreq, on_timer, on_ust,
    Effect, NodeState, ProtocolParams,
};
use crate::proto::{encode_message, Data, Message, NodeId, RequestId, ServiceQuery};
use crate::workload::{assign_services, generate_workload, WorkloadRequest};

#[derive(Debug, Clone)]
enum EventKind {
    Deliver {
        to: NodeId,
        from: NodeId,
        msg: Message,
    },
    Timer {
        node: NodeId,
    },
    Churn,
    WorkloadTick {
        tick: usize,
    },
}

#[derive(Debug, Clone)]
struct QueuedEvent {
    at: f64,
    /// Ties in time pop in insertion order.
    seq: u64,
    kind: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.at
            .total_cmp(&other.at)
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct MessageCounters {
    ust: u64,
    sreq: u64,
    srep: u64,
    rerr: u64,
    data: u64,
}

impl MessageCounters {
    fn bump(&mut self, kind: &str) {
        match kind {
            "UST" => self.ust += 1,
            "SREQ" => self.sreq += 1,
            "SREP" => self.srep += 1,
            "RERR" => self.rerr += 1,
            "DATA" => self.data += 1,
            other => unreachable!("unknown message kind {other}"),
        }
    }

    fn get(&self, kind: &str) -> u64 {
        match kind {
            "UST" => self.ust,
            "SREQ" => self.sreq,
            "SREP" => self.srep,
            "RERR" => self.rerr,
            "DATA" => self.data,
            _ => 0,
        }
    }

    fn to_map(self) -> BTreeMap<String, u64> {
        [
            ("UST", self.ust),
            ("SREQ", self.sreq),
            ("SREP", self.srep),
            ("RERR", self.rerr),
            ("DATA", self.data),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Knobs for scripted experiments; the defaults reproduce a plain
/// config-driven run.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Skip scheduling churn ticks entirely (static topology).
    pub disable_churn: bool,
    /// Externally supplied request timeline; generated from the config
    /// when absent.
    pub workload: Option<Vec<WorkloadRequest>>,
    /// Record one trace line per executed event.
    pub record_trace: bool,
    /// Fixed topology instead of the seeded random build; must have
    /// `num_nodes` nodes.
    pub topology: Option<Topology>,
    /// Fixed per-node service placement instead of the seeded one;
    /// must have `num_nodes` entries of own services.
    pub services: Option<Vec<Vec<crate::proto::ServiceEntry>>>,
}

/// One scenario execution. Drive it with [`Simulation::run_to_end`] or
/// step it manually with [`Simulation::run_until`] plus the injection
/// helpers.
pub struct Simulation {
    cfg: ScenarioConfig,
    params: ProtocolParams,
    topology: Topology,
    nodes: Vec<NodeState>,
    queue: BinaryHeap<std::cmp::Reverse<QueuedEvent>>,
    next_seq: u64,
    now: f64,
    churn_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    tick_requests: Vec<Vec<(NodeId, ServiceQuery)>>,
    records: Vec<RequestRecord>,
    open_requests: BTreeMap<RequestId, usize>,
    counters: MessageCounters,
    data_delivered: u64,
    data_dropped: u64,
    inflight_drops: u64,
    trace: Option<Vec<String>>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        Self::with_options(cfg, SimOptions::default())
    }

    pub fn with_options(cfg: &ScenarioConfig, options: SimOptions) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut topology_rng = named_stream(cfg.seed, "topology");
        let mut placement_rng = named_stream(cfg.seed, "placement");
        let mut capabilities_rng = named_stream(cfg.seed, "capabilities");
        let jitter_rng = named_stream(cfg.seed, "jitter");
        let churn_rng = named_stream(cfg.seed, "churn");
        let mut workload_rng = named_stream(cfg.seed, "workload");

        // The seeded streams are always drawn so that overriding one
        // concern cannot shift the draws of another.
        let built = build_topology(cfg, &mut topology_rng);
        let generated = assign_services(cfg, &mut placement_rng);
        let topology = match options.topology {
            Some(fixed) => {
                assert_eq!(fixed.node_count(), cfg.num_nodes as usize);
                fixed
            }
            None => built,
        };
        let mut hosted = match options.services {
            Some(fixed) => {
                assert_eq!(fixed.len(), cfg.num_nodes as usize);
                fixed
            }
            None => generated,
        };

        let mut sim = Simulation {
            cfg: cfg.clone(),
            params: cfg.protocol_params(),
            topology,
            nodes: Vec::with_capacity(cfg.num_nodes as usize),
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0.0,
            churn_rng,
            jitter_rng,
            tick_requests: Vec::new(),
            records: Vec::new(),
            open_requests: BTreeMap::new(),
            counters: MessageCounters::default(),
            data_delivered: 0,
            data_dropped: 0,
            inflight_drops: 0,
            trace: options.record_trace.then(Vec::new),
        };

        for id in 0..cfg.num_nodes {
            let can_store = capabilities_rng.gen::<f64>() < cfg.store_probability;
            let mut node = NodeState::new(
                NodeId(id),
                can_store,
                std::mem::take(&mut hosted[id as usize]),
            );
            // Staggered first broadcasts avoid a synchronized flood.
            let offset = sim.jitter_rng.gen_range(0.0..cfg.broadcast_period_s);
            node.next_broadcast_at = offset;
            sim.nodes.push(node);
            sim.push_event(offset, EventKind::Timer { node: NodeId(id) });
        }

        let mut workload = options
            .workload
            .unwrap_or_else(|| generate_workload(cfg, &mut workload_rng));
        workload.sort_by(|a, b| a.at.total_cmp(&b.at));
        let mut tick_times: Vec<f64> = Vec::new();
        for request in workload {
            if tick_times.last() != Some(&request.at) {
                tick_times.push(request.at);
                let tick = sim.tick_requests.len();
                sim.tick_requests.push(Vec::new());
                sim.push_event(request.at, EventKind::WorkloadTick { tick });
            }
            let current = sim.tick_requests.last_mut().expect("tick pushed above");
            current.push((request.node, request.query));
        }

        if !options.disable_churn {
            for tick in 0.. {
                let at = tick as f64 * cfg.churn_interval_s;
                if at >= cfg.sim_duration_s {
                    break;
                }
                sim.push_event(at, EventKind::Churn);
            }
        }
        Ok(sim)
    }

    // --- accessors ---

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id.index()]
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn records(&self) -> &[RequestRecord] {
        &self.records
    }

    pub fn sent_count(&self, kind: &str) -> u64 {
        self.counters.get(kind)
    }

    pub fn data_delivered(&self) -> u64 {
        self.data_delivered
    }

    pub fn data_dropped(&self) -> u64 {
        self.data_dropped
    }

    /// Deliveries discarded because their edge churned away in flight.
    pub fn inflight_drops(&self) -> u64 {
        self.inflight_drops
    }

    pub fn trace_lines(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport::from_records(
            &self.records,
            self.cfg.bucket_width_s,
            self.counters.to_map(),
        )
    }

    // --- driving ---

    /// Process every event scheduled before the configured horizon.
    pub fn run_to_end(&mut self) {
        self.run_until(self.cfg.sim_duration_s);
    }

    /// Process every event scheduled strictly before `until`, then
    /// advance the clock to it.
    pub fn run_until(&mut self, until: f64) {
        while let Some(std::cmp::Reverse(head)) = self.queue.peek() {
            if head.at >= until {
                break;
            }
            let event = self.queue.pop().expect("peeked above").0;
            self.execute(event);
        }
        self.now = self.now.max(until);
    }

    /// Hand a data packet to `source` for table-driven forwarding at
    /// the current time.
    pub fn submit_data(&mut self, source: NodeId, destination: NodeId, payload_tag: &str) {
        let msg = Data {
            source,
            destination,
            payload_tag: payload_tag.to_string(),
        };
        let now = self.now;
        let effects = self.transition(source, |state| forward_data(state, &msg, now));
        if effects.is_empty() && destination != source {
            self.data_dropped += 1;
        }
        self.apply_effects(source, effects);
    }

    /// Remove one edge right now and run the link-break handling at
    /// both endpoints, as a churn removal would.
    pub fn force_break_link(&mut self, a: NodeId, b: NodeId) {
        assert!(self.topology.linked(a, b), "edge must exist to break");
        self.topology.set_link(a, b, false);
        self.handle_link_break(a, b);
    }

    // --- internals ---

    fn push_event(&mut self, at: f64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue
            .push(std::cmp::Reverse(QueuedEvent { at, seq, kind }));
    }

    fn push_deliver(&mut self, from: NodeId, to: NodeId, msg: Message) {
        let at = self.now + self.cfg.per_hop_delay_s;
        debug_assert!(at > self.now, "per-hop delay keeps deliveries causal");
        self.push_event(at, EventKind::Deliver { to, from, msg });
    }

    fn transition<F>(&mut self, node: NodeId, f: F) -> Vec<Effect>
    where
        F: FnOnce(NodeState) -> (NodeState, Vec<Effect>),
    {
        let slot = &mut self.nodes[node.index()];
        let taken = std::mem::replace(slot, NodeState::new(NodeId(u32::MAX), false, Vec::new()));
        let (updated, effects) = f(taken);
        debug_assert_eq!(updated.id, node);
        self.nodes[node.index()] = updated;
        effects
    }

    fn execute(&mut self, event: QueuedEvent) {
        self.now = event.at;
        match event.kind {
            EventKind::Deliver { to, from, msg } => self.execute_deliver(to, from, msg),
            EventKind::Timer { node } => self.execute_timer(node),
            EventKind::Churn => self.execute_churn(),
            EventKind::WorkloadTick { tick } => self.execute_workload_tick(tick),
        }
    }

    fn execute_deliver(&mut self, to: NodeId, from: NodeId, msg: Message) {
        if !self.topology.linked(from, to) {
            self.inflight_drops += 1;
            self.trace_line(|now| format!("{now}|drop|{to}|from={from} {}", msg.kind()));
            return;
        }
        if self.trace.is_some() {
            let encoded = encoded_for_trace(&msg);
            self.trace_line(|now| format!("{now}|deliver|{to}|from={from} {encoded}"));
        }
        let now = self.now;
        let params = self.params;
        let effects = match &msg {
            Message::Ust(ust) => {
                let jitter = self
                    .jitter_rng
                    .gen_range(params.broadcast_period_s / 2.0..=params.broadcast_period_s);
                self.transition(to, |state| on_ust(state, ust, from, now, jitter))
            }
            Message::Sreq(sreq) => {
                self.transition(to, |state| on_sreq(state, &params, sreq, from, now))
            }
            Message::Srep(srep) => self.transition(to, |state| on_srep(state, srep, from, now)),
            Message::Rerr(rerr) => self.transition(to, |state| on_rerr(state, rerr, from, now)),
            Message::Data(data) => {
                let effects = self.transition(to, |state| forward_data(state, data, now));
                if effects.is_empty() && data.destination != to {
                    self.data_dropped += 1;
                }
                effects
            }
        };
        self.apply_effects(to, effects);
    }

    fn execute_timer(&mut self, node: NodeId) {
        if self.now < self.nodes[node.index()].next_broadcast_at {
            // Rescheduled by an overheard advertisement; a fresh timer
            // event exists for the deferred instant.
            self.trace_line(|now| format!("{now}|timer|{node}|stale"));
            return;
        }
        let params = self.params;
        let now = self.now;
        let effects = self.transition(node, |state| on_timer(state, &params, now));
        if self.trace.is_some() {
            let adverts = effects.iter().find_map(|e| match e {
                Effect::Broadcast {
                    msg: Message::Ust(ust),
                } => Some(ust.adverts.len()),
                _ => None,
            });
            let detail = match adverts {
                Some(count) => format!("adverts={count}"),
                None => "quiet".to_string(),
            };
            self.trace_line(|now| format!("{now}|timer|{node}|{detail}"));
        }
        self.apply_effects(node, effects);
    }

    fn execute_churn(&mut self) {
        let outcome = apply_churn(&mut self.topology, &self.cfg, &mut self.churn_rng);
        if self.trace.is_some() {
            let detail = match (&outcome.added, outcome.removed.first()) {
                (Some((a, b)), _) => format!("add {a}-{b}"),
                (None, Some((a, b))) => format!("remove {a}-{b}"),
                (None, None) => "noop".to_string(),
            };
            self.trace_line(|now| format!("{now}|churn|-|{detail}"));
        }
        for (a, b) in outcome.removed {
            self.handle_link_break(a, b);
        }
    }

    fn handle_link_break(&mut self, a: NodeId, b: NodeId) {
        let now = self.now;
        let effects_a = self.transition(a, |state| on_link_down(state, b, now));
        self.apply_effects(a, effects_a);
        let effects_b = self.transition(b, |state| on_link_down(state, a, now));
        self.apply_effects(b, effects_b);
    }

    fn execute_workload_tick(&mut self, tick: usize) {
        let requests = self.tick_requests[tick].clone();
        if self.trace.is_some() {
            let detail: Vec<String> = requests
                .iter()
                .map(|(node, query)| format!("{node}:{}", query.service_type))
                .collect();
            let line = format!("requests={} {}", requests.len(), detail.join(" "));
            self.trace_line(|now| format!("{now}|workload|-|{}", line.trim_end()));
        }
        for (slot, (node, query)) in requests.into_iter().enumerate() {
            self.start_request(tick, slot, node, query);
        }
    }

    fn start_request(&mut self, tick_index: usize, slot: usize, node: NodeId, query: ServiceQuery) {
        let index = self.records.len();
        self.records.push(RequestRecord {
            node,
            tick_index,
            slot,
            query: query.clone(),
            start: self.now,
            end: None,
            outcome: RequestOutcome::Unanswered,
            provider: None,
        });
        let now = self.now;
        let effects = self.transition(node, |state| begin_discovery(state, query, now));
        let mut rest = Vec::with_capacity(effects.len());
        for effect in effects {
            match effect {
                Effect::DiscoveryLocalHit { provider, .. } => {
                    self.close_record(index, RequestOutcome::LocalHit, provider);
                }
                Effect::Broadcast { msg } => {
                    if let Message::Sreq(sreq) = &msg {
                        self.open_requests.insert(sreq.request_id, index);
                    }
                    rest.push(Effect::Broadcast { msg });
                }
                other => rest.push(other),
            }
        }
        self.apply_effects(node, rest);
    }

    fn close_record(&mut self, index: usize, outcome: RequestOutcome, provider: NodeId) {
        let record = &mut self.records[index];
        debug_assert!(record.end.is_none(), "a request completes once");
        record.end = Some(self.now);
        record.outcome = outcome;
        record.provider = Some(provider);
    }

    fn apply_effects(&mut self, node: NodeId, effects: Vec<Effect>) {
        let mut work: VecDeque<(NodeId, Effect)> = effects.into_iter().map(|e| (node, e)).collect();
        while let Some((acting, effect)) = work.pop_front() {
            match effect {
                Effect::Broadcast { msg } => {
                    // One transmission regardless of how many hear it.
                    self.counters.bump(msg.kind());
                    for neighbor in self.topology.neighbors(acting) {
                        self.push_deliver(acting, neighbor, msg.clone());
                    }
                }
                Effect::Unicast { to, msg } => {
                    debug_assert_ne!(to, acting, "unicast never targets the sender");
                    if self.topology.linked(acting, to) {
                        self.counters.bump(msg.kind());
                        self.push_deliver(acting, to, msg);
                    } else {
                        if let Message::Data(_) = &msg {
                            self.data_dropped += 1;
                        }
                        // Send failure: detect the broken link at the
                        // sender and cascade.
                        let now = self.now;
                        let more = self.transition(acting, |state| on_link_down(state, to, now));
                        for extra in more {
                            work.push_back((acting, extra));
                        }
                    }
                }
                Effect::TimerSet { at } => {
                    self.push_event(at, EventKind::Timer { node: acting });
                }
                Effect::DiscoveryCompleted {
                    request_id,
                    provider,
                    ..
                } => {
                    if let Some(index) = self.open_requests.remove(&request_id) {
                        self.close_record(index, RequestOutcome::Completed, provider);
                    }
                }
                Effect::DiscoveryLocalHit { .. } => {
                    unreachable!("local hits surface only from begin_discovery");
                }
                Effect::DataDelivered { .. } => {
                    self.data_delivered += 1;
                }
            }
        }
    }

    fn trace_line<F>(&mut self, build: F)
    where
        F: FnOnce(&str) -> String,
    {
        if let Some(trace) = &mut self.trace {
            let stamp = format!("{:.3}", self.now);
            trace.push(build(&stamp));
        }
    }
}

fn encoded_for_trace(msg: &Message) -> String {
    match encode_message(msg) {
        Ok(bytes) => {
            let mut text = String::from_utf8(bytes).expect("codec output is UTF-8");
            text.truncate(text.len() - 1); // strip the LF terminator
            text
        }
        Err(_) => format!("<{} too long to encode>", msg.kind()),
    }
}

/// Run one scenario with its generated workload.
pub fn run(cfg: &ScenarioConfig) -> Result<MetricsReport, ConfigError> {
    let mut sim = Simulation::new(cfg)?;
    sim.run_to_end();
    Ok(sim.report())
}

/// Run one scenario against an externally supplied request timeline.
pub fn run_with_workload(
    cfg: &ScenarioConfig,
    workload: Vec<WorkloadRequest>,
) -> Result<MetricsReport, ConfigError> {
    let mut sim = Simulation::with_options(
        cfg,
        SimOptions {
            workload: Some(workload),
            ..SimOptions::default()
        },
    )?;
    sim.run_to_end();
    Ok(sim.report())
}

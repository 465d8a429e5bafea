//! Per-node protocol state machine.
//!
//! Every handler is a pure transition from `(state, input, now)` to
//! `(state, effects)`. Nothing here reads a clock, draws randomness, or
//! touches a transport: time is an argument, the reschedule jitter is
//! injected by the caller, and all I/O is expressed as [`Effect`]
//! values for the driver to interpret. That keeps transitions
//! replayable bit-for-bit and lets the simulator stay deterministic.
//!
//! The protocol combines three mechanisms:
//! - a periodic push: each node broadcasts a batched UST advertising
//!   its own services plus stored ones it can still route to;
//! - a pull: flooded SREQ queries answered by unicast SREPs that lay
//!   down forward routes while traveling back over the temporary
//!   reverse routes the flood installed;
//! - maintenance: precursor-directed RERR propagation after link
//!   breaks, with unique-id suppression of rebroadcasts.

use std::collections::{BTreeMap, BTreeSet};

use crate::proto::{
    service_matches, AdvertEntry, Data, ErrorId, Message, NodeId, RequestId, Rerr, RouteEntry,
    RouteStatus, ServiceEntry, ServiceQuery, Srep, Sreq, Timestamp, Ust,
};

/// Protocol constants a node needs; derived from the scenario config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub broadcast_period_s: f64,
    /// Duplicate-cache entries older than this are evicted by the
    /// periodic cleanup.
    pub dup_cache_ttl_s: f64,
    /// Flood radius: an SREQ is rebroadcast only while the incremented
    /// hop count stays below this.
    pub sreq_ttl: u32,
    /// Advertised lifetime stamped on a provider's own services at
    /// send time.
    pub service_lifetime_s: f64,
    /// Batch cap for adverts in one UST.
    pub max_ust_entries: usize,
    /// The without-broadcast baseline turns only the UST emission off;
    /// all periodic cleanups still run.
    pub broadcast_enabled: bool,
}

/// At most one entry per destination.
pub type RoutingTable = BTreeMap<NodeId, RouteEntry>;

/// A discovery this node originated and has not yet seen answered.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingDiscovery {
    pub query: ServiceQuery,
    pub start_time: Timestamp,
}

/// Complete protocol state of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    /// Whether this node stores advertisements it overhears.
    pub can_store: bool,
    /// Locally hosted services; expiration is infinite.
    pub own_services: Vec<ServiceEntry>,
    /// Learned entries; expiration is always finite.
    pub service_table: Vec<ServiceEntry>,
    pub routing_table: RoutingTable,
    /// Stamped into own-service adverts; bumped every periodic tick.
    pub own_seq: u64,
    pub next_broadcast_at: Timestamp,
    /// Request ids already entertained, with insertion times.
    pub seen_sreq: BTreeMap<RequestId, Timestamp>,
    /// Error ids already processed, with insertion times.
    pub seen_rerr: BTreeMap<ErrorId, Timestamp>,
    pub next_request_counter: u64,
    pub next_error_counter: u64,
    /// Discoveries this node originated, keyed by their request id.
    pub pending: BTreeMap<RequestId, PendingDiscovery>,
}

impl NodeState {
    pub fn new(id: NodeId, can_store: bool, own_services: Vec<ServiceEntry>) -> Self {
        debug_assert!(own_services
            .iter()
            .all(|s| s.provider == id && s.expiration_time == f64::INFINITY));
        NodeState {
            id,
            can_store,
            own_services,
            service_table: Vec::new(),
            routing_table: RoutingTable::new(),
            own_seq: 0,
            next_broadcast_at: 0.0,
            seen_sreq: BTreeMap::new(),
            seen_rerr: BTreeMap::new(),
            next_request_counter: 0,
            next_error_counter: 0,
            pending: BTreeMap::new(),
        }
    }

    /// Route usable for answering and forwarding: present and settled.
    fn permanent_route(&self, destination: NodeId) -> Option<&RouteEntry> {
        self.routing_table
            .get(&destination)
            .filter(|r| r.status == RouteStatus::Permanent)
    }
}

/// What a transition asks the driver to do.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// Transmit to every current neighbor.
    Broadcast { msg: Message },
    /// Transmit to one neighbor; never addressed to the emitting node.
    Unicast { to: NodeId, msg: Message },
    /// A discovery this node originated got its first answer.
    DiscoveryCompleted {
        request_id: RequestId,
        provider: NodeId,
        services: Vec<ServiceEntry>,
    },
    /// A discovery was satisfied from local tables; no message left
    /// this node.
    DiscoveryLocalHit {
        query: ServiceQuery,
        provider: NodeId,
        services: Vec<ServiceEntry>,
    },
    /// A data packet reached its destination.
    DataDelivered {
        source: NodeId,
        destination: NodeId,
        payload_tag: String,
    },
    /// (Re)arm the periodic timer.
    TimerSet { at: Timestamp },
}

/// Freshness rule: the candidate replaces the existing entry iff there
/// is none, its sequence number is higher, it ties on sequence with a
/// strictly lower hop count, or it upgrades a temporary entry to
/// permanent. Precursor sets merge on replacement. Returns whether the
/// table changed.
pub fn route_upsert(table: &mut RoutingTable, candidate: RouteEntry) -> bool {
    match table.get_mut(&candidate.destination) {
        None => {
            table.insert(candidate.destination, candidate);
            true
        }
        Some(existing) => {
            let fresher = candidate.sequence_number > existing.sequence_number
                || (candidate.sequence_number == existing.sequence_number
                    && candidate.hop_count < existing.hop_count)
                || (existing.status == RouteStatus::Temporary
                    && candidate.status == RouteStatus::Permanent);
            if fresher {
                let mut merged = candidate;
                merged
                    .precursors
                    .extend(existing.precursors.iter().copied());
                *existing = merged;
                true
            } else {
                false
            }
        }
    }
}

/// Periodic block: drop temporary routes, evict stale duplicate-cache
/// entries, clean expired learned services, then (when enabled)
/// broadcast the batched advertisement and rearm the timer.
pub fn on_timer(
    mut state: NodeState,
    params: &ProtocolParams,
    now: Timestamp,
) -> (NodeState, Vec<Effect>) {
    debug_assert!(now >= state.next_broadcast_at);
    let mut effects = Vec::new();

    state
        .routing_table
        .retain(|_, route| route.status == RouteStatus::Permanent);
    state
        .seen_sreq
        .retain(|_, &mut at| now - at <= params.dup_cache_ttl_s);
    state
        .seen_rerr
        .retain(|_, &mut at| now - at <= params.dup_cache_ttl_s);
    state.service_table.retain(|e| e.expiration_time >= now);

    if params.broadcast_enabled {
        let mut adverts: Vec<AdvertEntry> = state
            .own_services
            .iter()
            .map(|service| AdvertEntry {
                service: ServiceEntry {
                    expiration_time: now + params.service_lifetime_s,
                    ..service.clone()
                },
                hops_to_provider: 0,
                provider_seq: state.own_seq,
            })
            .collect();
        for entry in &state.service_table {
            // A stored entry is only worth advertising while a settled
            // route to its provider exists to bundle in.
            if let Some(route) = state.permanent_route(entry.provider) {
                adverts.push(AdvertEntry {
                    service: entry.clone(),
                    hops_to_provider: route.hop_count,
                    provider_seq: route.sequence_number,
                });
            }
        }
        adverts.sort_by(|a, b| {
            (
                a.hops_to_provider,
                a.service.provider,
                &a.service.service_name,
                &a.service.service_type,
            )
                .cmp(&(
                    b.hops_to_provider,
                    b.service.provider,
                    &b.service.service_name,
                    &b.service.service_type,
                ))
        });
        adverts.truncate(params.max_ust_entries);
        if !adverts.is_empty() {
            effects.push(Effect::Broadcast {
                msg: Message::Ust(Ust {
                    sender: state.id,
                    sender_seq: state.own_seq,
                    adverts,
                }),
            });
        }
    }

    state.own_seq += 1;
    state.next_broadcast_at = now + params.broadcast_period_s;
    effects.push(Effect::TimerSet {
        at: state.next_broadcast_at,
    });
    (state, effects)
}

/// Overheard advertisement. Storing nodes learn the services and the
/// routes toward their providers; every node defers its own broadcast
/// by the caller-supplied jitter to spread transmissions out. Jitter
/// comes from the scenario RNG, uniform in
/// `[broadcast_period / 2, broadcast_period]`.
pub fn on_ust(
    mut state: NodeState,
    msg: &Ust,
    from: NodeId,
    now: Timestamp,
    jitter: f64,
) -> (NodeState, Vec<Effect>) {
    if state.can_store {
        for advert in &msg.adverts {
            let provider = advert.service.provider;
            if provider == state.id {
                continue;
            }
            // Adverts always carry finite expiries (own services are
            // restamped at send time); anything else is bogus input.
            if !advert.service.expiration_time.is_finite() {
                continue;
            }
            upsert_service(&mut state.service_table, &advert.service);
            route_upsert(
                &mut state.routing_table,
                RouteEntry {
                    destination: provider,
                    sequence_number: advert.provider_seq,
                    hop_count: advert.hops_to_provider.saturating_add(1),
                    next_node: from,
                    status: RouteStatus::Permanent,
                    precursors: BTreeSet::new(),
                },
            );
        }
    }

    let mut effects = Vec::new();
    let deferred = now + jitter;
    if deferred > state.next_broadcast_at {
        state.next_broadcast_at = deferred;
        effects.push(Effect::TimerSet { at: deferred });
    }
    (state, effects)
}

/// Keyed by provider + name + type; the later expiration wins.
fn upsert_service(table: &mut Vec<ServiceEntry>, incoming: &ServiceEntry) {
    for existing in table.iter_mut() {
        if existing.provider == incoming.provider
            && existing.service_name == incoming.service_name
            && existing.service_type == incoming.service_type
        {
            if incoming.expiration_time > existing.expiration_time {
                *existing = incoming.clone();
            }
            return;
        }
    }
    table.push(incoming.clone());
}

/// Best local answer for a query: the matching provider with the
/// smallest hop count (own services count as 0 hops), ties broken by
/// the smaller provider id. With `require_route`, stored entries only
/// qualify while a permanent route to their provider exists; without
/// it, route-less providers rank after every routed one.
fn best_local_match(
    state: &NodeState,
    query: &ServiceQuery,
    now: Timestamp,
    require_route: bool,
) -> Option<(NodeId, u32, Vec<ServiceEntry>)> {
    const NO_ROUTE_RANK: u32 = u32::MAX;
    let mut best: Option<(u32, NodeId)> = None;
    let mut consider = |hops: u32, provider: NodeId| {
        if best.is_none_or(|b| (hops, provider) < b) {
            best = Some((hops, provider));
        }
    };

    if state
        .own_services
        .iter()
        .any(|e| service_matches(query, e, now))
    {
        consider(0, state.id);
    }
    for entry in &state.service_table {
        if !service_matches(query, entry, now) {
            continue;
        }
        match state.permanent_route(entry.provider) {
            Some(route) => consider(route.hop_count, entry.provider),
            None if !require_route => consider(NO_ROUTE_RANK, entry.provider),
            None => {}
        }
    }

    let (hops, provider) = best?;
    let services: Vec<ServiceEntry> = if provider == state.id {
        state
            .own_services
            .iter()
            .filter(|e| service_matches(query, e, now))
            .cloned()
            .collect()
    } else {
        state
            .service_table
            .iter()
            .filter(|e| e.provider == provider && service_matches(query, e, now))
            .cloned()
            .collect()
    };
    let hops = if hops == NO_ROUTE_RANK { 0 } else { hops };
    Some((provider, hops, services))
}

/// The consumer-side entry point. A local table hit completes
/// immediately with no traffic; otherwise a fresh request floods out
/// with hop count 0 and is remembered in `pending`.
pub fn begin_discovery(
    mut state: NodeState,
    query: ServiceQuery,
    now: Timestamp,
) -> (NodeState, Vec<Effect>) {
    if let Some((provider, _, services)) = best_local_match(&state, &query, now, false) {
        return (
            state,
            vec![Effect::DiscoveryLocalHit {
                query,
                provider,
                services,
            }],
        );
    }

    let request_id = RequestId {
        origin: state.id,
        counter: state.next_request_counter,
    };
    state.next_request_counter += 1;
    state.seen_sreq.insert(request_id, now);
    state.pending.insert(
        request_id,
        PendingDiscovery {
            query: query.clone(),
            start_time: now,
        },
    );
    let msg = Sreq {
        request_id,
        origin: state.id,
        query,
        hop_count: 0,
    };
    (
        state,
        vec![Effect::Broadcast {
            msg: Message::Sreq(msg),
        }],
    )
}

/// Flooded request arrives. Duplicates are dropped outright. A first
/// delivery installs the temporary reverse route toward the origin,
/// then either answers from the local tables (unicast back toward the
/// sender) or rebroadcasts with the hop count incremented while the
/// TTL allows.
pub fn on_sreq(
    mut state: NodeState,
    params: &ProtocolParams,
    msg: &Sreq,
    from: NodeId,
    now: Timestamp,
) -> (NodeState, Vec<Effect>) {
    if state.seen_sreq.contains_key(&msg.request_id) {
        return (state, Vec::new());
    }
    state.seen_sreq.insert(msg.request_id, now);

    if msg.origin != state.id {
        // Reverse route toward the origin. This write intentionally
        // bypasses the freshness rule: the returning SREP needs the
        // flood's first-arrival path. Prior precursors and sequence
        // number carry over.
        let (sequence_number, precursors) = match state.routing_table.get(&msg.origin) {
            Some(existing) => (existing.sequence_number, existing.precursors.clone()),
            None => (0, BTreeSet::new()),
        };
        state.routing_table.insert(
            msg.origin,
            RouteEntry {
                destination: msg.origin,
                sequence_number,
                hop_count: msg.hop_count.saturating_add(1),
                next_node: from,
                status: RouteStatus::Temporary,
                precursors,
            },
        );
    }

    if let Some((provider, hops_to_provider, services)) =
        best_local_match(&state, &msg.query, now, true)
    {
        let reply = Srep {
            request_id: msg.request_id,
            origin: msg.origin,
            provider,
            services,
            hops_to_provider,
        };
        return (
            state,
            vec![Effect::Unicast {
                to: from,
                msg: Message::Srep(reply),
            }],
        );
    }

    let forwarded_hops = msg.hop_count.saturating_add(1);
    if forwarded_hops < params.sreq_ttl {
        let forwarded = Sreq {
            hop_count: forwarded_hops,
            ..msg.clone()
        };
        return (
            state,
            vec![Effect::Broadcast {
                msg: Message::Sreq(forwarded),
            }],
        );
    }
    (state, Vec::new())
}

/// Reply traveling back. Always refreshes the forward route toward the
/// provider. At the origin the first reply completes the pending
/// discovery (later ones only update routes); elsewhere the temporary
/// reverse route is consumed: deleted, its next hop recorded as a
/// precursor of the forward route, and the reply forwarded upstream.
/// A reply whose reverse route was already cleaned up is dropped.
pub fn on_srep(
    mut state: NodeState,
    msg: &Srep,
    from: NodeId,
    now: Timestamp,
) -> (NodeState, Vec<Effect>) {
    let _ = now;
    if msg.provider != state.id {
        // The reply carries no provider sequence number; keep whatever
        // freshness is already known (0 when the route is new).
        let sequence_number = state
            .routing_table
            .get(&msg.provider)
            .map_or(0, |r| r.sequence_number);
        route_upsert(
            &mut state.routing_table,
            RouteEntry {
                destination: msg.provider,
                sequence_number,
                hop_count: msg.hops_to_provider.saturating_add(1),
                next_node: from,
                status: RouteStatus::Permanent,
                precursors: BTreeSet::new(),
            },
        );
    }

    if state.pending.remove(&msg.request_id).is_some() {
        // First reply wins; the pending entry is gone for later ones.
        return (
            state,
            vec![Effect::DiscoveryCompleted {
                request_id: msg.request_id,
                provider: msg.provider,
                services: msg.services.clone(),
            }],
        );
    }

    let upstream = match state.routing_table.get(&msg.origin) {
        Some(route) if route.status == RouteStatus::Temporary => route.next_node,
        _ => return (state, Vec::new()),
    };
    state.routing_table.remove(&msg.origin);
    if upstream != state.id {
        if let Some(forward) = state.routing_table.get_mut(&msg.provider) {
            forward.precursors.insert(upstream);
        }
    }
    let forwarded = Srep {
        hops_to_provider: msg.hops_to_provider.saturating_add(1),
        ..msg.clone()
    };
    (
        state,
        vec![Effect::Unicast {
            to: upstream,
            msg: Message::Srep(forwarded),
        }],
    )
}

/// A direct link vanished. Every route through the lost neighbor is
/// removed and the affected destinations are reported in a fresh RERR:
/// unicast to each known precursor, or broadcast when no precursor is
/// recorded for any of them.
pub fn on_link_down(
    mut state: NodeState,
    lost_neighbor: NodeId,
    now: Timestamp,
) -> (NodeState, Vec<Effect>) {
    let broken: Vec<NodeId> = state
        .routing_table
        .values()
        .filter(|route| route.next_node == lost_neighbor)
        .map(|route| route.destination)
        .collect();
    if broken.is_empty() {
        return (state, Vec::new());
    }

    let mut unreachable = Vec::with_capacity(broken.len());
    let mut precursors = BTreeSet::new();
    for destination in broken {
        let entry = state
            .routing_table
            .remove(&destination)
            .expect("destination collected from the table");
        unreachable.push((destination, entry.sequence_number));
        precursors.extend(entry.precursors);
    }

    let error_id = ErrorId {
        origin: state.id,
        counter: state.next_error_counter,
    };
    state.next_error_counter += 1;
    state.seen_rerr.insert(error_id, now);

    let rerr = Rerr {
        error_id,
        unreachable,
    };
    let effects = if precursors.is_empty() {
        vec![Effect::Broadcast {
            msg: Message::Rerr(rerr),
        }]
    } else {
        precursors
            .into_iter()
            .map(|to| Effect::Unicast {
                to,
                msg: Message::Rerr(rerr.clone()),
            })
            .collect()
    };
    (state, effects)
}

/// Route error arrives. A repeated id is ignored. Otherwise the node
/// removes its routes that actually depend on the sender for a listed
/// destination at no fresher a sequence number, and passes a trimmed
/// copy on to their precursors (broadcast when none are recorded).
pub fn on_rerr(
    mut state: NodeState,
    msg: &Rerr,
    from: NodeId,
    now: Timestamp,
) -> (NodeState, Vec<Effect>) {
    if state.seen_rerr.contains_key(&msg.error_id) {
        return (state, Vec::new());
    }
    state.seen_rerr.insert(msg.error_id, now);

    let mut removed = Vec::new();
    let mut precursors = BTreeSet::new();
    for &(destination, listed_seq) in &msg.unreachable {
        let affected = state
            .routing_table
            .get(&destination)
            .is_some_and(|route| route.next_node == from && route.sequence_number <= listed_seq);
        if affected {
            let entry = state
                .routing_table
                .remove(&destination)
                .expect("checked above");
            precursors.extend(entry.precursors);
            removed.push((destination, listed_seq));
        }
    }
    if removed.is_empty() {
        return (state, Vec::new());
    }

    let forwarded = Rerr {
        error_id: msg.error_id,
        unreachable: removed,
    };
    let effects = if precursors.is_empty() {
        vec![Effect::Broadcast {
            msg: Message::Rerr(forwarded),
        }]
    } else {
        precursors
            .into_iter()
            .map(|to| Effect::Unicast {
                to,
                msg: Message::Rerr(forwarded.clone()),
            })
            .collect()
    };
    (state, effects)
}

/// Table-driven data forwarding. Delivery at the destination, one
/// unicast hop over a permanent route, or a silent drop (the simulator
/// counts it). Temporary routes are never used for data.
pub fn forward_data(state: NodeState, msg: &Data, now: Timestamp) -> (NodeState, Vec<Effect>) {
    let _ = now;
    if msg.destination == state.id {
        let delivered = Effect::DataDelivered {
            source: msg.source,
            destination: msg.destination,
            payload_tag: msg.payload_tag.clone(),
        };
        return (state, vec![delivered]);
    }
    match state.permanent_route(msg.destination) {
        Some(route) => {
            let to = route.next_node;
            (
                state,
                vec![Effect::Unicast {
                    to,
                    msg: Message::Data(msg.clone()),
                }],
            )
        }
        None => (state, Vec::new()),
    }
}

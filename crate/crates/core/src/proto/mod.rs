//! Domain types shared by every layer, the service-matching predicate,
//! and the wire codec for all message kinds.
//!
//! All types here are plain values: cheap to clone, immutable once
//! built, safe to move between threads.

mod codec;

pub use codec::{decode_message, encode_message, EncodeError, MalformedMessage, MAX_FIELD_BYTES};

use std::collections::BTreeSet;
use std::fmt;

/// Simulation time in seconds. Own services use `f64::INFINITY` as
/// their expiration time; everything else is finite and non-negative.
pub type Timestamp = f64;

/// Identifies one node for the lifetime of a scenario. Never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Whether a routing entry is a transient reverse path (installed while
/// a request floods outward, reclaimed by the periodic cleanup) or a
/// settled forward route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteStatus {
    Temporary,
    Permanent,
}

/// One row of the routing table.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    pub destination: NodeId,
    /// Freshness counter for the routing information.
    pub sequence_number: u64,
    /// Hops to the destination; at least 1 for any non-self destination.
    pub hop_count: u32,
    /// Immediate neighbor packets are handed to.
    pub next_node: NodeId,
    pub status: RouteStatus,
    /// Upstream nodes known to forward traffic over this route; the
    /// notification targets when the route breaks. Never contains the
    /// table's owner.
    pub precursors: BTreeSet<NodeId>,
}

/// One row of the service table.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceEntry {
    pub provider: NodeId,
    pub service_name: String,
    pub service_type: String,
    /// Free text or a URL with further details. Never matched against.
    pub description: String,
    /// `INFINITY` for a node's own locally hosted services; finite for
    /// entries learned from advertisements.
    pub expiration_time: Timestamp,
}

/// What a consumer asks for. A query without a name matches on type
/// alone; when present, the name is non-empty and must match exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceQuery {
    pub service_type: String,
    pub service_name: Option<String>,
}

impl ServiceQuery {
    /// Type-only query.
    pub fn by_type(service_type: impl Into<String>) -> Self {
        ServiceQuery {
            service_type: service_type.into(),
            service_name: None,
        }
    }
}

/// Identifies one discovery request: origin plus a counter that is
/// monotone per origin, so pairs are globally unique in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestId {
    pub origin: NodeId,
    pub counter: u64,
}

/// Identifies one route-error broadcast; a node forwards a given id at
/// most once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ErrorId {
    pub origin: NodeId,
    pub counter: u64,
}

/// One advertised service inside a periodic UST message, bundled with
/// the routing information toward its provider.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvertEntry {
    pub service: ServiceEntry,
    /// 0 when the UST sender is itself the provider.
    pub hops_to_provider: u32,
    pub provider_seq: u64,
}

/// Periodic push advertisement: batches many service adverts plus the
/// routing information toward each provider into a single message.
#[derive(Debug, Clone, PartialEq)]
pub struct Ust {
    pub sender: NodeId,
    pub sender_seq: u64,
    /// Always at least one entry; capped by the scenario's batch limit.
    pub adverts: Vec<AdvertEntry>,
}

/// Flooded service discovery request.
#[derive(Debug, Clone, PartialEq)]
pub struct Sreq {
    pub request_id: RequestId,
    pub origin: NodeId,
    pub query: ServiceQuery,
    /// Increases by exactly one per forwarding hop.
    pub hop_count: u32,
}

/// Service reply, unicast back along the reverse path the request laid
/// down; carries the complete matching service records.
#[derive(Debug, Clone, PartialEq)]
pub struct Srep {
    pub request_id: RequestId,
    pub origin: NodeId,
    pub provider: NodeId,
    pub services: Vec<ServiceEntry>,
    /// Increases by exactly one per forwarding hop.
    pub hops_to_provider: u32,
}

/// Route error: destinations that became unreachable, each with the
/// last known sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct Rerr {
    pub error_id: ErrorId,
    pub unreachable: Vec<(NodeId, u64)>,
}

/// Application payload forwarded over established routes only.
#[derive(Debug, Clone, PartialEq)]
pub struct Data {
    pub source: NodeId,
    pub destination: NodeId,
    pub payload_tag: String,
}

/// Every wire message kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Ust(Ust),
    Sreq(Sreq),
    Srep(Srep),
    Rerr(Rerr),
    Data(Data),
}

impl Message {
    /// Wire tag, also used as the counter key in metrics.
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Ust(_) => "UST",
            Message::Sreq(_) => "SREQ",
            Message::Srep(_) => "SREP",
            Message::Rerr(_) => "RERR",
            Message::Data(_) => "DATA",
        }
    }
}

/// The lookup predicate: an entry serves a query iff it has not expired
/// at `now`, its type matches exactly (case-sensitive), and the query's
/// name, when given, matches exactly as well.
pub fn service_matches(query: &ServiceQuery, entry: &ServiceEntry, now: Timestamp) -> bool {
    entry.expiration_time >= now
        && entry.service_type == query.service_type
        && query
            .service_name
            .as_deref()
            .is_none_or(|name| name == entry.service_name)
}

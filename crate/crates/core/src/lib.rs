//! Service discovery for ad-hoc networks, combining periodic push
//! advertisement with pull-based flooded discovery on top of an
//! AODV-style routing core, plus a deterministic discrete-event
//! simulator for experimenting with the protocol at desk scale.
//!
//! Layout:
//! - [`proto`]: shared domain types, the service-matching predicate, and
//!   the line-oriented wire codec.
//! - [`node_engine`]: the per-node protocol state machine. Pure
//!   transition functions from `(state, event, now)` to
//!   `(state, effects)`; no clocks, sockets, or randomness inside.
//! - [`simnet`]: deterministic event-queue simulator with link churn,
//!   driving many `node_engine` instances over a shared topology.
//! - [`workload`] / [`metrics`]: random request generation, service
//!   placement, and the request-acquisition-latency histogram.

pub mod metrics;
pub mod node_engine;
pub mod proto;
pub mod simnet;
pub mod workload;

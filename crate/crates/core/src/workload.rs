//! Service placement and the random request timeline driving a run.

use rand::Rng;

use crate::proto::{NodeId, ServiceEntry, ServiceQuery, Timestamp};
use crate::simnet::ScenarioConfig;

/// One discovery request the workload schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadRequest {
    pub at: Timestamp,
    pub node: NodeId,
    pub query: ServiceQuery,
}

/// Places `num_services` distinct service types (`svc-0` … `svc-k`),
/// each on one uniformly random node. A node may host several; every
/// type is placed exactly once. Returned per node, indexed by id.
pub fn assign_services(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Vec<Vec<ServiceEntry>> {
    let mut hosted: Vec<Vec<ServiceEntry>> = vec![Vec::new(); cfg.num_nodes as usize];
    for service_index in 0..cfg.num_services {
        let host = NodeId(rng.gen_range(0..cfg.num_nodes));
        let label = format!("svc-{service_index}");
        hosted[host.index()].push(ServiceEntry {
            provider: host,
            service_name: label.clone(),
            service_type: label,
            description: String::new(),
            expiration_time: f64::INFINITY,
        });
    }
    hosted
}

/// Request timeline: at every multiple of `churn_interval_s` within the
/// horizon, a burst of `uniform{0..=max_requests_per_tick}` requests,
/// each from a uniformly random node for a uniformly random service
/// type (type-only queries).
pub fn generate_workload(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Vec<WorkloadRequest> {
    let mut requests = Vec::new();
    for tick in 0.. {
        let at = tick as f64 * cfg.churn_interval_s;
        if at >= cfg.sim_duration_s {
            break;
        }
        let burst = rng.gen_range(0..=cfg.max_requests_per_tick);
        for _ in 0..burst {
            let node = NodeId(rng.gen_range(0..cfg.num_nodes));
            let service_index = rng.gen_range(0..cfg.num_services);
            requests.push(WorkloadRequest {
                at,
                node,
                query: ServiceQuery::by_type(format!("svc-{service_index}")),
            });
        }
    }
    requests
}

//! Scenario parameters and the named random streams derived from the
//! master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::node_engine::ProtocolParams;

/// Everything a run is parameterized by. Defaults reproduce the
/// 50-node reference experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub num_nodes: u32,
    pub sim_duration_s: f64,
    pub broadcast_enabled: bool,
    /// Chance a node stores advertisements it overhears.
    pub store_probability: f64,
    pub num_services: u32,
    /// Initial edge density for the random topology.
    pub link_probability: f64,
    /// Grid for both churn and workload ticks.
    pub churn_interval_s: f64,
    /// Chance a churn tick adds a link rather than removing one.
    pub churn_probability: f64,
    pub max_requests_per_tick: u32,
    pub per_hop_delay_s: f64,
    pub broadcast_period_s: f64,
    pub sreq_ttl: u32,
    pub service_lifetime_s: f64,
    pub max_ust_entries: u32,
    pub bucket_width_s: f64,
    /// Connect the components of a sparse random graph after building.
    pub link_repair: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            num_nodes: 50,
            sim_duration_s: 30.0,
            broadcast_enabled: true,
            store_probability: 0.5,
            num_services: 25,
            link_probability: 0.08,
            churn_interval_s: 0.5,
            churn_probability: 0.5,
            max_requests_per_tick: 5,
            per_hop_delay_s: 0.01,
            broadcast_period_s: 6.0,
            sreq_ttl: 16,
            service_lifetime_s: 18.0,
            max_ust_entries: 64,
            bucket_width_s: 0.2,
            link_repair: true,
        }
    }
}

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
#[error("config key `{key}` invalid: {reason}")]
pub struct ConfigError {
    pub key: &'static str,
    pub reason: String,
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        key,
        reason: reason.into(),
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&'static str, f64); 5] = [
            ("churn_interval_s", self.churn_interval_s),
            ("per_hop_delay_s", self.per_hop_delay_s),
            ("broadcast_period_s", self.broadcast_period_s),
            ("service_lifetime_s", self.service_lifetime_s),
            ("bucket_width_s", self.bucket_width_s),
        ];
        for (key, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(invalid(key, "must be a positive duration"));
            }
        }
        // A zero-length horizon is allowed: it yields an empty run.
        if !self.sim_duration_s.is_finite() || self.sim_duration_s < 0.0 {
            return Err(invalid("sim_duration_s", "must be a non-negative duration"));
        }
        let probabilities: [(&'static str, f64); 3] = [
            ("store_probability", self.store_probability),
            ("link_probability", self.link_probability),
            ("churn_probability", self.churn_probability),
        ];
        for (key, value) in probabilities {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(invalid(key, "must lie in [0, 1]"));
            }
        }
        if self.num_nodes < 2 {
            return Err(invalid("num_nodes", "need at least 2 nodes"));
        }
        if self.num_services < 1 {
            return Err(invalid("num_services", "need at least 1 service"));
        }
        Ok(())
    }

    /// Duplicate caches retain entries for two broadcast periods.
    pub fn dup_cache_ttl_s(&self) -> f64 {
        2.0 * self.broadcast_period_s
    }

    pub fn protocol_params(&self) -> ProtocolParams {
        ProtocolParams {
            broadcast_period_s: self.broadcast_period_s,
            dup_cache_ttl_s: self.dup_cache_ttl_s(),
            sreq_ttl: self.sreq_ttl,
            service_lifetime_s: self.service_lifetime_s,
            max_ust_entries: self.max_ust_entries as usize,
            broadcast_enabled: self.broadcast_enabled,
        }
    }
}

/// Independent random stream for one concern (topology, churn,
/// placement, capabilities, workload, jitter), keyed by the master seed
/// plus the domain name. Keeping the streams apart is what makes the
/// with/without-broadcast comparison share its topology, churn, and
/// workload draws exactly.
pub fn named_stream(seed: u64, domain: &str) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let domain_bytes = domain.as_bytes();
    let len = domain_bytes.len().min(24);
    key[8..8 + len].copy_from_slice(&domain_bytes[..len]);
    ChaCha8Rng::from_seed(key)
}

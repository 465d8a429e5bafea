//! Undirected random topology with single-edge churn.

use rand::Rng;

use super::ScenarioConfig;
use crate::proto::NodeId;

/// Symmetric adjacency matrix, no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    adjacency: Vec<bool>,
}

impl Topology {
    pub fn new(num_nodes: usize) -> Self {
        Topology {
            n: num_nodes,
            adjacency: vec![false; num_nodes * num_nodes],
        }
    }

    pub fn from_edges(num_nodes: usize, edges: &[(u32, u32)]) -> Self {
        let mut topology = Topology::new(num_nodes);
        for &(a, b) in edges {
            topology.set_link(NodeId(a), NodeId(b), true);
        }
        topology
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    fn cell(&self, a: NodeId, b: NodeId) -> usize {
        a.index() * self.n + b.index()
    }

    pub fn linked(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.adjacency[self.cell(a, b)]
    }

    pub fn set_link(&mut self, a: NodeId, b: NodeId, present: bool) {
        assert_ne!(a, b, "no self-loops");
        let ab = self.cell(a, b);
        let ba = self.cell(b, a);
        self.adjacency[ab] = present;
        self.adjacency[ba] = present;
    }

    pub fn neighbors(&self, a: NodeId) -> Vec<NodeId> {
        (0..self.n as u32)
            .map(NodeId)
            .filter(|&b| self.linked(a, b))
            .collect()
    }

    /// Present edges as ordered pairs (low id first), ascending.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.pairs(true)
    }

    /// Missing edges as ordered pairs (low id first), ascending.
    pub fn absent_pairs(&self) -> Vec<(NodeId, NodeId)> {
        self.pairs(false)
    }

    fn pairs(&self, present: bool) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for a in 0..self.n as u32 {
            for b in (a + 1)..self.n as u32 {
                if self.linked(NodeId(a), NodeId(b)) == present {
                    out.push((NodeId(a), NodeId(b)));
                }
            }
        }
        out
    }

    /// Connected components ordered by their lowest member id, each
    /// listed ascending.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let mut seen = vec![false; self.n];
        let mut components = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            let mut component = Vec::new();
            let mut stack = vec![NodeId(start as u32)];
            seen[start] = true;
            while let Some(node) = stack.pop() {
                component.push(node);
                for neighbor in self.neighbors(node) {
                    if !seen[neighbor.index()] {
                        seen[neighbor.index()] = true;
                        stack.push(neighbor);
                    }
                }
            }
            component.sort();
            components.push(component);
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }
}

/// Random topology: every unordered pair is linked independently with
/// `link_probability`. When the result is disconnected and repair is
/// on, a deterministic spanning pass links the lowest-id node of each
/// component to the lowest-id node of the next.
pub fn build_topology(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Topology {
    let n = cfg.num_nodes as usize;
    let mut topology = Topology::new(n);
    for a in 0..n as u32 {
        for b in (a + 1)..n as u32 {
            if rng.gen::<f64>() < cfg.link_probability {
                topology.set_link(NodeId(a), NodeId(b), true);
            }
        }
    }
    if cfg.link_repair {
        let components = topology.components();
        for pair in components.windows(2) {
            topology.set_link(pair[0][0], pair[1][0], true);
        }
    }
    topology
}

/// What one churn tick did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChurnOutcome {
    pub added: Option<(NodeId, NodeId)>,
    /// Both endpoints of each removed edge must be told the link broke.
    pub removed: Vec<(NodeId, NodeId)>,
}

/// One churn step: with `churn_probability` a uniformly random absent
/// pair is linked, otherwise a uniformly random present edge is
/// removed. Either branch is a no-op when its candidate set is empty.
pub fn apply_churn(
    topology: &mut Topology,
    cfg: &ScenarioConfig,
    rng: &mut impl Rng,
) -> ChurnOutcome {
    let add = rng.gen::<f64>() < cfg.churn_probability;
    if add {
        let candidates = topology.absent_pairs();
        if candidates.is_empty() {
            return ChurnOutcome {
                added: None,
                removed: Vec::new(),
            };
        }
        let (a, b) = candidates[rng.gen_range(0..candidates.len() as u64) as usize];
        topology.set_link(a, b, true);
        ChurnOutcome {
            added: Some((a, b)),
            removed: Vec::new(),
        }
    } else {
        let candidates = topology.edges();
        if candidates.is_empty() {
            return ChurnOutcome {
                added: None,
                removed: Vec::new(),
            };
        }
        let (a, b) = candidates[rng.gen_range(0..candidates.len() as u64) as usize];
        topology.set_link(a, b, false);
        ChurnOutcome {
            added: None,
            removed: vec![(a, b)],
        }
    }
}

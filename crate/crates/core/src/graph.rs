//! Dynamic peer-to-peer topology: trust-labeled undirected edges, churn,
//! and bounded-depth BFS peer discovery.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Dense non-negative device identifier, assigned at creation time.
/// Joining devices always receive the next unused id.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl ClientId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How the initial topology is wired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum TopologyModel {
    /// Every unordered pair is an edge independently with probability `p`.
    ErdosRenyi { p: f64 },
    /// Node i connects to its `k` nearest neighbors on each side of a ring.
    Ring { k: u32 },
    /// All pairs connected.
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub node_count: u32,
    pub model: TopologyModel,
    /// Fraction of edges (rounded down) marked trusted, seed-sampled.
    pub trust_fraction: f64,
    pub seed: u64,
}

/// Per-round churn probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChurnConfig {
    /// Probability each node departs this round.
    pub p_leave: f64,
    /// Probability that one new node joins this round.
    pub p_join: f64,
    /// Edges a joining node creates (capped at the existing node count).
    pub join_degree: u32,
    /// Probability each edge is rewired this round.
    pub p_rewire: f64,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig { p_leave: 0.0, p_join: 0.0, join_degree: 1, p_rewire: 0.0 }
    }
}

impl ChurnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("churn.p_leave", self.p_leave),
            ("churn.p_join", self.p_join),
            ("churn.p_rewire", self.p_rewire),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config_at(name, format!("probability must be in [0,1], got {p}")));
            }
        }
        if self.join_degree == 0 {
            return Err(Error::config_at("churn.join_degree", "must be >= 1"));
        }
        Ok(())
    }
}

/// What a churn step changed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnDelta {
    pub departed: Vec<ClientId>,
    pub joined: Vec<ClientId>,
    /// (removed edge, inserted edge) pairs.
    pub rewired: Vec<((ClientId, ClientId), (ClientId, ClientId))>,
}

impl ChurnDelta {
    pub fn is_empty(&self) -> bool {
        self.departed.is_empty() && self.joined.is_empty() && self.rewired.is_empty()
    }
}

/// Undirected peer topology with trust-labeled edges.
///
/// Invariants: adjacency is symmetric, has no self-loops, every endpoint is
/// a node, and every trusted pair is an existing edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkGraph {
    nodes: BTreeSet<ClientId>,
    adjacency: BTreeMap<ClientId, BTreeSet<ClientId>>,
    trusted: BTreeSet<(ClientId, ClientId)>,
    /// Current simulation round; maintained by the driver.
    pub round: u32,
    next_id: u32,
}

fn edge_key(a: ClientId, b: ClientId) -> (ClientId, ClientId) {
    if a <= b { (a, b) } else { (b, a) }
}

impl NetworkGraph {
    pub fn empty() -> Self {
        NetworkGraph {
            nodes: BTreeSet::new(),
            adjacency: BTreeMap::new(),
            trusted: BTreeSet::new(),
            round: 0,
            next_id: 0,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, id: ClientId) -> bool {
        self.nodes.contains(&id)
    }

    /// Neighbors in ascending id order.
    pub fn neighbors(&self, id: ClientId) -> impl Iterator<Item = ClientId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    pub fn degree(&self, id: ClientId) -> usize {
        self.adjacency.get(&id).map_or(0, BTreeSet::len)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Edges as (low, high) pairs in ascending order.
    pub fn edges(&self) -> Vec<(ClientId, ClientId)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (&a, nbrs) in &self.adjacency {
            for &b in nbrs {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn has_edge(&self, a: ClientId, b: ClientId) -> bool {
        self.adjacency.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn is_trusted(&self, a: ClientId, b: ClientId) -> bool {
        self.trusted.contains(&edge_key(a, b))
    }

    pub fn trusted_pairs(&self) -> impl Iterator<Item = (ClientId, ClientId)> + '_ {
        self.trusted.iter().copied()
    }

    pub fn add_node(&mut self, id: ClientId) {
        self.nodes.insert(id);
        self.adjacency.entry(id).or_default();
        self.next_id = self.next_id.max(id.0 + 1);
    }

    pub fn add_edge(&mut self, a: ClientId, b: ClientId) -> Result<()> {
        if a == b {
            return Err(Error::Internal(format!("self-loop on client {a}")));
        }
        if !self.nodes.contains(&a) || !self.nodes.contains(&b) {
            return Err(Error::NotFound(format!("edge endpoints {a},{b} must be nodes")));
        }
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
        Ok(())
    }

    pub fn remove_edge(&mut self, a: ClientId, b: ClientId) {
        if let Some(n) = self.adjacency.get_mut(&a) {
            n.remove(&b);
        }
        if let Some(n) = self.adjacency.get_mut(&b) {
            n.remove(&a);
        }
        self.trusted.remove(&edge_key(a, b));
    }

    pub fn remove_node(&mut self, id: ClientId) {
        let nbrs: Vec<ClientId> = self.neighbors(id).collect();
        for b in nbrs {
            self.remove_edge(id, b);
        }
        self.adjacency.remove(&id);
        self.nodes.remove(&id);
    }

    pub fn mark_trusted(&mut self, a: ClientId, b: ClientId) -> Result<()> {
        if !self.has_edge(a, b) {
            return Err(Error::Internal(format!("trusted pair ({a},{b}) is not an edge")));
        }
        self.trusted.insert(edge_key(a, b));
        Ok(())
    }

    /// Mean node degree, 2E/V. Undefined on the empty graph.
    pub fn average_degree(&self) -> Result<f64> {
        if self.nodes.is_empty() {
            return Err(Error::Undefined("average degree of an empty graph".into()));
        }
        Ok(2.0 * self.edge_count() as f64 / self.nodes.len() as f64)
    }

    /// Checks all structural invariants; used by tests and after churn.
    pub fn check_invariants(&self) -> Result<()> {
        for (&a, nbrs) in &self.adjacency {
            if !self.nodes.contains(&a) {
                return Err(Error::Internal(format!("adjacency key {a} not a node")));
            }
            for &b in nbrs {
                if a == b {
                    return Err(Error::Internal(format!("self-loop at {a}")));
                }
                if !self.nodes.contains(&b) {
                    return Err(Error::Internal(format!("endpoint {b} not a node")));
                }
                if !self.adjacency.get(&b).is_some_and(|n| n.contains(&a)) {
                    return Err(Error::Internal(format!("asymmetric edge ({a},{b})")));
                }
            }
        }
        for &(a, b) in &self.trusted {
            if !self.has_edge(a, b) {
                return Err(Error::Internal(format!("trusted non-edge ({a},{b})")));
            }
        }
        Ok(())
    }
}

/// Builds the initial topology. Deterministic for a fixed spec.
pub fn build_graph(spec: &TopologySpec) -> Result<NetworkGraph> {
    if spec.node_count == 0 {
        return Err(Error::config_at("topology.node_count", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&spec.trust_fraction) {
        return Err(Error::config_at(
            "topology.trust_fraction",
            format!("must be in [0,1], got {}", spec.trust_fraction),
        ));
    }
    if let TopologyModel::ErdosRenyi { p } = spec.model {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config_at("topology.p", format!("must be in [0,1], got {p}")));
        }
    }
    if let TopologyModel::Ring { k } = spec.model {
        if k == 0 {
            return Err(Error::config_at("topology.ring_k", "must be >= 1"));
        }
    }

    let mut graph = NetworkGraph::empty();
    let n = spec.node_count;
    for i in 0..n {
        graph.add_node(ClientId(i));
    }

    match spec.model {
        TopologyModel::Complete => {
            for i in 0..n {
                for j in (i + 1)..n {
                    graph.add_edge(ClientId(i), ClientId(j))?;
                }
            }
        }
        TopologyModel::Ring { k } => {
            if n >= 2 {
                for i in 0..n {
                    for step in 1..=k.min(n / 2) {
                        let j = (i + step) % n;
                        if i != j {
                            graph.add_edge(ClientId(i), ClientId(j))?;
                        }
                    }
                }
            }
        }
        TopologyModel::ErdosRenyi { p } => {
            let mut rng = rng::stream(spec.seed, "topology.edges", &[]);
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen::<f64>() < p {
                        graph.add_edge(ClientId(i), ClientId(j))?;
                    }
                }
            }
        }
    }

    // Seed-sampled trusted subset: floor(fraction * E) edges.
    let edges = graph.edges();
    let trusted_count = (spec.trust_fraction * edges.len() as f64).floor() as usize;
    let mut rng = rng::stream(spec.seed, "topology.trust", &[]);
    let mut shuffled = edges;
    shuffled.shuffle(&mut rng);
    for &(a, b) in shuffled.iter().take(trusted_count) {
        graph.mark_trusted(a, b)?;
    }

    Ok(graph)
}

/// Depth bookkeeping mode for [`bfs_k_degree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfsMode {
    /// Children are enqueued with the parent's remaining depth minus one,
    /// so the hop limit is enforced at every level.
    #[default]
    HopLimited,
    /// Children are always enqueued with `k - 1` regardless of depth, which
    /// for k >= 2 explores the whole connected component. Kept for fidelity
    /// experiments against the original formulation.
    PaperLiteral,
}

/// Counters for the operational complexity check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BfsStats {
    pub nodes_visited: usize,
    pub edges_inspected: usize,
}

/// All nodes within `k` hops of `client`, in non-decreasing hop order,
/// starting with `client` itself. Neighbor expansion is in ascending id
/// order, so the output is deterministic.
pub fn bfs_k_degree(graph: &NetworkGraph, client: ClientId, k: u32) -> Result<Vec<ClientId>> {
    bfs_k_degree_instrumented(graph, client, k, BfsMode::HopLimited).map(|(peers, _)| peers)
}

pub fn bfs_k_degree_instrumented(
    graph: &NetworkGraph,
    client: ClientId,
    k: u32,
    mode: BfsMode,
) -> Result<(Vec<ClientId>, BfsStats)> {
    if !graph.contains(client) {
        return Err(Error::NotFound(format!("client {client} not in graph")));
    }
    let mut stats = BfsStats::default();
    let mut out = Vec::new();
    let mut visited = BTreeSet::new();
    let mut queue: VecDeque<(ClientId, u32)> = VecDeque::new();
    visited.insert(client);
    queue.push_back((client, k));

    while let Some((peer, remaining)) = queue.pop_front() {
        out.push(peer);
        stats.nodes_visited += 1;
        if remaining == 0 {
            continue;
        }
        let child_depth = match mode {
            BfsMode::HopLimited => remaining - 1,
            BfsMode::PaperLiteral => k - 1,
        };
        for child in graph.neighbors(peer) {
            stats.edges_inspected += 1;
            if visited.insert(child) {
                queue.push_back((child, child_depth));
            }
        }
    }
    Ok((out, stats))
}

/// Applies one round of churn: departures, at most one join, then edge
/// rewiring. Deterministic for a fixed (graph, config, seed).
pub fn apply_churn(
    graph: &NetworkGraph,
    churn: &ChurnConfig,
    rng_seed: u64,
) -> Result<(NetworkGraph, ChurnDelta)> {
    churn.validate()?;
    let mut next = graph.clone();
    let mut delta = ChurnDelta::default();
    if graph.nodes.is_empty() {
        return Ok((next, delta));
    }

    // Departures: one draw per node, ascending id.
    let mut leave_rng = rng::stream(rng_seed, "churn.leave", &[]);
    for id in graph.nodes().collect::<Vec<_>>() {
        if leave_rng.gen::<f64>() < churn.p_leave {
            next.remove_node(id);
            delta.departed.push(id);
        }
    }

    // Join: at most one fresh node per round, wired to seed-sampled peers.
    let mut join_rng = rng::stream(rng_seed, "churn.join", &[]);
    if join_rng.gen::<f64>() < churn.p_join {
        let candidates: Vec<ClientId> = next.nodes().collect();
        if !candidates.is_empty() {
            let id = ClientId(next.next_id);
            next.add_node(id);
            let want = (churn.join_degree as usize).min(candidates.len());
            let mut pool = candidates;
            pool.shuffle(&mut join_rng);
            for &peer in pool.iter().take(want) {
                next.add_edge(id, peer)?;
            }
            delta.joined.push(id);
        }
    }

    // Rewiring: keep the low endpoint, reconnect the other end to a
    // seeded random non-neighbor. New edges start untrusted.
    let mut rewire_rng = rng::stream(rng_seed, "churn.rewire", &[]);
    for (a, b) in next.edges() {
        if rewire_rng.gen::<f64>() >= churn.p_rewire || !next.has_edge(a, b) {
            continue;
        }
        let candidates: Vec<ClientId> = next
            .nodes()
            .filter(|&c| c != a && c != b && !next.has_edge(a, c))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let c = candidates[rewire_rng.gen_range(0..candidates.len())];
        next.remove_edge(a, b);
        next.add_edge(a, c)?;
        delta.rewired.push(((a, b), (a, c)));
    }

    next.check_invariants()?;
    Ok((next, delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: u32) -> NetworkGraph {
        let mut g = NetworkGraph::empty();
        for i in 0..n {
            g.add_node(ClientId(i));
        }
        for i in 0..n.saturating_sub(1) {
            g.add_edge(ClientId(i), ClientId(i + 1)).unwrap();
        }
        g
    }

    #[test]
    fn single_node_complete_has_no_edges() {
        let g = build_graph(&TopologySpec {
            node_count: 1,
            model: TopologyModel::Complete,
            trust_fraction: 0.5,
            seed: 0,
        })
        .unwrap();
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn ring_of_four_degree_two() {
        let g = build_graph(&TopologySpec {
            node_count: 4,
            model: TopologyModel::Ring { k: 1 },
            trust_fraction: 0.0,
            seed: 0,
        })
        .unwrap();
        assert_eq!(g.edge_count(), 4);
        for id in g.nodes().collect::<Vec<_>>() {
            assert_eq!(g.degree(id), 2);
        }
    }

    #[test]
    fn erdos_renyi_deterministic() {
        let spec = TopologySpec {
            node_count: 20,
            model: TopologyModel::ErdosRenyi { p: 0.3 },
            trust_fraction: 0.4,
            seed: 7,
        };
        let g1 = build_graph(&spec).unwrap();
        let g2 = build_graph(&spec).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let bad = TopologySpec {
            node_count: 0,
            model: TopologyModel::Complete,
            trust_fraction: 0.0,
            seed: 0,
        };
        assert!(build_graph(&bad).is_err());
        let bad_p = TopologySpec {
            node_count: 3,
            model: TopologyModel::ErdosRenyi { p: 1.5 },
            trust_fraction: 0.0,
            seed: 0,
        };
        assert!(build_graph(&bad_p).is_err());
    }

    #[test]
    fn trust_fraction_floor() {
        let g = build_graph(&TopologySpec {
            node_count: 5,
            model: TopologyModel::Complete,
            trust_fraction: 0.5,
            seed: 3,
        })
        .unwrap();
        // K5 has 10 edges; floor(0.5 * 10) = 5 trusted.
        assert_eq!(g.trusted_pairs().count(), 5);
        for (a, b) in g.trusted_pairs().collect::<Vec<_>>() {
            assert!(g.has_edge(a, b));
        }
    }

    #[test]
    fn bfs_zero_hops_returns_self() {
        let g = path_graph(4);
        assert_eq!(bfs_k_degree(&g, ClientId(0), 0).unwrap(), vec![ClientId(0)]);
    }

    #[test]
    fn bfs_two_hops_on_path() {
        let g = path_graph(4);
        assert_eq!(
            bfs_k_degree(&g, ClientId(0), 2).unwrap(),
            vec![ClientId(0), ClientId(1), ClientId(2)]
        );
    }

    #[test]
    fn bfs_terminates_on_cycle_without_duplicates() {
        let mut g = path_graph(3);
        g.add_edge(ClientId(0), ClientId(2)).unwrap();
        let out = bfs_k_degree(&g, ClientId(0), 5).unwrap();
        assert_eq!(out, vec![ClientId(0), ClientId(1), ClientId(2)]);
    }

    #[test]
    fn bfs_missing_client_errors() {
        let g = path_graph(2);
        assert!(matches!(bfs_k_degree(&g, ClientId(9), 1), Err(Error::NotFound(_))));
    }

    #[test]
    fn bfs_paper_literal_floods_component_for_k_ge_2() {
        let g = path_graph(6);
        let (hop, _) =
            bfs_k_degree_instrumented(&g, ClientId(0), 2, BfsMode::HopLimited).unwrap();
        let (lit, _) =
            bfs_k_degree_instrumented(&g, ClientId(0), 2, BfsMode::PaperLiteral).unwrap();
        assert_eq!(hop.len(), 3);
        assert_eq!(lit.len(), 6);
        // k = 1 agrees in both modes.
        let (h1, _) = bfs_k_degree_instrumented(&g, ClientId(0), 1, BfsMode::HopLimited).unwrap();
        let (l1, _) = bfs_k_degree_instrumented(&g, ClientId(0), 1, BfsMode::PaperLiteral).unwrap();
        assert_eq!(h1, l1);
    }

    #[test]
    fn average_degree_cases() {
        let ring = build_graph(&TopologySpec {
            node_count: 4,
            model: TopologyModel::Ring { k: 1 },
            trust_fraction: 0.0,
            seed: 0,
        })
        .unwrap();
        assert_eq!(ring.average_degree().unwrap(), 2.0);
        let k5 = build_graph(&TopologySpec {
            node_count: 5,
            model: TopologyModel::Complete,
            trust_fraction: 0.0,
            seed: 0,
        })
        .unwrap();
        assert_eq!(k5.average_degree().unwrap(), 4.0);
        let single = build_graph(&TopologySpec {
            node_count: 1,
            model: TopologyModel::Complete,
            trust_fraction: 0.0,
            seed: 0,
        })
        .unwrap();
        assert_eq!(single.average_degree().unwrap(), 0.0);
        assert!(NetworkGraph::empty().average_degree().is_err());
    }

    #[test]
    fn churn_zero_probabilities_is_identity() {
        let g = path_graph(5);
        let (next, delta) = apply_churn(&g, &ChurnConfig::default(), 99).unwrap();
        assert_eq!(next, g);
        assert!(delta.is_empty());
    }

    #[test]
    fn churn_certain_departure_empties_graph() {
        let g = path_graph(3);
        let cfg = ChurnConfig { p_leave: 1.0, ..ChurnConfig::default() };
        let (next, delta) = apply_churn(&g, &cfg, 1).unwrap();
        assert_eq!(next.node_count(), 0);
        assert_eq!(delta.departed.len(), 3);
    }

    #[test]
    fn churn_join_wires_min_degree() {
        let g = build_graph(&TopologySpec {
            node_count: 5,
            model: TopologyModel::Ring { k: 1 },
            trust_fraction: 0.0,
            seed: 0,
        })
        .unwrap();
        let cfg = ChurnConfig { p_join: 1.0, join_degree: 2, ..ChurnConfig::default() };
        let (next, delta) = apply_churn(&g, &cfg, 5).unwrap();
        assert_eq!(next.node_count(), 6);
        assert_eq!(delta.joined, vec![ClientId(5)]);
        assert_eq!(next.degree(ClientId(5)), 2);
        for b in next.neighbors(ClientId(5)).collect::<Vec<_>>() {
            assert!(g.contains(b), "join endpoint {b} must be a pre-existing node");
        }
        // Join degree larger than the network caps at node count.
        let cfg_big = ChurnConfig { p_join: 1.0, join_degree: 50, ..ChurnConfig::default() };
        let (next2, _) = apply_churn(&g, &cfg_big, 5).unwrap();
        assert_eq!(next2.degree(ClientId(5)), 5);
    }

    #[test]
    fn churn_empty_graph_noop() {
        let g = NetworkGraph::empty();
        let cfg = ChurnConfig { p_leave: 1.0, p_join: 1.0, ..ChurnConfig::default() };
        let (next, delta) = apply_churn(&g, &cfg, 0).unwrap();
        assert_eq!(next.node_count(), 0);
        assert!(delta.is_empty());
    }

    #[test]
    fn churn_deterministic() {
        let g = build_graph(&TopologySpec {
            node_count: 12,
            model: TopologyModel::ErdosRenyi { p: 0.4 },
            trust_fraction: 0.3,
            seed: 11,
        })
        .unwrap();
        let cfg = ChurnConfig { p_leave: 0.2, p_join: 0.7, join_degree: 3, p_rewire: 0.3 };
        let (a, da) = apply_churn(&g, &cfg, 123).unwrap();
        let (b, db) = apply_churn(&g, &cfg, 123).unwrap();
        assert_eq!(a, b);
        assert_eq!(da, db);
    }
}

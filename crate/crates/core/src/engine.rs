//! Per-round exchange decisions: score candidate actions against each
//! discovered peer, then greedily select them under the sender's bandwidth
//! budget.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cost::{comm_cost, compute_capacity, packet_size, DeviceResources, Payload, SizeModel};
use crate::error::{Error, Result};
use crate::graph::{bfs_k_degree_instrumented, BfsMode, ClientId, NetworkGraph};

/// EMA decay applied to realized accuracy deltas.
pub const REWARD_EMA_DECAY: f64 = 0.5;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    ShareModel,
    SharePartialModel,
    ShareRawData,
    ShareSyntheticData,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [
        ActionKind::ShareModel,
        ActionKind::SharePartialModel,
        ActionKind::ShareRawData,
        ActionKind::ShareSyntheticData,
    ];

    /// Model-sharing kinds trigger FedAvg at the receiver.
    pub fn is_model(self) -> bool {
        matches!(self, ActionKind::ShareModel | ActionKind::SharePartialModel)
    }

    /// Model actions sort before data actions on priority ties.
    fn rank(self) -> u8 {
        match self {
            ActionKind::ShareModel => 0,
            ActionKind::SharePartialModel => 1,
            ActionKind::ShareRawData => 2,
            ActionKind::ShareSyntheticData => 3,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActionKind::ShareModel => "ShareModel",
            ActionKind::SharePartialModel => "SharePartialModel",
            ActionKind::ShareRawData => "ShareRawData",
            ActionKind::ShareSyntheticData => "ShareSyntheticData",
        };
        f.write_str(s)
    }
}

/// A priced, scored exchange proposal between two clients.
///
/// `src` is always the initiator whose bandwidth budget pays for the
/// exchange. Data payloads are `src`'s samples and travel src -> dst;
/// model payloads are `dst`'s parameters and travel dst -> src, where the
/// initiator aggregates them into its own model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub src: ClientId,
    pub dst: ClientId,
    pub payload: Payload,
    /// Bytes on the wire, from [`packet_size`].
    pub cost: u64,
    /// Non-negative expected benefit.
    pub reward: f64,
}

/// Ring buffer of a client's executed actions, retaining only the last
/// `window` rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionHistory {
    window: u32,
    entries: VecDeque<(u32, ActionKind, ClientId)>,
}

impl ActionHistory {
    pub fn new(window: u32) -> Self {
        ActionHistory { window, entries: VecDeque::new() }
    }

    pub fn record(&mut self, round: u32, kind: ActionKind, peer: ClientId) {
        self.entries.push_back((round, kind, peer));
        let cutoff = round.saturating_sub(self.window);
        while self.entries.front().is_some_and(|&(r, _, _)| r < cutoff) {
            self.entries.pop_front();
        }
    }

    /// True when any model-sharing action was executed in the last `window`
    /// rounds before `current_round`.
    pub fn model_action_within_window(&self, current_round: u32) -> bool {
        let cutoff = current_round.saturating_sub(self.window);
        self.entries.iter().any(|&(r, kind, _)| r >= cutoff && kind.is_model())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-(action kind, peer) EMA of realized accuracy deltas, used to refine
/// static rewards once outcomes have been observed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTracker {
    ema: BTreeMap<(ActionKind, ClientId), f64>,
}

impl RewardTracker {
    pub fn observe(&mut self, kind: ActionKind, peer: ClientId, delta: f64) {
        self.ema
            .entry((kind, peer))
            .and_modify(|e| *e = REWARD_EMA_DECAY * delta + (1.0 - REWARD_EMA_DECAY) * *e)
            .or_insert(delta);
    }

    pub fn estimate(&self, kind: ActionKind, peer: ClientId) -> Option<f64> {
        self.ema.get(&(kind, peer)).copied()
    }
}

/// Falls back to the static ranking reward when no outcome for this
/// (kind, peer) pair has been observed; clamps at zero so action rewards
/// stay non-negative.
pub fn estimate_reward(action: &Action, history: &RewardTracker) -> f64 {
    match history.estimate(action.kind, action.dst) {
        Some(ema) => ema.max(0.0),
        None => action.reward,
    }
}

/// How selection trades reward against channel time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityRule {
    /// reward / (1 + comm_cost); the +1 keeps near-zero costs from blowing
    /// the ratio up.
    #[default]
    CostDamped,
    /// reward - lambda * comm_cost, with lambda from `EngineConfig`.
    RewardMinusCost,
}

/// Which edge class receives raw samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustBranch {
    /// Trusted peers receive raw samples; untrusted peers receive
    /// synthetic samples.
    #[default]
    Prose,
    /// The inverse reading: trusted peers receive synthetic samples.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// BFS exploration depth.
    pub k_degree: u32,
    /// Cooldown window (rounds) after a model-sharing action.
    pub window: u32,
    /// score_context weights: accuracy gap, size ratio, label divergence,
    /// peer compute capacity.
    pub weights: [f64; 4],
    pub priority: PriorityRule,
    /// Cost multiplier for the `reward_minus_cost` rule.
    pub lambda: f64,
    /// Break on the first over-budget action (false) or skip it and keep
    /// scanning (true).
    pub greedy_skip: bool,
    pub trust_branch: TrustBranch,
    /// Fraction of the sender's shard carried by one data action.
    pub share_fraction: f64,
    /// Replace static rewards with observed EMAs when available.
    pub adaptive_rewards: bool,
    /// Emit partial-model actions instead of full-model actions.
    pub partial_model: bool,
    /// Action kinds the scenario permits.
    pub allowed: BTreeSet<ActionKind>,
    pub bfs_mode: BfsMode,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k_degree: 2,
            window: 3,
            weights: [0.25; 4],
            priority: PriorityRule::CostDamped,
            lambda: 1.0,
            greedy_skip: false,
            trust_branch: TrustBranch::Prose,
            share_fraction: 0.1,
            adaptive_rewards: true,
            partial_model: false,
            allowed: ActionKind::ALL.into_iter().collect(),
            bfs_mode: BfsMode::HopLimited,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config_at("engine.window", "must be >= 1"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config_at("engine.weights", "must be non-negative and finite"));
        }
        if !(0.0..=1.0).contains(&self.share_fraction) {
            return Err(Error::config_at(
                "engine.share_fraction",
                format!("must be in [0,1], got {}", self.share_fraction),
            ));
        }
        if self.allowed.is_empty() {
            return Err(Error::config_at("engine.allowed", "must not be empty"));
        }
        Ok(())
    }
}

/// The slice of a client's state the engine ranks on.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientProfile {
    pub id: ClientId,
    pub accuracy: f64,
    /// Samples in the client's own shard view.
    pub shard_size: u64,
    pub label_histogram: Vec<u64>,
    pub resources: DeviceResources,
    pub param_count: u64,
    pub unfrozen_param_count: u64,
    pub k_degree: u32,
}

/// Total-variation distance between two label histograms. An empty
/// histogram is maximally distant from a non-empty one.
fn tv_distance(a: &[u64], b: &[u64]) -> f64 {
    let ta: u64 = a.iter().sum();
    let tb: u64 = b.iter().sum();
    match (ta, tb) {
        (0, 0) => 0.0,
        (0, _) | (_, 0) => 1.0,
        _ => {
            let mut acc = 0.0;
            for (&x, &y) in a.iter().zip(b) {
                acc += (x as f64 / ta as f64 - y as f64 / tb as f64).abs();
            }
            acc / 2.0
        }
    }
}

/// Context score of exchanging data with `peer`: a weighted blend of the
/// positive accuracy gap, the peer's share of the combined data, label
/// divergence, and the peer's compute capacity, clamped to [0, 1].
pub fn score_context(client: &ClientProfile, peer: &ClientProfile, weights: &[f64; 4]) -> f64 {
    let acc_gap = (peer.accuracy - client.accuracy).max(0.0);
    let denom = peer.shard_size + client.shard_size;
    let size_ratio = if denom == 0 { 0.5 } else { peer.shard_size as f64 / denom as f64 };
    let divergence = tv_distance(&client.label_histogram, &peer.label_histogram);
    let capacity = compute_capacity(&peer.resources);
    let score = weights[0] * acc_gap
        + weights[1] * size_ratio
        + weights[2] * divergence
        + weights[3] * capacity;
    score.clamp(0.0, 1.0)
}

fn share_count(share_fraction: f64, shard_size: u64) -> u64 {
    if shard_size == 0 {
        0
    } else {
        ((share_fraction * shard_size as f64).floor() as u64).max(1).min(shard_size)
    }
}

/// Scores candidate actions against every peer: a model-aggregation action
/// (fetch the peer's parameters and FedAvg them in) when the peer is more
/// accurate and no model exchange ran within the cooldown window, and
/// always one data action whose kind follows the trust branch. Output is
/// ordered peer-ascending with model actions before data actions.
pub fn ranking(
    client: &ClientProfile,
    peers: &[(&ClientProfile, bool)],
    history: &ActionHistory,
    tracker: &RewardTracker,
    round: u32,
    size_model: &SizeModel,
    cfg: &EngineConfig,
) -> Vec<Action> {
    let mut ordered: Vec<&(&ClientProfile, bool)> = peers.iter().collect();
    ordered.sort_by_key(|(p, _)| p.id);

    let on_cooldown = history.model_action_within_window(round);
    let mut out = Vec::new();
    for &&(peer, trusted) in &ordered {
        if peer.accuracy > client.accuracy && !on_cooldown {
            // The peer's parameters cross the wire.
            let (kind, count) = if cfg.partial_model {
                (ActionKind::SharePartialModel, peer.unfrozen_param_count)
            } else {
                (ActionKind::ShareModel, peer.param_count)
            };
            let payload = Payload::Params { count };
            let mut action = Action {
                kind,
                src: client.id,
                dst: peer.id,
                payload,
                cost: packet_size(payload, size_model),
                reward: (client.accuracy + peer.accuracy) / 2.0,
            };
            if cfg.adaptive_rewards {
                action.reward = estimate_reward(&action, tracker);
            }
            out.push(action);
        }

        let raw = match cfg.trust_branch {
            TrustBranch::Prose => trusted,
            TrustBranch::PaperLiteral => !trusted,
        };
        let kind = if raw { ActionKind::ShareRawData } else { ActionKind::ShareSyntheticData };
        let payload = Payload::Samples { count: share_count(cfg.share_fraction, client.shard_size) };
        let mut action = Action {
            kind,
            src: client.id,
            dst: peer.id,
            payload,
            cost: packet_size(payload, size_model),
            reward: score_context(client, peer, &cfg.weights),
        };
        if cfg.adaptive_rewards {
            action.reward = estimate_reward(&action, tracker);
        }
        out.push(action);
    }
    out
}

fn priority(
    action: &Action,
    bandwidth: f64,
    size_model: &SizeModel,
    rule: PriorityRule,
    lambda: f64,
) -> f64 {
    let cost = comm_cost(bandwidth, action.cost as f64, size_model.alpha).unwrap_or(f64::INFINITY);
    match rule {
        PriorityRule::CostDamped => action.reward / (1.0 + cost),
        PriorityRule::RewardMinusCost => action.reward - lambda * cost,
    }
}

/// Orders actions by descending priority with a total deterministic
/// tie-break: lower peer id first, then model before data.
pub fn priority_order(
    actions: &[Action],
    bandwidth: f64,
    size_model: &SizeModel,
    rule: PriorityRule,
    lambda: f64,
) -> Vec<Action> {
    let mut sorted: Vec<(f64, &Action)> =
        actions.iter().map(|a| (priority(a, bandwidth, size_model, rule, lambda), a)).collect();
    sorted.sort_by(|(pa, a), (pb, b)| {
        pb.total_cmp(pa)
            .then_with(|| a.dst.cmp(&b.dst))
            .then_with(|| a.kind.rank().cmp(&b.kind.rank()))
            .then_with(|| a.cost.cmp(&b.cost))
    });
    sorted.into_iter().map(|(_, a)| a.clone()).collect()
}

/// Greedy budgeted selection over the priority order. In the default
/// (break) mode the scan stops at the first action that no longer fits; in
/// skip mode it continues past it. Selected costs never exceed the budget.
pub fn select_actions(
    bandwidth: f64,
    scored: &[Action],
    size_model: &SizeModel,
    cfg: &EngineConfig,
) -> Vec<Action> {
    if !(bandwidth > 0.0) {
        return Vec::new();
    }
    let queue = priority_order(scored, bandwidth, size_model, cfg.priority, cfg.lambda);
    let mut taken = Vec::new();
    let mut spent = 0u64;
    let mut next = queue.into_iter();
    while (spent as f64) < bandwidth {
        let Some(action) = next.next() else { break };
        if action.cost as f64 > bandwidth - spent as f64 {
            if cfg.greedy_skip {
                continue;
            }
            break;
        }
        spent += action.cost;
        taken.push(action);
    }
    taken
}

/// Per-client entry point: discover peers to `k_degree` hops, rank
/// candidate actions, restrict to the allowed kinds, and select under the
/// bandwidth budget.
pub fn pre_communication(
    client: &ClientProfile,
    graph: &NetworkGraph,
    profiles: &BTreeMap<ClientId, ClientProfile>,
    history: &ActionHistory,
    tracker: &RewardTracker,
    round: u32,
    size_model: &SizeModel,
    cfg: &EngineConfig,
) -> Result<Vec<Action>> {
    let (reachable, _) = bfs_k_degree_instrumented(graph, client.id, client.k_degree, cfg.bfs_mode)?;
    let mut peers: Vec<(&ClientProfile, bool)> = Vec::new();
    for id in reachable.into_iter().skip(1) {
        let profile = profiles
            .get(&id)
            .ok_or_else(|| Error::Internal(format!("no profile for live client {id}")))?;
        peers.push((profile, graph.is_trusted(client.id, id)));
    }
    let mut scored = ranking(client, &peers, history, tracker, round, size_model, cfg);
    scored.retain(|a| cfg.allowed.contains(&a.kind));
    Ok(select_actions(client.resources.bandwidth, &scored, size_model, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, TopologyModel, TopologySpec};

    fn profile(id: u32, accuracy: f64, shard_size: u64) -> ClientProfile {
        ClientProfile {
            id: ClientId(id),
            accuracy,
            shard_size,
            label_histogram: vec![shard_size / 2, shard_size - shard_size / 2],
            resources: DeviceResources { power: 0.8, mem: 0.5, bandwidth: 1e6 },
            param_count: 100,
            unfrozen_param_count: 40,
            k_degree: 2,
        }
    }

    fn cfg() -> EngineConfig {
        EngineConfig { adaptive_rewards: false, ..EngineConfig::default() }
    }

    #[test]
    fn ranking_emits_model_action_with_mean_reward() {
        let client = profile(0, 0.6, 100);
        let peer = profile(1, 0.8, 100);
        let out = ranking(
            &client,
            &[(&peer, true)],
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &cfg(),
        );
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].kind, ActionKind::ShareModel);
        assert!((out[0].reward - 0.7).abs() < 1e-15);
        assert_eq!(out[0].payload, Payload::Params { count: 100 });
        assert_eq!(out[1].kind, ActionKind::ShareRawData);
    }

    #[test]
    fn ranking_strict_accuracy_comparison() {
        let client = profile(0, 0.9, 100);
        let peer = profile(1, 0.8, 100);
        let out = ranking(
            &client,
            &[(&peer, true)],
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &cfg(),
        );
        assert_eq!(out.len(), 1, "no model action when the client is ahead");
        assert_eq!(out[0].kind, ActionKind::ShareRawData);

        // Equal accuracy is also excluded (strict >).
        let peer_eq = profile(1, 0.9, 100);
        let out = ranking(
            &client,
            &[(&peer_eq, true)],
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &cfg(),
        );
        assert!(out.iter().all(|a| !a.kind.is_model()));
    }

    #[test]
    fn ranking_trust_branches() {
        let client = profile(0, 0.5, 100);
        let peer = profile(1, 0.4, 100);
        let prose = cfg();
        let out = ranking(
            &client,
            &[(&peer, true)],
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &prose,
        );
        assert_eq!(out[0].kind, ActionKind::ShareRawData);

        let literal = EngineConfig { trust_branch: TrustBranch::PaperLiteral, ..cfg() };
        let out = ranking(
            &client,
            &[(&peer, true)],
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &literal,
        );
        assert_eq!(out[0].kind, ActionKind::ShareSyntheticData);

        let out = ranking(
            &client,
            &[(&peer, false)],
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &prose,
        );
        assert_eq!(out[0].kind, ActionKind::ShareSyntheticData);
    }

    #[test]
    fn ranking_cooldown_suppresses_model_actions() {
        let client = profile(0, 0.6, 100);
        let peer = profile(1, 0.8, 100);
        let mut history = ActionHistory::new(3);
        history.record(2, ActionKind::ShareModel, ClientId(1));
        let out = ranking(
            &client,
            &[(&peer, true)],
            &history,
            &RewardTracker::default(),
            4,
            &SizeModel::default(),
            &cfg(),
        );
        assert!(out.iter().all(|a| !a.kind.is_model()), "cooldown must hold at round 4");

        let out = ranking(
            &client,
            &[(&peer, true)],
            &history,
            &RewardTracker::default(),
            6,
            &SizeModel::default(),
            &cfg(),
        );
        assert!(out.iter().any(|a| a.kind.is_model()), "cooldown expires at round 6");
    }

    #[test]
    fn ranking_partial_model_uses_unfrozen_count() {
        let client = profile(0, 0.6, 100);
        let peer = profile(1, 0.8, 100);
        let partial = EngineConfig { partial_model: true, ..cfg() };
        let out = ranking(
            &client,
            &[(&peer, true)],
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &partial,
        );
        assert_eq!(out[0].kind, ActionKind::SharePartialModel);
        assert_eq!(out[0].payload, Payload::Params { count: 40 });
    }

    #[test]
    fn score_context_cases() {
        // Identical clients: gap 0, ratio 0.5, divergence 0.
        let a = profile(0, 0.7, 100);
        let b = profile(1, 0.7, 100);
        let expected = 0.25 * 0.5 + 0.25 * compute_capacity(&b.resources);
        assert!((score_context(&a, &b, &[0.25; 4]) - expected).abs() < 1e-12);

        // Disjoint label supports give maximal divergence.
        let mut c = profile(2, 0.7, 100);
        c.label_histogram = vec![100, 0];
        let mut d = profile(3, 0.7, 100);
        d.label_histogram = vec![0, 100];
        assert!((score_context(&c, &d, &[0.0, 0.0, 1.0, 0.0]) - 1.0).abs() < 1e-12);

        // Pure accuracy-gap weighting.
        let low = profile(0, 0.5, 100);
        let high = profile(1, 0.9, 100);
        assert!((score_context(&low, &high, &[1.0, 0.0, 0.0, 0.0]) - 0.4).abs() < 1e-12);
    }

    fn raw_action(dst: u32, cost: u64, reward: f64) -> Action {
        Action {
            kind: ActionKind::ShareRawData,
            src: ClientId(0),
            dst: ClientId(dst),
            payload: Payload::Samples { count: 0 },
            cost,
            reward,
        }
    }

    #[test]
    fn select_break_mode_hand_trace() {
        // Priorities follow rewards here (costs equal for the first two).
        let actions =
            vec![raw_action(1, 60, 0.9), raw_action(2, 60, 0.8), raw_action(3, 30, 0.7)];
        let sm = SizeModel { alpha: 1e-9, ..SizeModel::default() };
        let paper = EngineConfig { greedy_skip: false, ..cfg() };
        let chosen = select_actions(100.0, &actions, &sm, &paper);
        assert_eq!(chosen.len(), 1);
        assert_eq!(chosen[0].dst, ClientId(1));

        let skip = EngineConfig { greedy_skip: true, ..cfg() };
        let chosen = select_actions(100.0, &actions, &sm, &skip);
        assert_eq!(chosen.iter().map(|a| a.dst.0).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(chosen.iter().map(|a| a.cost).sum::<u64>(), 90);
    }

    #[test]
    fn select_nothing_fits() {
        let actions = vec![raw_action(1, 500, 0.9), raw_action(2, 900, 0.8)];
        let sm = SizeModel::default();
        assert!(select_actions(100.0, &actions, &sm, &cfg()).is_empty());
        assert!(select_actions(100.0, &[], &sm, &cfg()).is_empty());
    }

    #[test]
    fn select_zero_budget_empty() {
        let actions = vec![raw_action(1, 0, 0.9)];
        assert!(select_actions(0.0, &actions, &SizeModel::default(), &cfg()).is_empty());
    }

    #[test]
    fn reward_tracker_ema() {
        let mut t = RewardTracker::default();
        let a = raw_action(1, 10, 0.5);
        // No history: fall back to the static reward.
        assert_eq!(estimate_reward(&a, &t), 0.5);
        t.observe(a.kind, a.dst, 0.10);
        t.observe(a.kind, a.dst, 0.02);
        assert!((estimate_reward(&a, &t) - 0.06).abs() < 1e-15);
        // A negative delta pulls the estimate below the static reward.
        t.observe(a.kind, a.dst, -0.5);
        assert!(estimate_reward(&a, &t) < 0.5);
        assert!(estimate_reward(&a, &t) >= 0.0);
    }

    #[test]
    fn pre_communication_isolated_and_two_node() {
        let mut profiles = BTreeMap::new();
        profiles.insert(ClientId(0), profile(0, 0.5, 100));
        profiles.insert(ClientId(1), profile(1, 0.9, 100));

        // Isolated node: no peers, no actions.
        let lone = build_graph(&TopologySpec {
            node_count: 2,
            model: TopologyModel::ErdosRenyi { p: 0.0 },
            trust_fraction: 0.0,
            seed: 0,
        })
        .unwrap();
        let out = pre_communication(
            &profiles[&ClientId(0)],
            &lone,
            &profiles,
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &cfg(),
        )
        .unwrap();
        assert!(out.is_empty());

        // Single better neighbor with ample budget: model + data actions.
        let pair = build_graph(&TopologySpec {
            node_count: 2,
            model: TopologyModel::Complete,
            trust_fraction: 1.0,
            seed: 0,
        })
        .unwrap();
        let mut rich = profiles.clone();
        rich.get_mut(&ClientId(0)).unwrap().resources.bandwidth = 1e9;
        let out = pre_communication(
            &rich[&ClientId(0)],
            &pair,
            &rich,
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &cfg(),
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().any(|a| a.kind == ActionKind::ShareModel));
        assert!(out.iter().any(|a| a.kind == ActionKind::ShareRawData));

        // Zero bandwidth selects nothing regardless of peers.
        let mut broke = rich.clone();
        broke.get_mut(&ClientId(0)).unwrap().resources.bandwidth = 0.0;
        let out = pre_communication(
            &broke[&ClientId(0)],
            &pair,
            &broke,
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &cfg(),
        )
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn allowed_filter_restricts_kinds() {
        let mut profiles = BTreeMap::new();
        profiles.insert(ClientId(0), profile(0, 0.5, 100));
        profiles.insert(ClientId(1), profile(1, 0.9, 100));
        let pair = build_graph(&TopologySpec {
            node_count: 2,
            model: TopologyModel::Complete,
            trust_fraction: 1.0,
            seed: 0,
        })
        .unwrap();
        let restricted = EngineConfig {
            allowed: [ActionKind::ShareModel].into_iter().collect(),
            ..cfg()
        };
        let out = pre_communication(
            &profiles[&ClientId(0)],
            &pair,
            &profiles,
            &ActionHistory::new(3),
            &RewardTracker::default(),
            0,
            &SizeModel::default(),
            &restricted,
        )
        .unwrap();
        assert!(!out.is_empty());
        assert!(out.iter().all(|a| a.kind == ActionKind::ShareModel));
    }
}

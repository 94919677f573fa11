//! Round-driven orchestration: churn, local training, evaluation, decision,
//! action execution, metric recording, and convergence detection.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::{InitKind, Regime, ScenarioConfig};
use crate::engine::{
    pre_communication, Action, ActionHistory, ActionKind, ClientProfile, RewardTracker,
};
use crate::error::{Error, Result};
use crate::graph::{apply_churn, build_graph, ClientId, NetworkGraph};
use crate::learner::{
    evaluate, fedavg, fit_generator, init_model, partial_fedavg, sample_synthetic, train_local,
    Arch, Generator, Init, Model, TrainConfig, DEFAULT_VARIANCE_FLOOR,
};
use crate::metrics::{ActionRecord, ClientRoundRecord, MetricsLog};
use crate::partition::{
    draw_covariate_transform, generate_dataset, load_dataset_csv, partition_iid,
    partition_pathological, partition_quantity_skew, resolve_shard_view, Dataset, Rotation,
    SampleSet, Shard,
};
use crate::rng;

/// One simulated device. Departed clients keep their state frozen so a
/// rejoin resumes where it left off.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: ClientId,
    pub shard: Shard,
    /// Resolved (transform-applied) view of the shard.
    pub shard_view: SampleSet,
    pub label_histogram: Vec<u64>,
    pub model: Model,
    /// Accuracy of the current model on the global test split.
    pub accuracy: f64,
    /// Best accuracy seen so far; non-decreasing.
    pub best_accuracy: f64,
    pub resources: crate::cost::DeviceResources,
    pub k_degree: u32,
    pub generator: Option<Generator>,
    /// Samples delivered by raw/synthetic data actions.
    pub received: SampleSet,
    pub history: ActionHistory,
    pub tracker: RewardTracker,
    /// Samples used in this round's local training (aggregation weight).
    pub train_count: u64,
}

struct PendingReward {
    src: ClientId,
    dst: ClientId,
    kind: ActionKind,
    /// Who the exchange was meant to improve: the initiator for model
    /// aggregations, the destination for data deliveries.
    beneficiary: ClientId,
    beneficiary_accuracy_before: f64,
    row: usize,
    action_idx: usize,
}

/// Live simulation state; advance it one round at a time with
/// [`SimulationState::run_round`].
pub struct SimulationState {
    pub config: ScenarioConfig,
    pub graph: NetworkGraph,
    pub clients: BTreeMap<ClientId, ClientState>,
    pub test_set: SampleSet,
    pub round: u32,
    pub log: MetricsLog,
    train_data: Dataset,
    template: Model,
    series: BTreeMap<ClientId, Vec<(u32, f64)>>,
    pending: Vec<PendingReward>,
}

fn sim_err(round: u32, client: ClientId, source: Error) -> Error {
    Error::Simulation { round, client: client.0, source: Box::new(source) }
}

/// Earliest index `r` such that `series[r..r + window]` spans at most
/// `epsilon`; `None` when no window settles.
pub fn detect_convergence(series: &[f64], window: usize, epsilon: f64) -> Option<usize> {
    if window == 0 || series.len() < window {
        return None;
    }
    for r in 0..=(series.len() - window) {
        let slice = &series[r..r + window];
        let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = slice.iter().copied().fold(f64::INFINITY, f64::min);
        if max - min <= epsilon {
            return Some(r);
        }
    }
    None
}

/// Restricts a scenario to a subset of action kinds (the "strategy N only"
/// ablation); the set must be non-empty.
pub fn strategy_filter(
    config: &ScenarioConfig,
    allowed: BTreeSet<ActionKind>,
) -> Result<ScenarioConfig> {
    if allowed.is_empty() {
        return Err(Error::config_at("engine.allowed", "must not be empty"));
    }
    let mut out = config.clone();
    out.engine.allowed = allowed;
    Ok(out)
}

fn draw_resources(config: &ScenarioConfig, id: ClientId) -> Result<crate::cost::DeviceResources> {
    use rand::Rng;
    let mut r = rng::stream(config.seed, "resources", &[u64::from(id.0)]);
    let draw = |r: &mut rand_chacha::ChaCha8Rng, range: [f64; 2]| -> f64 {
        if range[0] == range[1] {
            range[0]
        } else {
            r.gen_range(range[0]..=range[1])
        }
    };
    let power = draw(&mut r, config.resources.power_range);
    let mem = draw(&mut r, config.resources.mem_range);
    let bandwidth = draw(&mut r, config.resources.bandwidth_range);
    crate::cost::DeviceResources::new(power, mem, bandwidth)
}

fn arch_of(config: &ScenarioConfig, class_count: u32, dim: usize) -> Arch {
    Arch { input_dim: dim, class_count: class_count as usize, hidden_dim: config.train.hidden_dim }
}

/// Builds a client's resolved data view, honoring covariate shift and the
/// per-class concept-drift variant.
fn build_shard_view(dataset: &Dataset, shard: &Shard, config: &ScenarioConfig) -> Result<SampleSet> {
    let p = &config.partition;
    if !p.covariate_shift {
        return resolve_shard_view(dataset, shard);
    }
    if !p.concept_drift {
        return resolve_shard_view(dataset, shard);
    }
    // Concept drift: one transform per (client, class).
    let mut out = SampleSet::empty(dataset.dim());
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &shard.indices {
        by_class.entry(dataset.label(i)).or_default().push(i);
    }
    for (class, indices) in by_class {
        let t = draw_covariate_transform(
            dataset.dim(),
            Rotation::Givens { max_angle: p.rotation_angle },
            (p.scale_range[0], p.scale_range[1]),
            p.noise_sigma,
            rng::derive_seed(config.seed, "covshift.class", &[u64::from(class)]),
            shard.owner,
        );
        let sub = Shard { owner: shard.owner, indices, transform: Some(t) };
        out.extend(&resolve_shard_view(dataset, &sub)?);
    }
    Ok(out)
}

fn new_client_state(
    config: &ScenarioConfig,
    id: ClientId,
    shard: Shard,
    dataset: &Dataset,
    template: &Model,
) -> Result<ClientState> {
    let shard_view = build_shard_view(dataset, &shard, config)?;
    let label_histogram = shard_view.label_histogram(dataset.class_count());
    let generator = if shard_view.is_empty() {
        None
    } else {
        Some(fit_generator(&shard_view, dataset.class_count(), DEFAULT_VARIANCE_FLOOR)?)
    };
    Ok(ClientState {
        id,
        shard,
        shard_view,
        label_histogram,
        model: template.clone(),
        accuracy: 0.0,
        best_accuracy: 0.0,
        resources: draw_resources(config, id)?,
        k_degree: config.engine.k_degree,
        generator,
        received: SampleSet::empty(dataset.dim()),
        history: ActionHistory::new(config.engine.window),
        tracker: RewardTracker::default(),
        train_count: 0,
    })
}

impl SimulationState {
    /// Validates the configuration, builds the dataset, splits, shards,
    /// topology, and initial (optionally pretrained) model.
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        if config.train.pretrain_epochs > 0 && config.dataset.pretrain_fraction == 0.0 {
            return Err(Error::config_at(
                "dataset.pretrain_fraction",
                "must be > 0 when train.pretrain_epochs > 0",
            ));
        }

        let dataset = match &config.dataset.csv {
            Some(path) => load_dataset_csv(path, config.seed)?,
            None => generate_dataset(
                config.dataset.classes,
                config.dataset.dim,
                config.dataset.samples_per_class,
                config.dataset.class_separation,
                rng::derive_seed(config.seed, "dataset", &[]),
            )?,
        };

        // Global splits held out before partitioning.
        let n = dataset.len();
        let mut order: Vec<usize> = (0..n).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng::stream(config.seed, "split", &[]));
        }
        let test_len = (config.dataset.test_fraction * n as f64).floor() as usize;
        let pretrain_len = (config.dataset.pretrain_fraction * n as f64).floor() as usize;
        if test_len == 0 {
            return Err(Error::config_at("dataset.test_fraction", "test split is empty"));
        }
        if test_len + pretrain_len >= n {
            return Err(Error::config_at("dataset.pretrain_fraction", "no training data left"));
        }
        let test_set = dataset.gather(&order[..test_len]);
        let pretrain_set = dataset.gather(&order[test_len..test_len + pretrain_len]);
        let train_data = dataset.subset(&order[test_len + pretrain_len..])?;

        let client_ids: Vec<ClientId> = (0..config.clients.count).map(ClientId).collect();
        let partition_seed = rng::derive_seed(config.seed, "partition", &[]);
        let mut shards = match config.partition.regime {
            Regime::Iid => partition_iid(&train_data, &client_ids, partition_seed)?,
            Regime::Pathological => partition_pathological(
                &train_data,
                &client_ids,
                config.partition.labels_per_client,
                partition_seed,
            )?,
            Regime::QuantitySkew => partition_quantity_skew(
                &train_data,
                &client_ids,
                config.partition.ratios.as_deref().unwrap_or_default(),
                partition_seed,
            )?,
        };
        if config.partition.covariate_shift && !config.partition.concept_drift {
            for shard in &mut shards {
                shard.transform = Some(draw_covariate_transform(
                    train_data.dim(),
                    Rotation::Givens { max_angle: config.partition.rotation_angle },
                    (config.partition.scale_range[0], config.partition.scale_range[1]),
                    config.partition.noise_sigma,
                    rng::derive_seed(config.seed, "covshift", &[]),
                    shard.owner,
                ));
            }
        }

        let mut graph = build_graph(
            &config
                .topology
                .to_spec(config.clients.count, rng::derive_seed(config.seed, "topology", &[])),
        )?;
        graph.round = 0;

        // Common init, optional backbone pretraining, then freezing.
        let arch = arch_of(&config, dataset.class_count(), dataset.dim());
        let init = match config.train.init {
            InitKind::Zeros => Init::Zeros,
            InitKind::SeededUniform => Init::SeededUniform {
                scale: config.train.init_scale,
                seed: rng::derive_seed(config.seed, "init", &[]),
            },
        };
        let mut template = init_model(arch, init, 0.0)?;
        if config.train.pretrain_epochs > 0 && !pretrain_set.is_empty() {
            let tc = TrainConfig {
                epochs: config.train.pretrain_epochs,
                batch_size: config.train.batch_size,
                learning_rate: config.train.learning_rate,
                l2_penalty: config.train.l2_penalty,
                seed: rng::derive_seed(config.seed, "pretrain", &[]),
            };
            template = train_local(&template, &pretrain_set, &tc)?;
        }
        template.freeze_prefix(config.train.frozen_fraction)?;

        let mut clients = BTreeMap::new();
        for shard in shards {
            let id = shard.owner;
            clients.insert(id, new_client_state(&config, id, shard, &train_data, &template)?);
        }

        Ok(SimulationState {
            config,
            graph,
            clients,
            test_set,
            round: 0,
            log: MetricsLog::default(),
            train_data,
            template,
            series: BTreeMap::new(),
            pending: Vec::new(),
        })
    }

    fn live_ids(&self) -> Vec<ClientId> {
        self.graph.nodes().collect()
    }

    /// True when every live client is currently settled: its most recent
    /// `window` accuracies span at most epsilon. (Vacuously true when
    /// nobody is live.) A window that settled earlier but was later
    /// perturbed does not count.
    pub fn all_live_converged(&self) -> bool {
        let window = self.config.convergence.window;
        let epsilon = self.config.convergence.epsilon;
        self.live_ids().iter().all(|id| {
            self.series.get(id).is_some_and(|series| {
                if series.len() < window {
                    return false;
                }
                let tail: Vec<f64> =
                    series[series.len() - window..].iter().map(|&(_, a)| a).collect();
                detect_convergence(&tail, window, epsilon).is_some()
            })
        })
    }

    /// Round at which this client's accuracy window first settled.
    pub fn client_convergence_round(&self, id: ClientId) -> Option<u32> {
        let series = self.series.get(&id)?;
        let accs: Vec<f64> = series.iter().map(|&(_, a)| a).collect();
        detect_convergence(&accs, self.config.convergence.window, self.config.convergence.epsilon)
            .map(|idx| series[idx].0)
    }

    /// Executes one full round: churn, local training, evaluation, reward
    /// realization, decisions, action execution, and metrics.
    pub fn run_round(&mut self) -> Result<()> {
        let round = self.round;
        let cfg = self.config.clone();

        // (1) churn
        let churn_seed = rng::derive_seed(cfg.seed, "churn", &[u64::from(round)]);
        let (next_graph, delta) = apply_churn(&self.graph, &cfg.churn, churn_seed)?;
        self.graph = next_graph;
        self.graph.round = round;
        self.log.churn.joins += delta.joined.len() as u32;
        self.log.churn.leaves += delta.departed.len() as u32;
        self.log.churn.rewires += delta.rewired.len() as u32;
        for id in delta.joined {
            if !self.clients.contains_key(&id) {
                let shard = Shard { owner: id, indices: Vec::new(), transform: None };
                let state = new_client_state(&cfg, id, shard, &self.train_data, &self.template)?;
                self.clients.insert(id, state);
            }
        }

        let live = self.live_ids();

        // (2) local training on shard + retained received data
        for &id in &live {
            let state = self.clients.get_mut(&id).expect("live client has state");
            let mut data = state.shard_view.clone();
            data.extend(&state.received);
            state.train_count = data.len() as u64;
            if cfg.train.epochs > 0 && !data.is_empty() {
                let tc = TrainConfig {
                    epochs: cfg.train.epochs,
                    batch_size: cfg.train.batch_size,
                    learning_rate: cfg.train.learning_rate,
                    l2_penalty: cfg.train.l2_penalty,
                    seed: rng::derive_seed(cfg.seed, "train", &[u64::from(id.0), u64::from(round)]),
                };
                state.model =
                    train_local(&state.model, &data, &tc).map_err(|e| sim_err(round, id, e))?;
            }
            if !cfg.retain_received {
                state.received = SampleSet::empty(self.train_data.dim());
            }
        }

        // (3) evaluation on the global held-out test split
        for &id in &live {
            let state = self.clients.get_mut(&id).expect("live client has state");
            state.accuracy =
                evaluate(&state.model, &self.test_set).map_err(|e| sim_err(round, id, e))?;
            state.best_accuracy = state.best_accuracy.max(state.accuracy);
            self.series.entry(id).or_default().push((round, state.accuracy));
        }

        // (3b) realize last round's action outcomes into trackers and log
        let pending = std::mem::take(&mut self.pending);
        for p in pending {
            if !self.graph.contains(p.beneficiary) {
                continue; // beneficiary departed before its delta was observable
            }
            let after = self.clients[&p.beneficiary].accuracy;
            let delta = after - p.beneficiary_accuracy_before;
            self.log.rows[p.row].actions[p.action_idx].realized_reward = Some(delta);
            if let Some(src_state) = self.clients.get_mut(&p.src) {
                src_state.tracker.observe(p.kind, p.dst, delta);
            }
        }

        // (4) per-client decisions over an immutable profile snapshot
        let profiles: BTreeMap<ClientId, ClientProfile> = live
            .iter()
            .map(|&id| {
                let s = &self.clients[&id];
                (
                    id,
                    ClientProfile {
                        id,
                        accuracy: s.accuracy,
                        shard_size: s.shard_view.len() as u64,
                        label_histogram: s.label_histogram.clone(),
                        resources: s.resources,
                        param_count: s.model.param_count() as u64,
                        unfrozen_param_count: s.model.unfrozen_count() as u64,
                        k_degree: s.k_degree,
                    },
                )
            })
            .collect();
        let mut selected: BTreeMap<ClientId, Vec<Action>> = BTreeMap::new();
        for &id in &live {
            let s = &self.clients[&id];
            let actions = pre_communication(
                &profiles[&id],
                &self.graph,
                &profiles,
                &s.history,
                &s.tracker,
                round,
                &cfg.size_model,
                &cfg.engine,
            )
            .map_err(|e| sim_err(round, id, e))?;
            selected.insert(id, actions);
        }

        // (5) sequential execution in (client id, selection order); model
        // payloads bind the post-training snapshot, not intermediate
        // aggregation results.
        let snapshots: BTreeMap<ClientId, (Model, u64)> = live
            .iter()
            .map(|&id| {
                let s = &self.clients[&id];
                (id, (s.model.clone(), s.train_count.max(1)))
            })
            .collect();
        let mut bytes_sent: BTreeMap<ClientId, u64> = BTreeMap::new();
        let mut bytes_received: BTreeMap<ClientId, u64> = BTreeMap::new();
        let mut action_records: BTreeMap<ClientId, Vec<ActionRecord>> = BTreeMap::new();
        let mut raw_pending: Vec<(ClientId, ClientId, ActionKind, ClientId, f64, usize)> =
            Vec::new();
        for &src in &live {
            let actions = selected.remove(&src).unwrap_or_default();
            for (action_idx, action) in actions.into_iter().enumerate() {
                let dst = action.dst;
                debug_assert!(src == action.src && src != dst);
                self.clients
                    .get_mut(&src)
                    .expect("src state")
                    .history
                    .record(round, action.kind, dst);
                *bytes_sent.entry(src).or_insert(0) += action.cost;
                *bytes_received.entry(dst).or_insert(0) += action.cost;
                let beneficiary = if action.kind.is_model() { src } else { dst };
                let beneficiary_accuracy_before = self.clients[&beneficiary].accuracy;

                match action.kind {
                    ActionKind::ShareModel | ActionKind::SharePartialModel => {
                        // The initiator fetches the peer's snapshot and
                        // aggregates it into its own (local-first) model.
                        let (peer_model, peer_weight) = snapshots.get(&dst).expect("dst snapshot");
                        let src_state = self.clients.get_mut(&src).expect("src state");
                        let weights = [src_state.train_count.max(1) as f64, *peer_weight as f64];
                        let merged = if action.kind == ActionKind::SharePartialModel {
                            partial_fedavg(&[&src_state.model, peer_model], &weights)
                        } else {
                            fedavg(&[&src_state.model, peer_model], &weights)
                        }
                        .map_err(|e| sim_err(round, src, e))?;
                        src_state.model = merged;
                    }
                    ActionKind::ShareRawData => {
                        let count = match action.payload {
                            crate::cost::Payload::Samples { count } => count as usize,
                            _ => 0,
                        };
                        if count > 0 {
                            let src_view = &self.clients[&src].shard_view;
                            let mut r = rng::stream(
                                cfg.seed,
                                "share.raw",
                                &[u64::from(round), u64::from(src.0), u64::from(dst.0)],
                            );
                            let picks = rand::seq::index::sample(
                                &mut r,
                                src_view.len(),
                                count.min(src_view.len()),
                            );
                            let mut batch = SampleSet::empty(src_view.dim);
                            for i in picks.iter() {
                                batch.push(src_view.row(i), src_view.labels[i]);
                            }
                            self.clients.get_mut(&dst).expect("dst state").received.extend(&batch);
                        }
                    }
                    ActionKind::ShareSyntheticData => {
                        let count = match action.payload {
                            crate::cost::Payload::Samples { count } => count as usize,
                            _ => 0,
                        };
                        if count > 0 {
                            if let Some(generator) = &self.clients[&src].generator {
                                let seed = rng::derive_seed(
                                    cfg.seed,
                                    "share.synthetic",
                                    &[u64::from(round), u64::from(src.0), u64::from(dst.0)],
                                );
                                let batch = sample_synthetic(generator, count, seed)
                                    .map_err(|e| sim_err(round, src, e))?;
                                self.clients
                                    .get_mut(&dst)
                                    .expect("dst state")
                                    .received
                                    .extend(&batch);
                            }
                        }
                    }
                }

                let records = action_records.entry(src).or_default();
                records.push(ActionRecord {
                    kind: action.kind,
                    peer: dst,
                    cost: action.cost,
                    realized_reward: None,
                });
                raw_pending.push((
                    src,
                    dst,
                    action.kind,
                    beneficiary,
                    beneficiary_accuracy_before,
                    action_idx,
                ));
            }
        }

        // (6) metrics rows in (round, client) order
        let mut row_index: BTreeMap<ClientId, usize> = BTreeMap::new();
        for &id in &live {
            let s = &self.clients[&id];
            let sent = bytes_sent.get(&id).copied().unwrap_or(0);
            let received = bytes_received.get(&id).copied().unwrap_or(0);
            self.log.total_bytes += sent;
            row_index.insert(id, self.log.rows.len());
            self.log.rows.push(ClientRoundRecord {
                round,
                client: id,
                accuracy: s.accuracy,
                best_accuracy: s.best_accuracy,
                bytes_sent: sent,
                bytes_received: received,
                actions: action_records.remove(&id).unwrap_or_default(),
            });
        }
        self.pending = raw_pending
            .into_iter()
            .map(
                |(src, dst, kind, beneficiary, beneficiary_accuracy_before, action_idx)| {
                    PendingReward {
                        src,
                        dst,
                        kind,
                        beneficiary,
                        beneficiary_accuracy_before,
                        row: row_index[&src],
                        action_idx,
                    }
                },
            )
            .collect();

        self.round = round + 1;
        Ok(())
    }

    fn finalize(mut self) -> MetricsLog {
        for (&id, _) in &self.clients {
            let conv = self.client_convergence_round(id);
            self.log.convergence_rounds.insert(id, conv);
        }
        self.log.rounds_executed = self.round;
        self.log
    }
}

/// Runs a full scenario: R rounds or until every live client's accuracy
/// series converges. Identical configs produce byte-identical logs.
pub fn run_simulation(config: &ScenarioConfig) -> Result<MetricsLog> {
    let mut state = SimulationState::new(config.clone())?;
    for round in 0..config.rounds {
        state.run_round()?;
        if state.all_live_converged() {
            state.log.network_converged_round = Some(round);
            break;
        }
    }
    Ok(state.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ClientsConfig, DatasetConfig, TopologyKind};

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            rounds: 4,
            dataset: DatasetConfig {
                classes: 3,
                dim: 4,
                samples_per_class: 40,
                class_separation: 3.0,
                test_fraction: 0.25,
                ..DatasetConfig::default()
            },
            clients: ClientsConfig { count: 4 },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn detect_convergence_cases() {
        assert_eq!(detect_convergence(&[0.5, 0.5, 0.5, 0.5], 3, 0.01), Some(0));
        let rising: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
        assert_eq!(detect_convergence(&rising, 2, 0.01), None);
        let series = [0.2, 0.5, 0.70, 0.705, 0.709, 0.71];
        assert_eq!(detect_convergence(&series, 3, 0.01), Some(2));
        assert_eq!(detect_convergence(&[0.5], 3, 0.01), None);
    }

    #[test]
    fn single_client_equals_pure_local_training() {
        let mut cfg = small_config();
        cfg.clients.count = 1;
        cfg.topology.model = TopologyKind::Complete;
        let log = run_simulation(&cfg).unwrap();

        // Oracle: drive the learner directly through the same seed schedule.
        let state = SimulationState::new(cfg.clone()).unwrap();
        let client = state.clients[&ClientId(0)].clone();
        let mut model = client.model.clone();
        let mut expect = Vec::new();
        for round in 0..log.rounds_executed {
            let tc = TrainConfig {
                epochs: cfg.train.epochs,
                batch_size: cfg.train.batch_size,
                learning_rate: cfg.train.learning_rate,
                l2_penalty: cfg.train.l2_penalty,
                seed: rng::derive_seed(cfg.seed, "train", &[0, u64::from(round)]),
            };
            model = train_local(&model, &client.shard_view, &tc).unwrap();
            expect.push(evaluate(&model, &state.test_set).unwrap());
        }
        let got: Vec<f64> = log.rows.iter().map(|r| r.accuracy).collect();
        assert_eq!(got, expect, "single client must match pure local training exactly");
        assert!(log.rows.iter().all(|r| r.actions.is_empty()));
        assert_eq!(log.total_bytes, 0);
    }

    #[test]
    fn model_pull_aggregates_at_initiator_only() {
        let mut cfg = small_config();
        cfg.clients.count = 2;
        cfg.rounds = 1;
        cfg.topology.model = TopologyKind::Complete;
        cfg.topology.trust_fraction = 0.0;
        cfg.engine.allowed = [ActionKind::ShareModel].into_iter().collect();

        // Oracle: replay round-0 training for both clients independently.
        let reference = SimulationState::new(cfg.clone()).unwrap();
        let mut trained: BTreeMap<ClientId, Model> = BTreeMap::new();
        for (&id, client) in &reference.clients {
            let tc = TrainConfig {
                epochs: cfg.train.epochs,
                batch_size: cfg.train.batch_size,
                learning_rate: cfg.train.learning_rate,
                l2_penalty: cfg.train.l2_penalty,
                seed: rng::derive_seed(cfg.seed, "train", &[u64::from(id.0), 0]),
            };
            trained.insert(id, train_local(&client.model, &client.shard_view, &tc).unwrap());
        }

        let mut state = SimulationState::new(cfg).unwrap();
        state.run_round().unwrap();
        let pulls: Vec<(ClientId, ClientId)> = state
            .log
            .rows
            .iter()
            .flat_map(|r| r.actions.iter().map(move |a| (r.client, a.peer)))
            .collect();
        assert_eq!(pulls.len(), 1, "exactly one side has the lower accuracy");
        let (initiator, peer) = pulls[0];

        // Accuracies justify the pull direction.
        let acc = |m: &Model| evaluate(m, &state.test_set).unwrap();
        assert!(acc(&trained[&peer]) > acc(&trained[&initiator]));

        // Initiator holds the sample-weighted average; peer is untouched.
        let w = |id: ClientId| reference.clients[&id].shard_view.len().max(1) as f64;
        let expected =
            fedavg(&[&trained[&initiator], &trained[&peer]], &[w(initiator), w(peer)]).unwrap();
        assert_eq!(state.clients[&initiator].model.params, expected.params);
        assert_eq!(state.clients[&peer].model.params, trained[&peer].params);
    }

    #[test]
    fn bytes_ledger_balances_each_round() {
        let mut cfg = small_config();
        cfg.rounds = 5;
        cfg.topology.model = TopologyKind::Complete;
        let log = run_simulation(&cfg).unwrap();
        for round in 0..log.rounds_executed {
            let rows: Vec<_> = log.round_rows(round).collect();
            let sent: u64 = rows.iter().map(|r| r.bytes_sent).sum();
            let received: u64 = rows.iter().map(|r| r.bytes_received).sum();
            assert_eq!(sent, received, "round {round} ledger unbalanced");
            for r in &rows {
                let from_actions: u64 = r.actions.iter().map(|a| a.cost).sum();
                assert_eq!(r.bytes_sent, from_actions);
            }
        }
    }

    #[test]
    fn best_accuracy_monotone_and_budget_respected() {
        let mut cfg = small_config();
        cfg.rounds = 6;
        let log = run_simulation(&cfg).unwrap();
        let mut best: BTreeMap<ClientId, f64> = BTreeMap::new();
        for row in &log.rows {
            let prev = best.entry(row.client).or_insert(0.0);
            assert!(row.best_accuracy >= *prev, "best accuracy decreased");
            *prev = row.best_accuracy;
            assert!(row.best_accuracy >= row.accuracy - 1e-15);
            assert!(
                (row.bytes_sent as f64) <= cfg.resources.bandwidth_range[1],
                "bandwidth exceeded"
            );
        }
    }

    #[test]
    fn full_run_determinism() {
        let cfg = small_config();
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn seed_change_alters_some_accuracy() {
        let cfg = small_config();
        let mut cfg2 = cfg.clone();
        cfg2.seed = 43;
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg2).unwrap();
        let accs = |log: &MetricsLog| log.rows.iter().map(|r| r.accuracy).collect::<Vec<_>>();
        assert_ne!(accs(&a), accs(&b), "different seeds should not be identical");
    }

    #[test]
    fn strategy_filter_restricts_logged_kinds() {
        let mut cfg = small_config();
        cfg.rounds = 5;
        cfg.topology.model = TopologyKind::Complete;
        let s3 = strategy_filter(&cfg, [ActionKind::ShareModel].into_iter().collect()).unwrap();
        let log = run_simulation(&s3).unwrap();
        for row in &log.rows {
            for action in &row.actions {
                assert_eq!(action.kind, ActionKind::ShareModel);
            }
        }
        assert!(strategy_filter(&cfg, BTreeSet::new()).is_err());
    }

    #[test]
    fn churn_keeps_actions_on_live_clients() {
        let mut cfg = small_config();
        cfg.rounds = 8;
        cfg.clients.count = 6;
        cfg.churn.p_leave = 0.15;
        cfg.churn.p_join = 0.5;
        cfg.churn.join_degree = 2;
        cfg.churn.p_rewire = 0.1;
        cfg.convergence.epsilon = 1e-12;
        let log = run_simulation(&cfg).unwrap();
        for round in 0..log.rounds_executed {
            let live: BTreeSet<ClientId> = log.round_rows(round).map(|r| r.client).collect();
            for row in log.round_rows(round) {
                for action in &row.actions {
                    assert!(live.contains(&action.peer), "action targeted a departed client");
                }
            }
        }
    }

    #[test]
    fn retain_received_flag_changes_behavior() {
        let mut keep = small_config();
        keep.rounds = 6;
        keep.topology.model = TopologyKind::Complete;
        keep.engine.allowed = [ActionKind::ShareRawData, ActionKind::ShareSyntheticData]
            .into_iter()
            .collect();
        let mut drop = keep.clone();
        drop.retain_received = false;
        let a = run_simulation(&keep).unwrap();
        let b = run_simulation(&drop).unwrap();
        assert_ne!(a.rows.iter().map(|r| r.accuracy).collect::<Vec<_>>(),
                   b.rows.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    }

    #[test]
    fn rounds_zero_rejected_before_round_one() {
        let mut cfg = small_config();
        cfg.rounds = 0;
        let err = run_simulation(&cfg).unwrap_err();
        assert_eq!(err.key(), Some("rounds"));
    }
}

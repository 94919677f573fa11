//! Scenario configuration: TOML ingestion with strict/warn unknown-key
//! handling, environment overrides, invariant validation with key paths,
//! canonical hashing, and the preset grid.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::SizeModel;
use crate::engine::{ActionKind, EngineConfig};
use crate::error::{Error, Result};
use crate::graph::{ChurnConfig, TopologyModel, TopologySpec};

fn default_seed() -> u64 {
    42
}
fn default_rounds() -> u32 {
    30
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub classes: u32,
    pub dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    /// Load this CSV instead of generating data.
    pub csv: Option<PathBuf>,
    /// Global test split held out before partitioning.
    pub test_fraction: f64,
    /// Global pretraining split held out before partitioning.
    pub pretrain_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: 10,
            dim: 32,
            samples_per_class: 200,
            class_separation: 3.0,
            csv: None,
            test_fraction: 0.2,
            pretrain_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientsConfig {
    pub count: u32,
}

impl Default for ClientsConfig {
    fn default() -> Self {
        ClientsConfig { count: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    Iid,
    Pathological,
    QuantitySkew,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub regime: Regime,
    /// Distinct labels per client under the pathological regime.
    pub labels_per_client: u32,
    /// Shard ratios (one per client) under quantity skew.
    pub ratios: Option<Vec<f64>>,
    /// Apply per-client feature transforms (rotation + scale + noise).
    pub covariate_shift: bool,
    pub scale_range: [f64; 2],
    pub noise_sigma: f64,
    /// Max Givens plane-rotation angle (radians) of the per-client
    /// rotation; 0 disables rotation.
    pub rotation_angle: f64,
    /// Vary the transform per class within each client.
    pub concept_drift: bool,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            regime: Regime::Iid,
            labels_per_client: 2,
            ratios: None,
            covariate_shift: false,
            scale_range: [0.9, 1.15],
            noise_sigma: 0.3,
            rotation_angle: 0.15,
            concept_drift: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    ErdosRenyi,
    #[default]
    Ring,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub model: TopologyKind,
    /// Edge probability for `erdos_renyi`.
    pub p: f64,
    /// Neighbors per side for `ring`.
    pub ring_k: u32,
    pub trust_fraction: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig { model: TopologyKind::Ring, p: 0.3, ring_k: 2, trust_fraction: 0.5 }
    }
}

impl TopologyConfig {
    pub fn to_spec(&self, node_count: u32, seed: u64) -> TopologySpec {
        let model = match self.model {
            TopologyKind::ErdosRenyi => TopologyModel::ErdosRenyi { p: self.p },
            TopologyKind::Ring => TopologyModel::Ring { k: self.ring_k },
            TopologyKind::Complete => TopologyModel::Complete,
        };
        TopologySpec { node_count, model, trust_fraction: self.trust_fraction, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourcesConfig {
    pub power_range: [f64; 2],
    pub mem_range: [f64; 2],
    pub bandwidth_range: [f64; 2],
}

impl Default for ResourcesConfig {
    fn default() -> Self {
        ResourcesConfig {
            power_range: [0.5, 1.0],
            mem_range: [0.5, 1.0],
            bandwidth_range: [131072.0, 131072.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Zeros,
    #[default]
    SeededUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    /// 0 gives plain softmax regression.
    pub hidden_dim: usize,
    pub init: InitKind,
    pub init_scale: f64,
    /// Epochs of backbone pretraining on the global pretrain split.
    pub pretrain_epochs: usize,
    /// Fraction of leading parameters frozen after (optional) pretraining.
    pub frozen_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 2,
            batch_size: 32,
            learning_rate: 0.1,
            l2_penalty: 1e-4,
            hidden_dim: 16,
            init: InitKind::SeededUniform,
            init_scale: 0.05,
            pretrain_epochs: 0,
            frozen_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub window: usize,
    pub epsilon: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig { window: 3, epsilon: 0.01 }
    }
}

/// The complete, resolved scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub rounds: u32,
    /// Keep received samples across rounds (false: use once, then drop).
    pub retain_received: bool,
    pub dataset: DatasetConfig,
    pub clients: ClientsConfig,
    pub partition: PartitionConfig,
    pub topology: TopologyConfig,
    pub churn: ChurnConfig,
    pub resources: ResourcesConfig,
    pub size_model: SizeModel,
    pub train: TrainSection,
    pub engine: EngineConfig,
    pub convergence: ConvergenceConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: default_seed(),
            rounds: default_rounds(),
            retain_received: default_true(),
            dataset: DatasetConfig::default(),
            clients: ClientsConfig::default(),
            partition: PartitionConfig::default(),
            topology: TopologyConfig::default(),
            churn: ChurnConfig::default(),
            resources: ResourcesConfig::default(),
            size_model: SizeModel::default(),
            train: TrainSection::default(),
            engine: EngineConfig::default(),
            convergence: ConvergenceConfig::default(),
        }
    }
}

fn check_range(key: &str, range: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(range[0] <= range[1]) {
        return Err(Error::config_at(key, format!("range [{}, {}] is inverted", range[0], range[1])));
    }
    if range[0] < lo || range[1] > hi {
        return Err(Error::config_at(key, format!("range must lie within [{lo}, {hi}]")));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Validates every invariant; errors carry the offending key path.
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config_at("rounds", "must be >= 1"));
        }
        let d = &self.dataset;
        if d.csv.is_none() {
            if d.classes == 0 || d.dim == 0 || d.samples_per_class == 0 {
                return Err(Error::config_at(
                    "dataset",
                    "classes, dim and samples_per_class must be >= 1",
                ));
            }
            if !(d.class_separation > 0.0) {
                return Err(Error::config_at("dataset.class_separation", "must be > 0"));
            }
        }
        if !(0.0..1.0).contains(&d.test_fraction) || d.test_fraction == 0.0 {
            return Err(Error::config_at("dataset.test_fraction", "must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&d.pretrain_fraction) {
            return Err(Error::config_at("dataset.pretrain_fraction", "must be in [0, 1)"));
        }
        if d.test_fraction + d.pretrain_fraction >= 1.0 {
            return Err(Error::config_at(
                "dataset.pretrain_fraction",
                "test_fraction + pretrain_fraction must leave training data",
            ));
        }
        if self.clients.count == 0 {
            return Err(Error::config_at("clients.count", "must be >= 1"));
        }
        let p = &self.partition;
        match p.regime {
            Regime::Iid => {}
            Regime::Pathological => {
                if p.labels_per_client == 0 {
                    return Err(Error::config_at("partition.labels_per_client", "must be >= 1"));
                }
            }
            Regime::QuantitySkew => {
                let ratios = p.ratios.as_ref().ok_or_else(|| {
                    Error::config_at("partition.ratios", "required for the quantity_skew regime")
                })?;
                if ratios.len() != self.clients.count as usize {
                    return Err(Error::config_at(
                        "partition.ratios",
                        format!("{} ratios for {} clients", ratios.len(), self.clients.count),
                    ));
                }
                if ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                    return Err(Error::config_at("partition.ratios", "ratios must be >= 0"));
                }
                let sum: f64 = ratios.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::config_at(
                        "partition.ratios",
                        format!("must sum to 1, got {sum}"),
                    ));
                }
            }
        }
        if p.covariate_shift {
            if !(p.scale_range[0] > 0.0) || !(p.scale_range[0] <= p.scale_range[1]) {
                return Err(Error::config_at("partition.scale_range", "must be positive and ordered"));
            }
            if !(p.noise_sigma >= 0.0) {
                return Err(Error::config_at("partition.noise_sigma", "must be >= 0"));
            }
            if !(p.rotation_angle >= 0.0) || !p.rotation_angle.is_finite() {
                return Err(Error::config_at("partition.rotation_angle", "must be finite and >= 0"));
            }
        }
        let t = &self.topology;
        if let TopologyKind::ErdosRenyi = t.model {
            if !(0.0..=1.0).contains(&t.p) {
                return Err(Error::config_at("topology.p", "must be in [0, 1]"));
            }
        }
        if let TopologyKind::Ring = t.model {
            if t.ring_k == 0 {
                return Err(Error::config_at("topology.ring_k", "must be >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&t.trust_fraction) {
            return Err(Error::config_at("topology.trust_fraction", "must be in [0, 1]"));
        }
        self.churn.validate()?;
        let r = &self.resources;
        check_range("resources.power_range", r.power_range, 0.0, 1.0)?;
        check_range("resources.mem_range", r.mem_range, 0.0, 1.0)?;
        if !(r.bandwidth_range[0] > 0.0) || !(r.bandwidth_range[0] <= r.bandwidth_range[1]) {
            return Err(Error::config_at("resources.bandwidth_range", "must be positive and ordered"));
        }
        self.size_model.validate()?;
        let tr = &self.train;
        if tr.batch_size == 0 {
            return Err(Error::config_at("train.batch_size", "must be >= 1"));
        }
        if !(tr.learning_rate > 0.0) {
            return Err(Error::config_at("train.learning_rate", "must be > 0"));
        }
        if !(tr.l2_penalty >= 0.0) {
            return Err(Error::config_at("train.l2_penalty", "must be >= 0"));
        }
        if !(tr.init_scale > 0.0) {
            return Err(Error::config_at("train.init_scale", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&tr.frozen_fraction) {
            return Err(Error::config_at("train.frozen_fraction", "must be in [0, 1]"));
        }
        self.engine.validate()?;
        if self.convergence.window == 0 {
            return Err(Error::config_at("convergence.window", "must be >= 1"));
        }
        if !(self.convergence.epsilon > 0.0) {
            return Err(Error::config_at("convergence.epsilon", "must be > 0"));
        }
        Ok(())
    }

    /// Stable hex digest of the canonicalized (resolved) config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

// --- unknown-key detection ------------------------------------------------

const SCHEMA: &[(&str, &[&str])] = &[
    (
        "",
        &[
            "seed",
            "rounds",
            "retain_received",
            "dataset",
            "clients",
            "partition",
            "topology",
            "churn",
            "resources",
            "size_model",
            "train",
            "engine",
            "convergence",
        ],
    ),
    (
        "dataset",
        &["classes", "dim", "samples_per_class", "class_separation", "csv", "test_fraction", "pretrain_fraction"],
    ),
    ("clients", &["count"]),
    (
        "partition",
        &["regime", "labels_per_client", "ratios", "covariate_shift", "scale_range", "noise_sigma", "rotation_angle", "concept_drift"],
    ),
    ("topology", &["model", "p", "ring_k", "trust_fraction"]),
    ("churn", &["p_leave", "p_join", "join_degree", "p_rewire"]),
    ("resources", &["power_range", "mem_range", "bandwidth_range"]),
    ("size_model", &["bytes_per_sample", "bytes_per_param", "model_compression", "alpha"]),
    (
        "train",
        &["epochs", "batch_size", "learning_rate", "l2_penalty", "hidden_dim", "init", "init_scale", "pretrain_epochs", "frozen_fraction"],
    ),
    (
        "engine",
        &["k_degree", "window", "weights", "priority", "lambda", "greedy_skip", "trust_branch", "share_fraction", "adaptive_rewards", "partial_model", "allowed", "bfs_mode"],
    ),
    ("convergence", &["window", "epsilon"]),
];

/// Key paths present in `value` but not in the documented schema.
pub fn unknown_keys(value: &toml::Value) -> Vec<String> {
    let mut unknown = Vec::new();
    let Some(table) = value.as_table() else {
        return unknown;
    };
    let allowed_at = |section: &str| SCHEMA.iter().find(|(s, _)| *s == section).map(|(_, keys)| *keys);
    let top = allowed_at("").unwrap();
    for (key, sub) in table {
        if !top.contains(&key.as_str()) {
            unknown.push(key.clone());
            continue;
        }
        if let (Some(sub_table), Some(allowed)) = (sub.as_table(), allowed_at(key)) {
            for sub_key in sub_table.keys() {
                if !allowed.contains(&sub_key.as_str()) {
                    unknown.push(format!("{key}.{sub_key}"));
                }
            }
        }
    }
    unknown
}

// --- environment overrides -------------------------------------------------

pub const ENV_PREFIX: &str = "FEDMESH_";

/// Applies `FEDMESH_SECTION__KEY=value` environment overrides onto a parsed
/// TOML document. Values parse as TOML literals, falling back to strings.
pub fn apply_env_overrides(value: &mut toml::Value, vars: &[(String, String)]) {
    let mut overrides: Vec<(&String, &String)> = vars
        .iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .map(|(k, v)| (k, v))
        .collect();
    overrides.sort();
    for (key, raw) in overrides {
        let path: Vec<String> =
            key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.is_empty() || path.iter().any(String::is_empty) {
            continue;
        }
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|t| t.get("v").cloned())
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        let mut node = &mut *value;
        for segment in &path[..path.len() - 1] {
            if !node.is_table() {
                break;
            }
            node = node
                .as_table_mut()
                .unwrap()
                .entry(segment.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        if let Some(table) = node.as_table_mut() {
            table.insert(path[path.len() - 1].clone(), parsed);
        }
    }
}

/// Outcome of parsing: the resolved config plus non-fatal warnings.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub config: ScenarioConfig,
    pub warnings: Vec<String>,
}

/// Parses a TOML scenario from a string. Unknown keys are fatal in strict
/// mode and warnings otherwise; environment overrides (if given) are
/// applied before deserialization; all invariants are validated.
pub fn parse_config_str(
    text: &str,
    strict: bool,
    env: &[(String, String)],
) -> Result<ParsedConfig> {
    let mut value: toml::Value = toml::from_str(text)
        .map_err(|e| Error::schema("<toml>", format!("syntax error: {e}")))?;
    apply_env_overrides(&mut value, env);
    let unknown = unknown_keys(&value);
    let mut warnings = Vec::new();
    if !unknown.is_empty() {
        if strict {
            return Err(Error::schema(unknown[0].clone(), "unknown key (strict mode)"));
        }
        for key in &unknown {
            warnings.push(format!("unknown key `{key}` ignored"));
        }
        // Drop unknown keys so typed deserialization cannot trip on them.
        if let Some(table) = value.as_table_mut() {
            for key in &unknown {
                match key.split_once('.') {
                    None => {
                        table.remove(key);
                    }
                    Some((section, sub)) => {
                        if let Some(sub_table) =
                            table.get_mut(section).and_then(|v| v.as_table_mut())
                        {
                            sub_table.remove(sub);
                        }
                    }
                }
            }
        }
    }
    let config: ScenarioConfig = value
        .try_into()
        .map_err(|e| Error::schema("<schema>", format!("type error: {e}")))?;
    config.validate()?;
    Ok(ParsedConfig { config, warnings })
}

/// Parses a TOML scenario file, applying process environment overrides.
pub fn parse_config(path: &Path, strict: bool) -> Result<ParsedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::NotFound(format!("config file {}", path.display())))?;
    let env: Vec<(String, String)> = std::env::vars().collect();
    parse_config_str(&text, strict, &env)
}

// --- presets ----------------------------------------------------------------

pub const PRESET_ROWS: [&str; 5] =
    ["iid", "pathological", "nonpathological", "quantity_skew", "tiny_shards"];
pub const PRESET_STRATEGIES: [&str; 5] = ["s1", "s2", "s3", "s4", "adaptive"];

/// The 25 canonical preset names (row x strategy).
pub fn preset_names() -> Vec<String> {
    let mut names = Vec::new();
    for row in PRESET_ROWS {
        for strategy in PRESET_STRATEGIES {
            names.push(format!("{row}_{strategy}"));
        }
    }
    names
}

fn tiny_shard_ratios(count: usize) -> Vec<f64> {
    // Geometric decay, normalized; every entry stays below 5%.
    let raw: Vec<f64> = (0..count).map(|i| 0.985f64.powi(i as i32)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / sum).collect()
}

fn base_preset(row: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig {
        dataset: DatasetConfig { pretrain_fraction: 0.1, ..DatasetConfig::default() },
        ..ScenarioConfig::default()
    };
    cfg.topology.ring_k = 3;
    cfg.topology.trust_fraction = 1.0;
    match row {
        "iid" => {}
        "pathological" => {
            cfg.partition.regime = Regime::Pathological;
            cfg.partition.labels_per_client = 2;
        }
        "nonpathological" => {
            cfg.partition.covariate_shift = true;
        }
        "quantity_skew" => {
            cfg.partition.regime = Regime::QuantitySkew;
            cfg.partition.ratios =
                Some(vec![0.30, 0.20, 0.12, 0.10, 0.08, 0.06, 0.05, 0.04, 0.03, 0.02]);
        }
        "tiny_shards" => {
            cfg.clients.count = 25;
            cfg.partition.regime = Regime::QuantitySkew;
            cfg.partition.ratios = Some(tiny_shard_ratios(25));
            // Dense graph, scarce uplink: data volume is the bottleneck
            // while model packets stay cheap.
            cfg.resources.bandwidth_range = [32768.0, 32768.0];
        }
        other => {
            return Err(Error::NotFound(format!(
                "preset row `{other}`; valid rows: {}",
                PRESET_ROWS.join(", ")
            )));
        }
    }
    Ok(cfg)
}

fn apply_strategy(cfg: &mut ScenarioConfig, strategy: &str) -> Result<()> {
    let only = |kind: ActionKind| -> BTreeSet<ActionKind> { [kind].into_iter().collect() };
    match strategy {
        "s1" => cfg.engine.allowed = only(ActionKind::ShareRawData),
        "s2" => cfg.engine.allowed = only(ActionKind::ShareSyntheticData),
        "s3" => cfg.engine.allowed = only(ActionKind::ShareModel),
        "s4" => {
            cfg.engine.allowed = only(ActionKind::SharePartialModel);
            cfg.engine.partial_model = true;
            cfg.train.pretrain_epochs = 30;
            // Freeze exactly the input-side backbone block.
            let arch = crate::learner::Arch {
                input_dim: cfg.dataset.dim,
                class_count: cfg.dataset.classes as usize,
                hidden_dim: cfg.train.hidden_dim,
            };
            cfg.train.frozen_fraction =
                (arch.backbone_len() as f64 + 0.5) / arch.param_count() as f64;
        }
        "adaptive" => {
            cfg.engine.allowed = ActionKind::ALL.into_iter().collect();
            cfg.train.pretrain_epochs = 30;
        }
        other => {
            return Err(Error::NotFound(format!(
                "preset strategy `{other}`; valid strategies: {}",
                PRESET_STRATEGIES.join(", ")
            )));
        }
    }
    Ok(())
}

/// Resolves a preset name (`<row>_<strategy>`, or a bare row name which
/// aliases to its `adaptive` variant) into a scenario config.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let canonical = if PRESET_ROWS.contains(&name) { format!("{name}_adaptive") } else { name.to_string() };
    let (row, strategy) = PRESET_ROWS
        .iter()
        .filter_map(|row| {
            canonical
                .strip_prefix(row)
                .and_then(|rest| rest.strip_prefix('_'))
                .map(|strategy| (*row, strategy))
        })
        .next()
        .ok_or_else(|| {
            Error::NotFound(format!(
                "preset `{name}`; valid presets: {}",
                preset_names().join(", ")
            ))
        })?;
    let mut cfg = base_preset(row)?;
    apply_strategy(&mut cfg, strategy)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let parsed = parse_config_str("rounds = 5\n[clients]\ncount = 3\n", true, &[]).unwrap();
        assert_eq!(parsed.config.rounds, 5);
        assert_eq!(parsed.config.clients.count, 3);
        assert_eq!(parsed.config.seed, 42);
        assert_eq!(parsed.config.train.batch_size, 32);
        assert!(parsed.warnings.is_empty());
    }

    #[test]
    fn bad_ratio_sum_names_key() {
        let toml = r#"
            [clients]
            count = 2
            [partition]
            regime = "quantity_skew"
            ratios = [0.8, 0.4]
        "#;
        let err = parse_config_str(toml, true, &[]).unwrap_err();
        assert_eq!(err.key(), Some("partition.ratios"));
    }

    #[test]
    fn unknown_key_strict_vs_warn() {
        let toml = "rounds = 5\nbogus = 1\n";
        let err = parse_config_str(toml, true, &[]).unwrap_err();
        assert_eq!(err.key(), Some("bogus"));
        let parsed = parse_config_str(toml, false, &[]).unwrap();
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].contains("bogus"));

        let nested = "rounds = 5\n[engine]\nwindoww = 3\n";
        let err = parse_config_str(nested, true, &[]).unwrap_err();
        assert_eq!(err.key(), Some("engine.windoww"));
    }

    #[test]
    fn identical_configs_identical_hashes() {
        let a = parse_config_str("rounds = 7\n", true, &[]).unwrap().config;
        let b = parse_config_str("rounds = 7\n", true, &[]).unwrap().config;
        assert_eq!(a.hash(), b.hash());
        let c = parse_config_str("rounds = 8\n", true, &[]).unwrap().config;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn env_overrides_apply() {
        let env = vec![
            ("FEDMESH_ROUNDS".to_string(), "9".to_string()),
            ("FEDMESH_ENGINE__GREEDY_SKIP".to_string(), "true".to_string()),
            ("FEDMESH_PARTITION__REGIME".to_string(), "\"pathological\"".to_string()),
            ("OTHER_VAR".to_string(), "ignored".to_string()),
        ];
        let parsed = parse_config_str("rounds = 5\n", true, &env).unwrap();
        assert_eq!(parsed.config.rounds, 9);
        assert!(parsed.config.engine.greedy_skip);
        assert_eq!(parsed.config.partition.regime, Regime::Pathological);
    }

    #[test]
    fn env_override_bare_string_parses() {
        // Unquoted strings fall back to string values.
        let env = vec![("FEDMESH_PARTITION__REGIME".to_string(), "pathological".to_string())];
        let parsed = parse_config_str("rounds = 5\n", true, &env).unwrap();
        assert_eq!(parsed.config.partition.regime, Regime::Pathological);
    }

    #[test]
    fn rounds_zero_rejected() {
        let err = parse_config_str("rounds = 0\n", true, &[]).unwrap_err();
        assert_eq!(err.key(), Some("rounds"));
    }

    #[test]
    fn preset_grid_complete_and_valid() {
        let names = preset_names();
        assert_eq!(names.len(), 25);
        for name in &names {
            let cfg = preset(name).unwrap_or_else(|e| panic!("preset {name}: {e}"));
            cfg.validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn preset_pathological_shape() {
        let cfg = preset("pathological_s1").unwrap();
        assert_eq!(cfg.partition.regime, Regime::Pathological);
        assert_eq!(cfg.partition.labels_per_client, 2);
        assert_eq!(cfg.clients.count, 10);
        assert_eq!(
            cfg.engine.allowed,
            [ActionKind::ShareRawData].into_iter().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn preset_tiny_shards_all_below_five_percent() {
        let cfg = preset("tiny_shards_s3").unwrap();
        let ratios = cfg.partition.ratios.unwrap();
        assert_eq!(ratios.len(), 25);
        assert!(ratios.iter().all(|&r| r < 0.05));
        assert!((ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn preset_row_alias_equals_adaptive() {
        let a = preset("pathological").unwrap();
        let b = preset("pathological_adaptive").unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn presets_differ_only_in_strategy_fields() {
        let s1 = preset("iid_s1").unwrap();
        let s2 = preset("iid_s2").unwrap();
        let mut s1_neutral = s1.clone();
        s1_neutral.engine.allowed = s2.engine.allowed.clone();
        assert_eq!(s1_neutral, s2);
    }

    #[test]
    fn s4_freezes_exact_backbone() {
        let cfg = preset("iid_s4").unwrap();
        let arch = crate::learner::Arch {
            input_dim: cfg.dataset.dim,
            class_count: cfg.dataset.classes as usize,
            hidden_dim: cfg.train.hidden_dim,
        };
        let cut = (cfg.train.frozen_fraction * arch.param_count() as f64).floor() as usize;
        assert_eq!(cut, arch.backbone_len());
    }
}

//! Desk-scale learner: softmax regression with an optional tanh hidden
//! layer, deterministic mini-batch SGD, sample-weighted FedAvg (full and
//! partial), and a class-conditional Gaussian generator that stands in for
//! heavier synthetic-data models.
//!
//! All reductions run through fixed-order pairwise summation so repeated
//! runs are bit-identical across platforms.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, pairwise_sum};
use crate::partition::SampleSet;
use crate::rng;

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-3;

/// Architecture descriptor. `hidden_dim = 0` means plain softmax
/// regression; otherwise one tanh hidden layer of that width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub class_count: usize,
    pub hidden_dim: usize,
}

impl Arch {
    /// Flat parameter count. Layout: for linear models `[W (C x d), b (C)]`;
    /// with a hidden layer `[W1 (h x d), b1 (h), W2 (C x h), b2 (C)]`, so a
    /// frozen prefix always covers the input-side backbone first.
    pub fn param_count(&self) -> usize {
        if self.hidden_dim == 0 {
            self.class_count * self.input_dim + self.class_count
        } else {
            self.hidden_dim * self.input_dim
                + self.hidden_dim
                + self.class_count * self.hidden_dim
                + self.class_count
        }
    }

    /// Size of the input-side backbone block (W1 + b1), zero for linear.
    pub fn backbone_len(&self) -> usize {
        if self.hidden_dim == 0 {
            0
        } else {
            self.hidden_dim * self.input_dim + self.hidden_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.class_count == 0 {
            return Err(Error::config("input_dim and class_count must be >= 1"));
        }
        Ok(())
    }
}

/// Flat-parameter model with a freeze mask aligned to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: Vec<f64>,
    pub arch: Arch,
    /// `true` entries are frozen: never updated by training, never averaged
    /// by partial aggregation.
    pub frozen_mask: Vec<bool>,
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn unfrozen_count(&self) -> usize {
        self.frozen_mask.iter().filter(|&&f| !f).count()
    }

    /// Marks the first `floor(fraction * |params|)` entries frozen.
    pub fn freeze_prefix(&mut self, fraction: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::config(format!("frozen fraction must be in [0,1], got {fraction}")));
        }
        let cut = (fraction * self.params.len() as f64).floor() as usize;
        for (i, slot) in self.frozen_mask.iter_mut().enumerate() {
            *slot = i < cut;
        }
        Ok(())
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Internal("model contains non-finite parameters".into()));
        }
        Ok(())
    }
}

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    Zeros,
    SeededUniform { scale: f64, seed: u64 },
}

/// Builds a model and freezes the leading `pretrain_frozen_fraction` of its
/// parameters (the input-side backbone block comes first in the layout).
pub fn init_model(arch: Arch, init: Init, pretrain_frozen_fraction: f64) -> Result<Model> {
    arch.validate()?;
    let count = arch.param_count();
    let params = match init {
        Init::Zeros => vec![0.0; count],
        Init::SeededUniform { scale, seed } => {
            if !(scale > 0.0) {
                return Err(Error::config(format!("init scale must be > 0, got {scale}")));
            }
            let mut r = rng::stream(seed, "model.init", &[]);
            (0..count).map(|_| r.gen_range(-scale..scale)).collect()
        }
    };
    let mut model = Model { params, arch, frozen_mask: vec![false; count] };
    model.freeze_prefix(pretrain_frozen_fraction)?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config_at("train.batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config_at("train.learning_rate", "must be > 0"));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::config_at("train.l2_penalty", "must be >= 0"));
        }
        Ok(())
    }
}

/// Per-sample forward pass: returns logits.
fn forward(model: &Model, x: &[f64]) -> Vec<f64> {
    let Arch { input_dim: d, class_count: c, hidden_dim: h } = model.arch;
    let p = &model.params;
    if h == 0 {
        (0..c).map(|k| dot(&p[k * d..(k + 1) * d], x) + p[c * d + k]).collect()
    } else {
        let w1 = &p[..h * d];
        let b1 = &p[h * d..h * d + h];
        let w2 = &p[h * d + h..h * d + h + c * h];
        let b2 = &p[h * d + h + c * h..];
        let z: Vec<f64> =
            (0..h).map(|j| (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh()).collect();
        (0..c).map(|k| dot(&w2[k * h..(k + 1) * h], &z) + b2[k]).collect()
    }
}

/// Numerically stable softmax probabilities and log-normalizer.
fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z = pairwise_sum(&exps);
    (exps.iter().map(|&e| e / z).collect(), z.ln() + max)
}

/// Mean cross-entropy over `data` plus (l2/2) * sum of squared unfrozen
/// parameters.
pub fn loss(model: &Model, data: &SampleSet, l2: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::config("loss requires a non-empty sample set"));
    }
    let per_sample: Vec<f64> = (0..data.len())
        .map(|i| {
            let logits = forward(model, data.row(i));
            let (_, log_z) = softmax(&logits);
            log_z - logits[data.labels[i] as usize]
        })
        .collect();
    let mut total = pairwise_sum(&per_sample) / data.len() as f64;
    if l2 > 0.0 {
        let sq: Vec<f64> = model
            .params
            .iter()
            .zip(&model.frozen_mask)
            .map(|(&p, &frozen)| if frozen { 0.0 } else { p * p })
            .collect();
        total += 0.5 * l2 * pairwise_sum(&sq);
    }
    Ok(total)
}

/// Per-sample gradient of the cross-entropy (no L2, no mask) written into
/// `out`.
fn sample_grad(model: &Model, x: &[f64], y: u32, out: &mut [f64]) {
    let Arch { input_dim: d, class_count: c, hidden_dim: h } = model.arch;
    let p = &model.params;
    out.iter_mut().for_each(|g| *g = 0.0);
    if h == 0 {
        let logits = forward(model, x);
        let (probs, _) = softmax(&logits);
        for k in 0..c {
            let delta = probs[k] - f64::from(k == y as usize);
            for (slot, &xv) in out[k * d..(k + 1) * d].iter_mut().zip(x) {
                *slot = delta * xv;
            }
            out[c * d + k] = delta;
        }
    } else {
        let w1 = &p[..h * d];
        let b1 = &p[h * d..h * d + h];
        let w2 = &p[h * d + h..h * d + h + c * h];
        let b2 = &p[h * d + h + c * h..];
        let z: Vec<f64> =
            (0..h).map(|j| (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh()).collect();
        let logits: Vec<f64> = (0..c).map(|k| dot(&w2[k * h..(k + 1) * h], &z) + b2[k]).collect();
        let (probs, _) = softmax(&logits);
        let delta2: Vec<f64> =
            (0..c).map(|k| probs[k] - f64::from(k == y as usize)).collect();
        let (head, tail) = out.split_at_mut(h * d + h);
        let (gw1, gb1) = head.split_at_mut(h * d);
        let (gw2, gb2) = tail.split_at_mut(c * h);
        for k in 0..c {
            for j in 0..h {
                gw2[k * h + j] = delta2[k] * z[j];
            }
            gb2[k] = delta2[k];
        }
        for j in 0..h {
            let back: Vec<f64> = (0..c).map(|k| delta2[k] * w2[k * h + j]).collect();
            let delta1 = pairwise_sum(&back) * (1.0 - z[j] * z[j]);
            for (slot, &xv) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                *slot = delta1 * xv;
            }
            gb1[j] = delta1;
        }
    }
}

/// Analytic gradient of `loss` (mean cross-entropy + L2) with exact zeros
/// at frozen positions.
pub fn gradient(model: &Model, batch: &SampleSet, l2: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::config("gradient requires a non-empty batch"));
    }
    let count = model.params.len();
    let n = batch.len();
    // Per-sample gradients, then a fixed-order pairwise reduction per
    // coordinate.
    let mut per_sample = vec![0.0f64; n * count];
    for i in 0..n {
        sample_grad(model, batch.row(i), batch.labels[i], &mut per_sample[i * count..(i + 1) * count]);
    }
    let mut column = vec![0.0f64; n];
    let mut grad = vec![0.0f64; count];
    for j in 0..count {
        if model.frozen_mask[j] {
            continue;
        }
        for i in 0..n {
            column[i] = per_sample[i * count + j];
        }
        grad[j] = pairwise_sum(&column) / n as f64 + l2 * model.params[j];
    }
    Ok(grad)
}

/// Mini-batch SGD on softmax cross-entropy. Deterministic per seed; frozen
/// parameters are bit-identical before and after; the input is unmodified.
pub fn train_local(model: &Model, data: &SampleSet, config: &TrainConfig) -> Result<Model> {
    config.validate()?;
    let mut out = model.clone();
    if config.epochs == 0 {
        return Ok(out);
    }
    if data.is_empty() {
        return Err(Error::config("train_local requires a non-empty sample set when epochs > 0"));
    }
    let n = data.len();
    let mut batch = SampleSet::empty(data.dim);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng::stream(config.seed, "train.epoch", &[epoch as u64]));
        }
        let mut batch_idx = 0usize;
        for start in (0..n).step_by(config.batch_size) {
            let end = (start + config.batch_size).min(n);
            batch.features.clear();
            batch.labels.clear();
            for &i in &order[start..end] {
                batch.push(data.row(i), data.labels[i]);
            }
            let grad = gradient(&out, &batch, config.l2_penalty)?;
            let batch_loss = loss(&out, &batch, config.l2_penalty)?;
            if !batch_loss.is_finite() {
                return Err(Error::NumericalDivergence { epoch, batch: batch_idx });
            }
            for (j, g) in grad.iter().enumerate() {
                if !out.frozen_mask[j] {
                    out.params[j] -= config.learning_rate * g;
                }
            }
            batch_idx += 1;
        }
    }
    out.assert_finite()?;
    Ok(out)
}

/// Fraction of argmax-correct predictions; ties go to the lowest class.
pub fn evaluate(model: &Model, data: &SampleSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::config("evaluate requires a non-empty sample set"));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        let logits = forward(model, data.row(i));
        let mut best = 0usize;
        for (k, &l) in logits.iter().enumerate().skip(1) {
            if l > logits[best] {
                best = k;
            }
        }
        if best == data.labels[i] as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Canonical aggregation order: sort by weight, then lexicographically by
/// parameter bits, so any permutation of the inputs reduces identically.
fn canonical_order(models: &[&Model], weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| {
        weights[a].total_cmp(&weights[b]).then_with(|| {
            for (x, y) in models[a].params.iter().zip(&models[b].params) {
                let c = x.total_cmp(y);
                if c != std::cmp::Ordering::Equal {
                    return c;
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    order
}

fn check_aggregation(models: &[&Model], weights: &[f64]) -> Result<()> {
    if models.is_empty() {
        return Err(Error::Aggregation("needs at least one model".into()));
    }
    if models.len() != weights.len() {
        return Err(Error::Aggregation(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|&&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::Aggregation(format!("weights must be positive and finite, got {w}")));
    }
    let first = models[0];
    for m in &models[1..] {
        if m.arch != first.arch {
            return Err(Error::Aggregation("architecture mismatch".into()));
        }
        if m.frozen_mask != first.frozen_mask {
            return Err(Error::Aggregation("frozen mask mismatch".into()));
        }
    }
    Ok(())
}

/// Anchored weighted mean over the canonical order: exact for a single
/// model and for identical models, permutation-invariant bit-for-bit.
fn weighted_mean_params(models: &[&Model], weights: &[f64], skip_frozen: bool) -> Vec<f64> {
    let order = canonical_order(models, weights);
    let sorted_w: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let total = pairwise_sum(&sorted_w);
    let norm: Vec<f64> = sorted_w.iter().map(|&w| w / total).collect();
    let anchor = models[order[0]];
    let count = anchor.params.len();
    let mut out = anchor.params.clone();
    let mut terms = vec![0.0f64; order.len()];
    for j in 0..count {
        if skip_frozen && anchor.frozen_mask[j] {
            continue;
        }
        for (slot, (&idx, &v)) in terms.iter_mut().zip(order.iter().zip(&norm)) {
            *slot = v * (models[idx].params[j] - anchor.params[j]);
        }
        let delta = pairwise_sum(&terms);
        if delta != 0.0 {
            out[j] = anchor.params[j] + delta;
        }
    }
    out
}

/// Sample-weighted parameter average. Weights conventionally default to
/// shard sizes at the call site.
pub fn fedavg(models: &[&Model], weights: &[f64]) -> Result<Model> {
    check_aggregation(models, weights)?;
    let params = weighted_mean_params(models, weights, false);
    let out = Model { params, arch: models[0].arch, frozen_mask: models[0].frozen_mask.clone() };
    out.assert_finite()?;
    Ok(out)
}

/// Like [`fedavg`] on unfrozen positions; frozen positions are copied
/// bit-identically from the first (local) model.
pub fn partial_fedavg(models: &[&Model], weights: &[f64]) -> Result<Model> {
    check_aggregation(models, weights)?;
    let averaged = weighted_mean_params(models, weights, true);
    let local = models[0];
    let params: Vec<f64> = local
        .frozen_mask
        .iter()
        .enumerate()
        .map(|(j, &frozen)| if frozen { local.params[j] } else { averaged[j] })
        .collect();
    let out = Model { params, arch: local.arch, frozen_mask: local.frozen_mask.clone() };
    out.assert_finite()?;
    Ok(out)
}

/// Per-class diagonal-Gaussian summary of a shard. Classes never seen get
/// no entry and produce no samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub per_class: Vec<Option<ClassStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: u64,
}

impl Generator {
    pub fn present_classes(&self) -> usize {
        self.per_class.iter().filter(|c| c.is_some()).count()
    }
}

/// Fits per-class means and (population) variances, clamped below by
/// `variance_floor`.
pub fn fit_generator(data: &SampleSet, class_count: u32, variance_floor: f64) -> Result<Generator> {
    if data.is_empty() {
        return Err(Error::config("fit_generator requires a non-empty sample set"));
    }
    if !(variance_floor > 0.0) {
        return Err(Error::config(format!("variance_floor must be > 0, got {variance_floor}")));
    }
    let dim = data.dim;
    let mut per_class: Vec<Option<ClassStats>> = vec![None; class_count as usize];
    for c in 0..class_count {
        let rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0f64; dim];
        let mut var = vec![0.0f64; dim];
        let mut column = vec![0.0f64; rows.len()];
        for d in 0..dim {
            for (slot, &i) in column.iter_mut().zip(&rows) {
                *slot = data.row(i)[d];
            }
            mean[d] = pairwise_sum(&column) / n;
            let devs: Vec<f64> = column.iter().map(|&x| (x - mean[d]) * (x - mean[d])).collect();
            var[d] = (pairwise_sum(&devs) / n).max(variance_floor);
        }
        per_class[c as usize] = Some(ClassStats { mean, var, count: rows.len() as u64 });
    }
    Ok(Generator { per_class })
}

/// Draws `n` labeled samples: classes proportional to fitted counts,
/// features from the per-class diagonal Gaussians. The output depends on
/// the training shard only through (mean, variance, count).
pub fn sample_synthetic(generator: &Generator, n: usize, seed: u64) -> Result<SampleSet> {
    let present: Vec<(usize, &ClassStats)> = generator
        .per_class
        .iter()
        .enumerate()
        .filter_map(|(c, s)| s.as_ref().map(|s| (c, s)))
        .collect();
    if present.is_empty() {
        return Err(Error::GeneratorEmpty);
    }
    let dim = present[0].1.mean.len();
    let total: u64 = present.iter().map(|(_, s)| s.count).sum();
    let mut out = SampleSet::empty(dim);
    let mut r = rng::stream(seed, "generator.sample", &[]);
    for _ in 0..n {
        let pick = r.gen_range(0..total);
        let mut acc = 0u64;
        let mut chosen = present[0];
        for &(c, s) in &present {
            acc += s.count;
            if pick < acc {
                chosen = (c, s);
                break;
            }
        }
        let (label, stats) = chosen;
        let mut row = Vec::with_capacity(dim);
        for d in 0..dim {
            let eps: f64 = StandardNormal.sample(&mut r);
            row.push(stats.mean[d] + stats.var[d].sqrt() * eps);
        }
        out.push(&row, label as u32);
    }
    Ok(out)
}

// --- model serialization -------------------------------------------------
//
// Versioned binary layout, little-endian:
//   magic "FMDL" | version u8 | input_dim u32 | class_count u32
//   | hidden_dim u32 | rle_run_count u32 | runs (flag u8, len u32)*
//   | param_count u64 | params f64*

const MODEL_MAGIC: &[u8; 4] = b"FMDL";
const MODEL_VERSION: u8 = 1;

fn rle_encode(mask: &[bool]) -> Vec<(bool, u32)> {
    let mut runs = Vec::new();
    for &flag in mask {
        match runs.last_mut() {
            Some((last, len)) if *last == flag => *len += 1,
            _ => runs.push((flag, 1u32)),
        }
    }
    runs
}

/// Serialized byte length of the header for a given model.
pub fn serialized_header_len(model: &Model) -> usize {
    4 + 1 + 4 + 4 + 4 + 4 + rle_encode(&model.frozen_mask).len() * 5 + 8
}

pub fn serialize_model(model: &Model) -> Vec<u8> {
    let runs = rle_encode(&model.frozen_mask);
    let mut out = Vec::with_capacity(serialized_header_len(model) + model.params.len() * 8);
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.extend_from_slice(&(model.arch.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(model.arch.class_count as u32).to_le_bytes());
    out.extend_from_slice(&(model.arch.hidden_dim as u32).to_le_bytes());
    out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
    for (flag, len) in runs {
        out.push(u8::from(flag));
        out.extend_from_slice(&len.to_le_bytes());
    }
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn deserialize_model(bytes: &[u8]) -> Result<Model> {
    let fail = |msg: &str| Error::Ingestion { row: 0, msg: format!("model blob: {msg}") };
    let mut pos = 0usize;
    let take = |pos: &mut usize, len: usize| -> Result<&[u8]> {
        if *pos + len > bytes.len() {
            return Err(fail("truncated"));
        }
        let s = &bytes[*pos..*pos + len];
        *pos += len;
        Ok(s)
    };
    if take(&mut pos, 4)? != MODEL_MAGIC {
        return Err(fail("bad magic"));
    }
    if take(&mut pos, 1)?[0] != MODEL_VERSION {
        return Err(fail("unsupported version"));
    }
    let u32le = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };
    let input_dim = u32le(&mut pos)? as usize;
    let class_count = u32le(&mut pos)? as usize;
    let hidden_dim = u32le(&mut pos)? as usize;
    let run_count = u32le(&mut pos)? as usize;
    let mut frozen_mask = Vec::new();
    for _ in 0..run_count {
        let flag = take(&mut pos, 1)?[0] != 0;
        let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        frozen_mask.extend(std::iter::repeat(flag).take(len));
    }
    let param_count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let mut params = Vec::with_capacity(param_count);
    for _ in 0..param_count {
        params.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
    }
    let arch = Arch { input_dim, class_count, hidden_dim };
    if params.len() != arch.param_count() || frozen_mask.len() != params.len() {
        return Err(fail("length mismatch against architecture"));
    }
    Ok(Model { params, arch, frozen_mask })
}

//! Dataset generation/ingestion and client sharding under i.i.d. and
//! skewed regimes: label-restricted (pathological), preset-ratio quantity
//! skew, and per-client covariate shift.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ClientId;
use crate::rng;

/// A labeled classification dataset with row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<u32>,
    class_count: u32,
    pub seed: u64,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<u32>, class_count: u32, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("feature dimension must be >= 1"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::config(format!(
                "feature matrix has {} values, expected {} rows x {} dims",
                features.len(),
                labels.len(),
                dim
            )));
        }
        let mut seen = vec![false; class_count as usize];
        for (i, &y) in labels.iter().enumerate() {
            if y >= class_count {
                return Err(Error::Ingestion {
                    row: i + 1,
                    msg: format!("label {y} out of range [0,{class_count})"),
                });
            }
            seen[y as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::config(format!("class {missing} has no samples in the dataset")));
        }
        Ok(Dataset { features, dim, labels, class_count, seed })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> u32 {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Copies the given rows into a standalone dataset (fresh 0..n indexing).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.label(i));
        }
        Dataset::new(features, self.dim, labels, self.class_count, self.seed)
    }

    /// Copies the given rows into an owned sample set.
    pub fn gather(&self, indices: &[usize]) -> SampleSet {
        let mut out = SampleSet::empty(self.dim);
        for &i in indices {
            out.push(self.row(i), self.label(i));
        }
        out
    }
}

/// An owned batch of labeled samples. Used for shard views, received data,
/// synthetic data, and evaluation splits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<u32>,
}

impl SampleSet {
    pub fn empty(dim: usize) -> Self {
        SampleSet { features: Vec::new(), dim, labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, row: &[f64], label: u32) {
        debug_assert_eq!(row.len(), self.dim);
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    pub fn extend(&mut self, other: &SampleSet) {
        debug_assert_eq!(self.dim, other.dim);
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }

    /// Label histogram over `class_count` classes.
    pub fn label_histogram(&self, class_count: u32) -> Vec<u64> {
        let mut hist = vec![0u64; class_count as usize];
        for &y in &self.labels {
            hist[y as usize] += 1;
        }
        hist
    }
}

/// How the orthogonal rotation of a covariate transform is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    /// No rotation.
    Identity,
    /// Product of random Givens plane rotations with angles in
    /// [-max_angle, max_angle]; near-identity for small angles, matching
    /// mild augmentation-style shifts.
    Givens { max_angle: f64 },
    /// Fully random (Haar-like) orthogonal matrix.
    Haar,
}

/// Feature-space transform producing per-client covariate shift:
/// x -> Q . diag(scale) . x + noise, labels untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTransform {
    /// Seeds the random orthogonal matrix Q.
    pub rotation_seed: u64,
    pub rotation: Rotation,
    /// Per-feature positive scale factors.
    pub scale: Vec<f64>,
    /// Std-dev of additive zero-mean Gaussian noise.
    pub noise_sigma: f64,
}

impl CovariateTransform {
    pub fn identity(dim: usize) -> Self {
        CovariateTransform {
            rotation_seed: 0,
            rotation: Rotation::Identity,
            scale: vec![1.0; dim],
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("covariate scale factors must be > 0"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        if let Rotation::Givens { max_angle } = self.rotation {
            if !(max_angle >= 0.0) || !max_angle.is_finite() {
                return Err(Error::config("rotation max_angle must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// One client's slice of the global dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    pub owner: ClientId,
    /// Unique indices into the dataset this shard was cut from.
    pub indices: Vec<usize>,
    pub transform: Option<CovariateTransform>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Near-identity orthogonal matrix: product of `dim/2` random Givens plane
/// rotations with angles in [-max_angle, max_angle]. Row-major d x d.
fn givens_orthogonal(dim: usize, seed: u64, max_angle: f64) -> Vec<f64> {
    let mut rng = rng::stream(seed, "covariate.givens", &[]);
    let mut q = vec![0.0f64; dim * dim];
    for i in 0..dim {
        q[i * dim + i] = 1.0;
    }
    if dim < 2 || max_angle == 0.0 {
        return q;
    }
    for _ in 0..dim / 2 {
        let i = rng.gen_range(0..dim);
        let mut j = rng.gen_range(0..dim - 1);
        if j >= i {
            j += 1;
        }
        let theta = rng.gen_range(-max_angle..=max_angle);
        let (sin, cos) = theta.sin_cos();
        // Right-multiply Q by the plane rotation in coordinates (i, j).
        for r in 0..dim {
            let a = q[r * dim + i];
            let b = q[r * dim + j];
            q[r * dim + i] = a * cos - b * sin;
            q[r * dim + j] = a * sin + b * cos;
        }
    }
    q
}

/// Random orthogonal matrix via modified Gram-Schmidt on a seeded Gaussian
/// matrix. Row-major d x d.
fn random_orthogonal(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, "covariate.rotation", &[]);
    let mut q = vec![0.0f64; dim * dim];
    for v in q.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    // Orthonormalize columns.
    for j in 0..dim {
        for k in 0..j {
            let mut proj = 0.0;
            for i in 0..dim {
                proj += q[i * dim + j] * q[i * dim + k];
            }
            for i in 0..dim {
                q[i * dim + j] -= proj * q[i * dim + k];
            }
        }
        let norm: f64 = (0..dim).map(|i| q[i * dim + j] * q[i * dim + j]).sum::<f64>().sqrt();
        // Degenerate draw: fall back to a unit basis vector.
        if norm < 1e-12 {
            for i in 0..dim {
                q[i * dim + j] = if i == j { 1.0 } else { 0.0 };
            }
        } else {
            for i in 0..dim {
                q[i * dim + j] /= norm;
            }
        }
    }
    q
}

/// Gaussian-mixture classification data: class c is N(mu_c, I) with a
/// seeded unit-norm mean scaled by `class_separation`.
pub fn generate_dataset(
    class_count: u32,
    dim: usize,
    samples_per_class: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_count == 0 || dim == 0 || samples_per_class == 0 {
        return Err(Error::config("class_count, dim and samples_per_class must be >= 1"));
    }
    if !(class_separation > 0.0) {
        return Err(Error::config(format!("class_separation must be > 0, got {class_separation}")));
    }
    let n = class_count as usize * samples_per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..class_count {
        let mut mean_rng = rng::stream(seed, "dataset.mean", &[u64::from(c)]);
        let mut mu: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut mean_rng)).collect();
        let norm: f64 = mu.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in mu.iter_mut() {
            *v = *v / norm * class_separation;
        }
        let mut sample_rng = rng::stream(seed, "dataset.samples", &[u64::from(c)]);
        for _ in 0..samples_per_class {
            for d in 0..dim {
                let eps: f64 = StandardNormal.sample(&mut sample_rng);
                features.push(mu[d] + eps);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, dim, labels, class_count, seed)
}

/// Loads a dataset from CSV: header `f0,...,f{d-1},label`, one sample per
/// row, integer labels forming a dense range starting at 0.
pub fn load_dataset_csv(path: &Path, seed: u64) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Ingestion {
        row: 0,
        msg: format!("cannot open {}: {e}", path.display()),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingestion { row: 0, msg: format!("bad header: {e}") })?
        .clone();
    if headers.len() < 2 {
        return Err(Error::Ingestion { row: 0, msg: "need at least one feature column and a label column".into() });
    }
    let dim = headers.len() - 1;
    for (i, name) in headers.iter().take(dim).enumerate() {
        let expected = format!("f{i}");
        if name != expected {
            return Err(Error::Ingestion {
                row: 0,
                msg: format!("feature column {i} must be named `{expected}`, got `{name}`"),
            });
        }
    }
    if &headers[dim] != "label" {
        return Err(Error::Ingestion {
            row: 0,
            msg: format!("final column must be named `label`, got `{}`", &headers[dim]),
        });
    }

    let mut features = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Ingestion { row, msg: e.to_string() })?;
        if record.len() != dim + 1 {
            return Err(Error::Ingestion {
                row,
                msg: format!("expected {} columns, got {}", dim + 1, record.len()),
            });
        }
        for (col, field) in record.iter().take(dim).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Ingestion {
                row,
                msg: format!("column f{col}: `{field}` is not a number"),
            })?;
            features.push(v);
        }
        let label: u32 = record[dim].trim().parse().map_err(|_| Error::Ingestion {
            row,
            msg: format!("label `{}` is not a non-negative integer", &record[dim]),
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Ingestion { row: 0, msg: "dataset has no rows".into() });
    }
    let class_count = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, dim, labels, class_count, seed)
}

fn check_clients(client_ids: &[ClientId]) -> Result<()> {
    if client_ids.is_empty() {
        return Err(Error::config("at least one client is required"));
    }
    Ok(())
}

/// Seeded global shuffle, then equal contiguous splits; remainder goes one
/// extra sample to the lowest-id clients.
pub fn partition_iid(dataset: &Dataset, client_ids: &[ClientId], seed: u64) -> Result<Vec<Shard>> {
    check_clients(client_ids)?;
    if dataset.is_empty() {
        return Err(Error::config("cannot partition an empty dataset"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(seed, "partition.iid", &[]));

    let mut clients: Vec<ClientId> = client_ids.to_vec();
    clients.sort_unstable();
    let k = clients.len();
    let base = dataset.len() / k;
    let extras = dataset.len() % k;
    let mut shards = Vec::with_capacity(k);
    let mut cursor = 0usize;
    for (i, owner) in clients.into_iter().enumerate() {
        let size = base + usize::from(i < extras);
        shards.push(Shard { owner, indices: order[cursor..cursor + size].to_vec(), transform: None });
        cursor += size;
    }
    Ok(shards)
}

/// Label-sorted sharding: the dataset is cut into `clients * L` label-pure
/// chunks and each client receives `L` of them after a seeded shuffle, so
/// every client observes at most `L` distinct labels.
pub fn partition_pathological(
    dataset: &Dataset,
    client_ids: &[ClientId],
    labels_per_client: u32,
    seed: u64,
) -> Result<Vec<Shard>> {
    check_clients(client_ids)?;
    if dataset.is_empty() {
        return Err(Error::config("cannot partition an empty dataset"));
    }
    let c = dataset.class_count() as usize;
    let l = labels_per_client as usize;
    if l == 0 {
        return Err(Error::config_at("partition.labels_per_client", "must be >= 1"));
    }
    if l > c {
        return Err(Error::config_at(
            "partition.labels_per_client",
            format!("must be <= class count {c}, got {l}"),
        ));
    }
    let total_shards = client_ids.len() * l;
    if total_shards < c {
        return Err(Error::config_at(
            "partition.labels_per_client",
            format!(
                "clients x labels_per_client = {total_shards} label-pure shards cannot cover {c} classes"
            ),
        ));
    }

    // Per-label index blocks, sorted (label, index).
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..dataset.len() {
        by_label[dataset.label(i) as usize].push(i);
    }

    // Apportion shard counts to labels proportionally to their sample
    // counts (largest remainder), at least one shard per label.
    let n = dataset.len() as f64;
    let mut counts: Vec<usize> = Vec::with_capacity(c);
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(c);
    for (label, block) in by_label.iter().enumerate() {
        let exact = total_shards as f64 * block.len() as f64 / n;
        let floor = (exact.floor() as usize).max(1);
        counts.push(floor);
        remainders.push((exact - exact.floor(), label));
    }
    let mut assigned: usize = counts.iter().sum();
    // Largest remainder first; ties by lower label.
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut ri = 0;
    while assigned < total_shards {
        counts[remainders[ri % c].1] += 1;
        assigned += 1;
        ri += 1;
    }
    while assigned > total_shards {
        // Over-assignment can only come from the at-least-one floor; shed
        // from the largest counts, ties by higher label.
        let (label, _) = counts
            .iter()
            .enumerate()
            .filter(|&(_, &cnt)| cnt > 1)
            .max_by_key(|&(label, &cnt)| (cnt, label))
            .ok_or_else(|| {
                Error::config_at(
                    "partition.labels_per_client",
                    format!("cannot form {total_shards} shards from {c} classes"),
                )
            })?;
        counts[label] -= 1;
        assigned -= 1;
    }
    for (label, (&cnt, block)) in counts.iter().zip(&by_label).enumerate() {
        if cnt > block.len() {
            return Err(Error::config_at(
                "partition.labels_per_client",
                format!(
                    "label {label} has {} samples but needs {cnt} non-empty shards; lower clients or labels_per_client",
                    block.len()
                ),
            ));
        }
    }

    // Cut each label block into near-equal contiguous chunks.
    let mut chunks: Vec<Vec<usize>> = Vec::with_capacity(total_shards);
    for (block, &cnt) in by_label.iter().zip(&counts) {
        let base = block.len() / cnt;
        let extras = block.len() % cnt;
        let mut cursor = 0;
        for j in 0..cnt {
            let size = base + usize::from(j < extras);
            chunks.push(block[cursor..cursor + size].to_vec());
            cursor += size;
        }
    }

    // Seeded assignment of L chunks per client, ascending client order.
    let mut chunk_order: Vec<usize> = (0..chunks.len()).collect();
    chunk_order.shuffle(&mut rng::stream(seed, "partition.pathological", &[]));
    let mut clients: Vec<ClientId> = client_ids.to_vec();
    clients.sort_unstable();
    let mut shards = Vec::with_capacity(clients.len());
    for (i, owner) in clients.into_iter().enumerate() {
        let mut indices = Vec::new();
        for &chunk_idx in &chunk_order[i * l..(i + 1) * l] {
            indices.extend_from_slice(&chunks[chunk_idx]);
        }
        shards.push(Shard { owner, indices, transform: None });
    }
    Ok(shards)
}

/// Seeded shuffle then contiguous slices of `floor(ratio_i * n)` samples;
/// the remainder goes to the largest-ratio client (ties to the lowest id).
pub fn partition_quantity_skew(
    dataset: &Dataset,
    client_ids: &[ClientId],
    ratios: &[f64],
    seed: u64,
) -> Result<Vec<Shard>> {
    check_clients(client_ids)?;
    if dataset.is_empty() {
        return Err(Error::config("cannot partition an empty dataset"));
    }
    if ratios.len() != client_ids.len() {
        return Err(Error::config_at(
            "partition.ratios",
            format!("{} ratios for {} clients", ratios.len(), client_ids.len()),
        ));
    }
    if let Some(bad) = ratios.iter().find(|&&r| !(r >= 0.0) || !r.is_finite()) {
        return Err(Error::config_at("partition.ratios", format!("negative or non-finite ratio {bad}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config_at("partition.ratios", format!("must sum to 1, got {sum}")));
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(seed, "partition.quantity", &[]));

    // Ratios travel with their clients; slice assignment runs in
    // ascending-id order.
    let mut paired: Vec<(ClientId, f64)> =
        client_ids.iter().copied().zip(ratios.iter().copied()).collect();
    paired.sort_by_key(|&(id, _)| id);
    let n = dataset.len();
    let mut sizes: Vec<usize> =
        paired.iter().map(|&(_, r)| (r * n as f64).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let remainder = n - assigned;
    if remainder > 0 {
        // Largest ratio wins the remainder; ties break to the lowest id,
        // i.e. the earliest position in ascending-id order.
        let mut winner = 0;
        for (i, &(_, r)) in paired.iter().enumerate() {
            if r > paired[winner].1 {
                winner = i;
            }
        }
        sizes[winner] += remainder;
    }

    let mut shards = Vec::with_capacity(paired.len());
    let mut cursor = 0usize;
    for ((owner, _), size) in paired.into_iter().zip(sizes) {
        shards.push(Shard { owner, indices: order[cursor..cursor + size].to_vec(), transform: None });
        cursor += size;
    }
    Ok(shards)
}

/// Materializes a shard's feature view, applying its covariate transform
/// when present. The source dataset is never modified.
pub fn resolve_shard_view(dataset: &Dataset, shard: &Shard) -> Result<SampleSet> {
    let mut out = SampleSet::empty(dataset.dim());
    match &shard.transform {
        None => {
            for &i in &shard.indices {
                out.push(dataset.row(i), dataset.label(i));
            }
        }
        Some(t) => {
            t.validate()?;
            if t.scale.len() != dataset.dim() {
                return Err(Error::Internal(format!(
                    "transform scale has {} entries for dim {}",
                    t.scale.len(),
                    dataset.dim()
                )));
            }
            let dim = dataset.dim();
            let q = match t.rotation {
                Rotation::Identity => None,
                Rotation::Givens { max_angle } => {
                    Some(givens_orthogonal(dim, t.rotation_seed, max_angle))
                }
                Rotation::Haar => Some(random_orthogonal(dim, t.rotation_seed)),
            };
            // Per-shard noise stream, seeded by the transform and owner so
            // one shard's noise never depends on another's.
            let mut noise_rng =
                rng::stream(t.rotation_seed, "covariate.noise", &[u64::from(shard.owner.0)]);
            let mut scaled = vec![0.0f64; dim];
            let mut row_out = vec![0.0f64; dim];
            for &i in &shard.indices {
                let x = dataset.row(i);
                for d in 0..dim {
                    scaled[d] = t.scale[d] * x[d];
                }
                match &q {
                    Some(q) => {
                        for r in 0..dim {
                            let mut acc = 0.0;
                            for cidx in 0..dim {
                                acc += q[r * dim + cidx] * scaled[cidx];
                            }
                            row_out[r] = acc;
                        }
                    }
                    None => row_out.copy_from_slice(&scaled),
                }
                if t.noise_sigma > 0.0 {
                    for v in row_out.iter_mut() {
                        let eps: f64 = StandardNormal.sample(&mut noise_rng);
                        *v += t.noise_sigma * eps;
                    }
                } else if t.noise_sigma == 0.0 {
                    // No draws: sigma = 0 must be exactly noiseless.
                }
                out.push(&row_out, dataset.label(i));
            }
        }
    }
    Ok(out)
}

/// Draws a random covariate transform for one client: seeded rotation of
/// the given kind, per-feature scales from `scale_range`, Gaussian noise of
/// `noise_sigma`.
pub fn draw_covariate_transform(
    dim: usize,
    rotation: Rotation,
    scale_range: (f64, f64),
    noise_sigma: f64,
    seed: u64,
    client: ClientId,
) -> CovariateTransform {
    let mut rng = rng::stream(seed, "covariate.draw", &[u64::from(client.0)]);
    let scale: Vec<f64> =
        (0..dim).map(|_| rng.gen_range(scale_range.0..=scale_range.1)).collect();
    CovariateTransform {
        rotation_seed: rng::derive_seed(seed, "covariate.rotseed", &[u64::from(client.0)]),
        rotation,
        scale,
        noise_sigma,
    }
}

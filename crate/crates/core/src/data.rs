//! Datasets, client shards and batching.
//!
//! Non-IID shards come from the usual class-proportion Dirichlet scheme: for
//! every class, the share of its samples given to each of the `K` clients is
//! drawn from `Dir(alpha * 1_K)` and turned into integer counts by
//! largest-remainder rounding, so per-class totals are conserved exactly.
//! Clients left empty receive one sample taken from the largest shard.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::seed;

/// Pooled labelled data; row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    width: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, width: usize, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("a dataset needs at least one row"));
        }
        if width == 0 {
            return Err(Error::config("feature width must be positive"));
        }
        if features.len() != labels.len() * width {
            return Err(Error::dims("dataset features", labels.len() * width, features.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Dataset {
            features,
            labels,
            width,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copy the given rows, in the given order, into a batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let mut features = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::config(format!("row index {i} out of range for {} rows", self.len())));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(features, labels, self.width)
    }

    /// The whole dataset as one batch.
    pub fn to_batch(&self) -> Batch {
        Batch::new(self.features.clone(), self.labels.clone(), self.width).expect("dataset is non-empty")
    }

    /// The first `n` rows (or all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        Dataset::new(
            self.features[..n * self.width].to_vec(),
            self.labels[..n].to_vec(),
            self.width,
            self.num_classes,
        )
    }
}

/// One client's local dataset, as row indices into a pooled [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientShard {
    pub fn n_k(&self) -> usize {
        self.indices.len()
    }

    pub fn class_counts(&self, ds: &Dataset) -> Vec<usize> {
        let mut counts = vec![0; ds.num_classes()];
        for &i in &self.indices {
            counts[ds.labels()[i]] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("need at least one client"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("Dirichlet alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Draw from `Dir(alpha * 1_k)` through normalised Gamma variates.
fn dirichlet_shares<R: Rng + ?Sized>(rng: &mut R, k: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    for _ in 0..64 {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
    // Every variate underflowed (only plausible for alpha far below 0.01):
    // that is the all-mass-on-one-client limit of the distribution.
    let mut shares = vec![0.0; k];
    shares[rng.random_range(0..k)] = 1.0;
    shares
}

/// Integer counts summing to `total` in proportion to `shares`, by
/// largest-remainder rounding (ties to the lower client index).
fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Split `ds` across `spec.clients` clients with Dirichlet class skew.
pub fn dirichlet_partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    let k = spec.clients;
    if k > ds.len() {
        return Err(Error::TooManyClients {
            clients: k,
            rows: ds.len(),
        });
    }
    let mut rng = seed::rng_from(spec.seed);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in 0..ds.num_classes() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let shares = dirichlet_shares(&mut rng, k, spec.alpha);
        let counts = largest_remainder(&shares, members.len());
        let mut at = 0;
        for (bucket, c) in buckets.iter_mut().zip(counts) {
            bucket.extend_from_slice(&members[at..at + c]);
            at += c;
        }
    }
    for b in &mut buckets {
        b.sort_unstable();
    }
    // Repair empty shards from the currently largest one (lowest id on ties).
    while let Some(empty) = buckets.iter().position(|b| b.is_empty()) {
        let donor = (0..k)
            .max_by(|&a, &b| buckets[a].len().cmp(&buckets[b].len()).then(b.cmp(&a)))
            .expect("k >= 1");
        let moved = buckets[donor].pop().expect("donor has more than one row since k <= n");
        buckets[empty].push(moved);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(client_id, indices)| ClientShard { client_id, indices })
        .collect())
}

/// Parameters of the Gaussian-cluster synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n: usize,
    /// Standard deviation of the isotropic cluster noise (1.0 = unit covariance).
    pub noise: f64,
    pub seed: u64,
}

/// Radius of the simplex carrying the class means.
pub const SIMPLEX_RADIUS: f64 = 3.0;

/// Class means: the vertices of a regular simplex of radius 3 centred at the
/// origin, living in the first `num_classes` coordinates. When there are more
/// classes than dimensions, fixed pseudo-random unit directions of length 3
/// are used instead.
pub fn class_means(num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    if num_classes <= dim {
        let c = num_classes as f64;
        let scale = if num_classes > 1 {
            SIMPLEX_RADIUS / ((c - 1.0) / c).sqrt()
        } else {
            0.0
        };
        (0..num_classes)
            .map(|k| {
                let mut v = vec![0.0; dim];
                for (j, x) in v.iter_mut().take(num_classes).enumerate() {
                    let e = if j == k { 1.0 } else { 0.0 };
                    *x = (e - 1.0 / c) * scale;
                }
                v
            })
            .collect()
    } else {
        let mut rng = seed::rng_from(0x05EE_DC1A_55E5);
        (0..num_classes)
            .map(|_| {
                let d = crate::roughness::sample_direction(&mut rng, dim);
                d.as_slice().iter().map(|x| x * SIMPLEX_RADIUS).collect()
            })
            .collect()
    }
}

/// Balanced Gaussian class clusters; row `i` has label `i % num_classes`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.num_classes == 0 || spec.dim == 0 || spec.n == 0 {
        return Err(Error::config("synthetic data needs positive classes, dim and n"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::config("synthetic noise scale must be finite and >= 0"));
    }
    let means = class_means(spec.num_classes, spec.dim);
    let mut rng = seed::rng_from(spec.seed);
    let mut features = Vec::with_capacity(spec.n * spec.dim);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let class = i % spec.num_classes;
        for &mu in &means[class] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(mu + spec.noise * z);
        }
        labels.push(class);
    }
    Dataset::new(features, labels, spec.dim, spec.num_classes)
}

/// Row indices of one epoch: a seeded shuffle of the shard cut into
/// `ceil(n_k / B)` batches, the last possibly short.
pub fn batch_indices(shard: &ClientShard, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order = shard.indices.clone();
    order.shuffle(&mut seed::rng_from(epoch_seed));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn batches(shard: &ClientShard, ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    batch_indices(shard, batch_size, epoch_seed)
        .iter()
        .map(|idx| ds.gather(idx))
        .collect()
}

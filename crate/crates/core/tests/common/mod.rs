#![allow(dead_code)]

use fedrough_core::data::{make_synthetic, Dataset, SyntheticSpec};
use fedrough_core::fed::{AlgoConfig, Algorithm};
use fedrough_core::harness::{DataSource, ExperimentConfig, ModelSpec};
use fedrough_core::model::{Batch, Objective, ParamVector};
use fedrough_core::Result;

/// `mean_i 0.5 * sum_j a_j (w_j - x_ij)^2` over the rows of a batch.
/// Gradient: `a_j (w_j - mean_i x_ij)`.
pub struct RowQuadratic {
    pub curvature: Vec<f64>,
}

impl Objective for RowQuadratic {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        let w = params.as_slice();
        let mut total = 0.0;
        for i in 0..batch.rows() {
            total += batch
                .row(i)
                .iter()
                .zip(w)
                .zip(&self.curvature)
                .map(|((x, w), a)| 0.5 * a * (w - x) * (w - x))
                .sum::<f64>();
        }
        Ok(total / batch.rows() as f64)
    }

    fn grad(&self, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        let n = batch.rows() as f64;
        let g = (0..self.dim())
            .map(|j| {
                let mean = (0..batch.rows()).map(|i| batch.row(i)[j]).sum::<f64>() / n;
                self.curvature[j] * (params.as_slice()[j] - mean)
            })
            .collect();
        Ok(ParamVector::from_vec(g))
    }
}

/// Double-double arithmetic for extended-precision oracles.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = two_sum(s, e);
        Dd { hi, lo }
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.add(o.mul(Dd::from(-q1)));
        let q2 = r.hi / o.hi;
        let (hi, lo) = two_sum(q1, q2);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Synthetic experiment with the given label skew and algorithm.
#[allow(clippy::too_many_arguments)]
pub fn synthetic_config(
    num_classes: usize,
    dim: usize,
    n_train: usize,
    clients: usize,
    fraction: f64,
    alpha: f64,
    rounds: usize,
    algorithm: Algorithm,
) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic {
            num_classes,
            dim,
            n_train,
            n_test: 1000,
            noise: 1.0,
        },
        model: ModelSpec::Logistic,
        algo: AlgoConfig {
            eta: 0.01,
            epochs: 5,
            batch_size: 64,
            algorithm,
        },
        clients,
        fraction,
        alpha,
        rounds,
        eval_every: 1,
        master_seed: 0,
        seeds: 3,
        record_wall_time: false,
        roughness_probe: None,
    }
}

pub fn synthetic(num_classes: usize, dim: usize, n: usize, seed: u64) -> Dataset {
    make_synthetic(&SyntheticSpec {
        num_classes,
        dim,
        n,
        noise: 1.0,
        seed,
    })
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `||a - f|| / max(||a||, ||f||, floor)`.
pub fn relative_error(a: &[f64], f: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(f).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(f)).max(floor)
}

/// Diagonal quadratic `0.5 * sum_j a_j (w_j - c_j)^2`.
pub struct DiagQuadratic {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

impl DiagQuadratic {
    pub fn value(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.a)
            .zip(&self.c)
            .map(|((w, a), c)| 0.5 * a * (w - c) * (w - c))
            .sum()
    }

    /// Closed-form line restriction `f(s) = f0 + s * slope + 0.5 * s^2 * curv`.
    pub fn along(&self, w: &[f64], d: &[f64]) -> (f64, f64, f64) {
        let f0 = self.value(w);
        let slope = (0..w.len()).map(|j| self.a[j] * (w[j] - self.c[j]) * d[j]).sum();
        let curv = (0..w.len()).map(|j| self.a[j] * d[j] * d[j]).sum();
        (f0, slope, curv)
    }
}

/// Unit directions drawn the documented way: standard normal entries from a
/// ChaCha8 generator seeded with `seed`, then scaled to unit length.
pub fn oracle_directions(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let d: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Normalised total variation by direct summation.
pub fn oracle_t(values: &[f64], l: f64) -> f64 {
    let mut tv = 0.0;
    for j in 1..values.len() {
        tv += (values[j] - values[j - 1]).abs();
    }
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let floor = 1.0 / (2.0 * l);
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        return floor;
    }
    (tv / (2.0 * l * (hi - lo))).max(floor)
}

/// Brute-force roughness index of a diagonal quadratic: closed-form profiles
/// on the same seeded directions, population statistics, clip at `i_max`.
pub fn oracle_ri(q: &DiagQuadratic, w: &[f64], m_dirs: usize, l: f64, m: usize, i_max: f64, seed: u64) -> f64 {
    let ts: Vec<f64> = oracle_directions(seed, m_dirs, w.len())
        .iter()
        .map(|d| {
            let (f0, slope, curv) = q.along(w, d);
            let profile: Vec<f64> = (0..=m)
                .map(|j| {
                    let s = -l + j as f64 * 2.0 * l / m as f64;
                    f0 + s * slope + 0.5 * s * s * curv
                })
                .collect();
            oracle_t(&profile, l)
        })
        .collect();
    let n = ts.len() as f64;
    let mean = ts.iter().sum::<f64>() / n;
    let var = ts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    (var.sqrt() / mean).min(i_max)
}

//! Roughness index of a loss landscape.
//!
//! For a loss `F` and an anchor point `w`, the index is computed as follows:
//!
//! 1. draw `M` directions from a standard normal in parameter space and scale
//!    each to unit length;
//! 2. evaluate the one-dimensional profile `f_d(s) = F(w + s d)` on the uniform
//!    grid `s_j = -l + j * 2l/m`, `j = 0..=m`;
//! 3. take the discrete total variation of each profile and normalise it by
//!    `2l` times the profile's range, giving `T_d`;
//! 4. report `std(T) / mean(T)` (population standard deviation), clipped at
//!    `I_max`.
//!
//! A profile whose range is numerically zero is assigned `T = 1/(2l)`, the
//! smallest value any profile can reach (that of a monotone one). This keeps
//! `mean(T) > 0` and makes flat landscapes have index 0.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::seed;

/// Hyperparameters of the roughness index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughnessConfig {
    /// Number of random directions `M`.
    pub directions: usize,
    /// Half-width `l` of the projection interval `[-l, l]`.
    pub half_width: f64,
    /// Number of sub-intervals `m`; the grid has `m + 1` points.
    pub intervals: usize,
    /// Clip ceiling `I_max`.
    pub max_index: f64,
    pub seed: u64,
}

impl Default for RoughnessConfig {
    fn default() -> Self {
        RoughnessConfig {
            directions: 10,
            half_width: 0.01,
            intervals: 19,
            max_index: 10.0,
            seed: 0,
        }
    }
}

impl RoughnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.directions < 2 {
            return Err(Error::config(format!(
                "roughness needs at least 2 directions, got {}",
                self.directions
            )));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::config(format!(
                "projection half-width must be positive, got {}",
                self.half_width
            )));
        }
        if self.intervals < 1 {
            return Err(Error::config("projection grid needs at least one interval"));
        }
        if self.max_index.is_nan() || self.max_index <= 0.0 {
            return Err(Error::config(format!(
                "roughness clip ceiling must be positive, got {}",
                self.max_index
            )));
        }
        Ok(())
    }

    /// Loss evaluations needed for one index: `M * (m + 1)`.
    pub fn loss_evals(&self) -> usize {
        self.directions * (self.intervals + 1)
    }
}

/// Grid offset `s_j = -l + j * 2l/m`.
pub fn grid_point(j: usize, half_width: f64, intervals: usize) -> f64 {
    -half_width + j as f64 * (2.0 * half_width / intervals as f64)
}

/// A loss profile sampled on the `m + 1` grid points of `[-l, l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    values: Vec<f64>,
    half_width: f64,
}

impl Profile {
    pub fn new(values: Vec<f64>, half_width: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::config("a profile needs at least two grid points"));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::config("profile half-width must be positive"));
        }
        if let Some((j, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let s = grid_point(j, half_width, values.len() - 1);
            return Err(Error::NonFiniteLoss { s, value: v });
        }
        Ok(Profile { values, half_width })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    /// `max - min` of the sampled values.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self.min_max();
        hi - lo
    }

    fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Draw a direction from `N(0, I)` and scale it to unit Euclidean norm.
pub fn sample_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ParamVector {
    assert!(dim >= 1, "direction dimension must be positive");
    loop {
        let mut d: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            d.iter_mut().for_each(|v| *v /= norm);
            return ParamVector::from_vec(d);
        }
    }
}

/// Sample `loss_at(w_t + s_j d)` on the grid. Exactly `m + 1` evaluations.
pub fn project_profile<F>(
    mut loss_at: F,
    w_t: &ParamVector,
    d: &ParamVector,
    half_width: f64,
    intervals: usize,
) -> Result<Profile>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if half_width.is_nan() || half_width <= 0.0 || intervals < 1 {
        return Err(Error::config("projection needs l > 0 and m >= 1"));
    }
    w_t.check_dim(d, "projection direction")?;
    let mut probe = w_t.clone();
    let mut values = Vec::with_capacity(intervals + 1);
    for j in 0..=intervals {
        let s = grid_point(j, half_width, intervals);
        for ((p, &w), &dv) in probe
            .as_mut_slice()
            .iter_mut()
            .zip(w_t.as_slice())
            .zip(d.as_slice())
        {
            *p = w + s * dv;
        }
        let v = loss_at(&probe)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { s, value: v });
        }
        values.push(v);
    }
    Profile::new(values, half_width)
}

/// Discrete total variation `sum_j |p[j+1] - p[j]|`.
pub fn total_variation(p: &Profile) -> f64 {
    p.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Total variation normalised by `2l` and by the profile's range.
pub fn normalized_tv(p: &Profile) -> f64 {
    let floor = 1.0 / (2.0 * p.half_width);
    let (lo, hi) = p.min_max();
    let range = hi - lo;
    if range < 1e-12 * hi.abs().max(1.0) {
        return floor;
    }
    // Rounding can leave TV a hair below the range for monotone profiles.
    (total_variation(p) / (2.0 * p.half_width * range)).max(floor)
}

/// Result of one roughness-index computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoughnessReport {
    /// Normalised total variation per direction, in sampling order.
    pub per_direction_t: Vec<f64>,
    pub mean_t: f64,
    pub std_t: f64,
    pub ri_raw: f64,
    pub ri_clipped: f64,
    pub loss_evals: usize,
}

/// Roughness index of `loss_at` around `w_t`.
///
/// Directions come from a generator seeded with `cfg.seed`. `T` values are
/// reduced in direction order.
pub fn roughness_index<F>(mut loss_at: F, w_t: &ParamVector, cfg: &RoughnessConfig) -> Result<RoughnessReport>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    cfg.validate()?;
    if w_t.dim() == 0 {
        return Err(Error::config("cannot probe a zero-dimensional landscape"));
    }
    let mut rng = seed::rng_from(cfg.seed);
    let mut per_direction_t = Vec::with_capacity(cfg.directions);
    let mut loss_evals = 0;
    for _ in 0..cfg.directions {
        let d = sample_direction(&mut rng, w_t.dim());
        let profile = project_profile(
            |w| {
                loss_evals += 1;
                loss_at(w)
            },
            w_t,
            &d,
            cfg.half_width,
            cfg.intervals,
        )?;
        per_direction_t.push(normalized_tv(&profile));
    }
    let m = per_direction_t.len() as f64;
    let mean_t = per_direction_t.iter().sum::<f64>() / m;
    let var = per_direction_t
        .iter()
        .map(|t| (t - mean_t) * (t - mean_t))
        .sum::<f64>()
        / m;
    let std_t = var.sqrt();
    let ri_raw = std_t / mean_t;
    Ok(RoughnessReport {
        per_direction_t,
        mean_t,
        std_t,
        ri_raw,
        ri_clipped: ri_raw.min(cfg.max_index),
        loss_evals,
    })
}

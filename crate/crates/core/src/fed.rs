//! Client sampling, local update rules and server aggregation.
//!
//! Every sampled client starts from the round's global model `w_t` and runs
//! `E` epochs of minibatch SGD over its shard. The algorithms differ only in
//! the direction used for each step:
//!
//! | algorithm   | step direction                                    |
//! |-------------|---------------------------------------------------|
//! | FedAvg      | `g`                                               |
//! | RI-FedAvg   | `g + 2 λ I_k (w - w_t)`                           |
//! | FedProx     | `g + μ (w - w_t)`                                 |
//! | SCAFFOLD    | `g - c_k + c`                                     |
//! | FedDyn      | `g - h_k + α (w - w_t)`                           |
//! | DP-FedAvg   | `g`, then the update `w - w_t` is clipped and noised |
//!
//! For RI-FedAvg the roughness index `I_k` is computed once per client per
//! round, at `w_t`, before any local step.
//!
//! The server forms `sum_k (n_k / n_t) w_k` over the sampled clients in
//! ascending client-id order. SCAFFOLD additionally moves its global control
//! variate by `(1/K) sum_k Δc_k`; FedDyn keeps a drift accumulator `h` and
//! subtracts `h / α` from the averaged model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{self, ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::model::{Batch, Objective, ParamVector};
use crate::roughness::{self, RoughnessConfig, RoughnessReport};
use crate::seed::{self, Stream};

/// Where RI-FedAvg gets `I_k` from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiSource {
    /// Probe the loss over the client's whole shard.
    FullShard,
    /// Probe the loss over a fixed random subset of the shard.
    Minibatch(usize),
    /// Skip the probe and use this value (still clipped at `I_max`).
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    FedAvg,
    RiFedAvg {
        lambda: f64,
        roughness: RoughnessConfig,
        source: RiSource,
    },
    FedProx {
        mu: f64,
    },
    Scaffold,
    FedDyn {
        alpha: f64,
    },
    DpFedAvg {
        clip: f64,
        sigma: f64,
    },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::RiFedAvg { .. } => "ri_fedavg",
            Algorithm::FedProx { .. } => "fedprox",
            Algorithm::Scaffold => "scaffold",
            Algorithm::FedDyn { .. } => "feddyn",
            Algorithm::DpFedAvg { .. } => "dp_fedavg",
        }
    }

    /// RI-FedAvg with the default roughness settings and `λ = 0.1`.
    pub fn ri_fedavg_default() -> Self {
        Algorithm::RiFedAvg {
            lambda: 0.1,
            roughness: RoughnessConfig::default(),
            source: RiSource::FullShard,
        }
    }
}

/// Local-training hyperparameters shared by all algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub algorithm: Algorithm,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be finite and >= 0, got {v}")))
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        positive("learning rate", self.eta)?;
        if self.epochs == 0 {
            return Err(Error::config("local epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        match &self.algorithm {
            Algorithm::FedAvg | Algorithm::Scaffold => {}
            Algorithm::RiFedAvg {
                lambda,
                roughness,
                source,
            } => {
                non_negative("lambda", *lambda)?;
                roughness.validate()?;
                match source {
                    RiSource::FullShard => {}
                    RiSource::Minibatch(0) => return Err(Error::config("roughness minibatch must be >= 1")),
                    RiSource::Minibatch(_) => {}
                    RiSource::Fixed(v) => non_negative("fixed roughness index", *v)?,
                }
            }
            Algorithm::FedProx { mu } => non_negative("mu", *mu)?,
            Algorithm::FedDyn { alpha } => positive("feddyn alpha", *alpha)?,
            Algorithm::DpFedAvg { clip, sigma } => {
                if clip.is_nan() || *clip <= 0.0 {
                    return Err(Error::config(format!("dp clip must be > 0, got {clip}")));
                }
                non_negative("dp sigma", *sigma)?;
            }
        }
        Ok(())
    }
}

/// Server-side state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global: ParamVector,
    pub round: usize,
    /// SCAFFOLD global control variate.
    pub scaffold_c: Option<ParamVector>,
    /// FedDyn server drift accumulator.
    pub feddyn_h: Option<ParamVector>,
}

impl ServerState {
    pub fn new(global: ParamVector, algorithm: &Algorithm) -> Self {
        let dim = global.dim();
        ServerState {
            scaffold_c: matches!(algorithm, Algorithm::Scaffold).then(|| ParamVector::zeros(dim)),
            feddyn_h: matches!(algorithm, Algorithm::FedDyn { .. }).then(|| ParamVector::zeros(dim)),
            global,
            round: 0,
        }
    }

    /// Fold one round of client results into the server state.
    pub fn apply(&mut self, updates: &[LocalUpdate], total_clients: usize, algorithm: &Algorithm) -> Result<()> {
        let mut next = aggregate(updates)?;
        let mut ordered: Vec<&LocalUpdate> = updates.iter().collect();
        ordered.sort_by_key(|u| u.client_id);
        let inv_k = 1.0 / total_clients as f64;
        match algorithm {
            Algorithm::Scaffold => {
                let c = self.scaffold_c.get_or_insert_with(|| ParamVector::zeros(next.dim()));
                for u in &ordered {
                    if let Some(dc) = &u.scaffold_delta_c {
                        c.add_scaled(dc, inv_k)?;
                    }
                }
            }
            Algorithm::FedDyn { alpha } => {
                let h = self.feddyn_h.get_or_insert_with(|| ParamVector::zeros(next.dim()));
                for u in &ordered {
                    let delta = u.client_params.sub(&self.global)?;
                    h.add_scaled(&delta, -alpha * inv_k)?;
                }
                next.add_scaled(h, -1.0 / alpha)?;
            }
            _ => {}
        }
        if !next.is_finite() {
            return Err(Error::ServerDivergence { round: self.round });
        }
        self.global = next;
        self.round += 1;
        Ok(())
    }
}

/// Per-client state that survives across rounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientState {
    /// SCAFFOLD local control variate `c_k`.
    pub scaffold_c: Option<ParamVector>,
    /// FedDyn local gradient accumulator `h_k`.
    pub feddyn_grad: Option<ParamVector>,
}

impl ClientState {
    pub fn new(dim: usize, algorithm: &Algorithm) -> Self {
        ClientState {
            scaffold_c: matches!(algorithm, Algorithm::Scaffold).then(|| ParamVector::zeros(dim)),
            feddyn_grad: matches!(algorithm, Algorithm::FedDyn { .. }).then(|| ParamVector::zeros(dim)),
        }
    }
}

/// Identifies one client's work inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientContext {
    pub client_id: usize,
    pub round: usize,
    /// Master seed of the run; per-client streams are derived from it.
    pub seed: u64,
}

/// What a client sends back after local training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalUpdate {
    pub client_id: usize,
    pub client_params: ParamVector,
    pub n_k: usize,
    /// `||w_{t+1,k} - w_t||^2` of the parameters actually sent.
    pub drift_sq: f64,
    /// Clipped roughness index used in the round (RI-FedAvg only).
    pub ri: Option<f64>,
    pub roughness: Option<RoughnessReport>,
    /// Loss evaluations spent on roughness probing.
    pub loss_evals: usize,
    /// Local SGD steps taken.
    pub steps: usize,
    /// Client state to keep for the next round.
    pub state: ClientState,
    /// SCAFFOLD control-variate change `c_k^+ - c_k`.
    pub scaffold_delta_c: Option<ParamVector>,
}

/// Sorted ids of the `max(floor(C K), 1)` clients sampled in `round`.
pub fn sample_clients(total_clients: usize, fraction: f64, round: usize, seed: u64) -> Vec<usize> {
    assert!(total_clients >= 1, "need at least one client");
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1]");
    // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
    let count = ((fraction * total_clients as f64 + 1e-9).floor() as usize).clamp(1, total_clients);
    let mut rng = seed::derived_rng(seed, Stream::ClientSampling, &[round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, total_clients, count).into_vec();
    ids.sort_unstable();
    ids
}

/// Gradient of the roughness-regularised local loss:
/// `grad_F + 2 λ I_k (w - w_t)`.
pub fn ri_regularized_gradient(
    grad_f: &ParamVector,
    w: &ParamVector,
    w_t: &ParamVector,
    lambda: f64,
    ri: f64,
) -> Result<ParamVector> {
    grad_f.check_dim(w, "regularised gradient")?;
    grad_f.check_dim(w_t, "regularised gradient anchor")?;
    let coef = 2.0 * lambda * ri;
    let mut out = grad_f.clone();
    if coef != 0.0 {
        for ((g, &wi), &ai) in out.as_mut_slice().iter_mut().zip(w.as_slice()).zip(w_t.as_slice()) {
            *g += coef * (wi - ai);
        }
    }
    Ok(out)
}

/// Clip `delta` to norm `clip`, then add `N(0, (sigma * clip)^2 I)` noise.
pub fn dp_privatize<R: Rng + ?Sized>(delta: &ParamVector, clip: f64, sigma: f64, rng: &mut R) -> Result<ParamVector> {
    if clip.is_nan() || clip <= 0.0 {
        return Err(Error::config(format!("dp clip must be > 0, got {clip}")));
    }
    non_negative("dp sigma", sigma)?;
    let norm = delta.norm();
    let mut out = delta.clone();
    if norm > clip {
        out.scale(clip / norm);
    }
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma * clip).map_err(|e| Error::config(e.to_string()))?;
        for v in out.as_mut_slice() {
            *v += noise.sample(rng);
        }
    }
    Ok(out)
}

/// Sample-size weighted mean of client parameters, summed in ascending
/// client-id order.
pub fn aggregate(updates: &[LocalUpdate]) -> Result<ParamVector> {
    let first = updates.first().ok_or(Error::EmptyAggregation)?;
    let mut ordered: Vec<&LocalUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    let n_t: usize = ordered.iter().map(|u| u.n_k).sum();
    if n_t == 0 {
        return Err(Error::config("client updates carry no samples"));
    }
    let mut acc = ParamVector::zeros(first.client_params.dim());
    for u in ordered {
        acc.add_scaled(&u.client_params, u.n_k as f64 / n_t as f64)?;
    }
    Ok(acc)
}

/// Roughness index of a client's local loss at `global`, with directions
/// seeded from the client's `(round, client)` coordinates.
pub fn client_roughness<O: Objective + ?Sized>(
    objective: &O,
    global: &ParamVector,
    shard: &ClientShard,
    data: &Dataset,
    cfg: &RoughnessConfig,
    source: RiSource,
    ctx: &ClientContext,
) -> Result<RoughnessReport> {
    let coords = [ctx.round as u64, ctx.client_id as u64];
    let cfg = RoughnessConfig {
        seed: seed::derive(ctx.seed, Stream::Roughness, &coords),
        ..*cfg
    };
    let probe: Batch = match source {
        RiSource::Minibatch(size) if size < shard.n_k() => {
            let mut rng = seed::derived_rng(ctx.seed, Stream::Roughness, &[coords[0], coords[1], 1]);
            let mut picks = rand::seq::index::sample(&mut rng, shard.n_k(), size).into_vec();
            picks.sort_unstable();
            let rows: Vec<usize> = picks.into_iter().map(|i| shard.indices[i]).collect();
            data.gather(&rows)?
        }
        _ => data.gather(&shard.indices)?,
    };
    roughness::roughness_index(|w| objective.loss(w, &probe), global, &cfg)
}

/// Run one client's local training for the configured algorithm.
#[allow(clippy::too_many_arguments)]
pub fn local_update<O: Objective + ?Sized>(
    objective: &O,
    global: &ParamVector,
    shard: &ClientShard,
    data: &Dataset,
    cfg: &AlgoConfig,
    state: &ClientState,
    server: &ServerState,
    ctx: ClientContext,
) -> Result<LocalUpdate> {
    if global.dim() != objective.dim() {
        return Err(Error::dims("global model", objective.dim(), global.dim()));
    }
    let dim = global.dim();
    let mut rng = seed::derived_rng(ctx.seed, Stream::ClientTraining, &[ctx.round as u64, ctx.client_id as u64]);
    let mut next_state = state.clone();

    let mut report = None;
    let mut ri = None;
    // Coefficient of the pull toward w_t, and the constant drift correction.
    let mut pull = 0.0;
    let mut correction: Option<ParamVector> = None;
    match &cfg.algorithm {
        Algorithm::FedAvg | Algorithm::DpFedAvg { .. } => {}
        Algorithm::RiFedAvg {
            lambda,
            roughness: rcfg,
            source,
        } => {
            let index = match source {
                RiSource::Fixed(v) => v.min(rcfg.max_index),
                _ => {
                    let r = client_roughness(objective, global, shard, data, rcfg, *source, &ctx)?;
                    let clipped = r.ri_clipped;
                    report = Some(r);
                    clipped
                }
            };
            ri = Some(index);
            pull = 2.0 * lambda * index;
        }
        Algorithm::FedProx { mu } => pull = *mu,
        Algorithm::Scaffold => {
            let c = server.scaffold_c.clone().unwrap_or_else(|| ParamVector::zeros(dim));
            let c_k = state.scaffold_c.clone().unwrap_or_else(|| ParamVector::zeros(dim));
            correction = Some(c.sub(&c_k)?);
        }
        Algorithm::FedDyn { alpha } => {
            pull = *alpha;
            let mut h_k = state.feddyn_grad.clone().unwrap_or_else(|| ParamVector::zeros(dim));
            h_k.scale(-1.0);
            correction = Some(h_k);
        }
    }

    let diverged = || Error::Divergence {
        client: ctx.client_id,
        round: ctx.round,
    };
    let mut w = global.clone();
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        let epoch_seed: u64 = rng.random();
        for batch in data::batches(shard, data, cfg.batch_size, epoch_seed)? {
            let mut g = objective.grad(&w, &batch)?;
            if pull != 0.0 {
                for ((gi, &wi), &ai) in g.as_mut_slice().iter_mut().zip(w.as_slice()).zip(global.as_slice()) {
                    *gi += pull * (wi - ai);
                }
            }
            if let Some(corr) = &correction {
                for (gi, &ci) in g.as_mut_slice().iter_mut().zip(corr.as_slice()) {
                    *gi += ci;
                }
            }
            w.add_scaled(&g, -cfg.eta)?;
            steps += 1;
        }
        if !w.is_finite() {
            return Err(diverged());
        }
    }

    let mut scaffold_delta_c = None;
    match &cfg.algorithm {
        Algorithm::Scaffold => {
            let c = server.scaffold_c.clone().unwrap_or_else(|| ParamVector::zeros(dim));
            let old = state.scaffold_c.clone().unwrap_or_else(|| ParamVector::zeros(dim));
            // c_k+ = c_k - c + (w_t - w) / (tau * eta)
            let mut new_ck = old.sub(&c)?;
            new_ck.add_scaled(&global.sub(&w)?, 1.0 / (steps as f64 * cfg.eta))?;
            scaffold_delta_c = Some(new_ck.sub(&old)?);
            next_state.scaffold_c = Some(new_ck);
        }
        Algorithm::FedDyn { alpha } => {
            let mut h_k = state.feddyn_grad.clone().unwrap_or_else(|| ParamVector::zeros(dim));
            h_k.add_scaled(&w.sub(global)?, -alpha)?;
            next_state.feddyn_grad = Some(h_k);
        }
        Algorithm::DpFedAvg { clip, sigma } => {
            let delta = w.sub(global)?;
            let private = dp_privatize(&delta, *clip, *sigma, &mut rng)?;
            w = global.axpy(&private, 1.0)?;
            if !w.is_finite() {
                return Err(diverged());
            }
        }
        _ => {}
    }

    Ok(LocalUpdate {
        client_id: ctx.client_id,
        drift_sq: w.dist_sq(global)?,
        client_params: w,
        n_k: shard.n_k(),
        ri,
        loss_evals: report.as_ref().map_or(0, |r| r.loss_evals),
        roughness: report,
        steps,
        state: next_state,
        scaffold_delta_c,
    })
}

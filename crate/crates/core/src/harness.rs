//! The outer round loop, evaluation and multi-seed replication.
//!
//! Each round the server samples clients, every sampled client runs its local
//! update (possibly on a worker thread), and the results are folded back in
//! ascending client-id order. Metrics for round `t` describe the model the
//! round started from, `w_t`; the model left after the last round is
//! evaluated separately as the run's final accuracy.
//!
//! Replicate `s` of an experiment (0-based) runs with seed
//! `master_seed + s`; every random stream of that replicate (data, partition,
//! initialisation, sampling, batching, roughness directions, DP noise) is
//! derived from it through [`crate::seed`].

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::data::{self, ClientShard, Dataset, PartitionSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::fed::{self, AlgoConfig, Algorithm, ClientContext, ClientState, LocalUpdate, RiSource, ServerState};
use crate::idx;
use crate::model::{Batch, LossModel, Objective, ParamVector};
use crate::roughness::RoughnessConfig;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Gaussian class clusters; a separate test set is drawn from the same
    /// distribution.
    Synthetic {
        num_classes: usize,
        dim: usize,
        n_train: usize,
        n_test: usize,
        noise: f64,
    },
    /// The four standard MNIST IDX files inside `dir`.
    Mnist {
        dir: PathBuf,
        train_subset: Option<usize>,
        test_subset: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Logistic,
    Mlp { hidden: Vec<usize> },
}

impl ModelSpec {
    pub fn build(&self, input: usize, num_classes: usize) -> Result<LossModel> {
        match self {
            ModelSpec::Logistic => LossModel::logistic(input, num_classes),
            ModelSpec::Mlp { hidden } => LossModel::mlp(input, hidden, num_classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model: ModelSpec,
    pub algo: AlgoConfig,
    /// Number of clients `K`.
    pub clients: usize,
    /// Participation fraction `C`.
    pub fraction: f64,
    /// Dirichlet concentration of the label skew.
    pub alpha: f64,
    /// Communication rounds `T`.
    pub rounds: usize,
    pub eval_every: usize,
    pub master_seed: u64,
    /// Number of replicates.
    pub seeds: usize,
    /// Measure round wall time. Off by default so that metrics files are
    /// byte-identical across repeated runs.
    pub record_wall_time: bool,
    /// When set, the roughness index of every sampled client is computed
    /// each round with these settings even if the algorithm does not use it.
    pub roughness_probe: Option<RoughnessConfig>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config(format!("fraction must lie in (0, 1], got {}", self.fraction)));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be >= 1"));
        }
        if self.clients == 0 {
            return Err(Error::config("clients must be >= 1"));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds must be >= 1"));
        }
        PartitionSpec {
            clients: self.clients,
            alpha: self.alpha,
            seed: 0,
        }
        .validate()?;
        self.algo.validate()?;
        if let DataSource::Synthetic {
            num_classes,
            dim,
            n_train,
            n_test,
            noise,
        } = &self.data
        {
            if *num_classes < 2 || *dim == 0 || *n_train == 0 || *n_test == 0 {
                return Err(Error::config("synthetic data needs >= 2 classes and positive dim/sizes"));
            }
            if !(*noise >= 0.0 && noise.is_finite()) {
                return Err(Error::config("synthetic noise must be finite and >= 0"));
            }
        }
        if let Some(probe) = &self.roughness_probe {
            probe.validate()?;
        }
        Ok(())
    }

    /// Seed of replicate `s`.
    pub fn replicate_seed(&self, s: usize) -> u64 {
        self.master_seed.wrapping_add(s as u64)
    }
}

/// Everything a run needs besides the algorithm: model, data and shards.
#[derive(Debug, Clone)]
pub struct Federation {
    pub model: LossModel,
    pub train: Dataset,
    pub test: Dataset,
    pub test_batch: Batch,
    pub shards: Vec<ClientShard>,
}

impl Federation {
    pub fn prepare(cfg: &ExperimentConfig, run_seed: u64) -> Result<Self> {
        let (train, test) = match &cfg.data {
            DataSource::Synthetic {
                num_classes,
                dim,
                n_train,
                n_test,
                noise,
            } => {
                let spec = |n, stream| SyntheticSpec {
                    num_classes: *num_classes,
                    dim: *dim,
                    n,
                    noise: *noise,
                    seed: seed::derive(run_seed, stream, &[]),
                };
                (
                    data::make_synthetic(&spec(*n_train, Stream::TrainData))?,
                    data::make_synthetic(&spec(*n_test, Stream::TestData))?,
                )
            }
            DataSource::Mnist {
                dir,
                train_subset,
                test_subset,
            } => {
                let [tri, trl, tei, tel] = idx::mnist_paths(dir);
                (
                    idx::load_mnist(tri, trl, *train_subset)?,
                    idx::load_mnist(tei, tel, *test_subset)?,
                )
            }
        };
        let shards = data::dirichlet_partition(
            &train,
            &PartitionSpec {
                clients: cfg.clients,
                alpha: cfg.alpha,
                seed: seed::derive(run_seed, Stream::Partition, &[]),
            },
        )?;
        let model = cfg.model.build(train.width(), train.num_classes())?;
        Ok(Federation {
            model,
            test_batch: test.to_batch(),
            train,
            test,
            shards,
        })
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    /// Mean over sampled clients of `||w_{t+1,k} - w_t||^2`.
    pub mean_drift_sq: f64,
    /// Mean clipped roughness index (RI-FedAvg only).
    pub mean_ri: Option<f64>,
    /// Squared norm of the full test-loss gradient at `w_t`. A diagnostic
    /// stand-in for the population gradient, not a bound.
    pub grad_norm_sq: Option<f64>,
    pub wall_seconds: Option<f64>,
    /// Sampled client ids, ascending.
    pub clients: Vec<usize>,
    /// Roughness index per sampled client, parallel to `clients`; empty when
    /// nothing was probed.
    pub client_ri: Vec<f64>,
}

/// Arg-max accuracy (ties to the smaller class) and mean loss.
pub fn evaluate(params: &ParamVector, model: &LossModel, test: &Batch) -> Result<(f64, f64)> {
    let predictions = model.predict(params, test)?;
    let correct = predictions.iter().zip(test.labels()).filter(|(p, y)| p == y).count();
    let loss = model.loss(params, test)?;
    Ok((correct as f64 / test.rows() as f64, loss))
}

/// Round index of the first evaluated row with accuracy `>= threshold`.
pub fn rounds_to_threshold(metrics: &[RoundMetrics], threshold: f64) -> Option<usize> {
    assert!(threshold > 0.0 && threshold < 1.0, "threshold must lie in (0, 1)");
    metrics
        .iter()
        .find(|m| m.test_accuracy.is_some_and(|a| a >= threshold))
        .map(|m| m.round)
}

/// "Never" when the threshold was not reached.
pub fn format_rounds(r: Option<usize>) -> String {
    r.map_or_else(|| "Never".to_string(), |t| t.to_string())
}

/// A single replicate in progress.
pub struct Simulation<'a> {
    cfg: &'a ExperimentConfig,
    fed: Federation,
    seed: u64,
    server: ServerState,
    clients: Vec<ClientState>,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a ExperimentConfig, run_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let fed = Federation::prepare(cfg, run_seed)?;
        Self::with_federation(cfg, fed, run_seed)
    }

    /// Start from an already prepared federation.
    pub fn with_federation(cfg: &'a ExperimentConfig, fed: Federation, run_seed: u64) -> Result<Self> {
        let init = fed
            .model
            .init_params(&mut seed::derived_rng(run_seed, Stream::ModelInit, &[]));
        let dim = init.dim();
        Ok(Simulation {
            cfg,
            server: ServerState::new(init, &cfg.algo.algorithm),
            clients: (0..fed.shards.len())
                .map(|_| ClientState::new(dim, &cfg.algo.algorithm))
                .collect(),
            fed,
            seed: run_seed,
        })
    }

    pub fn federation(&self) -> &Federation {
        &self.fed
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn global(&self) -> &ParamVector {
        &self.server.global
    }

    fn client_work(&self, id: usize) -> Result<(LocalUpdate, Option<f64>)> {
        let ctx = ClientContext {
            client_id: id,
            round: self.server.round,
            seed: self.seed,
        };
        let upd = fed::local_update(
            &self.fed.model,
            &self.server.global,
            &self.fed.shards[id],
            &self.fed.train,
            &self.cfg.algo,
            &self.clients[id],
            &self.server,
            ctx,
        )?;
        let probed = match (&self.cfg.algo.algorithm, upd.ri) {
            (_, Some(ri)) => Some(ri),
            (Algorithm::RiFedAvg { .. }, None) => None,
            (_, None) if self.cfg.roughness_probe.is_some() => {
                let rcfg = self.cfg.roughness_probe.as_ref().expect("checked above");
                let r = fed::client_roughness(
                    &self.fed.model,
                    &self.server.global,
                    &self.fed.shards[id],
                    &self.fed.train,
                    rcfg,
                    RiSource::FullShard,
                    &ctx,
                )?;
                Some(r.ri_clipped)
            }
            _ => None,
        };
        Ok((upd, probed))
    }

    /// Sample, train, aggregate; returns the metrics of the round.
    pub fn run_round(&mut self, pool: Option<&ThreadPool>) -> Result<RoundMetrics> {
        let started = Instant::now();
        let t = self.server.round;
        let (test_accuracy, test_loss, grad_norm_sq) = if t.is_multiple_of(self.cfg.eval_every) {
            let (acc, loss) = evaluate(&self.server.global, &self.fed.model, &self.fed.test_batch)?;
            let g = self.fed.model.grad(&self.server.global, &self.fed.test_batch)?;
            (Some(acc), Some(loss), Some(g.norm_sq()))
        } else {
            (None, None, None)
        };

        let sampled = fed::sample_clients(self.cfg.clients, self.cfg.fraction, t, self.seed);
        let work = || -> Result<Vec<(LocalUpdate, Option<f64>)>> {
            sampled.par_iter().map(|&id| self.client_work(id)).collect()
        };
        let results = match pool {
            Some(p) => p.install(work)?,
            None => work()?,
        };
        let (updates, probes): (Vec<LocalUpdate>, Vec<Option<f64>>) = results.into_iter().unzip();

        let n = updates.len() as f64;
        let mean_drift_sq = updates.iter().map(|u| u.drift_sq).sum::<f64>() / n;
        let mean_ri = match self.cfg.algo.algorithm {
            Algorithm::RiFedAvg { .. } => Some(updates.iter().map(|u| u.ri.unwrap_or(0.0)).sum::<f64>() / n),
            _ => None,
        };
        let client_ri: Vec<f64> = probes.iter().flatten().copied().collect();
        let client_ri = if client_ri.len() == updates.len() {
            client_ri
        } else {
            Vec::new()
        };

        self.server.apply(&updates, self.cfg.clients, &self.cfg.algo.algorithm)?;
        for u in updates {
            self.clients[u.client_id] = u.state;
        }

        Ok(RoundMetrics {
            round: t,
            test_accuracy,
            test_loss,
            mean_drift_sq,
            mean_ri,
            grad_norm_sq,
            wall_seconds: self.cfg.record_wall_time.then(|| started.elapsed().as_secs_f64()),
            clients: sampled,
            client_ri,
        })
    }

    /// Accuracy and loss of the current global model.
    pub fn evaluate_global(&self) -> Result<(f64, f64)> {
        evaluate(&self.server.global, &self.fed.model, &self.fed.test_batch)
    }
}

/// Metrics of one replicate plus the evaluation of its final model `w_T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub seed: u64,
    pub metrics: Vec<RoundMetrics>,
    pub final_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub runs: Vec<RunOutput>,
    /// Per-round arithmetic means over replicates.
    pub mean: Vec<RoundMetrics>,
}

impl ExperimentOutput {
    pub fn mean_final_accuracy(&self) -> f64 {
        self.runs.iter().map(|r| r.final_accuracy).sum::<f64>() / self.runs.len() as f64
    }
}

/// Worker pool capped at `threads` (all cores when `None`).
pub fn build_pool(threads: Option<usize>) -> Result<ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::ThreadPool(e.to_string()))
}

pub fn run_single(cfg: &ExperimentConfig, run_seed: u64, pool: Option<&ThreadPool>) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg, run_seed)?;
    let mut metrics = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        metrics.push(sim.run_round(pool)?);
    }
    let (final_accuracy, final_loss) = sim.evaluate_global()?;
    Ok(RunOutput {
        seed: run_seed,
        metrics,
        final_accuracy,
        final_loss,
    })
}

/// Run every replicate of `cfg` and build the mean table.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = build_pool(threads)?;
    let runs = (0..cfg.seeds)
        .map(|s| run_single(cfg, cfg.replicate_seed(s), Some(&pool)))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_rows(&runs);
    Ok(ExperimentOutput { runs, mean })
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v?;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Per-round arithmetic means over replicates. A column is absent in the mean
/// row if it is absent in any replicate.
pub fn mean_rows(runs: &[RunOutput]) -> Vec<RoundMetrics> {
    let rounds = runs.iter().map(|r| r.metrics.len()).min().unwrap_or(0);
    let n = runs.len() as f64;
    (0..rounds)
        .map(|t| {
            let rows = || runs.iter().map(move |r| &r.metrics[t]);
            RoundMetrics {
                round: t,
                test_accuracy: mean_opt(rows().map(|m| m.test_accuracy)),
                test_loss: mean_opt(rows().map(|m| m.test_loss)),
                mean_drift_sq: rows().map(|m| m.mean_drift_sq).sum::<f64>() / n,
                mean_ri: mean_opt(rows().map(|m| m.mean_ri)),
                grad_norm_sq: mean_opt(rows().map(|m| m.grad_norm_sq)),
                wall_seconds: mean_opt(rows().map(|m| m.wall_seconds)),
                clients: Vec::new(),
                client_ri: Vec::new(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize, acc: f64) -> RoundMetrics {
        RoundMetrics {
            round,
            test_accuracy: Some(acc),
            test_loss: Some(1.0),
            mean_drift_sq: 0.0,
            mean_ri: None,
            grad_norm_sq: Some(0.0),
            wall_seconds: None,
            clients: vec![],
            client_ri: vec![],
        }
    }

    #[test]
    fn threshold_examples() {
        let m = vec![row(0, 0.2), row(1, 0.4), row(2, 0.6)];
        assert_eq!(rounds_to_threshold(&m, 0.5), Some(2));
        let low = vec![row(0, 0.2), row(1, 0.3)];
        assert_eq!(rounds_to_threshold(&low, 0.5), None);
        assert_eq!(format_rounds(None), "Never");
        assert_eq!(format_rounds(Some(18)), "18");
    }

    #[test]
    #[should_panic]
    fn threshold_zero_is_rejected() {
        rounds_to_threshold(&[], 0.0);
    }

    #[test]
    fn evaluate_counts_correct_predictions() {
        // 3-class logistic with weights that make feature k vote for class k.
        let model = LossModel::logistic(3, 3).unwrap();
        let mut p = ParamVector::zeros(model.param_dim());
        for k in 0..3 {
            p.as_mut_slice()[k * 3 + k] = 1.0;
        }
        let feats = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let batch = Batch::new(feats.clone(), vec![0, 1, 2, 0], 3).unwrap();
        assert_eq!(evaluate(&p, &model, &batch).unwrap().0, 1.0);
        let batch = Batch::new(feats, vec![0, 1, 2, 2], 3).unwrap();
        assert_eq!(evaluate(&p, &model, &batch).unwrap().0, 0.75);
    }

    #[test]
    fn uniform_logits_predict_class_zero() {
        let model = LossModel::logistic(4, 10).unwrap();
        let batch = Batch::new(vec![0.5; 8], vec![3, 7], 4).unwrap();
        let p = ParamVector::zeros(model.param_dim());
        assert_eq!(model.predict(&p, &batch).unwrap(), vec![0, 0]);
        assert_eq!(evaluate(&p, &model, &batch).unwrap().0, 0.0);
    }
}

//! Experiment configuration files.
//!
//! A config is a TOML document. Every key is optional; missing keys take the
//! defaults below and unknown keys are an error. The fully resolved document
//! is written back next to the outputs as `resolved_config.toml`.
//!
//! ```toml
//! rounds = 30            # communication rounds T
//! clients = 10           # K
//! fraction = 0.5         # C, in (0, 1]
//! alpha = 0.1            # Dirichlet concentration of the label skew
//! eval_every = 1
//! master_seed = 0
//! seeds = 3              # replicates; replicate s uses master_seed + s
//! threshold = 0.5        # accuracy level for rounds-to-threshold
//! record_wall_time = false
//!
//! [data]
//! kind = "synthetic"     # or "mnist" with dir, train_subset, test_subset
//! num_classes = 10
//! dim = 20
//! n_train = 5000
//! n_test = 1000
//! noise = 1.0
//!
//! [model]
//! kind = "logistic"      # or "mlp" with hidden = [128]
//!
//! [train]
//! algorithm = "ri_fedavg"  # fedavg | ri_fedavg | fedprox | scaffold | feddyn | dp_fedavg
//! eta = 0.01
//! epochs = 5
//! batch_size = 64
//! lambda = 0.1           # ri_fedavg
//! ri_source = "full_shard"  # or "minibatch" (uses ri_minibatch rows)
//! ri_minibatch = 256
//! mu = 0.01              # fedprox
//! feddyn_alpha = 0.01    # feddyn
//! dp_clip = 1.0          # dp_fedavg
//! dp_sigma = 0.5
//!
//! [roughness]
//! directions = 10        # M
//! half_width = 0.01      # l
//! intervals = 19         # m
//! max_index = 10.0       # I_max
//! probe = false          # also record the index for algorithms that ignore it
//!
//! [sweep]                # grid axes for `fedrough sweep`; omitted axes stay fixed
//! directions = [5, 10, 20]
//! intervals = [19]
//! lambda = [0.1, 0.5]
//! eta = [0.01]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fedrough_core::fed::{AlgoConfig, Algorithm, RiSource};
use fedrough_core::harness::{DataSource, ExperimentConfig, ModelSpec};
use fedrough_core::roughness::RoughnessConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub rounds: usize,
    pub clients: usize,
    pub fraction: f64,
    pub alpha: f64,
    pub eval_every: usize,
    pub master_seed: u64,
    pub seeds: usize,
    pub threshold: f64,
    pub record_wall_time: bool,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub roughness: RoughnessSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            rounds: 30,
            clients: 10,
            fraction: 0.5,
            alpha: 0.1,
            eval_every: 1,
            master_seed: 0,
            seeds: 3,
            threshold: 0.5,
            record_wall_time: false,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            roughness: RoughnessSection::default(),
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSection {
    Synthetic(SyntheticSection),
    Mnist(MnistSection),
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection::Synthetic(SyntheticSection::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            num_classes: 10,
            dim: 20,
            n_train: 5000,
            n_test: 1000,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSection {
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Logistic,
            hidden: vec![128],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Fedavg,
    #[default]
    RiFedavg,
    Fedprox,
    Scaffold,
    Feddyn,
    DpFedavg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiSourceKind {
    #[default]
    FullShard,
    Minibatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub algorithm: AlgorithmKind,
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub ri_source: RiSourceKind,
    pub ri_minibatch: usize,
    pub mu: f64,
    pub feddyn_alpha: f64,
    pub dp_clip: f64,
    pub dp_sigma: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            algorithm: AlgorithmKind::RiFedavg,
            eta: 0.01,
            epochs: 5,
            batch_size: 64,
            lambda: 0.1,
            ri_source: RiSourceKind::FullShard,
            ri_minibatch: 256,
            mu: 0.01,
            feddyn_alpha: 0.01,
            dp_clip: 1.0,
            dp_sigma: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoughnessSection {
    pub directions: usize,
    pub half_width: f64,
    pub intervals: usize,
    pub max_index: f64,
    pub probe: bool,
}

impl Default for RoughnessSection {
    fn default() -> Self {
        let d = RoughnessConfig::default();
        RoughnessSection {
            directions: d.directions,
            half_width: d.half_width,
            intervals: d.intervals,
            max_index: d.max_index,
            probe: false,
        }
    }
}

impl RoughnessSection {
    pub fn to_core(&self) -> RoughnessConfig {
        RoughnessConfig {
            directions: self.directions,
            half_width: self.half_width,
            intervals: self.intervals,
            max_index: self.max_index,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub directions: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub intervals: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eta: Vec<f64>,
}

/// One combination of the sweep axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub directions: usize,
    pub intervals: usize,
    pub lambda: f64,
    pub eta: f64,
}

impl GridPoint {
    pub fn label(&self) -> String {
        format!(
            "M{}_m{}_lambda{}_eta{}",
            self.directions, self.intervals, self.lambda, self.eta
        )
    }
}

impl TrainSection {
    pub fn algorithm_name(&self) -> &'static str {
        match self.algorithm {
            AlgorithmKind::Fedavg => "fedavg",
            AlgorithmKind::RiFedavg => "ri_fedavg",
            AlgorithmKind::Fedprox => "fedprox",
            AlgorithmKind::Scaffold => "scaffold",
            AlgorithmKind::Feddyn => "feddyn",
            AlgorithmKind::DpFedavg => "dp_fedavg",
        }
    }
}

impl FileConfig {
    pub fn to_experiment(&self) -> anyhow::Result<ExperimentConfig> {
        let t = &self.train;
        let algorithm = match t.algorithm {
            AlgorithmKind::Fedavg => Algorithm::FedAvg,
            AlgorithmKind::RiFedavg => Algorithm::RiFedAvg {
                lambda: t.lambda,
                roughness: self.roughness.to_core(),
                source: match t.ri_source {
                    RiSourceKind::FullShard => RiSource::FullShard,
                    RiSourceKind::Minibatch => RiSource::Minibatch(t.ri_minibatch),
                },
            },
            AlgorithmKind::Fedprox => Algorithm::FedProx { mu: t.mu },
            AlgorithmKind::Scaffold => Algorithm::Scaffold,
            AlgorithmKind::Feddyn => Algorithm::FedDyn { alpha: t.feddyn_alpha },
            AlgorithmKind::DpFedavg => Algorithm::DpFedAvg {
                clip: t.dp_clip,
                sigma: t.dp_sigma,
            },
        };
        let data = match &self.data {
            DataSection::Synthetic(s) => DataSource::Synthetic {
                num_classes: s.num_classes,
                dim: s.dim,
                n_train: s.n_train,
                n_test: s.n_test,
                noise: s.noise,
            },
            DataSection::Mnist(m) => DataSource::Mnist {
                dir: m.dir.clone(),
                train_subset: m.train_subset,
                test_subset: m.test_subset,
            },
        };
        let model = match self.model.kind {
            ModelKind::Logistic => ModelSpec::Logistic,
            ModelKind::Mlp => ModelSpec::Mlp {
                hidden: self.model.hidden.clone(),
            },
        };
        let cfg = ExperimentConfig {
            data,
            model,
            algo: AlgoConfig {
                eta: t.eta,
                epochs: t.epochs,
                batch_size: t.batch_size,
                algorithm,
            },
            clients: self.clients,
            fraction: self.fraction,
            alpha: self.alpha,
            rounds: self.rounds,
            eval_every: self.eval_every,
            master_seed: self.master_seed,
            seeds: self.seeds,
            record_wall_time: self.record_wall_time,
            roughness_probe: self.roughness.probe.then(|| self.roughness.to_core()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            bail!("threshold must lie in (0, 1), got {}", self.threshold);
        }
        if let ModelKind::Mlp = self.model.kind {
            if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
                bail!("mlp hidden widths must be non-empty and positive");
            }
        }
        self.roughness.to_core().validate()?;
        self.to_experiment()?;
        Ok(())
    }

    /// The sweep grid in row-major order over (directions, intervals, lambda,
    /// eta). Fails when there is no `[sweep]` section, when an axis is used
    /// with an algorithm it does not affect, or when a point is invalid.
    pub fn grid(&self) -> anyhow::Result<Vec<(GridPoint, FileConfig)>> {
        let Some(sweep) = &self.sweep else {
            bail!("sweep needs a [sweep] section");
        };
        let ri_axes = !(sweep.directions.is_empty() && sweep.intervals.is_empty() && sweep.lambda.is_empty());
        if ri_axes && self.train.algorithm != AlgorithmKind::RiFedavg {
            bail!("sweep axes directions/intervals/lambda require algorithm = \"ri_fedavg\"");
        }
        let or = |axis: &[usize], base: usize| if axis.is_empty() { vec![base] } else { axis.to_vec() };
        let orf = |axis: &[f64], base: f64| if axis.is_empty() { vec![base] } else { axis.to_vec() };
        let mut out = Vec::new();
        for &directions in &or(&sweep.directions, self.roughness.directions) {
            for &intervals in &or(&sweep.intervals, self.roughness.intervals) {
                for &lambda in &orf(&sweep.lambda, self.train.lambda) {
                    for &eta in &orf(&sweep.eta, self.train.eta) {
                        let point = GridPoint {
                            directions,
                            intervals,
                            lambda,
                            eta,
                        };
                        let mut cfg = self.clone();
                        cfg.sweep = None;
                        cfg.roughness.directions = directions;
                        cfg.roughness.intervals = intervals;
                        cfg.train.lambda = lambda;
                        cfg.train.eta = eta;
                        cfg.validate().with_context(|| format!("sweep point {}", point.label()))?;
                        out.push((point, cfg));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Strictly parse and validate a config document.
pub fn parse_config_str(text: &str) -> anyhow::Result<FileConfig> {
    let cfg: FileConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{
    generate_synth2, load_dataset, sample_dev_set, split_al_instance, AlInstance, Dataset, Format,
    GaussianMixture, SplitSizes,
};
use crate::error::{Error, Result};
use crate::goals::GoalKind;
use crate::influence::SolverConfig;
use crate::operators::LabelResolver;
use crate::strategies::{GoalContext, LoopConfig, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synth2,
    Csv { path: PathBuf },
    Libsvm { path: PathBuf },
    GaussianMixture(GaussianMixture),
    LetterLike {
        #[serde(default)]
        seed: u64,
    },
    RtPolarityLike {
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSpec {
    /// Loads or generates the labelled data. Not available for synth2,
    /// which is generated directly as an instance.
    pub fn load(&self) -> Result<Dataset<f64>> {
        match self {
            DatasetSpec::Synth2 => Err(Error::Config("synth2 is generated per seed, not loaded".into())),
            DatasetSpec::Csv { path } => load_dataset(path, Format::Csv),
            DatasetSpec::Libsvm { path } => load_dataset(path, Format::Libsvm),
            DatasetSpec::GaussianMixture(g) => Ok(g.generate()),
            DatasetSpec::LetterLike { seed } => Ok(GaussianMixture::letter_like(*seed).generate()),
            DatasetSpec::RtPolarityLike { seed } => Ok(GaussianMixture::rt_polarity_like(*seed).generate()),
        }
    }

    fn path_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            DatasetSpec::Csv { path } | DatasetSpec::Libsvm { path } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub n_init: usize,
    pub n_test: usize,
    #[serde(default = "yes")]
    pub stratify: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnlabeledSource {
    Pool,
    /// Random subset of the pool, drawn with the run seed.
    Subset { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalContextConfig {
    /// Fraction of the pool revealed as a dev set (`dev` goal).
    #[serde(default)]
    pub dev_fraction: Option<f64>,
    #[serde(default = "pool_source")]
    pub unlabeled: UnlabeledSource,
    /// Goal recorded on goal curves when the strategy has none of its own.
    #[serde(default)]
    pub track_goal: Option<GoalKind>,
}

impl Default for GoalContextConfig {
    fn default() -> Self {
        Self {
            dev_fraction: None,
            unlabeled: UnlabeledSource::Pool,
            track_goal: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            grad_tol: default_grad_tol(),
            max_iter: default_max_iter(),
            cg_tol: default_cg_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxConfig {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_approx_pool")]
    pub pool_size: usize,
    #[serde(default = "default_b")]
    pub b: usize,
    #[serde(default = "default_approx_goal")]
    pub goal: GoalKind,
    /// Held-out labelled samples for the `dev` goal.
    #[serde(default = "default_dev_size")]
    pub dev_size: usize,
    #[serde(default = "default_resolvers")]
    pub resolvers: Vec<String>,
    /// Skip the batch pass when false.
    #[serde(default = "yes")]
    pub batch: bool,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            n_train: default_n_train(),
            pool_size: default_approx_pool(),
            b: default_b(),
            goal: default_approx_goal(),
            dev_size: default_dev_size(),
            resolvers: default_resolvers(),
            batch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistConfig {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_hist_pool")]
    pub pool_size: usize,
    /// Random batches drawn per (goal, b).
    #[serde(default = "default_hist_samples")]
    pub samples: usize,
    #[serde(default = "default_hist_resolvers")]
    pub resolvers: Vec<String>,
    #[serde(default = "default_ent_sizes")]
    pub ent_batch_sizes: Vec<usize>,
    #[serde(default = "default_fir_sizes")]
    pub fir_batch_sizes: Vec<usize>,
}

impl Default for HistConfig {
    fn default() -> Self {
        Self {
            n_train: default_n_train(),
            pool_size: default_hist_pool(),
            samples: default_hist_samples(),
            resolvers: default_hist_resolvers(),
            ent_batch_sizes: default_ent_sizes(),
            fir_batch_sizes: default_fir_sizes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synth2Config {
    #[serde(default = "default_synth2_strategies")]
    pub strategies: Vec<String>,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    #[serde(default = "default_target")]
    pub target_accuracy: f64,
}

impl Default for Synth2Config {
    fn default() -> Self {
        Self {
            strategies: default_synth2_strategies(),
            dev_fraction: default_dev_fraction(),
            target_accuracy: default_target(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_b")]
    pub b: usize,
    #[serde(default)]
    pub budget: usize,
    #[serde(default = "default_c")]
    pub C: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub goal_context: GoalContextConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub approx: ApproxConfig,
    #[serde(default)]
    pub hist: HistConfig,
    #[serde(default)]
    pub synth2: Synth2Config,
}

fn yes() -> bool {
    true
}
fn pool_source() -> UnlabeledSource {
    UnlabeledSource::Pool
}
fn default_grad_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    100
}
fn default_cg_tol() -> f64 {
    1e-10
}
fn default_n_train() -> usize {
    50
}
fn default_approx_pool() -> usize {
    500
}
fn default_hist_pool() -> usize {
    200
}
fn default_hist_samples() -> usize {
    100
}
fn default_b() -> usize {
    10
}
fn default_approx_goal() -> GoalKind {
    GoalKind::Ent
}
fn default_dev_size() -> usize {
    100
}
fn default_resolvers() -> Vec<String> {
    ["oracle", "expectation:model", "expectation:uniform", "min", "max"]
        .map(String::from)
        .to_vec()
}
fn default_hist_resolvers() -> Vec<String> {
    ["expectation:model", "min", "max"].map(String::from).to_vec()
}
fn default_ent_sizes() -> Vec<usize> {
    vec![1, 5, 10]
}
fn default_fir_sizes() -> Vec<usize> {
    vec![10]
}
fn default_synth2_strategies() -> Vec<String> {
    [
        "goral:dev:oracle",
        "goral:dev:expectation:uniform",
        "goral:dev:min",
        "uncertainty",
        "random",
    ]
    .map(String::from)
    .to_vec()
}
fn default_dev_fraction() -> f64 {
    0.1
}
fn default_target() -> f64 {
    0.95
}
fn default_strategy() -> String {
    "random".into()
}
fn default_c() -> f64 {
    0.1
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    /// Minimal config around a dataset; every other field takes its default.
    pub fn new(dataset: DatasetSpec) -> Self {
        serde_json::from_value(serde_json::json!({ "dataset": dataset })).expect("defaults deserialize")
    }

    /// Reads JSON, resolving dataset paths relative to the config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if let (Some(dir), Some(p)) = (path.parent(), cfg.dataset.path_mut()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSpec::Csv { path } | DatasetSpec::Libsvm { path } = &self.dataset {
            if !path.exists() {
                return Err(Error::Config(format!("dataset file {} does not exist", path.display())));
            }
        }
        if !matches!(self.dataset, DatasetSpec::Synth2) && self.split.is_none() {
            return Err(Error::Config("`split` is required for non-synth2 datasets".into()));
        }
        if !(self.C > 0.0) {
            return Err(Error::Config(format!("C must be positive, got {}", self.C)));
        }
        if self.b == 0 {
            return Err(Error::Config("b must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.strategy()?;
        for s in &self.synth2.strategies {
            s.parse::<Strategy<f64>>()?;
        }
        self.approx_resolvers()?;
        self.hist_resolvers()?;
        Ok(())
    }

    pub fn strategy(&self) -> Result<Strategy<f64>> {
        self.strategy.parse()
    }

    pub fn approx_resolvers(&self) -> Result<Vec<LabelResolver<f64>>> {
        self.approx.resolvers.iter().map(|s| s.parse()).collect()
    }

    pub fn hist_resolvers(&self) -> Result<Vec<LabelResolver<f64>>> {
        self.hist.resolvers.iter().map(|s| s.parse()).collect()
    }

    /// The AL instance for one seed, with a dev set when configured.
    pub fn instance(&self, seed: u64) -> Result<AlInstance<f64>> {
        let inst = match &self.dataset {
            DatasetSpec::Synth2 => generate_synth2(seed),
            other => {
                let data = other.load()?;
                let split = self
                    .split
                    .ok_or_else(|| Error::Config("`split` is required for non-synth2 datasets".into()))?;
                split_al_instance(
                    &data.samples,
                    data.num_classes,
                    SplitSizes {
                        n_init: split.n_init,
                        n_test: split.n_test,
                    },
                    seed,
                    split.stratify,
                )?
            }
        };
        match self.goal_context.dev_fraction {
            Some(f) => sample_dev_set(&inst, f, seed),
            None => Ok(inst),
        }
    }

    pub fn loop_config(&self, seed: u64, snapshot_utilities: bool) -> LoopConfig<f64> {
        LoopConfig {
            grad_tol: self.train.grad_tol,
            max_iter: self.train.max_iter,
            solver: SolverConfig {
                residual_tol: self.train.cg_tol,
                ..SolverConfig::default()
            },
            seed,
            snapshot_utilities,
            unlabeled_context: match self.goal_context.unlabeled {
                UnlabeledSource::Pool => GoalContext::Pool,
                UnlabeledSource::Subset { size } => GoalContext::PoolSubset { size, seed },
            },
            track_goal: self.goal_context.track_goal,
        }
    }
}

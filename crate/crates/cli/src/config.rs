//! Experiment configuration: a TOML document deserialized into
//! [`ExperimentConfig`] with unknown keys rejected at every level.
//!
//! The field-by-field reference lives in `docs/config-schema.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sigregime_core::cluster::Linkage;
use sigregime_core::mmd::Estimator;
use sigregime_core::models::{Model, SwitchMode};
use sigregime_core::sigkernel::KernelSpec;
use sigregime_core::streams::{compose, StreamTransformer, Transform};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ToyDetect,
    Multiclass,
    SinglePath,
    RbergomiDetect,
    Rank2Compare,
    BaselineCompare,
    Nonmarkov,
    Cluster,
    RealdataAuto,
    RealdataPipeline,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ToyDetect => "toy-detect",
            ExperimentKind::Multiclass => "multiclass",
            ExperimentKind::SinglePath => "single-path",
            ExperimentKind::RbergomiDetect => "rbergomi-detect",
            ExperimentKind::Rank2Compare => "rank2-compare",
            ExperimentKind::BaselineCompare => "baseline-compare",
            ExperimentKind::Nonmarkov => "nonmarkov",
            ExperimentKind::Cluster => "cluster",
            ExperimentKind::RealdataAuto => "realdata-auto",
            ExperimentKind::RealdataPipeline => "realdata-pipeline",
        }
    }

    /// Kinds that score ensembles against simulated belief banks.
    pub fn is_ensemble_detection(self) -> bool {
        matches!(
            self,
            ExperimentKind::ToyDetect
                | ExperimentKind::Multiclass
                | ExperimentKind::RbergomiDetect
                | ExperimentKind::Rank2Compare
                | ExperimentKind::BaselineCompare
        )
    }

    pub fn is_realdata(self) -> bool {
        matches!(self, ExperimentKind::RealdataAuto | ExperimentKind::RealdataPipeline)
    }
}

fn default_runs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beliefs: Option<BeliefConfig>,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<MethodConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto: Option<AutoConfig>,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
}

/// Synthetic regime-switching path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    /// Model sequence; the first entry is the base regime.
    pub models: Vec<Model>,
    #[serde(default = "one")]
    pub dim: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Poisson mean of the entry draw at each decision point.
    #[serde(default)]
    pub entry_rate: f64,
    /// Poisson mean of the exit draw at each decision point.
    #[serde(default)]
    pub exit_rate: f64,
    #[serde(default = "poisson")]
    pub mode: SwitchMode,
    #[serde(default)]
    pub lattice_aligned: bool,
    #[serde(default = "one_f")]
    pub x0: f64,
    /// Single deterministic switch from model 0 to model 1 at this fraction
    /// of the horizon; replaces the random schedule when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_at: Option<f64>,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn poisson() -> SwitchMode {
    SwitchMode::Poisson
}

/// CSV input for the real-data kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Relative paths resolve against the config file's directory.
    pub csv: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<Vec<String>>,
    #[serde(default = "trading_year")]
    pub periods_per_year: f64,
    #[serde(default = "bad_rows")]
    pub max_bad_fraction: f64,
    /// Last timestamp (inclusive) of the calibration segment used to build
    /// beliefs in `realdata-pipeline`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_end: Option<String>,
}

fn trading_year() -> f64 {
    252.0
}

fn bad_rows() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub h1: usize,
    pub h2: usize,
    /// Written in composition order: the last entry is applied first.
    pub transforms: Vec<Transform>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            h1: 7,
            h2: 10,
            transforms: vec![Transform::TimeNorm, Transform::StateNorm],
        }
    }
}

impl PipelineConfig {
    pub fn transformer(&self) -> Result<StreamTransformer> {
        compose(self.transforms.clone()).map_err(CliError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefConfig {
    pub models: Vec<Model>,
    #[serde(default = "bank_size")]
    pub bank_size: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
}

fn bank_size() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub alpha: f64,
    /// Belief draws averaged per ensemble score.
    pub n_evals: usize,
    /// Bootstrap pairs in each null distribution.
    pub null_draws: usize,
    pub estimator: Estimator,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            alpha: 0.05,
            n_evals: 1,
            null_draws: 1000,
            estimator: Estimator::Unbiased,
        }
    }
}

/// One detector in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodConfig {
    /// Ensemble MMD detector; the kernel may be untruncated, truncated or rank 2.
    Mmd { name: String, kernel: KernelSpec },
    /// Signature conformance against a corpus simulated from the first belief.
    Sigcon {
        name: String,
        #[serde(default = "two")]
        order: usize,
        #[serde(default = "corpus_size")]
        corpus_size: usize,
        #[serde(default = "yes")]
        include_time: bool,
    },
}

fn two() -> usize {
    2
}

fn corpus_size() -> usize {
    2000
}

fn yes() -> bool {
    true
}

impl MethodConfig {
    pub fn name(&self) -> &str {
        match self {
            MethodConfig::Mmd { name, .. } | MethodConfig::Sigcon { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoConfig {
    pub lags: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Number of trailing scores in the rolling null.
    pub window: usize,
    pub alpha: f64,
}

impl Default for AutoConfig {
    fn default() -> Self {
        AutoConfig {
            lags: vec![1],
            weights: None,
            window: 200,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Paths sampled from each belief for the scoring rules.
    pub n_samples: usize,
    /// Simulate belief paths over the whole horizon and compare each
    /// sub-path with the same time window of the belief paths.
    pub windowed_banks: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            n_samples: 64,
            windowed_banks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub k: usize,
    pub linkage: Linkage,
    /// `realdata-pipeline`: calibration sub-paths whose mean cluster label is
    /// at most this value form the first belief.
    pub calm_max_label: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 2,
            linkage: Linkage::Average,
            calm_max_label: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and validate a config file, resolving a relative data path
    /// against the file's directory and making it absolute when it exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.context(&path.display().to_string()))?;
        if let Some(data) = &mut cfg.data {
            if data.csv.is_relative() {
                if let Some(dir) = path.parent() {
                    data.csv = dir.join(&data.csv);
                }
            }
            // An absolute path keeps the emitted config runnable from anywhere.
            if let Ok(abs) = std::fs::canonicalize(&data.csv) {
                data.csv = abs;
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Detectors to run: `methods` when given, otherwise one MMD detector
    /// with the top-level kernel.
    pub fn resolved_methods(&self) -> Vec<MethodConfig> {
        if self.methods.is_empty() {
            vec![MethodConfig::Mmd {
                name: "mmd".into(),
                kernel: self.kernel.clone(),
            }]
        } else {
            self.methods.clone()
        }
    }

    pub fn path(&self) -> Result<&PathConfig> {
        self.path
            .as_ref()
            .ok_or_else(|| CliError::config(format!("{} needs a [path] section", self.kind.as_str())))
    }

    pub fn beliefs(&self) -> Result<&BeliefConfig> {
        self.beliefs
            .as_ref()
            .ok_or_else(|| CliError::config(format!("{} needs a [beliefs] section", self.kind.as_str())))
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::config(format!("{} needs a [data] section", self.kind.as_str())))
    }

    pub fn auto(&self) -> AutoConfig {
        self.auto.clone().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        if self.n_runs == 0 {
            return Err(CliError::config("n_runs must be at least 1"));
        }
        let p = &self.pipeline;
        if p.h1 < 2 {
            return Err(CliError::config("pipeline.h1 must be at least 2"));
        }
        let needs_ensembles = !matches!(kind, ExperimentKind::SinglePath | ExperimentKind::Nonmarkov);
        if needs_ensembles && p.h2 < 2 {
            return Err(CliError::config("pipeline.h2 must be at least 2"));
        }
        p.transformer()?;
        self.kernel.validate()?;
        if !(self.detector.alpha > 0.0 && self.detector.alpha < 1.0) {
            return Err(CliError::config("detector.alpha must lie in (0, 1)"));
        }
        if self.detector.n_evals == 0 || self.detector.null_draws == 0 {
            return Err(CliError::config("detector.n_evals and detector.null_draws must be positive"));
        }
        if kind.is_realdata() {
            let d = self.data()?;
            if !(d.periods_per_year > 0.0) || !(0.0..1.0).contains(&d.max_bad_fraction) {
                return Err(CliError::config("data.periods_per_year must be positive and max_bad_fraction in [0, 1)"));
            }
        } else {
            self.validate_path()?;
        }
        if kind.is_ensemble_detection() {
            let b = self.beliefs()?;
            if b.models.is_empty() {
                return Err(CliError::config("beliefs.models is empty"));
            }
            if b.bank_size < 2 * p.h2 {
                return Err(CliError::config("beliefs.bank_size must hold two disjoint ensembles"));
            }
            let methods = self.resolved_methods();
            let mut names: Vec<&str> = Vec::new();
            for m in &methods {
                if names.contains(&m.name()) {
                    return Err(CliError::config(format!("duplicate method name {}", m.name())));
                }
                names.push(m.name());
                match m {
                    MethodConfig::Mmd { kernel, .. } => kernel.validate().map_err(|e| CliError::from(e).context(m.name()))?,
                    MethodConfig::Sigcon { order, corpus_size, .. } => {
                        if *order == 0 || *corpus_size < 4 {
                            return Err(CliError::config(format!("{}: order must be positive and corpus_size at least 4", m.name())));
                        }
                    }
                }
            }
        }
        if matches!(kind, ExperimentKind::SinglePath | ExperimentKind::Nonmarkov) {
            if self.beliefs()?.models.len() < 2 {
                return Err(CliError::config("similarity scoring needs at least two belief models"));
            }
            if self.kernel.rank != 1 {
                return Err(CliError::config("scoring rules need a rank-1 kernel"));
            }
            if self.scoring.n_samples < 2 {
                return Err(CliError::config("scoring.n_samples must be at least 2"));
            }
        }
        if kind == ExperimentKind::RealdataPipeline && self.kernel.rank != 1 {
            return Err(CliError::config("scoring rules need a rank-1 kernel"));
        }
        if matches!(kind, ExperimentKind::Cluster | ExperimentKind::RealdataPipeline) && self.cluster.k == 0 {
            return Err(CliError::config("cluster.k must be positive"));
        }
        if matches!(kind, ExperimentKind::RealdataAuto | ExperimentKind::ToyDetect) || self.auto.is_some() {
            let a = self.auto();
            if a.lags.is_empty() || a.lags.contains(&0) {
                return Err(CliError::config("auto.lags must be positive integers"));
            }
            if a.weights.as_ref().is_some_and(|w| w.len() != a.lags.len()) {
                return Err(CliError::config("auto.weights must match auto.lags"));
            }
            if a.window < 2 || !(a.alpha > 0.0 && a.alpha < 1.0) {
                return Err(CliError::config("auto.window must be at least 2 and auto.alpha in (0, 1)"));
            }
        }
        Ok(())
    }

    fn validate_path(&self) -> Result<()> {
        let path = self.path()?;
        if path.models.is_empty() {
            return Err(CliError::config("path.models is empty"));
        }
        for m in &path.models {
            m.validate()?;
        }
        if !(path.dt > 0.0 && path.horizon > path.dt) {
            return Err(CliError::config("path.dt must be positive and below path.horizon"));
        }
        if path.dim == 0 || !(path.x0 > 0.0) {
            return Err(CliError::config("path.dim must be positive and path.x0 > 0"));
        }
        if path.entry_rate < 0.0 || path.exit_rate < 0.0 {
            return Err(CliError::config("switching rates must be nonnegative"));
        }
        if let Some(f) = path.switch_at {
            if !(f > 0.0 && f < 1.0) || path.models.len() < 2 {
                return Err(CliError::config("path.switch_at must lie in (0, 1) and needs two models"));
            }
        }
        Ok(())
    }
}

//! Run configuration: one TOML file holding every setting, with command-line
//! overrides for the common ones.

use std::path::PathBuf;

use hessnet_core::irc::IrcConfig;
use hessnet_core::model::ModelConfig;
use hessnet_core::optim::{CriteriaPreset, HessianSource, Method, TrustConfig};
use hessnet_core::oracles::PotentialSpec;
use hessnet_core::training::{LossConfig, TrainConfig};
use hessnet_core::vib::NEG_THRESHOLD;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Reference geometry (XYZ). Without one, a regular tetrahedron of
    /// `element` at the potential's equilibrium distance is used.
    pub reference: Option<PathBuf>,
    pub element: String,
    pub n_samples: usize,
    /// Per-coordinate Gaussian noise, A.
    pub noise: f64,
    /// Dataset file for training (JSON lines).
    pub path: Option<PathBuf>,
    /// Fraction of samples held out for validation.
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            reference: None,
            element: "Ar".into(),
            n_samples: 600,
            noise: 0.2,
            path: None,
            val_fraction: 1.0 / 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Start geometries are the input geometry plus this much Gaussian
    /// noise per coordinate, one draw per seed.
    pub noise: f64,
    /// Method and Hessian-source pairs compared by `opt`, e.g. "rfo:oracle".
    pub compare: Vec<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            noise: 0.0,
            compare: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub element: String,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![5, 10, 20, 30],
            repeats: 5,
            element: "C".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: Option<PotentialSpec>,
    pub checkpoint: Option<PathBuf>,
    /// Input geometry (XYZ).
    pub geometry: Option<PathBuf>,
    /// Flat start vector for abstract surfaces.
    pub start: Option<Vec<f64>>,
    /// Precomputed Hessian (JSON) for `freq` and `zpe`.
    pub hessian_file: Option<PathBuf>,
    #[serde(default = "default_method")]
    pub method: Method,
    pub hessian: Option<HessianSource>,
    #[serde(default = "default_criteria")]
    pub criteria: CriteriaPreset,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_neg_threshold")]
    pub neg_threshold: f64,
    #[serde(default = "default_divergence")]
    pub divergence_radius: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Known minima, as flat coordinate vectors, to match IRC endpoints against.
    #[serde(default)]
    pub minima: Vec<Vec<f64>>,
    #[serde(default)]
    pub trust: TrustConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub irc: IrcConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_method() -> Method {
    Method::Rfo
}
fn default_criteria() -> CriteriaPreset {
    CriteriaPreset::Default
}
fn default_max_steps() -> usize {
    150
}
fn default_neg_threshold() -> f64 {
    NEG_THRESHOLD
}
fn default_divergence() -> f64 {
    1.0
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
    }

    /// Hessian source after defaults: the oracle when a potential is given,
    /// else the model.
    pub fn hessian_source(&self) -> HessianSource {
        self.hessian.unwrap_or(if self.potential.is_some() {
            HessianSource::Oracle
        } else {
            HessianSource::Model
        })
    }

    /// Reject configurations whose Hessian provider cannot be resolved.
    pub fn check_hessian_provider(&self) -> Result<(), CliError> {
        use hessnet_core::optim::BfgsInit;
        let src = self.hessian_source();
        let needs_model = matches!(src, HessianSource::Model | HessianSource::Bfgs(BfgsInit::Model));
        let needs_oracle = matches!(src, HessianSource::Oracle | HessianSource::Bfgs(BfgsInit::Oracle));
        if needs_model && self.checkpoint.is_none() {
            return Err(CliError::Usage(format!("hessian source '{src}' needs a checkpoint")));
        }
        if needs_oracle && self.potential.is_none() {
            return Err(CliError::Usage(format!("hessian source '{src}' needs a potential")));
        }
        if matches!(src, HessianSource::FiniteDifference | HessianSource::Bfgs(_)) && self.potential.is_none() {
            return Err(CliError::Usage(format!("hessian source '{src}' needs a potential for forces")));
        }
        Ok(())
    }
}

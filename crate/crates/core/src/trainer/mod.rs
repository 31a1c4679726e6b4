//! Joint optimization of the splat scene and the per-view adjustment
//! modules, plus checkpointing and evaluation.

mod adam;
mod checkpoint;
mod eval;
mod model;
mod session;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::degrade::Profile;
use crate::error::{Error, Result};
use crate::losses::{DEFAULT_LAMBDA, DEFAULT_OMEGA_SWITCH, ETA_COLOR, ETA_LIGHTNESS};
use crate::refine::{CLIP_COLOR, CLIP_LIGHTNESS};

pub use adam::{Adam, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use eval::{evaluate, render_novel, MetricsTable, ViewMetrics};
pub use model::Model;
pub use session::{train, write_loss_csv, Trainer, TrainingView};

/// Which kind of degradation the run is correcting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    Lightness,
    Color,
    Mixed,
}

impl Scenario {
    pub fn from_profile(profile: Profile) -> Self {
        match profile {
            Profile::MixedAll => Scenario::Mixed,
            p if p.has_color() => Scenario::Color,
            _ => Scenario::Lightness,
        }
    }

    pub fn eta(self) -> f64 {
        match self {
            Scenario::Lightness => ETA_LIGHTNESS,
            Scenario::Color | Scenario::Mixed => ETA_COLOR,
        }
    }

    pub fn residual_clip(self) -> f64 {
        match self {
            Scenario::Lightness => CLIP_LIGHTNESS,
            Scenario::Color | Scenario::Mixed => CLIP_COLOR,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lightness" => Ok(Scenario::Lightness),
            "color" => Ok(Scenario::Color),
            "mixed" => Ok(Scenario::Mixed),
            other => Err(Error::InvalidConfig(format!("unknown scenario `{other}`"))),
        }
    }
}

/// `Full` trains the dual-color model against pseudo-labels; `Baseline`
/// fits base colors directly to the degraded inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Full,
    Baseline,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Method::Full),
            "baseline" => Ok(Method::Baseline),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub colors: f64,
    pub opacity: f64,
    /// Per-Gaussian gain `a` and offset `b`.
    pub adjust: f64,
    pub lut: f64,
    pub matrices: f64,
    /// Generators and the residual branch.
    pub networks: f64,
    pub means: f64,
    pub scales: f64,
    pub rotations: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            colors: 2.5e-3,
            opacity: 2.5e-2,
            adjust: 1e-3,
            lut: 5e-3,
            matrices: 1e-3,
            networks: 1e-4,
            means: 1.6e-4,
            scales: 5e-3,
            rotations: 1e-3,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            colors: 0.0,
            opacity: 0.0,
            adjust: 0.0,
            lut: 0.0,
            matrices: 0.0,
            networks: 0.0,
            means: 0.0,
            scales: 0.0,
            rotations: 0.0,
        }
    }

    fn all(&self) -> [(&'static str, f64); 9] {
        [
            ("lr.colors", self.colors),
            ("lr.opacity", self.opacity),
            ("lr.adjust", self.adjust),
            ("lr.lut", self.lut),
            ("lr.matrices", self.matrices),
            ("lr.networks", self.networks),
            ("lr.means", self.means),
            ("lr.scales", self.scales),
            ("lr.rotations", self.rotations),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub scenario: Scenario,
    /// Overrides the scenario's color-loss weight.
    pub eta: Option<f64>,
    pub lambda: f64,
    pub lr: LearningRates,
    pub optimize_geometry: bool,
    pub omega_switch: usize,
    pub method: Method,
    /// Start base colors at this gray instead of the scene file's colors.
    pub init_gray: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            seed: 0,
            scenario: Scenario::default(),
            eta: None,
            lambda: DEFAULT_LAMBDA,
            lr: LearningRates::default(),
            optimize_geometry: false,
            omega_switch: DEFAULT_OMEGA_SWITCH,
            method: Method::default(),
            init_gray: Some(0.5),
        }
    }
}

impl TrainConfig {
    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or_else(|| self.scenario.eta())
    }

    /// Learning rates may be zero (frozen) but not negative.
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "train.iterations must be at least 1".into(),
            ));
        }
        for (key, v) in self.lr.all() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "train.{key} must be non-negative, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "train.lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if let Some(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "train.eta must be non-negative, got {eta}"
                )));
            }
        }
        if let Some(g) = self.init_gray {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidConfig(format!(
                    "train.init_gray must be in [0, 1], got {g}"
                )));
            }
        }
        Ok(())
    }

    /// Hash of every setting that affects the trajectory; the iteration
    /// budget is excluded so a run can be extended from a checkpoint.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.iterations = 0;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests;

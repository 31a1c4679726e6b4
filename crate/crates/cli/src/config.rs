//! Run configuration file: TOML or JSON with the same keys.
//!
//! ```toml
//! [scene]
//! size = 64
//! [degrade]
//! profile = "varying"
//! [train]
//! iterations = 2000
//! [train.lr]
//! lut = 5e-3
//! [eval]
//! views = "held-out"
//! ```

use std::path::Path;

use anyhow::Context;
use curvesplat::degrade::{JitterRanges, Profile};
use curvesplat::splat::DemoOptions;
use curvesplat::trainer::TrainConfig;
use serde::Deserialize;

use crate::UsageError;

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeSection {
    pub profile: Profile,
    pub seed: u64,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
}

impl Default for DegradeSection {
    fn default() -> Self {
        let j = JitterRanges::default();
        Self {
            profile: Profile::Varying,
            seed: 0,
            brightness: j.brightness,
            contrast: j.contrast,
        }
    }
}

impl DegradeSection {
    pub fn jitter(&self) -> JitterRanges {
        JitterRanges {
            brightness: self.brightness,
            contrast: self.contrast,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ViewSet {
    #[default]
    HeldOut,
    Training,
    All,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Cameras rendered by `render`.
    pub views: ViewSet,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scene: DemoOptions,
    pub degrade: DegradeSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    /// Set when the file names a training scenario explicitly; otherwise
    /// `train` derives it from the dataset's profile.
    #[serde(skip)]
    pub scenario_given: bool,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, is_json).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str, is_json: bool) -> anyhow::Result<Self> {
        let value: serde_json::Value = if is_json {
            serde_json::from_str(text).map_err(|e| UsageError(format!("malformed JSON: {e}")))?
        } else {
            let t: toml::Value =
                toml::from_str(text).map_err(|e| UsageError(format!("malformed TOML: {e}")))?;
            // JSON has no nan/inf; the conversion would silently turn them into null.
            reject_non_finite(&t, "")?;
            serde_json::to_value(t)?
        };
        let scenario_given = value.pointer("/train/scenario").is_some();
        let mut config: FileConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            UsageError(format!("key `{path}`: {}", e.into_inner()))
        })?;
        config.scenario_given = scenario_given;
        Ok(config)
    }
}

fn reject_non_finite(v: &toml::Value, path: &str) -> Result<(), UsageError> {
    match v {
        toml::Value::Float(f) if !f.is_finite() => {
            Err(UsageError(format!("key `{path}`: {f} is not finite")))
        }
        toml::Value::Table(t) => t.iter().try_for_each(|(k, v)| {
            let p = if path.is_empty() {
                k.clone()
            } else {
                format!("{path}.{k}")
            };
            reject_non_finite(v, &p)
        }),
        toml::Value::Array(a) => a
            .iter()
            .enumerate()
            .try_for_each(|(i, v)| reject_non_finite(v, &format!("{path}[{i}]"))),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_are_keyed_identically() {
        let t = FileConfig::parse(
            "[scene]\nsize = 48\n[train]\niterations = 7\n[train.lr]\nlut = 0.01\n",
            false,
        )
        .unwrap();
        let j = FileConfig::parse(
            r#"{"scene": {"size": 48}, "train": {"iterations": 7, "lr": {"lut": 0.01}}}"#,
            true,
        )
        .unwrap();
        assert_eq!(t.scene, j.scene);
        assert_eq!(t.train, j.train);
        assert_eq!(t.scene.size, 48);
        assert_eq!(t.train.lr.lut, 0.01);
        assert!(!t.scenario_given);
    }

    #[test]
    fn errors_name_the_key_path() {
        let err = FileConfig::parse("[train.lr]\nlut = \"fast\"\n", false).unwrap_err();
        assert!(err.to_string().contains("train.lr.lut"), "{err}");
        let err = FileConfig::parse("[train]\nitrations = 3\n", false).unwrap_err();
        assert!(err.to_string().contains("itrations"), "{err}");
        let err = FileConfig::parse("[train]\ninit_gray = nan\n", false).unwrap_err();
        assert!(err.to_string().contains("train.init_gray"), "{err}");
    }

    #[test]
    fn explicit_scenario_is_detected() {
        let c = FileConfig::parse("[train]\nscenario = \"color\"\n", false).unwrap();
        assert!(c.scenario_given);
        let c = FileConfig::parse("[degrade]\nprofile = \"warm\"\n", false).unwrap();
        assert_eq!(c.degrade.profile, Profile::Warm);
    }
}

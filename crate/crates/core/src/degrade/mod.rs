//! Synthetic lightness, color-temperature and mixed degradations.

mod cmf;
mod planck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

pub use cmf::{CIE1931_CMF, CMF_START_NM, CMF_STEP_NM};
pub use planck::{
    planck_illuminant, planck_linear_rgb, IlluminantRgb, MAX_TEMPERATURE, MIN_TEMPERATURE,
};

/// Exposure scale ranges: dark `(0.05, 0.8)` and bright `(1.25, 3.0)`.
pub const K_DARK: (f64, f64) = (0.05, 0.8);
pub const K_BRIGHT: (f64, f64) = (1.25, 3.0);
pub const GAMMA_RANGE: (f64, f64) = (0.8, 2.5);
pub const COOL_RANGE: (f64, f64) = (8000.0, 9500.0);
pub const WARM_RANGE: (f64, f64) = (1800.0, 2500.0);
pub const MIXED_TEMP_RANGE: (f64, f64) = (1800.0, 9500.0);
/// Temperature range when color and lightness degradations are combined.
pub const MIXED_ALL_TEMP_RANGE: (f64, f64) = (2500.0, 8000.0);
/// Temperature used to fill the (unused) field of lightness-only draws.
pub const NEUTRAL_TEMPERATURE: f64 = 6504.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegradationMode {
    None,
    Lightness,
    Color,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub mode: DegradationMode,
    /// Exposure scale K.
    pub k: f64,
    pub gamma: f64,
    /// Black-body temperature in Kelvin.
    pub temperature: f64,
    /// Brightness factor c_B.
    pub brightness: f64,
    /// Contrast factor c_C.
    pub contrast: f64,
}

impl DegradationParams {
    pub fn identity() -> Self {
        Self {
            mode: DegradationMode::None,
            k: 1.0,
            gamma: 1.0,
            temperature: NEUTRAL_TEMPERATURE,
            brightness: 1.0,
            contrast: 1.0,
        }
    }

    /// Applies the degradation selected by `mode`.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        match self.mode {
            DegradationMode::None => Ok(img.clone()),
            DegradationMode::Lightness => Ok(apply_lightness_degradation(img, self.k, self.gamma)),
            DegradationMode::Color => {
                apply_color_degradation(img, self.temperature, self.brightness, self.contrast)
            }
            DegradationMode::Mixed => apply_mixed(img, self),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    None,
    LowLight,
    Overexposure,
    Varying,
    Cool,
    Warm,
    MixedTemp,
    MixedAll,
}

impl Profile {
    pub const ALL: [Profile; 8] = [
        Profile::None,
        Profile::LowLight,
        Profile::Overexposure,
        Profile::Varying,
        Profile::Cool,
        Profile::Warm,
        Profile::MixedTemp,
        Profile::MixedAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::None => "none",
            Profile::LowLight => "low-light",
            Profile::Overexposure => "overexposure",
            Profile::Varying => "varying",
            Profile::Cool => "cool",
            Profile::Warm => "warm",
            Profile::MixedTemp => "mixed-temp",
            Profile::MixedAll => "mixed-all",
        }
    }

    /// Whether every view of a scene shares a single draw.
    pub fn shared_across_views(self) -> bool {
        matches!(
            self,
            Profile::None
                | Profile::LowLight
                | Profile::Overexposure
                | Profile::Cool
                | Profile::Warm
        )
    }

    /// Whether the profile alters color balance (selects η and clip bound).
    pub fn has_color(self) -> bool {
        matches!(
            self,
            Profile::Cool | Profile::Warm | Profile::MixedTemp | Profile::MixedAll
        )
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_suffix("-like").unwrap_or(&key);
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| Error::UnknownProfile(s.to_string()))
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ranges for the brightness/contrast jitter, which the degradation
/// formula leaves to the sampler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterRanges {
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
}

impl Default for JitterRanges {
    fn default() -> Self {
        Self {
            brightness: (0.8, 1.2),
            contrast: (0.7, 1.3),
        }
    }
}

/// Per-pixel `clamp((C * K)^gamma, 0, 1)`.
pub fn apply_lightness_degradation(img: &Image, k: f64, gamma: f64) -> Image {
    img.map(|c| (c.max(0.0) * k).powf(gamma).clamp(0.0, 1.0))
}

fn color_unclamped(img: &Image, rho: &IlluminantRgb, brightness: f64, contrast: f64) -> Image {
    let mut v = img.clone();
    for px in v.data_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] *= rho.0[c];
        }
    }
    let mean = brightness * v.mean();
    v.map(|x| brightness * contrast * x + (1.0 - contrast) * mean)
}

/// Von Kries scaling by the black-body illuminant followed by brightness
/// and contrast about the scalar mean, clamped to `[0, 1]`.
pub fn apply_color_degradation(
    img: &Image,
    temperature: f64,
    brightness: f64,
    contrast: f64,
) -> Result<Image> {
    let rho = planck_illuminant(temperature)?;
    Ok(apply_color_with_illuminant(img, &rho, brightness, contrast))
}

pub fn apply_color_with_illuminant(
    img: &Image,
    rho: &IlluminantRgb,
    brightness: f64,
    contrast: f64,
) -> Image {
    color_unclamped(img, rho, brightness, contrast).clamped()
}

/// Color degradation first, then exposure and gamma.
pub fn apply_mixed(img: &Image, params: &DegradationParams) -> Result<Image> {
    let colored =
        apply_color_degradation(img, params.temperature, params.brightness, params.contrast)?;
    Ok(apply_lightness_degradation(
        &colored,
        params.k,
        params.gamma,
    ))
}

/// Uniform draw strictly inside `(lo, hi)`.
fn open_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    loop {
        let v = rng.gen_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

fn draw(profile: Profile, rng: &mut ChaCha8Rng, jitter: &JitterRanges) -> DegradationParams {
    let mut p = DegradationParams::identity();
    let exposure =
        |rng: &mut ChaCha8Rng, range| (open_uniform(rng, range), open_uniform(rng, GAMMA_RANGE));
    let color = |rng: &mut ChaCha8Rng, range| {
        (
            open_uniform(rng, range),
            open_uniform(rng, jitter.brightness),
            open_uniform(rng, jitter.contrast),
        )
    };
    match profile {
        Profile::None => {}
        Profile::LowLight => {
            p.mode = DegradationMode::Lightness;
            (p.k, p.gamma) = exposure(rng, K_DARK);
        }
        Profile::Overexposure => {
            p.mode = DegradationMode::Lightness;
            (p.k, p.gamma) = exposure(rng, K_BRIGHT);
        }
        Profile::Varying => {
            p.mode = DegradationMode::Lightness;
            let range = if rng.gen_bool(0.5) { K_DARK } else { K_BRIGHT };
            (p.k, p.gamma) = exposure(rng, range);
        }
        Profile::Cool | Profile::Warm | Profile::MixedTemp => {
            p.mode = DegradationMode::Color;
            let range = match profile {
                Profile::Cool => COOL_RANGE,
                Profile::Warm => WARM_RANGE,
                _ => MIXED_TEMP_RANGE,
            };
            (p.temperature, p.brightness, p.contrast) = color(rng, range);
        }
        Profile::MixedAll => {
            p.mode = DegradationMode::Mixed;
            (p.temperature, p.brightness, p.contrast) = color(rng, MIXED_ALL_TEMP_RANGE);
            let range = if rng.gen_bool(0.5) { K_DARK } else { K_BRIGHT };
            (p.k, p.gamma) = exposure(rng, range);
        }
    }
    p
}

/// One deterministic draw for `profile`.
pub fn sample_params(profile: Profile, seed: u64) -> DegradationParams {
    sample_params_with(profile, seed, &JitterRanges::default())
}

pub fn sample_params_with(profile: Profile, seed: u64, jitter: &JitterRanges) -> DegradationParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw(profile, &mut rng, jitter)
}

/// Draws for `n_views` views: independent per view, or one shared draw
/// for profiles that model a single capture setting.
pub fn sample_view_params(
    profile: Profile,
    seed: u64,
    n_views: usize,
    jitter: &JitterRanges,
) -> Vec<DegradationParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if profile.shared_across_views() {
        let p = draw(profile, &mut rng, jitter);
        vec![p; n_views]
    } else {
        (0..n_views)
            .map(|_| draw(profile, &mut rng, jitter))
            .collect()
    }
}

use serde::{Deserialize, Serialize};

use super::cmf::{CIE1931_CMF, CMF_START_NM, CMF_STEP_NM};
use crate::error::{Error, Result};

pub const MIN_TEMPERATURE: f64 = 1000.0;
pub const MAX_TEMPERATURE: f64 = 15000.0;

/// Second radiation constant `h c / k_B` in m·K.
const C2: f64 = 1.438_776_877e-2;

/// XYZ -> linear sRGB (IEC 61966-2-1).
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2406, -1.5372, -0.4986],
    [-0.9689, 1.8758, 0.0415],
    [0.0557, -0.2040, 1.0570],
];

/// Linear-RGB gains of a black-body source, max channel equal to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlluminantRgb(pub [f64; 3]);

/// Relative spectral radiance; the `2hc^2` prefactor cancels on normalization.
fn radiance(lambda_nm: f64, t: f64) -> f64 {
    let l = lambda_nm * 1e-9;
    1.0 / (l.powi(5) * ((C2 / (l * t)).exp_m1()))
}

/// Linear sRGB of the black-body spectrum before gamut clamping, scaled
/// so the largest channel is 1. Below ~1900 K blue is slightly negative.
pub fn planck_linear_rgb(temperature: f64) -> Result<[f64; 3]> {
    if !temperature.is_finite() || !(MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(&temperature) {
        return Err(Error::OutOfRange {
            what: "color temperature",
            value: temperature,
        });
    }
    let last = CIE1931_CMF.len() - 1;
    let mut xyz = [0.0; 3];
    for (i, cmf) in CIE1931_CMF.iter().enumerate() {
        let weight = if i == 0 || i == last { 0.5 } else { 1.0 };
        let s = weight * radiance(CMF_START_NM + CMF_STEP_NM * i as f64, temperature);
        for c in 0..3 {
            xyz[c] += s * cmf[c];
        }
    }
    let mut rgb = XYZ_TO_RGB.map(|row| row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2]);
    let peak = rgb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for v in &mut rgb {
        *v /= peak;
    }
    Ok(rgb)
}

/// RGB color of a black-body radiator at `temperature` Kelvin, negative
/// channels clamped to 0.
pub fn planck_illuminant(temperature: f64) -> Result<IlluminantRgb> {
    Ok(IlluminantRgb(
        planck_linear_rgb(temperature)?.map(|v| v.max(0.0)),
    ))
}

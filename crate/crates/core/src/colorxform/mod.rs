//! Tone curves, per-view color matrices, curve priors and the global
//! adjustment `L(C·M)·M⁻¹`.

mod ops;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const LUT_SIZE: usize = 256;
/// Offset inside the power prior `(x + ε)^G`.
pub const PRIOR_EPS: f64 = 1e-4;
/// Matrices with `|det|` below this are treated as singular.
pub const DET_GUARD: f64 = 1e-6;

/// Input grid position of LUT entry `i`.
pub fn grid(i: usize) -> f64 {
    i as f64 / (LUT_SIZE - 1) as f64
}

/// Segment index and interpolation weight for a value already in `[0, 1]`.
pub(crate) fn lut_position(v: f64) -> (usize, f64) {
    let pos = v * (LUT_SIZE - 1) as f64;
    let i0 = (pos.floor() as usize).min(LUT_SIZE - 2);
    (i0, pos - i0 as f64)
}

pub(crate) fn lut_eval(entries: &[f64], v: f64) -> f64 {
    let (i0, t) = lut_position(v.clamp(0.0, 1.0));
    entries[i0] * (1.0 - t) + entries[i0 + 1] * t
}

/// 256-entry lookup table over the grid `i / 255`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneCurve {
    entries: Vec<f64>,
}

impl ToneCurve {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() != LUT_SIZE {
            return Err(Error::DimensionMismatch(format!(
                "tone curve needs {LUT_SIZE} entries, got {}",
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::OutOfRange {
                what: "tone curve entry",
                value: *bad,
            });
        }
        Ok(Self { entries })
    }

    pub fn identity() -> Self {
        Self::from_fn(|x| x)
    }

    pub fn constant(c: f64) -> Self {
        Self::from_fn(|_| c)
    }

    pub fn from_fn(f: impl Fn(f64) -> f64) -> Self {
        Self {
            entries: (0..LUT_SIZE).map(|i| f(grid(i))).collect(),
        }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<f64> {
        self.entries
    }

    /// Linear interpolation at `clamp(v, 0, 1) * 255`.
    pub fn eval(&self, v: f64) -> f64 {
        lut_eval(&self.entries, v)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Pointwise sum of a global curve and a per-view bias.
pub fn compose_curve(global: &ToneCurve, bias: &ToneCurve) -> ToneCurve {
    ToneCurve {
        entries: global
            .entries
            .iter()
            .zip(&bias.entries)
            .map(|(g, b)| g + b)
            .collect(),
    }
}

/// Applies `curve` to every channel value of `img`.
pub fn apply_curve(img: &Image, curve: &ToneCurve) -> Image {
    img.map(|v| curve.eval(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorMatrix3 {
    pub m: [[f64; 3]; 3],
}

impl Default for ColorMatrix3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl ColorMatrix3 {
    pub fn identity() -> Self {
        Self::diag([1.0; 3])
    }

    pub fn diag(d: [f64; 3]) -> Self {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            m[i][i] = d[i];
        }
        Self { m }
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::DimensionMismatch(format!(
                "color matrix needs 9 values, got {}",
                v.len()
            )));
        }
        let mut m = [[0.0; 3]; 3];
        for r in 0..3 {
            m[r].copy_from_slice(&v[r * 3..r * 3 + 3]);
        }
        Ok(Self { m })
    }

    pub fn flat(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            out[r * 3..r * 3 + 3].copy_from_slice(&self.m[r]);
        }
        out
    }

    pub fn det(&self) -> f64 {
        det3(&self.flat())
    }

    pub fn ensure_invertible(&self) -> Result<()> {
        let det = self.det();
        if det.abs() < DET_GUARD || !det.is_finite() {
            Err(Error::SingularMatrix(det))
        } else {
            Ok(())
        }
    }

    /// Exact inverse via the adjugate.
    pub fn inverse(&self) -> Result<Self> {
        self.ensure_invertible()?;
        Self::from_flat(&inverse3(&self.flat()))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut m = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = (0..3).map(|k| self.m[r][k] * other.m[k][c]).sum();
            }
        }
        Self { m }
    }

    /// Row vector times matrix: `[r, g, b] · M`.
    pub fn apply_pixel(&self, p: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = p[0] * self.m[0][c] + p[1] * self.m[1][c] + p[2] * self.m[2][c];
        }
        out
    }
}

pub(crate) fn det3(m: &[f64]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// Adjugate inverse of a row-major 3x3; the caller checks the determinant.
pub(crate) fn inverse3(m: &[f64]) -> [f64; 9] {
    let d = det3(m);
    [
        (m[4] * m[8] - m[5] * m[7]) / d,
        (m[2] * m[7] - m[1] * m[8]) / d,
        (m[1] * m[5] - m[2] * m[4]) / d,
        (m[5] * m[6] - m[3] * m[8]) / d,
        (m[0] * m[8] - m[2] * m[6]) / d,
        (m[2] * m[3] - m[0] * m[5]) / d,
        (m[3] * m[7] - m[4] * m[6]) / d,
        (m[1] * m[6] - m[0] * m[7]) / d,
        (m[0] * m[4] - m[1] * m[3]) / d,
    ]
}

pub fn invert_matrix(m: &ColorMatrix3) -> Result<ColorMatrix3> {
    m.inverse()
}

/// Per-pixel `[r, g, b] · M`; values may leave `[0, 1]`.
pub fn apply_matrix(img: &Image, m: &ColorMatrix3) -> Result<Image> {
    m.ensure_invertible()?;
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let v = m.apply_pixel(px);
        px.copy_from_slice(&v);
    }
    Ok(out)
}

/// `L(C · M) · M⁻¹` with the curve applied identically to all channels.
pub fn global_adjust(img: &Image, m: &ColorMatrix3, curve: &ToneCurve) -> Result<Image> {
    let inv = m.inverse()?;
    let mapped = apply_matrix(img, m)?;
    apply_matrix(&apply_curve(&mapped, curve), &inv)
}

/// Parameters of the two canonical tone priors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePriorParams {
    /// Power-curve exponent G.
    pub g: f64,
    /// S-curve pivot A.
    pub a: f64,
    /// S-curve exponent B.
    pub b: f64,
}

impl CurvePriorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what, value| Err(Error::OutOfRange { what, value });
        if !(self.g > 0.0 && self.g.is_finite()) {
            return bad("power exponent G", self.g);
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return bad("S-curve pivot A", self.a);
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad("S-curve exponent B", self.b);
        }
        Ok(())
    }
}

pub(crate) fn power_value(x: f64, g: f64) -> f64 {
    (x + PRIOR_EPS).powf(g)
}

pub(crate) fn s_value(x: f64, a: f64, b: f64) -> f64 {
    if x <= a {
        a - a * (1.0 - x / a).max(0.0).powf(b)
    } else {
        a + (1.0 - a) * ((x - a) / (1.0 - a)).powf(b)
    }
}

/// `y = (x + ε)^G` sampled on the LUT grid.
pub fn power_curve(g: f64) -> Result<ToneCurve> {
    CurvePriorParams { g, a: 0.5, b: 1.0 }.validate()?;
    Ok(ToneCurve::from_fn(|x| power_value(x, g)))
}

/// Two-branch S-curve around pivot `a` with exponent `b`.
pub fn s_curve(a: f64, b: f64) -> Result<ToneCurve> {
    CurvePriorParams { g: 1.0, a, b }.validate()?;
    Ok(ToneCurve::from_fn(|x| s_value(x, a, b)))
}

/// Histogram-equalization curve of the grayscale (channel mean) image.
pub fn cdf_curve(img: &Image) -> ToneCurve {
    let mut hist = [0.0f64; LUT_SIZE];
    for g in img.gray() {
        let bin = (g.clamp(0.0, 1.0) * (LUT_SIZE - 1) as f64).round() as usize;
        hist[bin] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    let mut acc = 0.0;
    let mut entries: Vec<f64> = hist
        .iter()
        .map(|h| {
            acc += h;
            acc / total
        })
        .collect();
    entries[LUT_SIZE - 1] = 1.0;
    ToneCurve { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_image() -> Image {
        Image::from_fn(5, 4, |x, y| [x as f64 / 4.0, y as f64 / 3.0, 0.37])
    }

    #[test]
    fn identity_curve_clamps() {
        let id = ToneCurve::identity();
        assert_eq!(id.eval(-0.2), 0.0);
        assert_eq!(id.eval(1.3), 1.0);
        assert!((id.eval(0.3) - 0.3).abs() < 1e-15);
        assert_eq!(ToneCurve::constant(0.4).eval(0.77), 0.4);
    }

    #[test]
    fn half_interpolates_middle_entries() {
        let c = ToneCurve::from_fn(|x| x * x);
        let e = c.entries();
        assert!((c.eval(0.5) - (e[127] + e[128]) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn tone_curve_validation() {
        assert!(ToneCurve::new(vec![0.0; 10]).is_err());
        let mut v = vec![0.0; LUT_SIZE];
        v[3] = f64::NAN;
        assert!(ToneCurve::new(v).is_err());
    }

    #[test]
    fn compose_examples() {
        let id = ToneCurve::identity();
        assert_eq!(compose_curve(&id, &ToneCurve::constant(0.0)), id);
        let shifted = compose_curve(&id, &ToneCurve::constant(0.1));
        for (i, v) in shifted.entries().iter().enumerate() {
            assert!((v - (grid(i) + 0.1)).abs() < 1e-15);
        }
        let p = power_curve(2.0).unwrap();
        assert_eq!(compose_curve(&p, &id), compose_curve(&id, &p));
    }

    #[test]
    fn matrix_examples() {
        let img = sample_image();
        assert_eq!(apply_matrix(&img, &ColorMatrix3::identity()).unwrap(), img);
        let swap = ColorMatrix3 {
            m: [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
        };
        let out = apply_matrix(&img, &swap).unwrap();
        let [r, g, b] = img.pixel(3, 2);
        assert_eq!(out.pixel(3, 2), [b, g, r]);
        let singular = ColorMatrix3::diag([1.0, 1.0, 0.0]);
        assert!(matches!(
            apply_matrix(&img, &singular),
            Err(Error::SingularMatrix(_))
        ));
        assert!(Error::SingularMatrix(0.0)
            .to_string()
            .contains("singular color matrix"));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(
            invert_matrix(&ColorMatrix3::identity()).unwrap(),
            ColorMatrix3::identity()
        );
        let d = invert_matrix(&ColorMatrix3::diag([2.0, 4.0, 8.0])).unwrap();
        assert_eq!(d, ColorMatrix3::diag([0.5, 0.25, 0.125]));
    }

    #[test]
    fn prior_examples() {
        assert!((power_value(0.5, 2.0) - 0.250_100_01).abs() < 1e-12);
        // 0.5 lies between grid points; chord error of x^2 over one cell is h^2/4.
        assert!((power_curve(2.0).unwrap().eval(0.5) - 0.250_100_01).abs() < 4e-6);
        assert!((s_value(0.25, 0.5, 2.0) - 0.375).abs() < 1e-15);
        for a in [0.2, 0.5, 0.8] {
            let s = s_curve(a, 1.0).unwrap();
            for (i, v) in s.entries().iter().enumerate() {
                assert!((v - grid(i)).abs() < 1e-12);
            }
        }
        assert!(power_curve(0.0).is_err());
        assert!(s_curve(1.0, 1.0).is_err());
    }

    #[test]
    fn cdf_examples() {
        // One pixel per bin gives a uniform histogram.
        let ramp = Image::from_fn(256, 1, |x, _| [x as f64 / 255.0; 3]);
        let cdf = cdf_curve(&ramp);
        for (i, v) in cdf.entries().iter().enumerate() {
            assert!((v - grid(i)).abs() <= 1.0 / 256.0 + 1e-12, "{i}: {v}");
        }
        let flat = Image::filled(4, 4, [0.4; 3]);
        let step = cdf_curve(&flat);
        let bin = (0.4f64 * 255.0).round() as usize;
        assert!(step.entries()[..bin].iter().all(|&v| v == 0.0));
        assert!(step.entries()[bin..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn global_adjust_examples() {
        let img = sample_image();
        let id = global_adjust(&img, &ColorMatrix3::identity(), &ToneCurve::identity()).unwrap();
        for (a, b) in id.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let quarter = Image::filled(2, 2, [0.25; 3]);
        let out = global_adjust(
            &quarter,
            &ColorMatrix3::identity(),
            &power_curve(0.5).unwrap(),
        )
        .unwrap();
        // 0.25 sits between grid points, so compare against the interpolated prior.
        assert!((out.pixel(0, 0)[0] - 0.2501f64.sqrt()).abs() < 2e-4);
    }

    fn matrix_strategy() -> impl Strategy<Value = ColorMatrix3> {
        proptest::collection::vec(-0.4f64..0.4, 9).prop_map(|v| {
            let mut m = ColorMatrix3::from_flat(&v).unwrap();
            for i in 0..3 {
                m.m[i][i] += 1.5;
            }
            m
        })
    }

    proptest! {
        #[test]
        fn identity_global_adjust_is_exact(vals in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let img = Image::new(2, 2, vals).unwrap();
            let out = global_adjust(&img, &ColorMatrix3::identity(), &ToneCurve::identity()).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn double_inverse_round_trips(m in matrix_strategy()) {
            let back = m.inverse().unwrap().inverse().unwrap();
            for (a, b) in back.flat().iter().zip(m.flat()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn inverse_multiplies_back(m in matrix_strategy()) {
            let p = m.mul(&m.inverse().unwrap());
            for (a, b) in p.flat().iter().zip(ColorMatrix3::identity().flat()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn monotone_lut_gives_monotone_curve(
            steps in proptest::collection::vec(0.0f64..0.01, LUT_SIZE),
            u in -0.2f64..1.2,
            d in 0.0f64..0.5,
        ) {
            let mut acc = 0.0;
            let curve = ToneCurve::new(steps.iter().map(|s| { acc += s; acc }).collect()).unwrap();
            prop_assert!(curve.eval(u) <= curve.eval(u + d));
        }

        #[test]
        fn cdf_is_nondecreasing(vals in proptest::collection::vec(0.0f64..=1.0, 27)) {
            let img = Image::new(3, 3, vals).unwrap();
            let cdf = cdf_curve(&img);
            prop_assert!(cdf.is_nondecreasing());
            prop_assert_eq!(cdf.entries()[LUT_SIZE - 1], 1.0);
        }

        #[test]
        fn zero_bias_matches_global_curve(g in 0.3f64..3.0, v in 0.0f64..=1.0) {
            let global = power_curve(g).unwrap();
            let composed = compose_curve(&global, &ToneCurve::constant(0.0));
            prop_assert_eq!(composed.eval(v), global.eval(v));
        }
    }
}

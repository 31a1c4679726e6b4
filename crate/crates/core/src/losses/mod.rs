//! Training objectives. Each `*_var` builds a scalar node on a [`Tape`];
//! the plain functions evaluate the same graph on constant inputs.

mod ops;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::imaging::Image;

pub use ops::{ssim_window_size, SPA_REGION};

/// DSSIM share of the reconstruction loss.
pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const CURVE_WEIGHT: f64 = 10.0;
pub const OMEGA_EARLY: f64 = 1.0;
pub const OMEGA_LATE: f64 = 0.1;
pub const DEFAULT_OMEGA_SWITCH: usize = 3000;
pub const ETA_COLOR: f64 = 0.1;
pub const ETA_LIGHTNESS: f64 = 0.005;
/// Weight of the saturation term inside the color-constancy loss.
pub const SATURATION_WEIGHT: f64 = 0.1;

/// `ω` for the cdf-anchor term: [`OMEGA_EARLY`] before `switch_at`,
/// [`OMEGA_LATE`] from it on.
pub fn omega_at(iteration: usize, switch_at: usize) -> f64 {
    if iteration < switch_at {
        OMEGA_EARLY
    } else {
        OMEGA_LATE
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub eta: f64,
    pub omega: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::OutOfRange {
                what: "lambda",
                value: self.lambda,
            });
        }
        for (what, value) in [("eta", self.eta), ("omega", self.omega)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::OutOfRange { what, value });
            }
        }
        Ok(())
    }
}

/// Scalar values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub reg: f64,
    pub spa: f64,
    pub tv: f64,
    pub curve: f64,
    pub cc: f64,
    pub total: f64,
}

impl LossComponents {
    pub const CSV_HEADER: &'static str = "iter,reg,spa,tv,curve,cc,total";

    pub fn csv_row(&self, iteration: usize) -> String {
        format!(
            "{iteration},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.reg, self.spa, self.tv, self.curve, self.cc, self.total
        )
    }
}

fn ensure_same_shape(tape: &Tape, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

fn image_dims(tape: &Tape, x: Var) -> Result<(usize, usize)> {
    match *tape.shape(x) {
        [h, w, 3] => Ok((w, h)),
        ref s => Err(Error::DimensionMismatch(format!(
            "expected [H, W, 3], got {s:?}"
        ))),
    }
}

/// `λ·DSSIM + (1−λ)·L1` between a render and its target, both `[H, W, 3]`.
pub fn loss_3dgs_var(tape: &mut Tape, pred: Var, target: Var, lambda: f64) -> Result<Var> {
    ensure_same_shape(tape, pred, target)?;
    let (w, h) = image_dims(tape, pred)?;
    let d = tape.sub(pred, target);
    let d = tape.abs(d);
    let l1 = tape.mean(d);
    let s = tape.ssim_var(pred, target, w, h);
    // DSSIM = (1 - SSIM) / 2
    let s = tape.scale(s, -0.5);
    let dssim = tape.offset(s, 0.5);
    let a = tape.scale(dssim, lambda);
    let b = tape.scale(l1, 1.0 - lambda);
    Ok(tape.add(a, b))
}

pub fn loss_reg_var(
    tape: &mut Tape,
    pred_in: Var,
    c_in: Var,
    pred_out: Var,
    c_out: Var,
    lambda: f64,
) -> Result<Var> {
    let a = loss_3dgs_var(tape, pred_in, c_in, lambda)?;
    let b = loss_3dgs_var(tape, pred_out, c_out, lambda)?;
    Ok(tape.add(a, b))
}

/// Spatial-consistency loss between the adjusted render and the degraded
/// input, with the exposure-adaptive factor `0.5 / mean(C_in)`.
pub fn loss_spa_var(tape: &mut Tape, pred_out: Var, c_in: &Image) -> Result<Var> {
    let (w, h) = image_dims(tape, pred_out)?;
    if (w, h) != (c_in.width(), c_in.height()) {
        return Err(Error::DimensionMismatch(format!(
            "{w}x{h} vs {}x{}",
            c_in.width(),
            c_in.height()
        )));
    }
    if w.min(h) < 2 * SPA_REGION {
        return Err(Error::ImageTooSmall(format!(
            "spatial loss needs at least {0}x{0}, got {w}x{h}",
            2 * SPA_REGION
        )));
    }
    Ok(tape.spa_var(pred_out, c_in))
}

/// Color-constancy loss averaged over views; `s` holds each view's
/// Minkowski exponent as a `[1]` node.
pub fn loss_cc_var(tape: &mut Tape, views: &[(Var, Var)]) -> Result<Var> {
    if views.is_empty() {
        return Err(Error::InvalidConfig(
            "color-constancy loss needs at least one view".into(),
        ));
    }
    let mut total = None;
    for &(img, s) in views {
        image_dims(tape, img)?;
        let sv = tape.item(s);
        if !(sv >= 1.0) {
            return Err(Error::OutOfRange {
                what: "Minkowski exponent",
                value: sv,
            });
        }
        let term = tape.color_constancy_var(img, s);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term),
        });
    }
    Ok(tape.scale(total.expect("non-empty"), 1.0 / views.len() as f64))
}

fn ensure_lut(tape: &Tape, v: Var) -> Result<()> {
    if tape.numel(v) != crate::colorxform::LUT_SIZE {
        return Err(Error::DimensionMismatch(format!(
            "tone curve must have {} entries, got {}",
            crate::colorxform::LUT_SIZE,
            tape.numel(v)
        )));
    }
    Ok(())
}

/// `ω·mean((L − L_cdf)²) + 0.5·mean((L − L_po·L_s)²)`.
pub fn loss_curve_var(
    tape: &mut Tape,
    lut: Var,
    cdf: Var,
    power: Var,
    s: Var,
    omega: f64,
) -> Result<Var> {
    for v in [lut, cdf, power, s] {
        ensure_lut(tape, v)?;
    }
    let d = tape.sub(lut, cdf);
    let d = tape.square(d);
    let anchor = tape.mean(d);
    let prior = tape.mul(power, s);
    let e = tape.sub(lut, prior);
    let e = tape.square(e);
    let shape = tape.mean(e);
    let a = tape.scale(anchor, omega);
    let b = tape.scale(shape, 0.5);
    Ok(tape.add(a, b))
}

/// `(1/255)·Σ (L[i+1] − L[i])²`.
pub fn loss_tv_var(tape: &mut Tape, lut: Var) -> Result<Var> {
    ensure_lut(tape, lut)?;
    let n = crate::colorxform::LUT_SIZE;
    let hi = tape.slice(lut, 1, n - 1);
    let lo = tape.slice(lut, 0, n - 1);
    let d = tape.sub(hi, lo);
    let d = tape.square(d);
    let s = tape.sum(d);
    Ok(tape.scale(s, 1.0 / (n - 1) as f64))
}

/// Nodes of the individual terms, before weighting.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub reg: Var,
    pub spa: Var,
    pub tv: Var,
    pub curve: Var,
    pub cc: Var,
}

/// `L_reg + L_spa + L_tv + 10·L_curve + η·L_cc`. Fails on the first
/// non-finite component, in that order.
pub fn loss_total_var(
    tape: &mut Tape,
    terms: &LossTerms,
    weights: &LossWeights,
) -> Result<(Var, LossComponents)> {
    let named = [
        ("reg", terms.reg),
        ("spa", terms.spa),
        ("tv", terms.tv),
        ("curve", terms.curve),
        ("cc", terms.cc),
    ];
    for (name, v) in named {
        let value = tape.item(v);
        if !value.is_finite() {
            return Err(Error::NonFiniteComponent(name, value));
        }
    }
    let a = tape.add(terms.reg, terms.spa);
    let a = tape.add(a, terms.tv);
    let c = tape.scale(terms.curve, CURVE_WEIGHT);
    let a = tape.add(a, c);
    let e = tape.scale(terms.cc, weights.eta);
    let total = tape.add(a, e);
    let parts = LossComponents {
        reg: tape.item(terms.reg),
        spa: tape.item(terms.spa),
        tv: tape.item(terms.tv),
        curve: tape.item(terms.curve),
        cc: tape.item(terms.cc),
        total: tape.item(total),
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFiniteComponent("total", parts.total));
    }
    Ok((total, parts))
}

/// Weighted sum of already-evaluated components.
pub fn loss_total(parts: &LossComponents, weights: &LossWeights) -> Result<f64> {
    let named = [
        ("reg", parts.reg),
        ("spa", parts.spa),
        ("tv", parts.tv),
        ("curve", parts.curve),
        ("cc", parts.cc),
    ];
    for (name, value) in named {
        if !value.is_finite() {
            return Err(Error::NonFiniteComponent(name, value));
        }
    }
    Ok(parts.reg + parts.spa + parts.tv + CURVE_WEIGHT * parts.curve + weights.eta * parts.cc)
}

fn image_const(tape: &mut Tape, img: &Image) -> Var {
    tape.constant(img.data().to_vec(), &[img.height(), img.width(), 3])
}

pub fn loss_3dgs(pred: &Image, target: &Image, lambda: f64) -> Result<f64> {
    pred.ensure_same_size(target)?;
    let mut tape = Tape::new();
    let (p, t) = (image_const(&mut tape, pred), image_const(&mut tape, target));
    let l = loss_3dgs_var(&mut tape, p, t, lambda)?;
    Ok(tape.item(l))
}

pub fn loss_reg(
    pred_in: &Image,
    c_in: &Image,
    pred_out: &Image,
    c_out: &Image,
    lambda: f64,
) -> Result<f64> {
    Ok(loss_3dgs(pred_in, c_in, lambda)? + loss_3dgs(pred_out, c_out, lambda)?)
}

pub fn loss_spa(pred_out: &Image, c_in: &Image) -> Result<f64> {
    let mut tape = Tape::new();
    let p = image_const(&mut tape, pred_out);
    let l = loss_spa_var(&mut tape, p, c_in)?;
    Ok(tape.item(l))
}

pub fn loss_cc(views: &[(&Image, f64)]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<(Var, Var)> = views
        .iter()
        .map(|(img, s)| (image_const(&mut tape, img), tape.scalar(*s)))
        .collect();
    let l = loss_cc_var(&mut tape, &vars)?;
    Ok(tape.item(l))
}

pub fn loss_curve(lut: &[f64], cdf: &[f64], power: &[f64], s: &[f64], omega: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let v: Vec<Var> = [lut, cdf, power, s]
        .iter()
        .map(|c| tape.constant(c.to_vec(), &[c.len()]))
        .collect();
    let l = loss_curve_var(&mut tape, v[0], v[1], v[2], v[3], omega)?;
    Ok(tape.item(l))
}

pub fn loss_tv(lut: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(lut.to_vec(), &[lut.len()]);
    let l = loss_tv_var(&mut tape, v)?;
    Ok(tape.item(l))
}

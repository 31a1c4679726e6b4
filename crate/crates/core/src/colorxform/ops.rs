//! Differentiable versions of the color transforms.

use super::{
    det3, grid, inverse3, lut_position, power_value, s_value, DET_GUARD, LUT_SIZE, PRIOR_EPS,
};
use crate::diffcore::{BackwardCtx, Tape, Var};
use crate::error::{Error, Result};

fn check_matrix(tape: &Tape, m: Var) -> Result<()> {
    if tape.numel(m) != 9 {
        return Err(Error::DimensionMismatch(format!(
            "color matrix has shape {:?}",
            tape.shape(m)
        )));
    }
    let det = det3(tape.value(m));
    if det.abs() < DET_GUARD || !det.is_finite() {
        return Err(Error::SingularMatrix(det));
    }
    Ok(())
}

impl Tape {
    /// `x[P, 3] · M[3, 3]`, rejecting near-singular matrices.
    pub fn apply_matrix(&mut self, x: Var, m: Var) -> Result<Var> {
        check_matrix(self, m)?;
        if self.shape(x).len() != 2 || self.shape(x)[1] != 3 {
            return Err(Error::DimensionMismatch(format!(
                "expected [pixels, 3], got {:?}",
                self.shape(x)
            )));
        }
        let m = if self.shape(m) == [3, 3] {
            m
        } else {
            self.reshape(m, &[3, 3])
        };
        Ok(self.matmul(x, m))
    }

    /// Exact 3x3 inverse; the backward pass is `-M⁻ᵀ G M⁻ᵀ`.
    pub fn invert_matrix(&mut self, m: Var) -> Result<Var> {
        check_matrix(self, m)?;
        let inv = inverse3(self.value(m));
        Ok(self.op(
            "invert_matrix",
            &[m],
            inv.to_vec(),
            &[3, 3],
            Box::new(|ctx: &BackwardCtx<'_>| {
                let y = ctx.output;
                let g = ctx.grad;
                // (Yᵀ G)
                let mut yt_g = [0.0; 9];
                for r in 0..3 {
                    for c in 0..3 {
                        yt_g[r * 3 + c] = (0..3).map(|k| y[k * 3 + r] * g[k * 3 + c]).sum();
                    }
                }
                // -(Yᵀ G) Yᵀ
                let mut out = vec![0.0; 9];
                for r in 0..3 {
                    for c in 0..3 {
                        out[r * 3 + c] =
                            -(0..3).map(|k| yt_g[r * 3 + k] * y[c * 3 + k]).sum::<f64>();
                    }
                }
                vec![Some(out)]
            }),
        ))
    }

    /// LUT lookup with linear interpolation at `clamp(v, 0, 1) * 255`.
    /// Values outside `(0, 1)` receive no gradient.
    pub fn apply_curve(&mut self, x: Var, lut: Var) -> Var {
        assert_eq!(
            self.numel(lut),
            LUT_SIZE,
            "tone curve must have {LUT_SIZE} entries"
        );
        let shape = self.shape(x).to_vec();
        let entries = self.value(lut);
        let value: Vec<f64> = self
            .value(x)
            .iter()
            .map(|&v| super::lut_eval(entries, v))
            .collect();
        self.op(
            "apply_curve",
            &[x, lut],
            value,
            &shape,
            Box::new(|ctx: &BackwardCtx<'_>| {
                let (xs, lut) = (ctx.input(0), ctx.input(1));
                let mut gx = ctx.needs(0).then(|| vec![0.0; xs.len()]);
                let mut glut = ctx.needs(1).then(|| vec![0.0; LUT_SIZE]);
                for (i, (&v, &g)) in xs.iter().zip(ctx.grad).enumerate() {
                    let (i0, t) = lut_position(v.clamp(0.0, 1.0));
                    if let Some(gx) = gx.as_mut() {
                        if v > 0.0 && v < 1.0 {
                            gx[i] = g * (lut[i0 + 1] - lut[i0]) * (LUT_SIZE - 1) as f64;
                        }
                    }
                    if let Some(gl) = glut.as_mut() {
                        gl[i0] += g * (1.0 - t);
                        gl[i0 + 1] += g * t;
                    }
                }
                vec![gx, glut]
            }),
        )
    }

    /// Power prior `(x + ε)^G` on the LUT grid for a scalar `g`.
    pub fn power_curve(&mut self, g: Var) -> Var {
        assert_eq!(self.numel(g), 1, "power exponent must be a scalar");
        let gv = self.value(g)[0];
        let value: Vec<f64> = (0..LUT_SIZE).map(|i| power_value(grid(i), gv)).collect();
        self.op(
            "power_curve",
            &[g],
            value,
            &[LUT_SIZE],
            Box::new(|ctx: &BackwardCtx<'_>| {
                let d: f64 = ctx
                    .output
                    .iter()
                    .zip(ctx.grad)
                    .enumerate()
                    .map(|(i, (y, g))| g * y * (grid(i) + PRIOR_EPS).ln())
                    .sum();
                vec![Some(vec![d])]
            }),
        )
    }

    /// Two-branch S-curve prior on the LUT grid for scalars `a`, `b`.
    pub fn s_curve(&mut self, a: Var, b: Var) -> Var {
        assert!(
            self.numel(a) == 1 && self.numel(b) == 1,
            "S-curve parameters must be scalars"
        );
        let (av, bv) = (self.value(a)[0], self.value(b)[0]);
        let value: Vec<f64> = (0..LUT_SIZE).map(|i| s_value(grid(i), av, bv)).collect();
        self.op(
            "s_curve",
            &[a, b],
            value,
            &[LUT_SIZE],
            Box::new(|ctx: &BackwardCtx<'_>| {
                let (a, b) = (ctx.input(0)[0], ctx.input(1)[0]);
                let (mut da, mut db) = (0.0, 0.0);
                for (i, g) in ctx.grad.iter().enumerate() {
                    let x = grid(i);
                    let (pa, pb) = s_partials(x, a, b);
                    da += g * pa;
                    db += g * pb;
                }
                vec![Some(vec![da]), Some(vec![db])]
            }),
        )
    }

    /// `L(x · M) · M⁻¹` for `x` of shape `[P, 3]`.
    pub fn global_adjust(&mut self, x: Var, m: Var, lut: Var) -> Result<Var> {
        let inv = self.invert_matrix(m)?;
        let mapped = self.apply_matrix(x, m)?;
        let curved = self.apply_curve(mapped, lut);
        self.apply_matrix(curved, inv)
    }
}

/// `(dy/dA, dy/dB)` of the S-curve at `x`. Terms with a zero base are 0.
fn s_partials(x: f64, a: f64, b: f64) -> (f64, f64) {
    if x <= a {
        let base = (1.0 - x / a).max(0.0);
        if base == 0.0 {
            return (1.0, 0.0);
        }
        let pb = base.powf(b);
        let da = 1.0 - pb - a * b * base.powf(b - 1.0) * x / (a * a);
        let db = -a * pb * base.ln();
        (da, db)
    } else {
        let u = (x - a) / (1.0 - a);
        let ub = u.powf(b);
        let da = 1.0 - ub + (1.0 - a) * b * u.powf(b - 1.0) * (x - 1.0) / ((1.0 - a) * (1.0 - a));
        let db = (1.0 - a) * ub * u.ln();
        (da, db)
    }
}

//! Loss kernels with hand-written backward passes.

use super::SATURATION_WEIGHT;
use crate::diffcore::{BackwardCtx, Tape, Var};
use crate::imaging::{
    blur_valid, gaussian_window, Image, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};

/// Side of the square average-pooling regions of the spatial loss.
pub const SPA_REGION: usize = 4;

/// The standard 11-tap window, shrunk to the largest odd size that fits
/// images smaller than that.
pub fn ssim_window_size(width: usize, height: usize) -> usize {
    let m = width.min(height).max(1);
    SSIM_WINDOW.min(if m % 2 == 1 { m } else { m - 1 })
}

/// Adjoint of [`blur_valid`].
fn blur_valid_transpose(g: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (wo, ho) = (w - k + 1, h - k + 1);
    let mut horiz = vec![0.0; wo * h];
    for y in 0..ho {
        for x in 0..wo {
            let v = g[y * wo + x];
            for t in 0..k {
                horiz[(y + t) * wo + x] += taps[t] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..wo {
            let v = horiz[y * wo + x];
            for t in 0..k {
                out[y * w + x + t] += taps[t] * v;
            }
        }
    }
    out
}

struct SsimEval {
    value: f64,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
}

/// Mean SSIM of two `[H, W, 3]` buffers and its gradient with respect
/// to both inputs.
fn ssim_eval(a: &[f64], b: &[f64], w: usize, h: usize, with_grad: bool) -> SsimEval {
    let taps = gaussian_window(ssim_window_size(w, h), SSIM_SIGMA);
    let n_pix = w * h;
    let mut value = 0.0;
    let mut grad_x = vec![0.0; if with_grad { n_pix * 3 } else { 0 }];
    let mut grad_y = grad_x.clone();
    for c in 0..3 {
        let x: Vec<f64> = (0..n_pix).map(|i| a[i * 3 + c]).collect();
        let y: Vec<f64> = (0..n_pix).map(|i| b[i * 3 + c]).collect();
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let mx = blur_valid(&x, w, h, &taps);
        let my = blur_valid(&y, w, h, &taps);
        let exx = blur_valid(&sq(&x, &x), w, h, &taps);
        let eyy = blur_valid(&sq(&y, &y), w, h, &taps);
        let exy = blur_valid(&sq(&x, &y), w, h, &taps);
        let n = mx.len();
        let k = 1.0 / (3.0 * n as f64);
        let mut g_mx = vec![0.0; n];
        let mut g_my = vec![0.0; n];
        let mut g_exx = vec![0.0; n];
        let mut g_eyy = vec![0.0; n];
        let mut g_exy = vec![0.0; n];
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * (exy[i] - ux * uy) + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = (exx[i] - ux * ux) + (eyy[i] - uy * uy) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            value += k * s;
            if with_grad {
                let d_a1 = k * a2 / (b1 * b2);
                let d_a2 = k * a1 / (b1 * b2);
                let d_b1 = -k * s / b1;
                let d_b2 = -k * s / b2;
                g_mx[i] = d_a1 * 2.0 * uy - d_a2 * 2.0 * uy + d_b1 * 2.0 * ux - d_b2 * 2.0 * ux;
                g_my[i] = d_a1 * 2.0 * ux - d_a2 * 2.0 * ux + d_b1 * 2.0 * uy - d_b2 * 2.0 * uy;
                g_exx[i] = d_b2;
                g_eyy[i] = d_b2;
                g_exy[i] = 2.0 * d_a2;
            }
        }
        if with_grad {
            let t_mx = blur_valid_transpose(&g_mx, w, h, &taps);
            let t_my = blur_valid_transpose(&g_my, w, h, &taps);
            let t_exx = blur_valid_transpose(&g_exx, w, h, &taps);
            let t_eyy = blur_valid_transpose(&g_eyy, w, h, &taps);
            let t_exy = blur_valid_transpose(&g_exy, w, h, &taps);
            for i in 0..n_pix {
                grad_x[i * 3 + c] = t_mx[i] + 2.0 * x[i] * t_exx[i] + y[i] * t_exy[i];
                grad_y[i * 3 + c] = t_my[i] + 2.0 * y[i] * t_eyy[i] + x[i] * t_exy[i];
            }
        }
    }
    SsimEval {
        value,
        grad_x,
        grad_y,
    }
}

/// Grayscale (channel mean) pooled over `SPA_REGION`-sized blocks;
/// remainder rows and columns are dropped.
fn pooled_gray(data: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (rw, rh) = (w / SPA_REGION, h / SPA_REGION);
    let norm = 1.0 / (3 * SPA_REGION * SPA_REGION) as f64;
    let mut out = vec![0.0; rw * rh];
    for ry in 0..rh {
        for rx in 0..rw {
            let mut s = 0.0;
            for y in ry * SPA_REGION..(ry + 1) * SPA_REGION {
                for x in rx * SPA_REGION..(rx + 1) * SPA_REGION {
                    let p = (y * w + x) * 3;
                    s += data[p] + data[p + 1] + data[p + 2];
                }
            }
            out[ry * rw + rx] = s * norm;
        }
    }
    (out, rw, rh)
}

/// In-bounds 4-neighbors of region `(x, y)`.
fn neighbors(x: usize, y: usize, rw: usize, rh: usize) -> impl Iterator<Item = usize> {
    let cands = [
        (x > 0).then(|| y * rw + x - 1),
        (x + 1 < rw).then(|| y * rw + x + 1),
        (y > 0).then(|| (y - 1) * rw + x),
        (y + 1 < rh).then(|| (y + 1) * rw + x),
    ];
    cands.into_iter().flatten()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Guard on the per-pixel channel mean of the saturation term.
const MEAN_CHANNEL_EPS: f64 = 1e-8;
const PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

/// Value of one view's color-constancy term and its gradients with
/// respect to the image and the exponent.
fn color_constancy_eval(img: &[f64], s: f64) -> (f64, Vec<f64>, f64) {
    let n = img.len() / 3;
    let inv_n = 1.0 / n as f64;
    let u: Vec<f64> = img.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let live: Vec<bool> = img.iter().map(|&v| v > 0.0 && v < 1.0).collect();
    let pw: Vec<f64> = u.iter().map(|v| v.powf(s)).collect();
    let mut g_img = vec![0.0; img.len()];
    let mut g_s = 0.0;
    let mut value = 0.0;
    for (p, q) in PAIRS {
        let mut m = 0.0;
        let mut dm_ds = 0.0;
        for i in 0..n {
            let (a, b) = (i * 3 + p, i * 3 + q);
            let e = pw[a] - pw[b];
            m += e.abs();
            let ln_term = |k: usize| if u[k] > 0.0 { pw[k] * u[k].ln() } else { 0.0 };
            dm_ds += sign(e) * (ln_term(a) - ln_term(b));
        }
        m *= inv_n;
        dm_ds *= inv_n;
        if m <= 0.0 {
            continue;
        }
        let d = m.powf(1.0 / s);
        value += d / 3.0;
        // d = m^(1/s)
        let dd_dm = d / (s * m);
        g_s += (d * (-m.ln() / (s * s)) + dd_dm * dm_ds) / 3.0;
        for i in 0..n {
            let (a, b) = (i * 3 + p, i * 3 + q);
            let e = sign(pw[a] - pw[b]);
            if e == 0.0 {
                continue;
            }
            let c = dd_dm / 3.0 * e * inv_n * s;
            if live[a] {
                g_img[a] += c * u[a].powf(s - 1.0);
            }
            if live[b] {
                g_img[b] -= c * u[b].powf(s - 1.0);
            }
        }
    }
    // Saturation: mean over pixels of 1 - min/mean channel.
    let mut delta = 0.0;
    for i in 0..n {
        let px = &u[i * 3..i * 3 + 3];
        let mc = (px[0] + px[1] + px[2]) / 3.0;
        // Equal channels are exactly neutral; skip so rounding in `mc` cannot leak in.
        if mc < MEAN_CHANNEL_EPS || (px[0] == px[1] && px[1] == px[2]) {
            continue;
        }
        let (k_min, mn) =
            px.iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |best, (k, v)| if v < best.1 { (k, v) } else { best },
                );
        delta += 1.0 - mn / mc;
        let c = -SATURATION_WEIGHT * inv_n;
        for k in 0..3 {
            let mut d = mn / (3.0 * mc * mc);
            if k == k_min {
                d -= 1.0 / mc;
            }
            if live[i * 3 + k] {
                g_img[i * 3 + k] += c * d;
            }
        }
    }
    value -= SATURATION_WEIGHT * delta * inv_n;
    (value, g_img, g_s)
}

impl Tape {
    /// Mean SSIM of two `[H, W, 3]` images (window shrunk for small images).
    pub fn ssim_var(&mut self, a: Var, b: Var, width: usize, height: usize) -> Var {
        let value = ssim_eval(self.value(a), self.value(b), width, height, false).value;
        self.op(
            "ssim",
            &[a, b],
            vec![value],
            &[1],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let e = ssim_eval(ctx.input(0), ctx.input(1), width, height, true);
                let g = ctx.grad[0];
                vec![
                    ctx.needs(0)
                        .then(|| e.grad_x.iter().map(|v| v * g).collect()),
                    ctx.needs(1)
                        .then(|| e.grad_y.iter().map(|v| v * g).collect()),
                ]
            }),
        )
    }

    /// Spatial-consistency loss of `pred` (`[H, W, 3]`) against a fixed
    /// input view.
    pub(crate) fn spa_var(&mut self, pred: Var, c_in: &Image) -> Var {
        let (w, h) = (c_in.width(), c_in.height());
        let (d_in, rw, rh) = pooled_gray(c_in.data(), w, h);
        let factor = 0.5 / c_in.mean().max(1e-6);
        let (d_out, _, _) = pooled_gray(self.value(pred), w, h);
        let k = (rw * rh) as f64;
        let mut value = 0.0;
        for ry in 0..rh {
            for rx in 0..rw {
                let x = ry * rw + rx;
                for y in neighbors(rx, ry, rw, rh) {
                    let e = (d_out[x] - d_out[y]).abs() - factor * (d_in[x] - d_in[y]).abs();
                    value += e * e;
                }
            }
        }
        self.op(
            "spa",
            &[pred],
            vec![value / k],
            &[1],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (d_out, _, _) = pooled_gray(ctx.input(0), w, h);
                let mut g_region = vec![0.0; rw * rh];
                let scale = ctx.grad[0] / k;
                for ry in 0..rh {
                    for rx in 0..rw {
                        let x = ry * rw + rx;
                        for y in neighbors(rx, ry, rw, rh) {
                            let diff = d_out[x] - d_out[y];
                            let e = diff.abs() - factor * (d_in[x] - d_in[y]).abs();
                            let g = 2.0 * e * sign(diff) * scale;
                            g_region[x] += g;
                            g_region[y] -= g;
                        }
                    }
                }
                let norm = 1.0 / (3 * SPA_REGION * SPA_REGION) as f64;
                let mut g = vec![0.0; w * h * 3];
                for ry in 0..rh {
                    for rx in 0..rw {
                        let gr = g_region[ry * rw + rx] * norm;
                        for y in ry * SPA_REGION..(ry + 1) * SPA_REGION {
                            for x in rx * SPA_REGION..(rx + 1) * SPA_REGION {
                                let p = (y * w + x) * 3;
                                g[p..p + 3].iter_mut().for_each(|v| *v = gr);
                            }
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// One view's color-constancy term; `s` is a `[1]` node.
    pub(crate) fn color_constancy_var(&mut self, img: Var, s: Var) -> Var {
        let (value, _, _) = color_constancy_eval(self.value(img), self.item(s));
        self.op(
            "color_constancy",
            &[img, s],
            vec![value],
            &[1],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (_, g_img, g_s) = color_constancy_eval(ctx.input(0), ctx.input(1)[0]);
                let g = ctx.grad[0];
                vec![
                    ctx.needs(0)
                        .then(|| g_img.into_iter().map(|v| v * g).collect()),
                    ctx.needs(1).then(|| vec![g_s * g]),
                ]
            }),
        )
    }
}

//! Convolution and normalization ops on channels-last feature maps.
//!
//! Feature maps are stored `[height, width, channels]`, so a pixel's
//! channels are contiguous and 1x1 convolutions are plain matmuls.

use rand::Rng;

use super::tape::{Tape, Var};

/// Runs `f` compiled with AVX2 enabled when the CPU supports it. Only
/// the vector width changes; every element sees the same operations in the
/// same order, so results are bitwise identical on both paths.
#[inline]
fn wide<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "avx2")]
        unsafe fn avx2<R>(f: impl FnOnce() -> R) -> R {
            f()
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { avx2(f) };
        }
    }
    f()
}

/// `out += a * x`.
#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    #[inline(always)]
    fn fixed<const N: usize>(out: &mut [f64], a: f64, x: &[f64]) {
        let out: &mut [f64; N] = out.try_into().expect("axpy length");
        let x: &[f64; N] = x.try_into().expect("axpy length");
        for i in 0..N {
            out[i] += a * x[i];
        }
    }
    // Fixed widths let the compiler fully vectorize the common channel counts.
    match out.len() {
        16 => fixed::<16>(out, a, x),
        64 => fixed::<64>(out, a, x),
        _ => out.iter_mut().zip(x).for_each(|(o, v)| *o += a * v),
    }
}

/// `out += x * y` elementwise.
#[inline]
fn fma_rows(out: &mut [f64], x: &[f64], y: &[f64]) {
    #[inline(always)]
    fn fixed<const N: usize>(out: &mut [f64], x: &[f64], y: &[f64]) {
        let out: &mut [f64; N] = out.try_into().expect("row length");
        let x: &[f64; N] = x.try_into().expect("row length");
        let y: &[f64; N] = y.try_into().expect("row length");
        for i in 0..N {
            out[i] += x[i] * y[i];
        }
    }
    match out.len() {
        16 => fixed::<16>(out, x, y),
        64 => fixed::<64>(out, x, y),
        _ => out
            .iter_mut()
            .zip(x.iter().zip(y))
            .for_each(|(o, (a, b))| *o += a * b),
    }
}

/// `n` weights drawn uniformly from `±1/sqrt(fan_in)`.
pub fn uniform_init(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Maps an arbitrary integer coordinate into `[0, n)` by mirror reflection
/// without repeating the edge sample (`-1 -> 1`, `n -> n - 2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2dSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

impl Tape {
    /// Dense 2-D convolution with zero padding.
    ///
    /// `x: [h, w, cin]`, `weight: [k, k, cin, cout]`, `bias: [cout]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, spec: Conv2dSpec) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        assert_eq!(xs.len(), 3, "conv2d input must be [h, w, c]");
        assert_eq!(ws.len(), 4, "conv2d weight must be [k, k, cin, cout]");
        let (h, w, cin) = (xs[0], xs[1], xs[2]);
        let (k, cout) = (spec.kernel, ws[3]);
        assert!(
            ws[0] == k && ws[1] == k && ws[2] == cin,
            "conv2d weight shape {ws:?} mismatch"
        );
        assert_eq!(self.numel(bias), cout);
        let (ho, wo) = (spec.out_dim(h), spec.out_dim(w));
        let taps = move |oy: usize, ox: usize| {
            (0..k)
                .flat_map(move |ky| (0..k).map(move |kx| (ky, kx)))
                .filter_map(move |(ky, kx)| {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                    (iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w).then_some((
                        ky,
                        kx,
                        iy as usize,
                        ix as usize,
                    ))
                })
        };

        let (vx, vw, vb) = (self.value(x), self.value(weight), self.value(bias));
        let mut out = vec![0.0; ho * wo * cout];
        for oy in 0..ho {
            for ox in 0..wo {
                let o = &mut out[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                o.copy_from_slice(vb);
                for (ky, kx, iy, ix) in taps(oy, ox) {
                    let xin = &vx[(iy * w + ix) * cin..(iy * w + ix + 1) * cin];
                    for (ci, xv) in xin.iter().enumerate() {
                        let wrow = &vw[((ky * k + kx) * cin + ci) * cout..][..cout];
                        for (acc, wv) in o.iter_mut().zip(wrow) {
                            *acc += xv * wv;
                        }
                    }
                }
            }
        }

        self.op(
            "conv2d",
            &[x, weight, bias],
            out,
            &[ho, wo, cout],
            Box::new(move |ctx| {
                let (vx, vw, g) = (ctx.input(0), ctx.input(1), ctx.grad);
                let mut gx = ctx.needs(0).then(|| vec![0.0; h * w * cin]);
                let mut gw = ctx.needs(1).then(|| vec![0.0; k * k * cin * cout]);
                let mut gb = ctx.needs(2).then(|| vec![0.0; cout]);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let go = &g[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                        if let Some(gb) = gb.as_mut() {
                            gb.iter_mut().zip(go).for_each(|(a, b)| *a += b);
                        }
                        for (ky, kx, iy, ix) in taps(oy, ox) {
                            let base = (iy * w + ix) * cin;
                            for ci in 0..cin {
                                let widx = ((ky * k + kx) * cin + ci) * cout;
                                if let Some(gx) = gx.as_mut() {
                                    let wrow = &vw[widx..widx + cout];
                                    gx[base + ci] +=
                                        wrow.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
                                }
                                if let Some(gw) = gw.as_mut() {
                                    let xv = vx[base + ci];
                                    gw[widx..widx + cout]
                                        .iter_mut()
                                        .zip(go)
                                        .for_each(|(a, b)| *a += xv * b);
                                }
                            }
                        }
                    }
                }
                vec![gx, gw, gb]
            }),
        )
    }

    /// Depthwise `k x k` convolution with reflect padding and stride 1.
    ///
    /// `x: [h, w, c]`, `weight: [k, k, c]`, `bias: [c]`.
    pub fn depthwise_conv_reflect(&mut self, x: Var, weight: Var, bias: Var, k: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "depthwise input must be [h, w, c]");
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        assert_eq!(self.numel(weight), k * k * c);
        assert_eq!(self.numel(bias), c);
        assert!(k % 2 == 1, "depthwise kernel must be odd");
        let pad = (k / 2) as isize;
        // Source pixel for every (output pixel, tap), shared by forward and backward.
        let mut src = Vec::with_capacity(h * w * k * k);
        for y in 0..h {
            for x in 0..w {
                for ky in 0..k {
                    let iy = reflect_index(y as isize + ky as isize - pad, h);
                    for kx in 0..k {
                        let ix = reflect_index(x as isize + kx as isize - pad, w);
                        src.push((iy * w + ix) as u32);
                    }
                }
            }
        }

        let (vx, vw, vb) = (self.value(x), self.value(weight), self.value(bias));
        let mut out = vec![0.0; h * w * c];
        wide(|| {
            for (p, o) in out.chunks_mut(c).enumerate() {
                o.copy_from_slice(vb);
                for (t, &s) in src[p * k * k..(p + 1) * k * k].iter().enumerate() {
                    let xin = &vx[s as usize * c..(s as usize + 1) * c];
                    fma_rows(o, xin, &vw[t * c..(t + 1) * c]);
                }
            }
        });

        self.op(
            "depthwise_conv",
            &[x, weight, bias],
            out,
            &[h, w, c],
            Box::new(move |ctx| {
                let (vx, vw, g) = (ctx.input(0), ctx.input(1), ctx.grad);
                let mut gx = ctx.needs(0).then(|| vec![0.0; h * w * c]);
                let mut gw = ctx.needs(1).then(|| vec![0.0; k * k * c]);
                let gb = ctx.needs(2).then(|| {
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                });
                wide(|| {
                    for (p, go) in g.chunks(c).enumerate() {
                        for (t, &s) in src[p * k * k..(p + 1) * k * k].iter().enumerate() {
                            let s = s as usize;
                            if let Some(gx) = gx.as_mut() {
                                fma_rows(&mut gx[s * c..(s + 1) * c], go, &vw[t * c..(t + 1) * c]);
                            }
                            if let Some(gw) = gw.as_mut() {
                                fma_rows(&mut gw[t * c..(t + 1) * c], go, &vx[s * c..(s + 1) * c]);
                            }
                        }
                    }
                });
                vec![gx, gw, gb]
            }),
        )
    }

    /// `x[m, k] · w[k, n] + b[n]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let y = self.matmul(x, weight);
        self.add_bias(y, bias)
    }

    /// 1x1 convolution: `x: [h, w, cin]`, `weight: [cin, cout]`.
    pub fn pointwise_conv(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "pointwise conv input must be [h, w, c]");
        let (cin, cout) = (xs[2], self.shape(weight)[1]);
        assert_eq!(
            self.shape(weight),
            &[cin, cout],
            "pointwise weight must be [cin, cout]"
        );
        assert_eq!(self.numel(bias), cout);
        let (vx, vw, vb) = (self.value(x), self.value(weight), self.value(bias));
        let mut out = vec![0.0; xs[0] * xs[1] * cout];
        wide(|| {
            for (orow, xrow) in out.chunks_mut(cout).zip(vx.chunks(cin)) {
                orow.copy_from_slice(vb);
                for (&xv, wrow) in xrow.iter().zip(vw.chunks(cout)) {
                    axpy(orow, xv, wrow);
                }
            }
        });
        self.op(
            "pointwise_conv",
            &[x, weight, bias],
            out,
            &[xs[0], xs[1], cout],
            Box::new(move |ctx| {
                let (vx, vw, g) = (ctx.input(0), ctx.input(1), ctx.grad);
                let gx = ctx.needs(0).then(|| {
                    let wt = super::ops::transpose_kernel(vw, cin, cout);
                    let mut gx = vec![0.0; vx.len()];
                    wide(|| {
                        for (gxrow, grow) in gx.chunks_mut(cin).zip(g.chunks(cout)) {
                            for (&gv, wtrow) in grow.iter().zip(wt.chunks(cin)) {
                                axpy(gxrow, gv, wtrow);
                            }
                        }
                    });
                    gx
                });
                let gw = ctx.needs(1).then(|| {
                    let mut gw = vec![0.0; cin * cout];
                    wide(|| {
                        for (xrow, grow) in vx.chunks(cin).zip(g.chunks(cout)) {
                            for (&xv, gwrow) in xrow.iter().zip(gw.chunks_mut(cout)) {
                                axpy(gwrow, xv, grow);
                            }
                        }
                    });
                    gw
                });
                let gb = ctx.needs(2).then(|| {
                    let mut gb = vec![0.0; cout];
                    for grow in g.chunks(cout) {
                        gb.iter_mut().zip(grow).for_each(|(a, gv)| *a += gv);
                    }
                    gb
                });
                vec![gx, gw, gb]
            }),
        )
    }

    /// Layer normalization over the last dimension with affine scale/shift.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("layer norm on empty shape");
        assert_eq!(self.numel(gamma), n);
        assert_eq!(self.numel(beta), n);
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let rows = vx.len() / n;
        let mut xhat = Vec::with_capacity(vx.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(vx.len());
        for row in vx.chunks(n) {
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mu) * is;
                xhat.push(xh);
                out.push(xh * vg[j] + vb[j]);
            }
        }
        self.op(
            "layer_norm",
            &[x, gamma, beta],
            out,
            &shape,
            Box::new(move |ctx| {
                let (vg, g) = (ctx.input(1), ctx.grad);
                let mut gx = ctx.needs(0).then(|| vec![0.0; g.len()]);
                let mut gg = ctx.needs(1).then(|| vec![0.0; n]);
                let mut gb = ctx.needs(2).then(|| vec![0.0; n]);
                let mut gxh = vec![0.0; n];
                for r in 0..rows {
                    let grow = &g[r * n..(r + 1) * n];
                    let xrow = &xhat[r * n..(r + 1) * n];
                    if let Some(gg) = gg.as_mut() {
                        gg.iter_mut()
                            .zip(grow.iter().zip(xrow))
                            .for_each(|(a, (g, x))| *a += g * x);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb.iter_mut().zip(grow).for_each(|(a, g)| *a += g);
                    }
                    if let Some(gx) = gx.as_mut() {
                        for j in 0..n {
                            gxh[j] = grow[j] * vg[j];
                        }
                        let m1 = gxh.iter().sum::<f64>() / n as f64;
                        let m2 = gxh.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx[r * n + j] = inv_std[r] * (gxh[j] - m1 - xrow[j] * m2);
                        }
                    }
                }
                vec![gx, gg, gb]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-3, 5), 3);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(7, 5), 1);
        assert_eq!(reflect_index(-4, 2), 0);
        assert_eq!(reflect_index(3, 1), 0);
        for i in -20..20 {
            assert!(reflect_index(i, 3) < 3);
        }
    }

    #[test]
    fn conv_output_size() {
        let spec = Conv2dSpec {
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        assert_eq!(spec.out_dim(32), 16);
        assert_eq!(spec.out_dim(16), 8);
    }
}

//! Elementwise, reduction and dense linear-algebra ops.
//!
//! Binary elementwise ops accept either equal-length operands or a
//! single-element operand that is broadcast against the other.

use super::tape::{BackwardCtx, Tape, Var};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// `tanh` through a single `exp`, which is markedly cheaper than `f64::tanh`.
fn fast_tanh(u: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

/// GELU (tanh form) and its derivative from one transcendental call.
pub(crate) fn gelu_with_slope(x: f64) -> (f64, f64) {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = fast_tanh(u);
    let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
    (
        0.5 * x * (1.0 + t),
        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du,
    )
}

pub(crate) fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_len(a: usize, b: usize) -> usize {
    if a == b || b == 1 {
        a
    } else if a == 1 {
        b
    } else {
        panic!("incompatible operand lengths {a} and {b}")
    }
}

/// Sums `full` down to the operand's length (identity when lengths match).
fn reduce_to(len: usize, full: Vec<f64>) -> Vec<f64> {
    if len == full.len() {
        full
    } else {
        vec![full.iter().sum()]
    }
}

impl Tape {
    fn binary_shape(&self, a: Var, b: Var) -> Vec<usize> {
        let (la, lb) = (self.numel(a), self.numel(b));
        let n = broadcast_len(la, lb);
        if la == n {
            self.shape(a).to_vec()
        } else {
            debug_assert_eq!(lb, n);
            self.shape(b).to_vec()
        }
    }

    /// Elementwise op with partial derivatives `df(x, y) -> (dx, dy)`.
    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64) -> (f64, f64),
    ) -> Var {
        let shape = self.binary_shape(a, b);
        let (va, vb) = (self.value(a), self.value(b));
        let n = broadcast_len(va.len(), vb.len());
        let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let value: Vec<f64> = (0..n).map(|i| f(at(va, i), at(vb, i))).collect();
        let (la, lb) = (va.len(), vb.len());
        self.op(
            name,
            &[a, b],
            value,
            &shape,
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let (va, vb) = (ctx.input(0), ctx.input(1));
                let at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                let mut ga = vec![0.0; ctx.grad.len()];
                let mut gb = vec![0.0; ctx.grad.len()];
                for (i, g) in ctx.grad.iter().enumerate() {
                    let (dx, dy) = df(at(va, i), at(vb, i));
                    ga[i] = g * dx;
                    gb[i] = g * dy;
                }
                vec![
                    ctx.needs(0).then(|| reduce_to(la, ga)),
                    ctx.needs(1).then(|| reduce_to(lb, gb)),
                ]
            }),
        )
    }

    /// Elementwise op whose derivative is expressed through input and output.
    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: fn(f64, f64) -> f64,
    ) -> Var {
        let shape = self.shape(x).to_vec();
        let value: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        self.op(
            name,
            &[x],
            value,
            &shape,
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx
                    .grad
                    .iter()
                    .zip(ctx.input(0))
                    .zip(ctx.output)
                    .map(|((g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary("add", a, b, |x, y| x + y, |_, _| (1.0, 1.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary("sub", a, b, |x, y| x - y, |_, _| (1.0, -1.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary("mul", a, b, |x, y| x * y, |x, y| (y, x))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary("div", a, b, |x, y| x / y, |x, y| (1.0 / y, -x / (y * y)))
    }

    /// `base^exponent` with a single-element exponent. Bases at or below
    /// zero contribute zero value and zero gradient.
    pub fn powf(&mut self, base: Var, exponent: Var) -> Var {
        assert_eq!(self.numel(exponent), 1, "powf exponent must be a scalar");
        self.binary(
            "powf",
            base,
            exponent,
            |x, e| if x > 0.0 { x.powf(e) } else { 0.0 },
            |x, e| {
                if x > 0.0 {
                    let y = x.powf(e);
                    (e * y / x, y * x.ln())
                } else {
                    (0.0, 0.0)
                }
            },
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let value = self.value(x).iter().map(|v| v * c).collect();
        self.op(
            "scale",
            &[x],
            value,
            &shape,
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|g| g * c).collect())]),
        )
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let value = self.value(x).iter().map(|v| v + c).collect();
        self.op(
            "offset",
            &[x],
            value,
            &shape,
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        )
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary("square", x, |v| v * v, |x, _| 2.0 * x)
    }

    /// |x| with subgradient 0 at the kink.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary("abs", x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary("exp", x, f64::exp, |_, y| y)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary("ln", x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary("recip", x, |v| 1.0 / v, |_, y| -y * y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary("sigmoid", x, sigmoid_value, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Tanh-approximated GeLU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let vx = self.value(x);
        let mut value = vec![0.0; vx.len()];
        let mut slope = vec![0.0; vx.len()];
        for ((&v, y), d) in vx.iter().zip(&mut value).zip(&mut slope) {
            (*y, *d) = gelu_with_slope(v);
        }
        self.op(
            "gelu",
            &[x],
            value,
            &shape,
            Box::new(move |ctx| {
                vec![Some(
                    ctx.grad.iter().zip(&slope).map(|(g, d)| g * d).collect(),
                )]
            }),
        )
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let value = self.value(x).iter().map(|v| v.clamp(lo, hi)).collect();
        self.op(
            "clamp",
            &[x],
            value,
            &shape,
            Box::new(move |ctx| {
                let g = ctx
                    .grad
                    .iter()
                    .zip(ctx.input(0))
                    .map(|(g, &x)| if x > lo && x < hi { *g } else { 0.0 })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let n = self.numel(x);
        self.op(
            "sum",
            &[x],
            vec![s],
            &[1],
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.numel(x);
        let s: f64 = self.value(x).iter().sum();
        self.op(
            "mean",
            &[x],
            vec![s / n as f64],
            &[1],
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0] / n as f64; n])]),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(x),
            "reshape changes element count"
        );
        let value = self.value(x).to_vec();
        self.op(
            "reshape",
            &[x],
            value,
            shape,
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        )
    }

    /// Contiguous flat sub-range `[start, start + len)`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let n = self.numel(x);
        assert!(start + len <= n, "slice out of range");
        let value = self.value(x)[start..start + len].to_vec();
        self.op(
            "slice",
            &[x],
            value,
            &[len],
            Box::new(move |ctx| {
                let mut g = vec![0.0; n];
                g[start..start + len].copy_from_slice(ctx.grad);
                vec![Some(g)]
            }),
        )
    }

    /// `[m, k] x [k, n] -> [m, n]`, row-major.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shape mismatch {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = matmul_kernel(self.value(a), self.value(b), m, k, n);
        self.op(
            "matmul",
            &[a, b],
            value,
            &[m, n],
            Box::new(move |ctx| {
                let (va, vb, g) = (ctx.input(0), ctx.input(1), ctx.grad);
                let ga = ctx.needs(0).then(|| {
                    // dA = G * B^T, computed row by row against B^T.
                    let bt = transpose_kernel(vb, k, n);
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &mut ga[i * k..(i + 1) * k];
                        for (j, gv) in grow.iter().enumerate() {
                            if *gv == 0.0 {
                                continue;
                            }
                            let btrow = &bt[j * k..(j + 1) * k];
                            for (acc, bv) in arow.iter_mut().zip(btrow) {
                                *acc += gv * bv;
                            }
                        }
                    }
                    ga
                });
                let gb = ctx.needs(1).then(|| {
                    // dB = A^T * G
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let arow = &va[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (p, av) in arow.iter().enumerate() {
                            if *av == 0.0 {
                                continue;
                            }
                            let brow = &mut gb[p * n..(p + 1) * n];
                            for (acc, gv) in brow.iter_mut().zip(grow) {
                                *acc += av * gv;
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("add_bias on empty shape");
        assert_eq!(
            self.numel(bias),
            n,
            "bias length must match the last dimension"
        );
        let vb = self.value(bias);
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(n) {
            row.iter_mut().zip(vb).for_each(|(a, b)| *a += b);
        }
        self.op(
            "add_bias",
            &[x, bias],
            value,
            &shape,
            Box::new(move |ctx| {
                let gb = ctx.needs(1).then(|| {
                    let mut gb = vec![0.0; n];
                    for row in ctx.grad.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                    gb
                });
                vec![ctx.needs(0).then(|| ctx.grad.to_vec()), gb]
            }),
        )
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        assert_eq!(s.len(), 2, "transpose expects a matrix");
        let (m, n) = (s[0], s[1]);
        let value = transpose_kernel(self.value(x), m, n);
        self.op(
            "transpose",
            &[x],
            value,
            &[n, m],
            Box::new(move |ctx| vec![Some(transpose_kernel(ctx.grad, n, m))]),
        )
    }

    /// Row-wise softmax over an `[m, n]` matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("softmax on empty shape");
        let mut value = Vec::with_capacity(self.numel(x));
        for row in self.value(x).chunks(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            value.extend(exps.iter().map(|e| e / z));
        }
        self.op(
            "softmax",
            &[x],
            value,
            &shape,
            Box::new(move |ctx| {
                let mut g = Vec::with_capacity(ctx.grad.len());
                for (yrow, grow) in ctx.output.chunks(n).zip(ctx.grad.chunks(n)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    g.extend(yrow.iter().zip(grow).map(|(y, gv)| y * (gv - dot)));
                }
                vec![Some(g)]
            }),
        )
    }
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_kernel(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

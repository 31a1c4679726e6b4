//! View-adaptive generators: a small image/camera cross-attention network
//! that emits either the per-view curve bias or the per-view scalars
//! (Minkowski order and prior parameters).
//!
//! Trunk: the input pooled to 32x32 passes through two stride-2 3x3 convs
//! (3→16→16, GeLU) giving 64 tokens. A query projected from the flattened
//! world-to-camera matrix attends over them (single head, residual on the
//! query), then a 16→64→out feed-forward head with GeLU produces the raw
//! outputs. The output layer starts at zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::colorxform::LUT_SIZE;
use crate::diffcore::{uniform_init, Conv2dSpec, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::imaging::Image;

pub const POOL_SIZE: usize = 32;
pub const WIDTH: usize = 16;
pub const FF_WIDTH: usize = 64;
pub const SCALAR_OUTPUTS: usize = 4;

pub const S_RANGE: (f64, f64) = (1.0, 12.0);
pub const PRIOR_EXP_RANGE: (f64, f64) = (0.25, 4.0);
pub const PIVOT_RANGE: (f64, f64) = (0.05, 0.95);

const CONV: Conv2dSpec = Conv2dSpec {
    kernel: 3,
    stride: 2,
    padding: 1,
};

/// Parameter handles of one generator; values live in the [`ParamStore`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorWeights {
    pub out_dim: usize,
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    key_w: ParamId,
    key_b: ParamId,
    value_w: ParamId,
    value_b: ParamId,
    query_w: ParamId,
    query_b: ParamId,
    ff_w: ParamId,
    ff_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl GeneratorWeights {
    /// Registers a freshly initialized generator under `prefix`.
    pub fn new(store: &mut ParamStore, prefix: &str, out_dim: usize, rng: &mut impl Rng) -> Self {
        let mut add = |name: &str, values: Vec<f64>, shape: &[usize]| {
            store.add(format!("{prefix}.{name}"), values, shape)
        };
        let w = WIDTH;
        let conv1_w = add("conv1.w", uniform_init(rng, 9 * 3 * w, 27), &[3, 3, 3, w]);
        let conv1_b = add("conv1.b", vec![0.0; w], &[w]);
        let conv2_w = add(
            "conv2.w",
            uniform_init(rng, 9 * w * w, 9 * w),
            &[3, 3, w, w],
        );
        let conv2_b = add("conv2.b", vec![0.0; w], &[w]);
        let key_w = add("key.w", uniform_init(rng, w * w, w), &[w, w]);
        let key_b = add("key.b", vec![0.0; w], &[w]);
        let value_w = add("value.w", uniform_init(rng, w * w, w), &[w, w]);
        let value_b = add("value.b", vec![0.0; w], &[w]);
        let query_w = add("query.w", uniform_init(rng, 16 * w, 16), &[16, w]);
        let query_b = add("query.b", vec![0.0; w], &[w]);
        let ff_w = add("ff.w", uniform_init(rng, w * FF_WIDTH, w), &[w, FF_WIDTH]);
        let ff_b = add("ff.b", vec![0.0; FF_WIDTH], &[FF_WIDTH]);
        let out_w = add("out.w", vec![0.0; FF_WIDTH * out_dim], &[FF_WIDTH, out_dim]);
        let out_b = add("out.b", vec![0.0; out_dim], &[out_dim]);
        Self {
            out_dim,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            key_w,
            key_b,
            value_w,
            value_b,
            query_w,
            query_b,
            ff_w,
            ff_b,
            out_w,
            out_b,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.conv1_w,
            self.conv1_b,
            self.conv2_w,
            self.conv2_b,
            self.key_w,
            self.key_b,
            self.value_w,
            self.value_b,
            self.query_w,
            self.query_b,
            self.ff_w,
            self.ff_b,
            self.out_w,
            self.out_b,
        ]
    }

    pub fn query_weight(&self) -> ParamId {
        self.query_w
    }

    pub fn trunk_weight(&self) -> ParamId {
        self.conv1_w
    }

    pub fn output_weight(&self) -> ParamId {
        self.out_w
    }

    /// Raw outputs `[out_dim]` for a pooled `[32, 32, 3]` input and a
    /// `[1, 16]` camera row.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        pooled: Var,
        camera: Var,
    ) -> Result<Var> {
        let p = |tape: &mut Tape, id| tape.param(store, id);
        let (c1w, c1b) = (p(tape, self.conv1_w), p(tape, self.conv1_b));
        let h = tape.conv2d(pooled, c1w, c1b, CONV);
        let h = tape.gelu(h);
        let (c2w, c2b) = (p(tape, self.conv2_w), p(tape, self.conv2_b));
        let h = tape.conv2d(h, c2w, c2b, CONV);
        let h = tape.gelu(h);
        let n_tokens = tape.numel(h) / WIDTH;
        let tokens = tape.reshape(h, &[n_tokens, WIDTH]);

        let (kw, kb) = (p(tape, self.key_w), p(tape, self.key_b));
        let keys = tape.linear(tokens, kw, kb);
        let (vw, vb) = (p(tape, self.value_w), p(tape, self.value_b));
        let values = tape.linear(tokens, vw, vb);
        let (qw, qb) = (p(tape, self.query_w), p(tape, self.query_b));
        let query = tape.linear(camera, qw, qb);

        let keys_t = tape.transpose(keys);
        let scores = tape.matmul(query, keys_t);
        let scores = tape.scale(scores, 1.0 / (WIDTH as f64).sqrt());
        let attn = tape.softmax_rows(scores);
        let context = tape.matmul(attn, values);
        let h = tape.add(query, context);

        let (fw, fb) = (p(tape, self.ff_w), p(tape, self.ff_b));
        let h = tape.linear(h, fw, fb);
        let h = tape.gelu(h);
        let (ow, ob) = (p(tape, self.out_w), p(tape, self.out_b));
        let out = tape.linear(h, ow, ob);
        if tape.value(out).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("view-adaptive generator"));
        }
        Ok(tape.reshape(out, &[self.out_dim]))
    }
}

/// Area-pools an input view to the generator resolution.
pub fn pool_input(img: &Image) -> Image {
    img.resize_area(POOL_SIZE, POOL_SIZE)
}

/// Places a pooled image and a row-major 4x4 camera matrix on the tape.
pub fn input_vars(tape: &mut Tape, pooled: &Image, camera: &[f64; 16]) -> Result<(Var, Var)> {
    if pooled.width() != POOL_SIZE || pooled.height() != POOL_SIZE {
        return Err(Error::DimensionMismatch(format!(
            "generator input must be {POOL_SIZE}x{POOL_SIZE}, got {}x{}",
            pooled.width(),
            pooled.height()
        )));
    }
    let x = tape.constant(pooled.data().to_vec(), &[POOL_SIZE, POOL_SIZE, 3]);
    let c = tape.constant(camera.to_vec(), &[1, 16]);
    Ok((x, c))
}

/// Per-view scalars after squashing into their ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScalars {
    /// Minkowski order S.
    pub s: f64,
    /// Power-prior exponent G.
    pub g: f64,
    /// S-curve pivot A.
    pub a: f64,
    /// S-curve exponent B.
    pub b: f64,
}

/// The same scalars as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct ViewScalarVars {
    pub s: Var,
    pub g: Var,
    pub a: Var,
    pub b: Var,
}

impl ViewScalarVars {
    pub fn values(&self, tape: &Tape) -> ViewScalars {
        ViewScalars {
            s: tape.item(self.s),
            g: tape.item(self.g),
            a: tape.item(self.a),
            b: tape.item(self.b),
        }
    }
}

/// `S = 1 + 11σ(r0)`, `G = exp(tanh(r1)·ln 4)`, `A = 0.05 + 0.9σ(r2)`,
/// `B = exp(tanh(r3)·ln 4)`, clamped against rounding at saturation.
pub fn squash(raw: [f64; 4]) -> ViewScalars {
    let sig = crate::diffcore::sigmoid_value;
    let ln4 = 4f64.ln();
    let centered = |v: f64, (lo, hi): (f64, f64)| {
        let mid = 0.5 * (lo + hi);
        (mid + (hi - lo) * (sig(v) - 0.5)).clamp(lo, hi)
    };
    let exp_tanh = |v: f64| {
        (v.tanh() * ln4)
            .exp()
            .clamp(PRIOR_EXP_RANGE.0, PRIOR_EXP_RANGE.1)
    };
    ViewScalars {
        s: centered(raw[0], S_RANGE),
        g: exp_tanh(raw[1]),
        a: centered(raw[2], PIVOT_RANGE),
        b: exp_tanh(raw[3]),
    }
}

fn squash_vars(tape: &mut Tape, raw: Var) -> ViewScalarVars {
    let ln4 = 4f64.ln();
    let r: Vec<Var> = (0..4).map(|i| tape.slice(raw, i, 1)).collect();
    // Written around the midpoint so a zero input lands exactly on it.
    let centered = |tape: &mut Tape, v: Var, (lo, hi): (f64, f64)| {
        let s = tape.sigmoid(v);
        let s = tape.offset(s, -0.5);
        let s = tape.scale(s, hi - lo);
        let s = tape.offset(s, 0.5 * (lo + hi));
        tape.clamp(s, lo, hi)
    };
    let exp_tanh = |tape: &mut Tape, v: Var| {
        let t = tape.tanh(v);
        let t = tape.scale(t, ln4);
        let e = tape.exp(t);
        tape.clamp(e, PRIOR_EXP_RANGE.0, PRIOR_EXP_RANGE.1)
    };
    let s = centered(tape, r[0], S_RANGE);
    let g = exp_tanh(tape, r[1]);
    let a = centered(tape, r[2], PIVOT_RANGE);
    let b = exp_tanh(tape, r[3]);
    ViewScalarVars { s, g, a, b }
}

/// Both generators of the adaptive branch. They share the architecture,
/// not the weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewAdapter {
    pub curve: GeneratorWeights,
    pub scalars: GeneratorWeights,
}

impl ViewAdapter {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        Self {
            curve: GeneratorWeights::new(store, "curve_gen", LUT_SIZE, rng),
            scalars: GeneratorWeights::new(store, "param_gen", SCALAR_OUTPUTS, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.curve.param_ids();
        ids.extend(self.scalars.param_ids());
        ids
    }
}

/// Curve bias `[256]` for one view.
pub fn generate_curve_bias(
    tape: &mut Tape,
    store: &ParamStore,
    weights: &GeneratorWeights,
    pooled: Var,
    camera: Var,
) -> Result<Var> {
    weights.forward(tape, store, pooled, camera)
}

pub fn generate_view_scalars(
    tape: &mut Tape,
    store: &ParamStore,
    weights: &GeneratorWeights,
    pooled: Var,
    camera: Var,
) -> Result<ViewScalarVars> {
    assert_eq!(
        weights.out_dim, SCALAR_OUTPUTS,
        "scalar generator must have 4 outputs"
    );
    let raw = weights.forward(tape, store, pooled, camera)?;
    Ok(squash_vars(tape, raw))
}

/// Plain evaluation of the curve bias for an unpooled view.
pub fn curve_bias_values(
    store: &ParamStore,
    weights: &GeneratorWeights,
    img: &Image,
    camera: &[f64; 16],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let (x, c) = input_vars(&mut tape, &pool_input(img), camera)?;
    let out = generate_curve_bias(&mut tape, store, weights, x, c)?;
    Ok(tape.value(out).to_vec())
}

pub fn view_scalar_values(
    store: &ParamStore,
    weights: &GeneratorWeights,
    img: &Image,
    camera: &[f64; 16],
) -> Result<ViewScalars> {
    let mut tape = Tape::new();
    let (x, c) = input_vars(&mut tape, &pool_input(img), camera)?;
    Ok(generate_view_scalars(&mut tape, store, weights, x, c)?.values(&tape))
}

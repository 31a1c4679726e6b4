//! Local residual branch added on top of the global adjustment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{uniform_init, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::imaging::Image;

pub const WIDTH: usize = 16;
pub const EXPANSION: usize = 4;
pub const BLOCKS: usize = 3;
pub const KERNEL: usize = 7;
const LN_EPS: f64 = 1e-6;

/// Residual clip bound for lightness-only degradations.
pub const CLIP_LIGHTNESS: f64 = 0.1;
/// Residual clip bound when color casts are present.
pub const CLIP_COLOR: f64 = 0.5;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Block {
    dw_w: ParamId,
    dw_b: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    pw1_w: ParamId,
    pw1_b: ParamId,
    pw2_w: ParamId,
    pw2_b: ParamId,
}

/// Stem 1x1 conv, three ConvNeXt-style blocks, zero-initialized head,
/// hard clip to `[-clip, clip]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualBranch {
    pub clip: f64,
    stem_w: ParamId,
    stem_b: ParamId,
    blocks: Vec<Block>,
    head_w: ParamId,
    head_b: ParamId,
}

impl ResidualBranch {
    pub fn new(store: &mut ParamStore, clip: f64, rng: &mut impl Rng) -> Self {
        assert!(clip > 0.0, "clip bound must be positive");
        let (w, e) = (WIDTH, WIDTH * EXPANSION);
        let mut add = |name: String, values: Vec<f64>, shape: &[usize]| {
            store.add(format!("refine.{name}"), values, shape)
        };
        let stem_w = add("stem.w".into(), uniform_init(rng, 3 * w, 3), &[3, w]);
        let stem_b = add("stem.b".into(), vec![0.0; w], &[w]);
        let blocks = (0..BLOCKS)
            .map(|i| Block {
                dw_w: add(
                    format!("block{i}.dw.w"),
                    uniform_init(rng, KERNEL * KERNEL * w, KERNEL * KERNEL),
                    &[KERNEL, KERNEL, w],
                ),
                dw_b: add(format!("block{i}.dw.b"), vec![0.0; w], &[w]),
                ln_g: add(format!("block{i}.ln.g"), vec![1.0; w], &[w]),
                ln_b: add(format!("block{i}.ln.b"), vec![0.0; w], &[w]),
                pw1_w: add(
                    format!("block{i}.pw1.w"),
                    uniform_init(rng, w * e, w),
                    &[w, e],
                ),
                pw1_b: add(format!("block{i}.pw1.b"), vec![0.0; e], &[e]),
                pw2_w: add(
                    format!("block{i}.pw2.w"),
                    uniform_init(rng, e * w, e),
                    &[e, w],
                ),
                pw2_b: add(format!("block{i}.pw2.b"), vec![0.0; w], &[w]),
            })
            .collect();
        let head_w = add("head.w".into(), vec![0.0; w * 3], &[w, 3]);
        let head_b = add("head.b".into(), vec![0.0; 3], &[3]);
        Self {
            clip,
            stem_w,
            stem_b,
            blocks,
            head_w,
            head_b,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.stem_w, self.stem_b];
        for b in &self.blocks {
            ids.extend([
                b.dw_w, b.dw_b, b.ln_g, b.ln_b, b.pw1_w, b.pw1_b, b.pw2_w, b.pw2_b,
            ]);
        }
        ids.extend([self.head_w, self.head_b]);
        ids
    }

    pub fn head_weight(&self) -> ParamId {
        self.head_w
    }

    /// Depthwise kernel of block `i`.
    pub fn depthwise_weight(&self, i: usize) -> ParamId {
        self.blocks[i].dw_w
    }

    /// Clipped residual `[h, w, 3]` for an input `[h, w, 3]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let p = |tape: &mut Tape, id| tape.param(store, id);
        let (sw, sb) = (p(tape, self.stem_w), p(tape, self.stem_b));
        let mut h = tape.pointwise_conv(x, sw, sb);
        for b in &self.blocks {
            let (dw, db) = (p(tape, b.dw_w), p(tape, b.dw_b));
            let y = tape.depthwise_conv_reflect(h, dw, db, KERNEL);
            let (lg, lb) = (p(tape, b.ln_g), p(tape, b.ln_b));
            let y = tape.layer_norm_rows(y, lg, lb, LN_EPS);
            let (w1, b1) = (p(tape, b.pw1_w), p(tape, b.pw1_b));
            let y = tape.pointwise_conv(y, w1, b1);
            let y = tape.gelu(y);
            let (w2, b2) = (p(tape, b.pw2_w), p(tape, b.pw2_b));
            let y = tape.pointwise_conv(y, w2, b2);
            h = tape.add(h, y);
        }
        let (hw, hb) = (p(tape, self.head_w), p(tape, self.head_b));
        let out = tape.pointwise_conv(h, hw, hb);
        if tape.value(out).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation("residual branch"));
        }
        Ok(tape.clamp(out, -self.clip, self.clip))
    }
}

pub(crate) fn image_var(tape: &mut Tape, img: &Image) -> Var {
    tape.constant(img.data().to_vec(), &[img.height(), img.width(), 3])
}

pub(crate) fn var_image(tape: &Tape, v: Var, width: usize, height: usize) -> Image {
    Image::new(width, height, tape.value(v).to_vec()).expect("tape value matches image size")
}

/// Plain evaluation of the residual map.
pub fn residual_map(img: &Image, branch: &ResidualBranch, store: &ParamStore) -> Result<Image> {
    let mut tape = Tape::new();
    let x = image_var(&mut tape, img);
    let r = branch.forward(&mut tape, store, x)?;
    Ok(var_image(&tape, r, img.width(), img.height()))
}

/// `clamp(global + residual, 0, 1)` on the tape. `global` is `[P, 3]` or
/// `[h, w, 3]`; `input` is the `[h, w, 3]` view fed to the branch.
pub fn pseudo_enhance_var(
    tape: &mut Tape,
    store: &ParamStore,
    branch: &ResidualBranch,
    input: Var,
    global: Var,
) -> Result<Var> {
    let r = branch.forward(tape, store, input)?;
    let shape = tape.shape(input).to_vec();
    let g = tape.reshape(global, &shape);
    let sum = tape.add(g, r);
    Ok(tape.clamp(sum, 0.0, 1.0))
}

/// Plain pseudo-label: `clamp(L(C·M)·M⁻¹ + R(C), 0, 1)`.
pub fn pseudo_enhance(
    img: &Image,
    m: &crate::colorxform::ColorMatrix3,
    curve: &crate::colorxform::ToneCurve,
    branch: &ResidualBranch,
    store: &ParamStore,
) -> Result<Image> {
    let global = crate::colorxform::global_adjust(img, m, curve)?;
    let residual = residual_map(img, branch, store)?;
    let data = global
        .data()
        .iter()
        .zip(residual.data())
        .map(|(g, r)| (g + r).clamp(0.0, 1.0))
        .collect();
    Image::new(img.width(), img.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorxform::{global_adjust, power_curve, ColorMatrix3, ToneCurve};
    use crate::diffcore::{finite_diff_check, CheckTarget};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.gen::<f64>(), rng.gen(), rng.gen()])
    }

    fn branch_with_head(clip: f64, seed: u64, scale: f64) -> (ResidualBranch, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = ResidualBranch::new(&mut store, clip, &mut rng);
        let head: Vec<f64> = uniform_init(&mut rng, WIDTH * 3, WIDTH)
            .iter()
            .map(|v| v * scale)
            .collect();
        store.values_mut(b.head_weight()).copy_from_slice(&head);
        (b, store)
    }

    #[test]
    fn zero_head_gives_zero_residual() {
        let mut store = ParamStore::new();
        let b = ResidualBranch::new(
            &mut store,
            CLIP_LIGHTNESS,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let r = residual_map(&textured(9, 8, 1), &b, &store).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_pseudo_label_is_clamped_input() {
        let mut store = ParamStore::new();
        let b = ResidualBranch::new(&mut store, CLIP_COLOR, &mut ChaCha8Rng::seed_from_u64(0));
        let img = textured(8, 8, 2).map(|v| v * 1.4 - 0.2);
        let out = pseudo_enhance(
            &img,
            &ColorMatrix3::identity(),
            &ToneCurve::identity(),
            &b,
            &store,
        )
        .unwrap();
        for (a, e) in out.data().iter().zip(img.clamped().data()) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn additivity_on_interior_values() {
        let (b, store) = branch_with_head(CLIP_LIGHTNESS, 3, 0.3);
        let img = textured(10, 9, 4).map(|v| 0.3 + 0.4 * v);
        let m = ColorMatrix3 {
            m: [[1.05, 0.02, 0.0], [0.0, 0.95, 0.03], [0.01, 0.0, 1.1]],
        };
        let curve = power_curve(0.8).unwrap();
        let out = pseudo_enhance(&img, &m, &curve, &b, &store).unwrap();
        let global = global_adjust(&img, &m, &curve).unwrap();
        let residual = residual_map(&img, &b, &store).unwrap();
        let mut interior = 0;
        for i in 0..out.data().len() {
            let s = global.data()[i] + residual.data()[i];
            if s > 0.0 && s < 1.0 {
                interior += 1;
                assert_eq!(out.data()[i], s);
            }
        }
        assert!(interior > 0);
        assert!(residual.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn depthwise_weight_gradient() {
        let (b, mut store) = branch_with_head(CLIP_COLOR, 5, 0.2);
        let img = textured(9, 9, 6);
        let dw = b.depthwise_weight(1);
        // Confirm no output sits at the clip bound, where the subgradient switches.
        let r = residual_map(&img, &b, &store).unwrap();
        assert!(r.data().iter().all(|v| v.abs() < CLIP_COLOR - 1e-3));
        let report = finite_diff_check(
            "residual_branch",
            &mut store,
            &[
                CheckTarget::entries(dw, vec![0, 17, 200, 783]),
                CheckTarget::entries(b.head_weight(), vec![0, 20]),
            ],
            |t, s| {
                let x = image_var(t, &img);
                let r = b.forward(t, s, x)?;
                Ok(t.mean(r))
            },
            1e-4,
            1e-5,
        )
        .unwrap();
        assert!(report.pass, "{}", report.max_rel_err);
    }

    #[test]
    fn shift_equivariance_on_interior() {
        // Reflect padding breaks equivariance only within the receptive field
        // of the border: 3 blocks of radius 3 = 9 pixels.
        let (b, store) = branch_with_head(CLIP_COLOR, 7, 0.5);
        let big = textured(30, 24, 8);
        let shifted = Image::from_fn(29, 24, |x, y| big.pixel(x + 1, y));
        let r1 = residual_map(&big, &b, &store).unwrap();
        let r2 = residual_map(&shifted, &b, &store).unwrap();
        for y in 9..24 - 9 {
            for x in 9..29 - 9 {
                let (a, c) = (r1.pixel(x + 1, y), r2.pixel(x, y));
                for k in 0..3 {
                    assert!((a[k] - c[k]).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn residual_respects_clip(seed in any::<u64>(), scale in 1.0f64..50.0) {
            let (b, store) = branch_with_head(CLIP_LIGHTNESS, seed, scale);
            let r = residual_map(&textured(8, 7, seed ^ 1), &b, &store).unwrap();
            prop_assert!(r.data().iter().all(|v| v.abs() <= CLIP_LIGHTNESS));
        }

        #[test]
        fn pseudo_label_in_unit_range(seed in any::<u64>()) {
            let (b, store) = branch_with_head(CLIP_COLOR, seed, 20.0);
            let img = textured(8, 8, seed);
            let out = pseudo_enhance(&img, &ColorMatrix3::diag([1.3, 0.8, 1.1]), &power_curve(0.6).unwrap(), &b, &store).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

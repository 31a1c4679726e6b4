//! Finite-difference verification of every differentiable op used in
//! training, shared by the `gradcheck` command and the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorxform::{ColorMatrix3, LUT_SIZE};
use crate::dataset::synthesize;
use crate::degrade::{JitterRanges, Profile};
use crate::diffcore::{finite_diff_check, CheckTarget, GradReport, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::imaging::Image;
use crate::losses::{
    loss_3dgs_var, loss_cc_var, loss_curve_var, loss_reg_var, loss_spa_var, loss_tv_var, LossTerms,
    LossWeights,
};
use crate::refine::{pseudo_enhance_var, ResidualBranch};
use crate::splat::{
    adjusted_color_var, demo_scene, look_at, render_dual_var, Camera, DemoOptions, Gaussian,
    GaussianCloud, RenderSettings, SplatParams,
};
use crate::trainer::{TrainConfig, Trainer};

pub const SUITE_TOLERANCE: f64 = 1e-4;
pub const SUITE_STEP: f64 = 1e-5;

/// Smallest allowed distance from a LUT knot or clamp edge.
const MARGIN: f64 = 10.0 * SUITE_STEP;

struct Suite {
    rng: ChaCha8Rng,
    reports: Vec<GradReport>,
}

impl Suite {
    fn check<F>(
        &mut self,
        op: &str,
        store: &mut ParamStore,
        targets: &[CheckTarget],
        f: F,
    ) -> Result<()>
    where
        F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
    {
        let report = finite_diff_check(op, store, targets, f, SUITE_TOLERANCE, SUITE_STEP)?;
        self.reports.push(report);
        Ok(())
    }

    fn uniform(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.rng.gen_range(lo..hi)).collect()
    }

    /// Intensities in `(lo, hi)` that stay clear of every LUT knot.
    fn off_knot(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        let step = 1.0 / (LUT_SIZE - 1) as f64;
        (0..n)
            .map(|_| loop {
                let v = self.rng.gen_range(lo..hi);
                let frac = (v / step).fract();
                if frac * step > MARGIN && (1.0 - frac) * step > MARGIN {
                    break v;
                }
            })
            .collect()
    }

    /// Pixels whose image under `m` lands inside `(0.05, 0.95)` and clear of
    /// every LUT knot, so the curve lookup inside a matrix sandwich is smooth
    /// for every perturbation the check makes.
    fn off_knot_through(&mut self, pixels: usize, m: &[f64]) -> Vec<f64> {
        let step = 1.0 / (LUT_SIZE - 1) as f64;
        let clear = |v: f64| {
            let frac = (v / step).fract();
            (0.05..0.95).contains(&v) && frac * step > MARGIN && (1.0 - frac) * step > MARGIN
        };
        let mut out = Vec::with_capacity(pixels * 3);
        while out.len() < pixels * 3 {
            let p = [
                self.rng.gen_range(0.3..0.6),
                self.rng.gen_range(0.3..0.6),
                self.rng.gen_range(0.3..0.6),
            ];
            let mapped = ColorMatrix3::from_flat(m).expect("3x3").apply_pixel(&p);
            if mapped.iter().all(|&v| clear(v)) {
                out.extend(p);
            }
        }
        out
    }

    /// Random projection weights turning a tensor into a scalar objective.
    fn weights(&mut self, n: usize) -> Vec<f64> {
        self.uniform(n, -1.0, 1.0)
    }

    /// A smooth, increasing curve kept inside `(0.05, 0.95)`.
    fn curve(&mut self) -> Vec<f64> {
        let gamma = self.rng.gen_range(0.7..1.4);
        (0..LUT_SIZE)
            .map(|i| 0.05 + 0.9 * crate::colorxform::grid(i).powf(gamma))
            .collect()
    }

    fn matrix(&mut self) -> Vec<f64> {
        let mut m = ColorMatrix3::identity().flat().to_vec();
        for v in &mut m {
            *v += self.rng.gen_range(-0.15..0.15);
        }
        m
    }
}

fn weighted_sum(tape: &mut Tape, x: Var, w: &[f64]) -> Var {
    let shape = tape.shape(x).to_vec();
    let w = tape.constant(w.to_vec(), &shape);
    let p = tape.mul(x, w);
    tape.sum(p)
}

fn suite_camera(size: usize) -> Camera {
    Camera {
        fx: size as f64 * 1.2,
        fy: size as f64 * 1.2,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        width: size,
        height: size,
        world_to_camera: look_at([0.3, -0.2, -2.5], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0]),
        near: 0.01,
        view_id: 0,
        held_out: false,
    }
}

fn suite_cloud(rng: &mut ChaCha8Rng) -> GaussianCloud {
    let gaussians = (0..5)
        .map(|_| {
            let mut g = Gaussian::new(
                [
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(-0.5..0.5),
                ],
                1.0,
                rng.gen_range(-1.5..0.5),
                [rng.gen(), rng.gen(), rng.gen()],
            );
            g.log_scales = [
                rng.gen_range(-2.2..-1.2),
                rng.gen_range(-2.2..-1.2),
                rng.gen_range(-2.2..-1.2),
            ];
            g.quat = [
                rng.gen_range(0.5..1.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ];
            g.gain = [
                rng.gen_range(0.5..1.5),
                rng.gen_range(0.5..1.5),
                rng.gen_range(0.5..1.5),
            ];
            g.offset = [
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            ];
            g
        })
        .collect();
    GaussianCloud::new(gaussians)
}

/// A residual branch with a non-zero head so that gradients reach every
/// layer, scaled so the clip stays inactive.
fn live_branch(suite: &mut Suite, store: &mut ParamStore) -> ResidualBranch {
    let branch = ResidualBranch::new(store, 0.5, &mut suite.rng);
    let head = suite.uniform(store.get(branch.head_weight()).len(), -0.05, 0.05);
    store
        .values_mut(branch.head_weight())
        .copy_from_slice(&head);
    branch
}

/// A few entries of each parameter (all of them for short ones).
fn sampled(store: &ParamStore, ids: &[ParamId], per_param: usize) -> Vec<CheckTarget> {
    ids.iter()
        .map(|&id| {
            let n = store.get(id).len();
            if n <= per_param {
                CheckTarget::all(id)
            } else {
                let stride = n / per_param;
                CheckTarget::entries(id, (0..per_param).map(|i| i * stride).collect())
            }
        })
        .collect()
}

fn color_ops(s: &mut Suite) -> Result<()> {
    let pixels = 6;
    let mut store = ParamStore::new();
    let x = store.add("x", s.uniform(pixels * 3, 0.1, 0.9), &[pixels, 3]);
    let m = store.add("m", s.matrix(), &[3, 3]);
    let w = s.weights(pixels * 3);
    s.check(
        "apply_matrix",
        &mut store,
        &[x.into(), m.into()],
        |t, st| {
            let (xv, mv) = (t.param(st, x), t.param(st, m));
            let y = t.apply_matrix(xv, mv)?;
            Ok(weighted_sum(t, y, &w))
        },
    )?;

    let mut store = ParamStore::new();
    let mut d = ColorMatrix3::diag([1.0, 2.0, 4.0]).flat().to_vec();
    for v in &mut d {
        *v += s.rng.gen_range(-0.1..0.1);
    }
    let m = store.add("m", d, &[3, 3]);
    let w = s.weights(9);
    s.check("invert_matrix", &mut store, &[m.into()], |t, st| {
        let mv = t.param(st, m);
        let y = t.invert_matrix(mv)?;
        Ok(weighted_sum(t, y, &w))
    })?;

    let mut store = ParamStore::new();
    let x = store.add("x", s.off_knot(pixels * 3, 0.05, 0.95), &[pixels, 3]);
    let lut = store.add("lut", s.curve(), &[LUT_SIZE]);
    let w = s.weights(pixels * 3);
    s.check(
        "apply_curve",
        &mut store,
        &[x.into(), lut.into()],
        |t, st| {
            let (xv, lv) = (t.param(st, x), t.param(st, lut));
            let y = t.apply_curve(xv, lv);
            Ok(weighted_sum(t, y, &w))
        },
    )?;

    let mut store = ParamStore::new();
    let x = store.add("x", s.off_knot(pixels * 3, 0.05, 0.95), &[pixels, 3]);
    let global = store.add("global", s.curve(), &[LUT_SIZE]);
    let bias = s.uniform(LUT_SIZE, -0.03, 0.03);
    let bias = store.add("bias", bias, &[LUT_SIZE]);
    let w = s.weights(pixels * 3);
    s.check(
        "compose_curve",
        &mut store,
        &[global.into(), bias.into()],
        |t, st| {
            let (xv, g, b) = (t.param(st, x), t.param(st, global), t.param(st, bias));
            let l = t.add(g, b);
            let y = t.apply_curve(xv, l);
            Ok(weighted_sum(t, y, &w))
        },
    )?;

    let mut store = ParamStore::new();
    let mv = s.matrix();
    let x = store.add("x", s.off_knot_through(pixels, &mv), &[pixels, 3]);
    let m = store.add("m", mv, &[3, 3]);
    let lut = store.add("lut", s.curve(), &[LUT_SIZE]);
    let w = s.weights(pixels * 3);
    s.check(
        "global_adjust",
        &mut store,
        &[x.into(), m.into(), lut.into()],
        |t, st| {
            let (xv, mv, lv) = (t.param(st, x), t.param(st, m), t.param(st, lut));
            let y = t.global_adjust(xv, mv, lv)?;
            Ok(weighted_sum(t, y, &w))
        },
    )?;

    let mut store = ParamStore::new();
    let g = store.add("g", vec![s.rng.gen_range(0.6..1.6)], &[1]);
    let a = store.add("a", vec![s.rng.gen_range(0.3..0.7)], &[1]);
    let b = store.add("b", vec![s.rng.gen_range(0.8..1.6)], &[1]);
    let (wp, ws) = (s.weights(LUT_SIZE), s.weights(LUT_SIZE));
    s.check(
        "curve_priors",
        &mut store,
        &[g.into(), a.into(), b.into()],
        |t, st| {
            let (gv, av, bv) = (t.param(st, g), t.param(st, a), t.param(st, b));
            let p = t.power_curve(gv);
            let sc = t.s_curve(av, bv);
            let lp = weighted_sum(t, p, &wp);
            let ls = weighted_sum(t, sc, &ws);
            Ok(t.add(lp, ls))
        },
    )
}

fn refine_ops(s: &mut Suite) -> Result<()> {
    let (h, w) = (8, 8);
    let img = s.uniform(h * w * 3, 0.2, 0.8);
    let mut store = ParamStore::new();
    let branch = live_branch(s, &mut store);
    let targets = sampled(&store, &branch.param_ids(), 3);
    let wts = s.weights(h * w * 3);
    s.check("residual_map", &mut store, &targets, |t, st| {
        let x = t.constant(img.clone(), &[h, w, 3]);
        let r = branch.forward(t, st, x)?;
        Ok(weighted_sum(t, r, &wts))
    })?;

    let mut store = ParamStore::new();
    let branch = live_branch(s, &mut store);
    let mv = s.matrix();
    let img = s.off_knot_through(h * w, &mv);
    let m = store.add("m", mv, &[3, 3]);
    let lut = store.add("lut", s.curve(), &[LUT_SIZE]);
    let mut targets = sampled(&store, &branch.param_ids(), 2);
    targets.extend([m.into(), lut.into()]);
    s.check("pseudo_enhance", &mut store, &targets, |t, st| {
        let x = t.constant(img.clone(), &[h, w, 3]);
        let flat = t.reshape(x, &[h * w, 3]);
        let (mv, lv) = (t.param(st, m), t.param(st, lut));
        let global = t.global_adjust(flat, mv, lv)?;
        let y = pseudo_enhance_var(t, st, &branch, x, global)?;
        Ok(weighted_sum(t, y, &wts))
    })
}

fn splat_ops(s: &mut Suite) -> Result<()> {
    let n = 5;
    let mut store = ParamStore::new();
    let c = store.add("c", s.uniform(n * 3, 0.0, 1.0), &[n, 3]);
    let a = store.add("a", s.uniform(n * 3, 0.5, 1.5), &[n, 3]);
    let b = store.add("b", s.uniform(n * 3, -0.2, 0.2), &[n, 3]);
    let w = s.weights(n * 3);
    s.check(
        "adjusted_color",
        &mut store,
        &[c.into(), a.into(), b.into()],
        |t, st| {
            let (cv, av, bv) = (t.param(st, c), t.param(st, a), t.param(st, b));
            let y = adjusted_color_var(t, cv, av, bv);
            Ok(weighted_sum(t, y, &w))
        },
    )?;

    let cloud = suite_cloud(&mut s.rng);
    let cam = suite_camera(12);
    let settings = RenderSettings::exact().with_background([0.2, 0.1, 0.3]);
    let mut store = ParamStore::new();
    let params = SplatParams::register(&mut store, &cloud);
    let (w_in, w_out) = (s.weights(12 * 12 * 3), s.weights(12 * 12 * 3));
    let photometric = [
        params.colors,
        params.opacity_logits,
        params.gains,
        params.offsets,
    ];
    let render = |geometry: bool| {
        let params = params.clone();
        let (w_in, w_out, cam) = (w_in.clone(), w_out.clone(), cam.clone());
        move |t: &mut Tape, st: &ParamStore| {
            let r = render_dual_var(t, st, &params, &cam, &settings, geometry);
            let a = weighted_sum(t, r.c_in, &w_in);
            let b = weighted_sum(t, r.c_out, &w_out);
            Ok(t.add(a, b))
        }
    };
    let targets: Vec<CheckTarget> = photometric.iter().map(|&id| id.into()).collect();
    s.check("render_dual", &mut store, &targets, render(false))?;
    let targets: Vec<CheckTarget> = params
        .geometry_ids()
        .into_iter()
        .map(CheckTarget::all)
        .collect();
    s.check("render_dual_geometry", &mut store, &targets, render(true))
}

fn loss_ops(s: &mut Suite) -> Result<()> {
    let (h, w) = (12, 12);
    let n = h * w * 3;
    let target = s.uniform(n, 0.1, 0.9);
    let mut store = ParamStore::new();
    let pred = store.add("pred", s.uniform(n, 0.1, 0.9), &[h, w, 3]);
    s.check("loss_3dgs", &mut store, &[pred.into()], |t, st| {
        let p = t.param(st, pred);
        let c = t.constant(target.clone(), &[h, w, 3]);
        loss_3dgs_var(t, p, c, 0.2)
    })?;

    let mut store = ParamStore::new();
    let pred_in = store.add("pred_in", s.uniform(n, 0.1, 0.9), &[h, w, 3]);
    let pred_out = store.add("pred_out", s.uniform(n, 0.1, 0.9), &[h, w, 3]);
    let label = store.add("label", s.uniform(n, 0.1, 0.9), &[h, w, 3]);
    s.check(
        "loss_reg",
        &mut store,
        &[pred_in.into(), pred_out.into(), label.into()],
        |t, st| {
            let (pi, po, l) = (
                t.param(st, pred_in),
                t.param(st, pred_out),
                t.param(st, label),
            );
            let c = t.constant(target.clone(), &[h, w, 3]);
            loss_reg_var(t, pi, c, po, l, 0.2)
        },
    )?;

    let input = Image::new(w, h, s.uniform(n, 0.05, 0.5))?;
    let mut store = ParamStore::new();
    let pred = store.add("pred", s.uniform(n, 0.1, 0.9), &[h, w, 3]);
    s.check("loss_spa", &mut store, &[pred.into()], |t, st| {
        let p = t.param(st, pred);
        loss_spa_var(t, p, &input)
    })?;

    let mut store = ParamStore::new();
    let views: Vec<(ParamId, ParamId)> = (0..2)
        .map(|k| {
            let img = store.add(format!("img{k}"), s.uniform(n, 0.1, 0.9), &[h, w, 3]);
            let sv = store.add(format!("s{k}"), vec![s.rng.gen_range(2.0..6.0)], &[1]);
            (img, sv)
        })
        .collect();
    let targets: Vec<CheckTarget> = views
        .iter()
        .flat_map(|&(i, sv)| [i.into(), sv.into()])
        .collect();
    s.check("loss_cc", &mut store, &targets, |t, st| {
        let vars: Vec<(Var, Var)> = views
            .iter()
            .map(|&(i, sv)| (t.param(st, i), t.param(st, sv)))
            .collect();
        loss_cc_var(t, &vars)
    })?;

    let mut store = ParamStore::new();
    let lut = store.add("lut", s.curve(), &[LUT_SIZE]);
    let power = store.add("power", s.curve(), &[LUT_SIZE]);
    let sc = store.add("s", s.curve(), &[LUT_SIZE]);
    let cdf = s.curve();
    for (name, omega) in [("loss_curve", 1.0), ("loss_curve_late", 0.1)] {
        s.check(
            name,
            &mut store,
            &[lut.into(), power.into(), sc.into()],
            |t, st| {
                let (l, p, sv) = (t.param(st, lut), t.param(st, power), t.param(st, sc));
                let c = t.constant(cdf.clone(), &[LUT_SIZE]);
                loss_curve_var(t, l, c, p, sv, omega)
            },
        )?;
    }

    let mut store = ParamStore::new();
    let lut = store.add("lut", s.curve(), &[LUT_SIZE]);
    s.check("loss_tv", &mut store, &[lut.into()], |t, st| {
        let l = t.param(st, lut);
        loss_tv_var(t, l)
    })?;

    // The weighted sum on independent scalar terms.
    let mut store = ParamStore::new();
    let terms = store.add("terms", s.uniform(5, 0.1, 1.0), &[5]);
    s.check(
        "loss_total_weights",
        &mut store,
        &[terms.into()],
        |t, st| {
            let v = t.param(st, terms);
            let parts: Vec<Var> = (0..5).map(|i| t.slice(v, i, 1)).collect();
            let terms = LossTerms {
                reg: parts[0],
                spa: parts[1],
                tv: parts[2],
                curve: parts[3],
                cc: parts[4],
            };
            let weights = LossWeights {
                lambda: 0.2,
                eta: 0.1,
                omega: 1.0,
            };
            Ok(crate::losses::loss_total_var(t, &terms, &weights)?.0)
        },
    )
}

/// The complete training objective on a two-view 8x8 scene, after a few
/// optimization steps so that every parameter group carries gradient.
fn total_objective(s: &mut Suite) -> Result<()> {
    let scene = demo_scene(&DemoOptions {
        size: 8,
        wall_grid: 3,
        objects: 3,
        train_views: 2,
        held_out_views: 0,
        seed: 3,
        ..Default::default()
    });
    let ds = synthesize(&scene, Profile::LowLight, 3, &JitterRanges::default())?;
    let config = TrainConfig {
        iterations: 3,
        seed: 3,
        optimize_geometry: true,
        ..Default::default()
    };
    let mut trainer = Trainer::new(&scene, ds.training_views(), config.clone())?;
    trainer.run()?;
    let mut store = trainer.model().store.clone();
    let ids: Vec<ParamId> = trainer
        .model()
        .param_groups(&config)
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    let targets = sampled(&store, &ids, 2);
    s.check("loss_total", &mut store, &targets, |t, st| {
        Ok(trainer.objective(t, st)?.0)
    })
}

/// Runs every check in a fixed order with a fixed seed.
pub fn gradient_suite() -> Result<Vec<GradReport>> {
    let mut suite = Suite {
        rng: ChaCha8Rng::seed_from_u64(0x5eed),
        reports: Vec::new(),
    };
    color_ops(&mut suite)?;
    refine_ops(&mut suite)?;
    splat_ops(&mut suite)?;
    loss_ops(&mut suite)?;
    total_objective(&mut suite)?;
    Ok(suite.reports)
}

/// `op,max_rel_err,pass` rows with a header.
pub fn reports_csv(reports: &[GradReport]) -> String {
    let mut out = String::from("op,max_rel_err,pass\n");
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed. Pass criterion numbers as arguments
//! (`cargo test --test acceptance -- 5 9`) to run a subset.

use std::time::{Duration, Instant};

use curvesplat::colorxform::{cdf_curve, grid, ColorMatrix3, ToneCurve, LUT_SIZE};
use curvesplat::dataset::{synthesize, synthesize_with, Dataset};
use curvesplat::degrade::{apply_lightness_degradation, sample_view_params, JitterRanges, Profile};
use curvesplat::diffcore::{ParamStore, Tape};
use curvesplat::gradsuite;
use curvesplat::imaging::{chroma_dispersion, Image};
use curvesplat::losses::{loss_cc, loss_curve, loss_curve_var, loss_spa, loss_tv};
use curvesplat::refine::{pseudo_enhance, ResidualBranch};
use curvesplat::splat::{
    demo_scene, look_at, render_brute_force, render_dual, Camera, DemoOptions, Gaussian,
    GaussianCloud, RenderSettings, Scene,
};
use curvesplat::trainer::{
    evaluate, load_checkpoint, render_novel, save_checkpoint, train, Adam, Method, Scenario,
    TrainConfig, Trainer,
};
use curvesplat::viewadapt::{PIVOT_RANGE, PRIOR_EXP_RANGE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
/// Iteration budget of the desk-scale training criteria (the limit is 5000).
const DESK_ITERATIONS: usize = 1500;
const RUN_LIMIT: Duration = Duration::from_secs(600);

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_image(w: usize, h: usize, seed: u64, lo: f64, hi: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| {
        [
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
        ]
    })
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let reports = gradsuite::gradient_suite().map_err(fail)?;
    let elapsed = start.elapsed();
    let required = [
        "apply_matrix",
        "invert_matrix",
        "apply_curve",
        "compose_curve",
        "global_adjust",
        "residual_map",
        "pseudo_enhance",
        "adjusted_color",
        "render_dual",
        "loss_3dgs",
        "loss_reg",
        "loss_spa",
        "loss_cc",
        "loss_curve",
        "loss_tv",
        "loss_total",
    ];
    let missing: Vec<&str> = required
        .iter()
        .filter(|op| !reports.iter().any(|r| r.op == **op))
        .copied()
        .collect();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} ({:.2e})", r.op, r.max_rel_err))
        .collect();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    check(
        missing.is_empty() && failed.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} checks, worst rel err {worst:.2e}, {:.1}s; failed {failed:?}; missing {missing:?}",
            reports.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn identity_round_trip() -> Outcome {
    let img = random_image(16, 12, 1, -0.2, 1.2);
    let mut store = ParamStore::new();
    let branch = ResidualBranch::new(&mut store, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
    let global = ToneCurve::from_fn(|x| x);
    // Zero bias: the composed curve is the global curve itself.
    let out =
        pseudo_enhance(&img, &ColorMatrix3::identity(), &global, &branch, &store).map_err(fail)?;
    let clamped = img.clamped();
    let err = out
        .data()
        .iter()
        .zip(clamped.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let cloud = oracle_cloud(6, 11);
    let pair = render_dual(&cloud, &oracle_camera(16), &RenderSettings::default());
    check(
        err < 1e-6 && pair.c_in == pair.c_out,
        format!(
            "pseudo_enhance max err {err:.2e}; dual render bitwise equal: {}",
            pair.c_in == pair.c_out
        ),
    )
}

fn oracle_camera(size: usize) -> Camera {
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

fn oracle_cloud(n: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GaussianCloud::new(
        (0..n)
            .map(|_| {
                let mu = [
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(-0.5..0.5),
                ];
                let mut g = Gaussian::new(
                    mu,
                    rng.gen_range(0.08..0.3),
                    rng.gen_range(-2.0..0.5),
                    [rng.gen(), rng.gen(), rng.gen()],
                );
                g.log_scales = g.log_scales.map(|s| s + rng.gen_range(-0.4..0.4));
                g.quat = [
                    rng.gen_range(0.5..1.0),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ];
                g
            })
            .collect(),
    )
}

fn compositing_oracle() -> Outcome {
    let cam = oracle_camera(16);
    let background = [0.1, 0.2, 0.3];
    let settings = RenderSettings::default().with_background(background);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut cloud = oracle_cloud(8, 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in &mut cloud.gaussians {
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
        }
        let fast = render_dual(&cloud, &cam, &settings);
        let (c_in, c_out) = render_brute_force(&cloud, &cam, background);
        for (a, b) in [(&fast.c_in, &c_in), (&fast.c_out, &c_out)] {
            for (x, y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    check(
        worst < 1e-6,
        format!("max abs diff {worst:.2e} over 5 clouds of 8 Gaussians at 16x16"),
    )
}

fn loss_zero_cases() -> Outcome {
    let input = random_image(16, 16, 5, 0.05, 0.5);
    let f = 0.5 / input.mean();
    let spa = loss_spa(&input.map(|v| v * f), &input).map_err(fail)?;
    let neutral = Image::from_fn(9, 7, |x, y| [((x * 7 + y) as f64 / 63.0).min(1.0); 3]);
    let cc = loss_cc(&[(&neutral, 3.0)]).map_err(fail)?;
    let ramp: Vec<f64> = (0..LUT_SIZE).map(grid).collect();
    let tv = loss_tv(&ramp).map_err(fail)?;
    let target: Vec<f64> = ramp.iter().map(|x| x.powf(0.6)).collect();
    let ones = vec![1.0; LUT_SIZE];
    let curve = loss_curve(&target, &target, &target, &ones, 1.0).map_err(fail)?;
    check(
        spa < 1e-10 && cc == 0.0 && (tv - 1.0 / 65025.0).abs() < 1e-12 && curve == 0.0,
        format!(
            "spa {spa:.1e}, cc {cc}, tv - 1/65025 = {:.1e}, curve {curve}",
            tv - 1.0 / 65025.0
        ),
    )
}

struct CurveFit {
    start_err: f64,
    end_err: f64,
    reached: Option<usize>,
    prior: [f64; 3],
    /// max |L − (2·L_cdf + L_po·L_s)/3| at the end.
    fixed_point_err: f64,
}

/// Optimizes the LUT and the prior parameters `(G, A, B)` on `10·L_curve`
/// (ω = 1) against a fixed `L_cdf` with Adam, keeping `(G, A, B)` inside
/// the ranges the parameter generator can produce.
fn fit_curve(cdf: &[f64], steps: usize, lr: f64) -> Result<CurveFit, String> {
    let mut store = ParamStore::new();
    let lut = store.add("lut", (0..LUT_SIZE).map(grid).collect(), &[LUT_SIZE]);
    let g = store.add("g", vec![1.0], &[1]);
    let a = store.add("a", vec![0.5], &[1]);
    let b = store.add("b", vec![1.0], &[1]);
    let mut adam = Adam::new();
    let max_err = |store: &ParamStore| {
        store
            .values(lut)
            .iter()
            .zip(cdf)
            .map(|(l, c)| (l - c).abs())
            .fold(0.0, f64::max)
    };
    let start_err = max_err(&store);
    let mut reached = None;
    for step in 1..=steps {
        let mut tape = Tape::new();
        let lv = tape.param(&store, lut);
        let (gv, av, bv) = (
            tape.param(&store, g),
            tape.param(&store, a),
            tape.param(&store, b),
        );
        let target = tape.constant(cdf.to_vec(), &[LUT_SIZE]);
        let power = tape.power_curve(gv);
        let s = tape.s_curve(av, bv);
        let loss = loss_curve_var(&mut tape, lv, target, power, s, 1.0).map_err(fail)?;
        let loss = tape.scale(loss, 10.0);
        store.zero_grad();
        tape.backward(loss, &mut store).map_err(fail)?;
        for id in [lut, g, a, b] {
            let p = store.get(id);
            let mut new = adam.update(id, &p.values, &p.grad, lr);
            if id == a {
                new[0] = new[0].clamp(PIVOT_RANGE.0, PIVOT_RANGE.1);
            } else if id != lut {
                new[0] = new[0].clamp(PRIOR_EXP_RANGE.0, PRIOR_EXP_RANGE.1);
            }
            store.values_mut(id).copy_from_slice(&new);
        }
        if reached.is_none() && max_err(&store) < 0.02 {
            reached = Some(step);
        }
    }
    let mut tape = Tape::new();
    let (gv, av, bv) = (
        tape.param(&store, g),
        tape.param(&store, a),
        tape.param(&store, b),
    );
    let power = tape.power_curve(gv);
    let s = tape.s_curve(av, bv);
    let prior = tape.mul(power, s);
    let fixed_point_err = store
        .values(lut)
        .iter()
        .zip(cdf)
        .zip(tape.value(prior))
        .map(|((l, c), p)| (l - (2.0 * c + p) / 3.0).abs())
        .fold(0.0, f64::max);
    Ok(CurveFit {
        fixed_point_err,
        start_err,
        end_err: max_err(&store),
        reached,
        prior: [store.values(g)[0], store.values(a)[0], store.values(b)[0]],
    })
}

/// The prior term pulls the optimum to `(2·L_cdf + L_po·L_s)/3`, so `L`
/// can only reach `L_cdf` when the prior product can represent it; with
/// `G, B ≥ 0.25` that product is no steeper at the origin than about
/// `x^0.5`, which rules out the equalization curves of dark views. The
/// checked target is the equalization curve of a view whose intensities
/// follow a gamma law (`v = u^(2/3)`, so `L_cdf ≈ x^1.5`). A clipped
/// low-light view is fitted too; its residual must match the predicted
/// fixed point rather than vanish.
fn curve_prior_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gamma_view = Image::from_fn(64, 64, |_, _| [rng.gen::<f64>().powf(2.0 / 3.0); 3]);
    let fit = fit_curve(&cdf_curve(&gamma_view).into_entries(), 1000, 5e-3)?;

    let params = sample_view_params(Profile::LowLight, 0, 1, &JitterRanges::default())[0];
    let clipped =
        apply_lightness_degradation(&random_image(64, 64, 9, 0.0, 1.0), params.k, params.gamma);
    let outside = fit_curve(&cdf_curve(&clipped).into_entries(), 1000, 5e-3)?;
    check(
        fit.end_err < 0.02 && outside.fixed_point_err < 0.02,
        format!(
            "max|L - L_cdf| {:.3} -> {:.4} (below 0.02 from step {:?}; G {:.3}, A {:.3}, B {:.3}); \
             clipped low-light curve: {:.3} -> {:.3}, {:.4} from the predicted fixed point",
            fit.start_err,
            fit.end_err,
            fit.reached,
            fit.prior[0],
            fit.prior[1],
            fit.prior[2],
            outside.start_err,
            outside.end_err,
            outside.fixed_point_err
        ),
    )
}

/// About 30 Gaussians, 8 training and 2 held-out views at 64x64.
fn desk_scene(seed: u64) -> Scene {
    demo_scene(&DemoOptions {
        size: 64,
        wall_grid: 4,
        objects: 14,
        train_views: 8,
        held_out_views: 2,
        seed,
        ..Default::default()
    })
}

struct Run {
    renders: Vec<Image>,
    psnr: f64,
    secs: f64,
}

fn desk_run(scene: &Scene, ds: &Dataset, config: TrainConfig) -> Result<Run, String> {
    let start = Instant::now();
    let (ck, _) = train(scene, ds.training_views(), config).map_err(fail)?;
    let secs = start.elapsed().as_secs_f64();
    let (cams, gt) = ds.held_out();
    let renders = render_novel(&ck, &cams).map_err(fail)?;
    let psnr = evaluate(&renders, &gt).map_err(fail)?.mean_psnr;
    Ok(Run {
        renders,
        psnr,
        secs,
    })
}

fn desk_config(seed: u64, method: Method, scenario: Scenario) -> TrainConfig {
    TrainConfig {
        iterations: DESK_ITERATIONS,
        seed,
        method,
        scenario,
        ..Default::default()
    }
}

fn lightness_recovery() -> Outcome {
    let mut gains = Vec::new();
    let mut lines = Vec::new();
    let mut slowest = 0.0f64;
    for seed in SEEDS {
        let scene = desk_scene(seed);
        let ds =
            synthesize(&scene, Profile::Varying, seed, &JitterRanges::default()).map_err(fail)?;
        let full = desk_run(
            &scene,
            &ds,
            desk_config(seed, Method::Full, Scenario::Lightness),
        )?;
        let base = desk_run(
            &scene,
            &ds,
            desk_config(seed, Method::Baseline, Scenario::Lightness),
        )?;
        slowest = slowest.max(full.secs).max(base.secs);
        gains.push(full.psnr - base.psnr);
        lines.push(format!(
            "seed {seed}: {:.2} vs {:.2} dB",
            full.psnr, base.psnr
        ));
    }
    let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
    check(
        mean_gain >= 3.0 && slowest < RUN_LIMIT.as_secs_f64(),
        format!(
            "mean gain {mean_gain:.2} dB over {} seeds at {DESK_ITERATIONS} iterations ({}); slowest run {slowest:.0}s",
            SEEDS.len(),
            lines.join(", ")
        ),
    )
}

/// Max over min of the pooled channel means.
fn imbalance_ratio(images: &[Image]) -> f64 {
    let mut sums = [0.0; 3];
    for img in images {
        for (s, m) in sums.iter_mut().zip(img.channel_means()) {
            *s += m;
        }
    }
    sums.iter().copied().fold(f64::MIN, f64::max) / sums.iter().copied().fold(f64::MAX, f64::min)
}

fn color_correction_effect() -> Outcome {
    let seed = 0;
    let scene = desk_scene(seed);
    let mut params = sample_view_params(
        Profile::Warm,
        seed,
        scene.cameras.len(),
        &JitterRanges::default(),
    );
    for p in &mut params {
        p.temperature = 2000.0;
    }
    let ds = synthesize_with(&scene, Profile::Warm.name(), seed, &params).map_err(fail)?;
    let with_cc = |eta: f64| TrainConfig {
        eta: Some(eta),
        ..desk_config(seed, Method::Full, Scenario::Color)
    };
    let on = imbalance_ratio(&desk_run(&scene, &ds, with_cc(0.1))?.renders);
    let off = imbalance_ratio(&desk_run(&scene, &ds, with_cc(0.0))?.renders);
    let reduction = (off - on) / (off - 1.0);
    check(
        reduction >= 0.5,
        format!(
            "imbalance ratio {off:.3} (eta 0) -> {on:.3} (eta 0.1): {:.1}% of the gap to 1 closed",
            100.0 * reduction
        ),
    )
}

fn chromaticity_consistency() -> Outcome {
    let mut full_std = Vec::new();
    let mut base_std = Vec::new();
    for seed in SEEDS {
        let scene = desk_scene(seed);
        let ds =
            synthesize(&scene, Profile::MixedTemp, seed, &JitterRanges::default()).map_err(fail)?;
        for (method, out) in [
            (Method::Full, &mut full_std),
            (Method::Baseline, &mut base_std),
        ] {
            let run = desk_run(&scene, &ds, desk_config(seed, method, Scenario::Color))?;
            out.push(chroma_dispersion(&run.renders, None).map_err(fail)?.pooled);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f, b) = (mean(&full_std), mean(&base_std));
    let per_seed: Vec<String> = full_std
        .iter()
        .zip(&base_std)
        .map(|(f, b)| format!("{f:.2} vs {b:.2}"))
        .collect();
    check(
        f < b,
        format!(
            "pooled (a*, b*) std {f:.2} (full) vs {b:.2} (baseline), mean of seeds [{}]",
            per_seed.join(", ")
        ),
    )
}

fn determinism_and_checkpointing() -> Outcome {
    let scene = demo_scene(&DemoOptions {
        size: 24,
        wall_grid: 4,
        objects: 6,
        train_views: 4,
        held_out_views: 1,
        seed: 7,
        ..Default::default()
    });
    let ds = synthesize(&scene, Profile::MixedAll, 7, &JitterRanges::default()).map_err(fail)?;
    let config = TrainConfig {
        iterations: 16,
        seed: 3,
        scenario: Scenario::Mixed,
        ..Default::default()
    };
    let (_, log_a) = train(&scene, ds.training_views(), config.clone()).map_err(fail)?;
    let (full, log_b) = train(&scene, ds.training_views(), config.clone()).map_err(fail)?;

    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("checkpoint.json");
    let mut first = Trainer::new(
        &scene,
        ds.training_views(),
        TrainConfig {
            iterations: 7,
            ..config
        },
    )
    .map_err(fail)?;
    first.run().map_err(fail)?;
    save_checkpoint(&first.checkpoint(), &path).map_err(fail)?;
    drop(first);
    let mut resumed = Trainer::resume(load_checkpoint(&path).map_err(fail)?, ds.training_views())
        .map_err(fail)?
        .with_iterations(16);
    resumed.run().map_err(fail)?;
    let resumed = resumed.checkpoint();

    let same_log = log_a == log_b;
    let same_resume = resumed.log == full.log
        && full
            .model
            .store
            .iter()
            .all(|(id, p)| p.values == resumed.model.store.values(id));
    check(
        same_log && same_resume,
        format!("repeat run identical: {same_log}; resumed at 7/16 identical: {same_resume}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("identity round-trip", identity_round_trip),
        ("compositing oracle", compositing_oracle),
        ("loss zero-cases", loss_zero_cases),
        ("curve-prior convergence", curve_prior_convergence),
        ("desk-scale lightness recovery", lightness_recovery),
        ("color-correction effect", color_correction_effect),
        ("chromaticity consistency", chromaticity_consistency),
        ("determinism & checkpointing", determinism_and_checkpointing),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

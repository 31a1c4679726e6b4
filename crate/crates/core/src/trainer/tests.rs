use super::*;
use crate::dataset::synthesize;
use crate::degrade::JitterRanges;
use crate::imaging::Image;
use crate::splat::{demo_scene, render_dual, DemoOptions, RenderSettings, Scene};

fn tiny_scene() -> Scene {
    demo_scene(&DemoOptions {
        size: 16,
        wall_grid: 4,
        objects: 5,
        train_views: 3,
        held_out_views: 1,
        seed: 2,
        ..Default::default()
    })
}

fn tiny_views(profile: Profile) -> (Scene, Vec<TrainingView>) {
    let scene = tiny_scene();
    let ds = synthesize(&scene, profile, 4, &JitterRanges::default()).unwrap();
    (scene, ds.training_views())
}

fn config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn defaults_and_derived_weights() {
    let c = TrainConfig::default();
    assert_eq!(c.iterations, 5000);
    assert_eq!(c.omega_switch, 3000);
    assert_eq!(c.eta(), 0.005);
    let color = TrainConfig {
        scenario: Scenario::Color,
        ..c.clone()
    };
    assert_eq!(color.eta(), 0.1);
    assert_eq!(
        TrainConfig {
            eta: Some(0.0),
            ..color
        }
        .eta(),
        0.0
    );
    assert_eq!(Scenario::from_profile(Profile::Warm), Scenario::Color);
    assert_eq!(Scenario::from_profile(Profile::MixedAll), Scenario::Mixed);
    assert_eq!(
        Scenario::from_profile(Profile::Varying),
        Scenario::Lightness
    );
    assert_eq!(Scenario::Lightness.residual_clip(), 0.1);
    assert_eq!(Scenario::Mixed.residual_clip(), 0.5);
}

#[test]
fn validation_rejects_bad_configs() {
    assert!(TrainConfig {
        iterations: 0,
        ..config(1)
    }
    .validate()
    .is_err());
    let mut c = config(1);
    c.lr.lut = -1.0;
    let err = c.validate().unwrap_err().to_string();
    assert!(err.contains("lr.lut"), "{err}");
    assert!(TrainConfig {
        lambda: 1.5,
        ..config(1)
    }
    .validate()
    .is_err());
    assert!(config(1).validate().is_ok());
}

#[test]
fn hash_ignores_iteration_budget() {
    assert_eq!(config(3).hash(), config(300).hash());
    assert_ne!(
        config(3).hash(),
        TrainConfig {
            seed: 1,
            ..config(3)
        }
        .hash()
    );
}

#[test]
fn zero_learning_rates_freeze_everything() {
    let (scene, views) = tiny_views(Profile::LowLight);
    let mut c = config(4);
    c.lr = LearningRates::zero();
    let mut t = Trainer::new(&scene, views, c).unwrap();
    let before = t.model().store.clone();
    t.run().unwrap();
    for (id, p) in before.iter() {
        assert_eq!(p.values, t.model().store.values(id), "{}", p.name);
    }
}

#[test]
fn training_is_deterministic() {
    let (scene, views) = tiny_views(Profile::Varying);
    let (_, a) = train(&scene, views.clone(), config(6)).unwrap();
    let (_, b) = train(&scene, views, config(6)).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|p| p.total.is_finite()));
}

#[test]
fn checkpoint_resume_is_bitwise_identical() {
    let (scene, views) = tiny_views(Profile::MixedTemp);
    let c = TrainConfig {
        scenario: Scenario::Color,
        ..config(8)
    };
    let mut full = Trainer::new(&scene, views.clone(), c.clone()).unwrap();
    full.run().unwrap();

    let mut first =
        Trainer::new(&scene, views.clone(), TrainConfig { iterations: 4, ..c }).unwrap();
    first.run().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    save_checkpoint(&first.checkpoint(), &path).unwrap();
    assert!(!dir.path().join("ck.json.tmp").exists());
    let mut resumed = Trainer::resume(load_checkpoint(&path).unwrap(), views)
        .unwrap()
        .with_iterations(8);
    resumed.run().unwrap();

    assert_eq!(full.log(), resumed.log());
    for (id, p) in full.model().store.iter() {
        assert_eq!(p.values, resumed.model().store.values(id), "{}", p.name);
    }
}

#[test]
fn resume_rejects_other_views() {
    let (scene, views) = tiny_views(Profile::None);
    let t = Trainer::new(&scene, views.clone(), config(1)).unwrap();
    assert!(Trainer::resume(t.checkpoint(), views[1..].to_vec()).is_err());
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let (scene, views) = tiny_views(Profile::None);
    let t = Trainer::new(&scene, views, config(1)).unwrap();
    let mut ck = t.checkpoint();
    ck.config.seed += 1;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    save_checkpoint(&ck, &path).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(crate::Error::Checkpoint(_))
    ));
}

#[test]
fn initial_curve_loss_matches_initial_curves() {
    let (scene, views) = tiny_views(Profile::LowLight);
    let cdf = crate::colorxform::cdf_curve(&views[0].image).into_entries();
    let t = Trainer::new(&scene, views, config(1)).unwrap();
    let parts = t.evaluate_objective().unwrap();
    // Zero-initialized heads: L = identity, G = 1, A = 0.5, B = 1.
    let id: Vec<f64> = (0..256).map(crate::colorxform::grid).collect();
    let anchor = id
        .iter()
        .zip(&cdf)
        .map(|(l, c)| (l - c).powi(2))
        .sum::<f64>()
        / 256.0;
    let prior = id
        .iter()
        .map(|&x| (x - (x + crate::colorxform::PRIOR_EPS) * x).powi(2))
        .sum::<f64>()
        / 256.0;
    assert!((parts.curve - (anchor + 0.5 * prior)).abs() < 1e-12);
    assert!(parts.tv > 0.0 && (parts.tv - 1.0 / 65025.0).abs() < 1e-15);
}

#[test]
fn baseline_only_touches_photometric_base() {
    let (scene, views) = tiny_views(Profile::Varying);
    let c = TrainConfig {
        method: Method::Baseline,
        ..config(3)
    };
    let mut t = Trainer::new(&scene, views, c).unwrap();
    let before = t.model().store.clone();
    t.run().unwrap();
    let m = t.model();
    for (id, p) in before.iter() {
        let changed = p.values != m.store.values(id);
        let expected = id == m.splats.colors || id == m.splats.opacity_logits;
        assert_eq!(changed, expected, "{}", p.name);
    }
    assert!(t.log().iter().all(|p| p.spa == 0.0 && p.total == p.reg));
}

#[test]
fn non_finite_input_names_component() {
    let (scene, mut views) = tiny_views(Profile::None);
    views[0].image.data_mut()[5] = f64::NAN;
    let c = TrainConfig {
        method: Method::Baseline,
        ..config(1)
    };
    let mut t = Trainer::new(&scene, views, c).unwrap();
    let err = t.step().unwrap_err();
    assert!(
        matches!(err, crate::Error::NonFiniteComponent("reg", _)),
        "{err}"
    );
}

#[test]
fn novel_renders_use_adjusted_colors_only() {
    let (scene, views) = tiny_views(Profile::LowLight);
    let mut t = Trainer::new(&scene, views.clone(), config(5)).unwrap();
    // Untrained: a = 1, b = 0, so Ĉ_out equals the base render.
    let ck = t.checkpoint();
    let settings = RenderSettings::default().with_background(scene.background());
    let base = render_dual(&ck.model.cloud(), &scene.cameras[0], &settings).c_in;
    assert_eq!(
        render_novel(&ck, &scene.cameras[..1]).unwrap()[0],
        base.clamped()
    );

    t.run().unwrap();
    let ck = t.checkpoint();
    let held: Vec<_> = scene.held_out_cameras().into_iter().cloned().collect();
    for img in render_novel(&ck, &held).unwrap() {
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    // A training camera reproduces the tape's Ĉ_out at the same state.
    let mut tape = crate::diffcore::Tape::new();
    let r = crate::splat::render_dual_var(
        &mut tape,
        &ck.model.store,
        &ck.model.splats,
        &views[0].camera,
        &settings,
        false,
    );
    let direct = Image::new(16, 16, tape.value(r.c_out).to_vec())
        .unwrap()
        .clamped();
    assert_eq!(
        render_novel(&ck, &[views[0].camera.clone()]).unwrap()[0],
        direct
    );
}

#[test]
fn evaluation_table() {
    let a = Image::from_fn(12, 12, |x, y| [x as f64 / 12.0, y as f64 / 12.0, 0.5]);
    let b = a.map(|v| v * 0.9);
    let t = evaluate(&[a.clone(), a.clone()], &[a.clone(), a.clone()]).unwrap();
    assert!(t
        .rows
        .iter()
        .all(|r| r.psnr == 99.0 && (r.ssim - 1.0).abs() < 1e-12));
    let t = evaluate(&[a.clone(), b.clone()], &[a.clone(), a.clone()]).unwrap();
    assert_eq!(t.mean_psnr, (t.rows[0].psnr + t.rows[1].psnr) / 2.0);
    assert_eq!(t.mean_ssim, (t.rows[0].ssim + t.rows[1].ssim) / 2.0);
    let d = crate::imaging::chroma_dispersion(&[a.clone(), b.clone()], None).unwrap();
    assert_eq!(t.dispersion, Some(d));
    assert!(t.to_csv().lines().last().unwrap().starts_with("mean,"));
    assert!(evaluate(std::slice::from_ref(&a), &[]).is_err());
}

#[test]
fn loss_csv_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    let log = vec![crate::losses::LossComponents::default(); 3];
    write_loss_csv(&path, &log).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(
        text.lines().next().unwrap(),
        "iter,reg,spa,tv,curve,cc,total"
    );
}

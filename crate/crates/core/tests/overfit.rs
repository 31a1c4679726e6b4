//! One Gaussian, one clean 32×32 view: overfit sanity for the training loop.

use curvesplat::imaging::Image;
use curvesplat::splat::{look_at, render_dual, Camera, Gaussian, RenderSettings, Scene};
use curvesplat::trainer::{Method, TrainConfig, Trainer, TrainingView};

fn camera() -> Camera {
    Camera {
        fx: 38.0,
        fy: 38.0,
        cx: 16.0,
        cy: 16.0,
        width: 32,
        height: 32,
        world_to_camera: look_at([0.0, 0.0, -2.5], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0]),
        near: 0.01,
        view_id: 0,
        held_out: false,
    }
}

fn scene() -> Scene {
    Scene {
        gaussians: vec![Gaussian::new([0.05, -0.05, 0.0], 0.7, 2.0, [0.9, 0.2, 0.6])],
        cameras: vec![camera()],
        background: Some([0.45, 0.45, 0.45]),
    }
}

fn settings(scene: &Scene) -> RenderSettings {
    RenderSettings::default().with_background(scene.background())
}

fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

struct Fit {
    start_l1: f64,
    end_l1: f64,
    first_avg: f64,
    last_avg: f64,
}

fn fit(method: Method) -> Fit {
    let scene = scene();
    let cam = camera();
    let clean = render_dual(&scene.cloud(), &cam, &settings(&scene))
        .c_in
        .clamped();
    let views = vec![TrainingView {
        camera: cam.clone(),
        image: clean.clone(),
    }];
    let config = TrainConfig {
        iterations: 2000,
        seed: 3,
        method,
        ..Default::default()
    };
    let l1 = |img: &Image| {
        img.data()
            .iter()
            .zip(clean.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / img.data().len() as f64
    };
    let mut trainer = Trainer::new(&scene, views, config).unwrap();
    let start_l1 = l1(&render_dual(&trainer.model().cloud(), &cam, &settings(&scene)).c_in);
    trainer.run().unwrap();
    let end_l1 = l1(&render_dual(&trainer.model().cloud(), &cam, &settings(&scene)).c_in);

    let totals: Vec<f64> = trainer.log().iter().map(|c| c.total).collect();
    let avg = moving_average(&totals, 50);
    Fit {
        start_l1,
        end_l1,
        first_avg: avg[0],
        last_avg: *avg.last().unwrap(),
    }
}

#[test]
fn reconstruction_path_overfits_within_budget() {
    let f = fit(Method::Baseline);
    assert!(
        f.start_l1 > 0.05,
        "the gray start must actually differ: {}",
        f.start_l1
    );
    assert!(f.end_l1 < 0.01, "L1 after 2000 iterations: {}", f.end_l1);
    assert!(
        f.last_avg < f.first_avg,
        "50-iteration average {} -> {}",
        f.first_avg,
        f.last_avg
    );
}

/// The curve prior drags the pseudo-label toward histogram equalization even
/// on a clean view, and the shared base colors settle between the two
/// targets, so only progress is required here.
#[test]
fn full_objective_makes_progress_on_clean_view() {
    let f = fit(Method::Full);
    assert!(
        f.end_l1 < 0.75 * f.start_l1,
        "L1 {} -> {}",
        f.start_l1,
        f.end_l1
    );
    assert!(
        f.last_avg < f.first_avg,
        "50-iteration average {} -> {}",
        f.first_avg,
        f.last_avg
    );
}

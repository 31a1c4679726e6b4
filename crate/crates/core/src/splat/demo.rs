//! Procedural test scene: a colored backdrop wall with a cluster of
//! Gaussians in front, seen from cameras on a horizontal arc.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{look_at, Camera, DEFAULT_NEAR};
use super::scene::{Gaussian, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoOptions {
    pub size: usize,
    /// Backdrop Gaussians per side.
    pub wall_grid: usize,
    pub objects: usize,
    pub train_views: usize,
    pub held_out_views: usize,
    /// Half-angle of the camera arc, degrees.
    pub arc_degrees: f64,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            size: 32,
            wall_grid: 8,
            objects: 24,
            train_views: 8,
            held_out_views: 2,
            arc_degrees: 20.0,
            seed: 0,
        }
    }
}

pub fn demo_scene(opts: &DemoOptions) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut gaussians = Vec::new();
    let n = opts.wall_grid.max(1);
    let spacing = 5.2 / n as f64;
    for i in 0..n {
        for j in 0..n {
            let u = (i as f64 + 0.5) / n as f64;
            let v = (j as f64 + 0.5) / n as f64;
            let mu = [
                -2.6 + spacing * (i as f64 + 0.5),
                -2.6 + spacing * (j as f64 + 0.5),
                1.0,
            ];
            let color = [0.25 + 0.5 * u, 0.3 + 0.4 * v, 0.65 - 0.4 * u * v];
            let mut g = Gaussian::new(mu, spacing * 0.7, 4.0, color);
            g.log_scales[2] = (0.05f64).ln();
            gaussians.push(g);
        }
    }
    for _ in 0..opts.objects {
        let mu = [
            rng.gen_range(-0.7..0.7),
            rng.gen_range(-0.7..0.7),
            rng.gen_range(-0.5..0.5),
        ];
        let mut g = Gaussian::new(
            mu,
            1.0,
            rng.gen_range(0.5..3.0),
            [rng.gen(), rng.gen(), rng.gen()],
        );
        g.log_scales = [0; 3].map(|_| rng.gen_range(0.08f64..0.22).ln());
        g.quat = [
            1.0,
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
            rng.gen_range(-0.4..0.4),
        ];
        gaussians.push(g);
    }

    let total = opts.train_views + opts.held_out_views;
    let size = opts.size as f64;
    let cameras = (0..total)
        .map(|k| {
            let s = if total > 1 {
                k as f64 / (total - 1) as f64
            } else {
                0.5
            };
            let angle = (2.0 * s - 1.0) * opts.arc_degrees.to_radians();
            let eye = [3.0 * angle.sin(), -0.3 + 0.2 * s, -3.0 * angle.cos()];
            Camera {
                fx: size * 1.4,
                fy: size * 1.4,
                cx: size / 2.0,
                cy: size / 2.0,
                width: opts.size,
                height: opts.size,
                world_to_camera: look_at(eye, [0.0, 0.0, 0.2], [0.0, -1.0, 0.0]),
                near: DEFAULT_NEAR,
                view_id: k,
                held_out: false,
            }
        })
        .collect::<Vec<_>>();
    let mut cameras = cameras;
    // Held-out views are spread through the arc, never at its ends.
    for h in 0..opts.held_out_views {
        let idx = ((h + 1) * total / (opts.held_out_views + 1)).min(total - 1);
        cameras[idx].held_out = true;
    }
    Scene {
        gaussians,
        cameras,
        background: Some([0.0; 3]),
    }
}

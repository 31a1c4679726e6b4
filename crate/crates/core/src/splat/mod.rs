//! Small differentiable Gaussian splat renderer with two color attributes
//! per Gaussian: the base color `c` and the adjusted color `a ⊙ c + b`.

mod camera;
mod demo;
mod oracle;
mod project;
mod raster;
mod scene;

use crate::diffcore::{Tape, Var};

pub use camera::{look_at, Camera, DEFAULT_NEAR};
pub use demo::{demo_scene, DemoOptions};
pub use oracle::render_brute_force;
pub use project::{project, project_var, Projection, SCREEN_DILATION};
pub use raster::{
    composite, render, render_dual, render_dual_var, DualRender, RenderSettings, RenderedPair,
};
pub use scene::{load_scene, save_scene, Gaussian, GaussianCloud, Scene, SplatParams};

/// Channel-wise `a ⊙ c + b`.
pub fn adjusted_color(c: [f64; 3], a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] * c[0] + b[0], a[1] * c[1] + b[1], a[2] * c[2] + b[2]]
}

/// [`adjusted_color`] on the tape for `[N, 3]` colors, gains and offsets.
pub fn adjusted_color_var(tape: &mut Tape, c: Var, a: Var, b: Var) -> Var {
    let ac = tape.mul(a, c);
    tape.add(ac, b)
}

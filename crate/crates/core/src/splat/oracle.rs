//! Brute-force reference renderer: every Gaussian is evaluated at every
//! pixel with no footprint cut-off and no early termination.

use super::camera::Camera;
use super::project::project;
use super::scene::GaussianCloud;
use crate::imaging::Image;

/// Returns `(Ĉ_in, Ĉ_out)`.
pub fn render_brute_force(
    cloud: &GaussianCloud,
    cam: &Camera,
    background: [f64; 3],
) -> (Image, Image) {
    let ids = cloud.ids();
    let mut visible: Vec<_> = cloud
        .gaussians
        .iter()
        .zip(ids)
        .filter_map(|(g, id)| project(g, cam).map(|p| (p, id, g)))
        .collect();
    visible.sort_by(|a, b| {
        a.0.depth
            .partial_cmp(&b.0.depth)
            .unwrap()
            .then(a.1.cmp(&b.1))
    });

    let mut c_in = Image::filled(cam.width, cam.height, background);
    let mut c_out = c_in.clone();
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut acc_in = [0.0; 3];
            let mut acc_out = [0.0; 3];
            let mut t = 1.0;
            for (p, _, g) in &visible {
                // Invert the covariance directly rather than using the conic.
                let [sxx, sxy, syy] = p.cov;
                let det = sxx * syy - sxy * sxy;
                let (dx, dy) = (px - p.mean[0], py - p.mean[1]);
                let q = (syy * dx * dx - 2.0 * sxy * dx * dy + sxx * dy * dy) / det;
                let alpha = g.opacity() * (-0.5 * q).exp();
                for k in 0..3 {
                    acc_in[k] += t * alpha * g.color[k];
                    acc_out[k] += t * alpha * (g.gain[k] * g.color[k] + g.offset[k]);
                }
                t *= 1.0 - alpha;
            }
            let mut a = [0.0; 3];
            let mut b = [0.0; 3];
            for k in 0..3 {
                a[k] = acc_in[k] + t * background[k];
                b[k] = acc_out[k] + t * background[k];
            }
            c_in.set_pixel(x, y, a);
            c_out.set_pixel(x, y, b);
        }
    }
    (c_in, c_out)
}

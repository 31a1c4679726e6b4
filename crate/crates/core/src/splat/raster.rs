//! Per-pixel front-to-back compositing, forward and backward.

use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::project::{project, project_var, Projection};
use super::scene::{GaussianCloud, SplatParams};
use crate::diffcore::{BackwardCtx, ParamStore, Tape, Var};
use crate::imaging::Image;

/// Contribution cut-off on the Mahalanobis term `q`: a Gaussian is
/// skipped where its falloff `exp(-q/2)` is below 1e-7.
pub const DEFAULT_CUTOFF_Q: f64 = 32.236_191_301_916_64;
pub const DEFAULT_MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub background: [f64; 3],
    /// Fragments with `q` above this are skipped.
    pub cutoff_q: f64,
    /// Compositing stops once transmittance falls below this.
    pub min_transmittance: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            cutoff_q: DEFAULT_CUTOFF_Q,
            min_transmittance: DEFAULT_MIN_TRANSMITTANCE,
        }
    }
}

impl RenderSettings {
    /// No footprint culling and no early termination.
    pub fn exact() -> Self {
        Self {
            cutoff_q: f64::INFINITY,
            min_transmittance: 0.0,
            ..Self::default()
        }
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }
}

/// Front-to-back composite of `(color, alpha)` pairs sorted near to far.
pub fn composite(contributions: &[([f64; 3], f64)], background: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    let mut t = 1.0;
    for (c, alpha) in contributions {
        for k in 0..3 {
            out[k] += c[k] * alpha * t;
        }
        t *= 1.0 - alpha;
        if t < DEFAULT_MIN_TRANSMITTANCE {
            break;
        }
    }
    for k in 0..3 {
        out[k] += background[k] * t;
    }
    out
}

#[derive(Clone, Copy)]
struct Fragment {
    gaussian: u32,
    alpha: f64,
    /// Transmittance in front of this fragment.
    t: f64,
    dx: f64,
    dy: f64,
}

struct Fragments {
    offsets: Vec<usize>,
    items: Vec<Fragment>,
    final_t: Vec<f64>,
}

/// Visible Gaussians sorted by (depth, stable id).
fn depth_order(projections: &[Option<Projection>], ids: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..projections.len())
        .filter(|&i| projections[i].is_some())
        .collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (projections[a].unwrap().depth, projections[b].unwrap().depth);
        da.total_cmp(&db).then(ids[a].cmp(&ids[b]))
    });
    order
}

fn rasterize(
    screen: &[f64],
    opacity: &[f64],
    order: &[usize],
    cam: &Camera,
    settings: &RenderSettings,
) -> Fragments {
    let (w, h) = (cam.width, cam.height);
    // Conservative pixel bounding boxes of the ellipses q <= cutoff.
    let boxes: Vec<[f64; 4]> = order
        .iter()
        .map(|&i| {
            let s = &screen[i * 5..i * 5 + 5];
            if !settings.cutoff_q.is_finite() {
                return [
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                ];
            }
            let det = s[2] * s[4] - s[3] * s[3];
            let (vx, vy) = (s[4] / det, s[2] / det);
            let (rx, ry) = (
                (settings.cutoff_q * vx).sqrt(),
                (settings.cutoff_q * vy).sqrt(),
            );
            [s[0] - rx, s[0] + rx, s[1] - ry, s[1] + ry]
        })
        .collect();

    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut items = Vec::new();
    let mut final_t = Vec::with_capacity(w * h);
    offsets.push(0);
    for py in 0..h {
        let y = py as f64 + 0.5;
        for px in 0..w {
            let x = px as f64 + 0.5;
            let mut t = 1.0;
            for (slot, &i) in order.iter().enumerate() {
                let b = &boxes[slot];
                if x < b[0] || x > b[1] || y < b[2] || y > b[3] {
                    continue;
                }
                let s = &screen[i * 5..i * 5 + 5];
                let (dx, dy) = (x - s[0], y - s[1]);
                let q = s[2] * dx * dx + 2.0 * s[3] * dx * dy + s[4] * dy * dy;
                if q > settings.cutoff_q {
                    continue;
                }
                let alpha = opacity[i] * (-0.5 * q).exp();
                items.push(Fragment {
                    gaussian: i as u32,
                    alpha,
                    t,
                    dx,
                    dy,
                });
                t *= 1.0 - alpha;
                if t < settings.min_transmittance {
                    break;
                }
            }
            final_t.push(t);
            offsets.push(items.len());
        }
    }
    Fragments {
        offsets,
        items,
        final_t,
    }
}

fn shade(frags: &Fragments, colors: &[f64], background: [f64; 3]) -> Vec<f64> {
    let n_pix = frags.final_t.len();
    let mut out = vec![0.0; n_pix * 3];
    for p in 0..n_pix {
        let px = &mut out[p * 3..p * 3 + 3];
        for f in &frags.items[frags.offsets[p]..frags.offsets[p + 1]] {
            let c = &colors[f.gaussian as usize * 3..f.gaussian as usize * 3 + 3];
            let w = f.alpha * f.t;
            for k in 0..3 {
                px[k] += c[k] * w;
            }
        }
        let t = frags.final_t[p];
        for k in 0..3 {
            px[k] += background[k] * t;
        }
    }
    out
}

/// Rendered base-color and adjusted-color images sharing one set of
/// compositing weights.
#[derive(Clone, Debug)]
pub struct RenderedPair {
    pub c_in: Image,
    pub c_out: Image,
    /// Final per-pixel transmittance, row-major.
    pub transmittance: Vec<f64>,
}

fn screen_rows(projections: &[Option<Projection>]) -> Vec<f64> {
    projections
        .iter()
        .flat_map(|p| match p {
            Some(p) => [p.mean[0], p.mean[1], p.conic[0], p.conic[1], p.conic[2]],
            None => [0.0; 5],
        })
        .collect()
}

pub fn render_dual(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings) -> RenderedPair {
    let projections: Vec<Option<Projection>> =
        cloud.gaussians.iter().map(|g| project(g, cam)).collect();
    let order = depth_order(&projections, &cloud.ids());
    let opacity: Vec<f64> = cloud.gaussians.iter().map(|g| g.opacity()).collect();
    let frags = rasterize(&screen_rows(&projections), &opacity, &order, cam, settings);
    let c: Vec<f64> = cloud.gaussians.iter().flat_map(|g| g.color).collect();
    let c_out: Vec<f64> = cloud
        .gaussians
        .iter()
        .flat_map(|g| super::adjusted_color(g.color, g.gain, g.offset))
        .collect();
    let img = |data| Image::new(cam.width, cam.height, data).expect("render size matches camera");
    RenderedPair {
        c_in: img(shade(&frags, &c, settings.background)),
        c_out: img(shade(&frags, &c_out, settings.background)),
        transmittance: frags.final_t,
    }
}

/// Base-color render only.
pub fn render(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings) -> Image {
    render_dual(cloud, cam, settings).c_in
}

impl Tape {
    /// Composites every color set in `colors` (each `[N, 3]`) with shared
    /// weights. Output is `[sets, H, W, 3]`.
    fn composite_sets(
        &mut self,
        screen: Var,
        opacity: Var,
        colors: &[Var],
        order: Vec<usize>,
        cam: &Camera,
        settings: &RenderSettings,
    ) -> (Var, Vec<f64>) {
        let n = self.numel(opacity);
        let frags = rasterize(
            self.value(screen),
            self.value(opacity),
            &order,
            cam,
            settings,
        );
        let n_pix = cam.pixel_count();
        let mut value = Vec::with_capacity(colors.len() * n_pix * 3);
        for &c in colors {
            assert_eq!(self.numel(c), n * 3, "color set must be [N, 3]");
            value.extend(shade(&frags, self.value(c), settings.background));
        }
        let final_t = frags.final_t.clone();
        let mut parents = vec![screen, opacity];
        parents.extend_from_slice(colors);
        let sets = colors.len();
        let bg = settings.background;
        let out = self.op(
            "composite",
            &parents,
            value,
            &[sets, cam.height, cam.width, 3],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let screen = ctx.input(0);
                let opacity = ctx.input(1);
                let mut g_screen = vec![0.0; n * 5];
                let mut g_opacity = vec![0.0; n];
                let mut g_colors: Vec<Vec<f64>> = vec![vec![0.0; n * 3]; sets];
                let mut g_alpha = Vec::new();
                for p in 0..n_pix {
                    let frs = &frags.items[frags.offsets[p]..frags.offsets[p + 1]];
                    if frs.is_empty() {
                        continue;
                    }
                    g_alpha.clear();
                    g_alpha.resize(frs.len(), 0.0);
                    for s in 0..sets {
                        let g = &ctx.grad[(s * n_pix + p) * 3..(s * n_pix + p) * 3 + 3];
                        if g.iter().all(|&v| v == 0.0) {
                            continue;
                        }
                        let colors = ctx.input(2 + s);
                        // Reverse scan: r is the normalized color behind fragment k.
                        let mut r = bg;
                        for (k, f) in frs.iter().enumerate().rev() {
                            let gi = f.gaussian as usize;
                            let c = &colors[gi * 3..gi * 3 + 3];
                            let w = f.alpha * f.t;
                            let mut ga = 0.0;
                            for ch in 0..3 {
                                g_colors[s][gi * 3 + ch] += w * g[ch];
                                ga += f.t * (c[ch] - r[ch]) * g[ch];
                                r[ch] = c[ch] * f.alpha + (1.0 - f.alpha) * r[ch];
                            }
                            g_alpha[k] += ga;
                        }
                    }
                    for (f, &ga) in frs.iter().zip(&g_alpha) {
                        let gi = f.gaussian as usize;
                        let o = opacity[gi];
                        let falloff = f.alpha / o;
                        g_opacity[gi] += ga * falloff;
                        if ctx.needs(0) {
                            let s = &screen[gi * 5..gi * 5 + 5];
                            let gq = -0.5 * f.alpha * ga;
                            let (dx, dy) = (f.dx, f.dy);
                            let gs = &mut g_screen[gi * 5..gi * 5 + 5];
                            gs[0] += gq * -2.0 * (s[2] * dx + s[3] * dy);
                            gs[1] += gq * -2.0 * (s[3] * dx + s[4] * dy);
                            gs[2] += gq * dx * dx;
                            gs[3] += gq * 2.0 * dx * dy;
                            gs[4] += gq * dy * dy;
                        }
                    }
                }
                let mut out = vec![
                    ctx.needs(0).then_some(g_screen),
                    ctx.needs(1).then_some(g_opacity),
                ];
                for (s, gc) in g_colors.into_iter().enumerate() {
                    out.push(ctx.needs(2 + s).then_some(gc));
                }
                out
            }),
        );
        (out, final_t)
    }
}

/// Tape nodes of a dual render: both images `[H, W, 3]`.
#[derive(Clone, Debug)]
pub struct DualRender {
    pub c_in: Var,
    pub c_out: Var,
    pub transmittance: Vec<f64>,
}

/// Renders `Ĉ_in` (colors `c`) and `Ĉ_out` (colors `a ⊙ c + b`) from the
/// parameters in `store`. With `geometry` false, means, scales and
/// rotations are treated as constants.
pub fn render_dual_var(
    tape: &mut Tape,
    store: &ParamStore,
    params: &SplatParams,
    cam: &Camera,
    settings: &RenderSettings,
    geometry: bool,
) -> DualRender {
    let n = params.count;
    let (screen, projections) = if geometry {
        let m = tape.param(store, params.means);
        let s = tape.param(store, params.log_scales);
        let q = tape.param(store, params.quats);
        project_var(tape, m, s, q, cam)
    } else {
        let cloud = params.cloud(store);
        let projections: Vec<Option<Projection>> =
            cloud.gaussians.iter().map(|g| project(g, cam)).collect();
        (
            tape.constant(screen_rows(&projections), &[n, 5]),
            projections,
        )
    };
    let order = depth_order(&projections, &params.ids);
    let logits = tape.param(store, params.opacity_logits);
    let opacity = tape.sigmoid(logits);
    let c = tape.param(store, params.colors);
    let a = tape.param(store, params.gains);
    let b = tape.param(store, params.offsets);
    let c_out = super::adjusted_color_var(tape, c, a, b);
    let (both, transmittance) =
        tape.composite_sets(screen, opacity, &[c, c_out], order, cam, settings);
    let len = cam.pixel_count() * 3;
    let shape = [cam.height, cam.width, 3];
    let first = tape.slice(both, 0, len);
    let second = tape.slice(both, len, len);
    DualRender {
        c_in: tape.reshape(first, &shape),
        c_out: tape.reshape(second, &shape),
        transmittance,
    }
}

//! Perspective projection of 3-D Gaussians to screen-space conics.

use super::camera::Camera;
use super::scene::Gaussian;
use crate::diffcore::{BackwardCtx, Tape, Var};

/// Low-pass dilation added to the screen covariance diagonal (px²).
pub const SCREEN_DILATION: f64 = 0.3;

type M3 = [[f64; 3]; 3];

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Pixel coordinates of the projected mean.
    pub mean: [f64; 2],
    /// Screen covariance `[xx, xy, yy]` including the dilation.
    pub cov: [f64; 3],
    /// Inverse covariance `[a, b, c]`, so `q = a dx² + 2b dx dy + c dy²`.
    pub conic: [f64; 3],
    /// Camera-space z.
    pub depth: f64,
}

fn quat_to_rot(q: [f64; 4]) -> ([f64; 4], M3) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let r = [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ];
    ([w, x, y, z], r)
}

/// Intermediate values kept for the backward pass.
struct Cache {
    t: [f64; 3],
    qn: [f64; 4],
    qnorm: f64,
    r: M3,
    s: [f64; 3],
    m: M3,
    sigma: M3,
    tmat: [[f64; 3]; 2],
}

fn forward(
    mu: &[f64],
    log_scales: &[f64],
    quat: &[f64],
    cam: &Camera,
) -> Option<(Projection, Cache)> {
    let t = cam.to_camera_space([mu[0], mu[1], mu[2]]);
    if !(t[2] > cam.near) {
        return None;
    }
    let q = [quat[0], quat[1], quat[2], quat[3]];
    let qnorm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (qn, r) = quat_to_rot(q);
    let s = [
        log_scales[0].exp(),
        log_scales[1].exp(),
        log_scales[2].exp(),
    ];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * s[j];
        }
    }
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = (0..3).map(|k| m[i][k] * m[j][k]).sum();
        }
    }
    let (tx, ty, tz) = (t[0], t[1], t[2]);
    let j = [
        [cam.fx / tz, 0.0, -cam.fx * tx / (tz * tz)],
        [0.0, cam.fy / tz, -cam.fy * ty / (tz * tz)],
    ];
    let w = cam.rotation();
    let mut tmat = [[0.0; 3]; 2];
    for i in 0..2 {
        for c in 0..3 {
            tmat[i][c] = (0..3).map(|k| j[i][k] * w[k][c]).sum();
        }
    }
    // cov2 = T Σ Tᵀ
    let mut ts = [[0.0; 3]; 2];
    for i in 0..2 {
        for c in 0..3 {
            ts[i][c] = (0..3).map(|k| tmat[i][k] * sigma[k][c]).sum();
        }
    }
    let dot = |i: usize, l: usize| (0..3).map(|k| ts[i][k] * tmat[l][k]).sum::<f64>();
    let cov = [
        dot(0, 0) + SCREEN_DILATION,
        dot(0, 1),
        dot(1, 1) + SCREEN_DILATION,
    ];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let proj = Projection {
        mean: [cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy],
        cov,
        conic,
        depth: tz,
    };
    Some((
        proj,
        Cache {
            t,
            qn,
            qnorm,
            r,
            s,
            m,
            sigma,
            tmat,
        },
    ))
}

/// Projects one Gaussian; `None` when it lies at or behind the near plane.
pub fn project(g: &Gaussian, cam: &Camera) -> Option<Projection> {
    forward(&g.mu, &g.log_scales, &g.quat, cam).map(|(p, _)| p)
}

/// Gradients of one projection w.r.t. mean, log-scales and quaternion,
/// given upstream gradients for `[mx, my, a, b, c]`.
fn backward(
    cache: &Cache,
    conic: [f64; 3],
    g: &[f64],
    cam: &Camera,
) -> ([f64; 3], [f64; 3], [f64; 4]) {
    let [ca, cb, cc] = conic;
    let cmat = [[ca, cb], [cb, cc]];
    // b enters the quadratic form twice; split its gradient symmetrically.
    let gc = [[g[2], 0.5 * g[3]], [0.5 * g[3], g[4]]];
    // dL/dcov = -C G C
    let mut cg = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cg[i][j] = (0..2).map(|k| cmat[i][k] * gc[k][j]).sum();
        }
    }
    let mut gcov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            gcov[i][j] = -(0..2).map(|k| cg[i][k] * cmat[k][j]).sum::<f64>();
        }
    }
    let tm = &cache.tmat;
    // dL/dT = 2 G T Σ, dL/dΣ = Tᵀ G T
    let mut tsig = [[0.0; 3]; 2];
    for i in 0..2 {
        for c in 0..3 {
            tsig[i][c] = (0..3).map(|k| tm[i][k] * cache.sigma[k][c]).sum();
        }
    }
    let mut gt = [[0.0; 3]; 2];
    for i in 0..2 {
        for c in 0..3 {
            gt[i][c] = 2.0 * (0..2).map(|k| gcov[i][k] * tsig[k][c]).sum::<f64>();
        }
    }
    let mut gsigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            gsigma[i][j] = (0..2)
                .map(|a| {
                    (0..2)
                        .map(|b| tm[a][i] * gcov[a][b] * tm[b][j])
                        .sum::<f64>()
                })
                .sum();
        }
    }
    // T = J W  ->  dL/dJ = G_T Wᵀ
    let w = cam.rotation();
    let mut gj = [[0.0; 3]; 2];
    for i in 0..2 {
        for k in 0..3 {
            gj[i][k] = (0..3).map(|c| gt[i][c] * w[k][c]).sum();
        }
    }
    let [tx, ty, tz] = cache.t;
    let (fx, fy) = (cam.fx, cam.fy);
    let (tz2, tz3) = (tz * tz, tz * tz * tz);
    let gt_cam = [
        gj[0][2] * (-fx / tz2) + g[0] * fx / tz,
        gj[1][2] * (-fy / tz2) + g[1] * fy / tz,
        gj[0][0] * (-fx / tz2)
            + gj[0][2] * (2.0 * fx * tx / tz3)
            + gj[1][1] * (-fy / tz2)
            + gj[1][2] * (2.0 * fy * ty / tz3)
            - g[0] * fx * tx / tz2
            - g[1] * fy * ty / tz2,
    ];
    let mut gmu = [0.0; 3];
    for c in 0..3 {
        gmu[c] = (0..3).map(|k| w[k][c] * gt_cam[k]).sum();
    }

    // Σ = M Mᵀ with M = R S
    let mut gm = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            gm[i][j] = 2.0 * (0..3).map(|k| gsigma[i][k] * cache.m[k][j]).sum::<f64>();
        }
    }
    let mut gls = [0.0; 3];
    let mut gr = [[0.0; 3]; 3];
    for j in 0..3 {
        let gs: f64 = (0..3).map(|i| cache.r[i][j] * gm[i][j]).sum();
        gls[j] = gs * cache.s[j];
        for i in 0..3 {
            gr[i][j] = gm[i][j] * cache.s[j];
        }
    }
    let [w_, x, y, z] = cache.qn;
    let dr: [M3; 4] = [
        [
            [0.0, -2.0 * z, 2.0 * y],
            [2.0 * z, 0.0, -2.0 * x],
            [-2.0 * y, 2.0 * x, 0.0],
        ],
        [
            [0.0, 2.0 * y, 2.0 * z],
            [2.0 * y, -4.0 * x, -2.0 * w_],
            [2.0 * z, 2.0 * w_, -4.0 * x],
        ],
        [
            [-4.0 * y, 2.0 * x, 2.0 * w_],
            [2.0 * x, 0.0, 2.0 * z],
            [-2.0 * w_, 2.0 * z, -4.0 * y],
        ],
        [
            [-4.0 * z, -2.0 * w_, 2.0 * x],
            [2.0 * w_, -4.0 * z, 2.0 * y],
            [2.0 * x, 2.0 * y, 0.0],
        ],
    ];
    let mut gqn = [0.0; 4];
    for k in 0..4 {
        gqn[k] = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| gr[i][j] * dr[k][i][j])
            .sum();
    }
    let proj: f64 = (0..4).map(|k| gqn[k] * cache.qn[k]).sum();
    let mut gq = [0.0; 4];
    for k in 0..4 {
        gq[k] = (gqn[k] - cache.qn[k] * proj) / cache.qnorm;
    }
    (gmu, gls, gq)
}

/// Projects every Gaussian on the tape. The result is `[N, 5]` with rows
/// `[mx, my, a, b, c]`; rows of culled Gaussians are zero and carry no
/// gradient. The returned projections carry depths for sorting.
pub fn project_var(
    tape: &mut Tape,
    means: Var,
    log_scales: Var,
    quats: Var,
    cam: &Camera,
) -> (Var, Vec<Option<Projection>>) {
    let n = tape.numel(means) / 3;
    let (vm, vs, vq) = (tape.value(means), tape.value(log_scales), tape.value(quats));
    let mut value = vec![0.0; n * 5];
    let mut projections = Vec::with_capacity(n);
    for i in 0..n {
        let p = forward(
            &vm[i * 3..i * 3 + 3],
            &vs[i * 3..i * 3 + 3],
            &vq[i * 4..i * 4 + 4],
            cam,
        )
        .map(|(p, _)| p);
        if let Some(p) = &p {
            value[i * 5..i * 5 + 5]
                .copy_from_slice(&[p.mean[0], p.mean[1], p.conic[0], p.conic[1], p.conic[2]]);
        }
        projections.push(p);
    }
    let cam = cam.clone();
    let screen = tape.op(
        "project",
        &[means, log_scales, quats],
        value,
        &[n, 5],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let (vm, vs, vq) = (ctx.input(0), ctx.input(1), ctx.input(2));
            let mut gm = vec![0.0; n * 3];
            let mut gs = vec![0.0; n * 3];
            let mut gq = vec![0.0; n * 4];
            for i in 0..n {
                let g = &ctx.grad[i * 5..i * 5 + 5];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let Some((p, cache)) = forward(
                    &vm[i * 3..i * 3 + 3],
                    &vs[i * 3..i * 3 + 3],
                    &vq[i * 4..i * 4 + 4],
                    &cam,
                ) else {
                    continue;
                };
                let (a, b, c) = backward(&cache, p.conic, g, &cam);
                gm[i * 3..i * 3 + 3].copy_from_slice(&a);
                gs[i * 3..i * 3 + 3].copy_from_slice(&b);
                gq[i * 4..i * 4 + 4].copy_from_slice(&c);
            }
            vec![
                ctx.needs(0).then_some(gm),
                ctx.needs(1).then_some(gs),
                ctx.needs(2).then_some(gq),
            ]
        }),
    );
    (screen, projections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{finite_diff_check, ParamStore};
    use crate::splat::look_at;

    fn axis_camera() -> Camera {
        let mut w2c = [0.0; 16];
        for i in 0..4 {
            w2c[i * 5] = 1.0;
        }
        Camera {
            fx: 30.0,
            fy: 25.0,
            cx: 8.0,
            cy: 7.0,
            width: 16,
            height: 14,
            world_to_camera: w2c,
            near: 0.01,
            view_id: 0,
            held_out: false,
        }
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let g = Gaussian::new([0.0, 0.0, 1.0], 0.1, 0.0, [0.5; 3]);
        let p = project(&g, &axis_camera()).unwrap();
        assert_eq!(p.mean, [8.0, 7.0]);
        assert_eq!(p.depth, 1.0);
    }

    #[test]
    fn isotropic_footprint_matches_jacobian() {
        let cam = axis_camera();
        let (s, z) = (0.05, 2.0);
        let g = Gaussian::new([0.0, 0.0, z], s, 0.0, [0.5; 3]);
        let p = project(&g, &cam).unwrap();
        let ex = (cam.fx * s / z).powi(2) + SCREEN_DILATION;
        let ey = (cam.fy * s / z).powi(2) + SCREEN_DILATION;
        assert!((p.cov[0] - ex).abs() < 1e-12 && (p.cov[2] - ey).abs() < 1e-12);
        assert!(p.cov[1].abs() < 1e-12);
        let far = project(&Gaussian::new([0.0, 0.0, 2.0 * z], s, 0.0, [0.5; 3]), &cam).unwrap();
        let extent = |p: &Projection| (p.cov[0] - SCREEN_DILATION).sqrt();
        assert!((extent(&far) - extent(&p) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let g = Gaussian::new([0.0, 0.0, -1.0], 0.1, 0.0, [0.5; 3]);
        assert!(project(&g, &axis_camera()).is_none());
        let g = Gaussian::new([0.0, 0.0, 0.005], 0.1, 0.0, [0.5; 3]);
        assert!(project(&g, &axis_camera()).is_none());
    }

    #[test]
    fn conic_inverts_covariance() {
        let mut g = Gaussian::new([0.2, -0.1, 1.5], 0.1, 0.0, [0.5; 3]);
        g.log_scales = [-2.0, -1.5, -2.5];
        g.quat = [0.9, 0.2, -0.3, 0.1];
        let cam = Camera {
            world_to_camera: look_at([0.5, -0.2, -1.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]),
            ..axis_camera()
        };
        let p = project(&g, &cam).unwrap();
        let [a, b, c] = p.conic;
        let [xx, xy, yy] = p.cov;
        assert!((a * xx + b * xy - 1.0).abs() < 1e-12);
        assert!((a * xy + b * yy).abs() < 1e-12);
        assert!((b * xy + c * yy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_gradients() {
        let cam = Camera {
            world_to_camera: look_at([0.6, -0.3, -1.2], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]),
            ..axis_camera()
        };
        let mut store = ParamStore::new();
        let means = store.add("means", vec![0.1, -0.2, 1.1, -0.3, 0.15, 0.8], &[2, 3]);
        let scales = store.add("scales", vec![-2.0, -1.6, -2.4, -1.8, -2.2, -1.9], &[2, 3]);
        let quats = store.add(
            "quats",
            vec![0.9, 0.2, -0.3, 0.1, 0.5, -0.4, 0.6, 0.3],
            &[2, 4],
        );
        let w: Vec<f64> = (0..10)
            .map(|i| ((i * 7 % 5) as f64 - 2.0) * [1.0, 1.0, 30.0, 30.0, 30.0][i % 5])
            .collect();
        let report = finite_diff_check(
            "project",
            &mut store,
            &[means.into(), scales.into(), quats.into()],
            |t, s| {
                let (m, sc, q) = (t.param(s, means), t.param(s, scales), t.param(s, quats));
                let (screen, _) = project_var(t, m, sc, q, &cam);
                let wv = t.constant(w.clone(), &[2, 5]);
                let p = t.mul(screen, wv);
                Ok(t.sum(p))
            },
            1e-4,
            1e-5,
        )
        .unwrap();
        assert!(report.pass, "{:?}", report.errors);
    }
}

use super::Image;
use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let z: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / z).collect()
}

/// Peak signal-to-noise ratio with peak 1.0, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_size(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Separable "valid" Gaussian filter of one channel plane.
pub(crate) fn blur_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (wo, ho) = (w - k + 1, h - k + 1);
    let mut horiz = vec![0.0; wo * h];
    for y in 0..h {
        for x in 0..wo {
            horiz[y * wo + x] = (0..k).map(|t| taps[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; wo * ho];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..k).map(|t| taps[t] * horiz[(y + t) * wo + x]).sum();
        }
    }
    out
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), the
/// standard stabilizers, evaluated per channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_size(b)?;
    let (w, h) = (a.width(), a.height());
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.pixels().map(|p| p[c]).collect();
        let y: Vec<f64> = b.pixels().map(|p| p[c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = blur_valid(&x, w, h, &taps);
        let my = blur_valid(&y, w, h, &taps);
        let sxx = blur_valid(&xx, w, h, &taps);
        let syy = blur_valid(&yy, w, h, &taps);
        let sxy = blur_valid(&xy, w, h, &taps);
        let n = mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / n as f64;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u64) -> Image {
        let mut s = seed;
        Image::from_fn(16, 14, |_, _| {
            let mut next = || {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            };
            [next(), next(), next()]
        })
    }

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(8, 8, [0.2, 0.4, 0.6]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = Image::filled(8, 8, [0.0; 3]);
        let d = Image::filled(8, 8, [0.5; 3]);
        assert!((psnr(&c, &d).unwrap() - 6.020_599_913_279_624).abs() < 1e-9);
    }

    #[test]
    fn psnr_rejects_mismatch() {
        assert!(psnr(
            &Image::filled(4, 4, [0.0; 3]),
            &Image::filled(4, 5, [0.0; 3])
        )
        .is_err());
    }

    #[test]
    fn ssim_self_and_symmetry() {
        let a = textured(1);
        let b = textured(2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn ssim_constant_patches_closed_form() {
        // mu_x = 0, mu_y = 1, zero variance: (C1 * C2) / ((1 + C1) * C2).
        let a = Image::filled(12, 12, [0.0; 3]);
        let b = Image::filled(12, 12, [1.0; 3]);
        let expected = SSIM_C1 * SSIM_C2 / ((1.0 + SSIM_C1) * SSIM_C2);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::filled(10, 20, [0.0; 3]);
        assert!(matches!(ssim(&a, &a), Err(Error::ImageTooSmall(_))));
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(w[i], w[10 - i]);
        }
    }
}

use super::Image;
use crate::error::{Error, Result};

/// sRGB (D65) linear RGB -> XYZ.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
/// D65 reference white, Y normalized to 1.
const WHITE_D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

/// CIE L*a*b* planes, one entry per pixel.
#[derive(Clone, Debug)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// IEC 61966-2-1 decoding.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

pub(crate) fn pixel_to_lab(rgb: &[f64]) -> [f64; 3] {
    let lin: Vec<f64> = rgb
        .iter()
        .map(|v| srgb_to_linear(v.clamp(0.0, 1.0)))
        .collect();
    let xyz: Vec<f64> = RGB_TO_XYZ
        .iter()
        .map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2])
        .collect();
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// sRGB-encoded image -> CIELab (D65). Inputs are clamped to `[0, 1]`.
pub fn rgb_to_lab(img: &Image) -> LabImage {
    let n = img.pixel_count();
    let (mut l, mut a, mut b) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for px in img.pixels() {
        let [lv, av, bv] = pixel_to_lab(px);
        l.push(lv);
        a.push(av);
        b.push(bv);
    }
    LabImage {
        width: img.width(),
        height: img.height(),
        l,
        a,
        b,
    }
}

/// Spread of (a*, b*) chromaticity across a set of views.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChromaStats {
    /// Standard deviation of a* over all pooled samples.
    pub std_a: f64,
    /// Standard deviation of b* over all pooled samples.
    pub std_b: f64,
    /// `sqrt(var_a + var_b)` over the pooled samples.
    pub pooled: f64,
    /// `sqrt(var_a + var_b)` of the per-view mean chromaticities.
    pub view_mean_spread: f64,
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Pools (a*, b*) over the masked pixels of every image. `mask` holds
/// pixel indices (`y * width + x`); `None` selects all pixels.
pub fn chroma_dispersion(images: &[Image], mask: Option<&[usize]>) -> Result<ChromaStats> {
    if images.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "chroma dispersion needs at least 2 images, got {}",
            images.len()
        )));
    }
    for img in &images[1..] {
        images[0].ensure_same_size(img)?;
    }
    let all: Vec<usize>;
    let indices = match mask {
        Some(m) => m,
        None => {
            all = (0..images[0].pixel_count()).collect();
            &all
        }
    };
    if indices.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= images[0].pixel_count()) {
        return Err(Error::DimensionMismatch(format!(
            "mask index {bad} outside image"
        )));
    }

    let mut pooled_a = Vec::with_capacity(indices.len() * images.len());
    let mut pooled_b = Vec::with_capacity(indices.len() * images.len());
    let mut means_a = Vec::with_capacity(images.len());
    let mut means_b = Vec::with_capacity(images.len());
    for img in images {
        let lab = rgb_to_lab(img);
        let (mut sa, mut sb) = (0.0, 0.0);
        for &i in indices {
            pooled_a.push(lab.a[i]);
            pooled_b.push(lab.b[i]);
            sa += lab.a[i];
            sb += lab.b[i];
        }
        means_a.push(sa / indices.len() as f64);
        means_b.push(sb / indices.len() as f64);
    }
    let (va, vb) = (variance(&pooled_a), variance(&pooled_b));
    Ok(ChromaStats {
        std_a: va.sqrt(),
        std_b: vb.sqrt(),
        pooled: (va + vb).sqrt(),
        view_mean_spread: (variance(&means_a) + variance(&means_b)).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_black_gray() {
        let white = pixel_to_lab(&[1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-3, "{white:?}");
        assert!(white[1].abs() < 0.5 && white[2].abs() < 0.5);
        let black = pixel_to_lab(&[0.0, 0.0, 0.0]);
        assert!(black[0].abs() < 1e-12);
        let gray = pixel_to_lab(&[0.5, 0.5, 0.5]);
        assert!(gray[1].abs() < 0.5 && gray[2].abs() < 0.5);
    }

    #[test]
    fn identical_views_have_no_mean_spread() {
        let img = Image::from_fn(4, 4, |x, y| [x as f64 / 4.0, y as f64 / 4.0, 0.3]);
        let stats = chroma_dispersion(&[img.clone(), img], None).unwrap();
        assert!(stats.view_mean_spread.abs() < 1e-12);
    }

    #[test]
    fn grays_are_achromatic() {
        let dark = Image::filled(3, 3, [0.2; 3]);
        let light = Image::filled(3, 3, [0.8; 3]);
        let stats = chroma_dispersion(&[dark, light], None).unwrap();
        assert!(stats.pooled < 0.5, "{stats:?}");
    }

    #[test]
    fn warm_tint_spreads_chromaticity() {
        // Lab of (0.5,0.5,0.5) is ~(53.4, 0, 0); (0.8,0.5,0.2) is ~(60.2, 23.4, 51.8),
        // so pooled std over the two equal-weight clusters is half their distance.
        let neutral = Image::filled(3, 3, [0.5; 3]);
        let warm = Image::filled(3, 3, [0.8, 0.5, 0.2]);
        let stats = chroma_dispersion(&[neutral, warm], None).unwrap();
        let w = pixel_to_lab(&[0.8, 0.5, 0.2]);
        let n = pixel_to_lab(&[0.5, 0.5, 0.5]);
        let half_dist = ((w[1] - n[1]).powi(2) + (w[2] - n[2]).powi(2)).sqrt() / 2.0;
        assert!(stats.pooled > 10.0);
        assert!((stats.pooled - half_dist).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let img = Image::filled(2, 2, [0.5; 3]);
        let err = chroma_dispersion(&[img.clone(), img], Some(&[])).unwrap_err();
        assert!(matches!(err, Error::EmptyMask));
    }
}

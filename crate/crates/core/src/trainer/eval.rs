use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::imaging::{chroma_dispersion, psnr, ssim, ChromaStats, Image};
use crate::splat::{render_dual, Camera, RenderSettings};

/// Renders the adjusted-color image `Ĉ_out` for each camera, clamped to
/// `[0, 1]`. Per-view adjustment modules play no part at inference.
pub fn render_novel(checkpoint: &Checkpoint, cameras: &[Camera]) -> Result<Vec<Image>> {
    let cloud = checkpoint.model.cloud();
    let settings = RenderSettings::default().with_background(checkpoint.background);
    cameras
        .iter()
        .map(|cam| {
            cam.validate()?;
            Ok(render_dual(&cloud, cam, &settings).c_out.clamped())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Chromaticity spread of the renders; needs at least two views.
    pub dispersion: Option<ChromaStats>,
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,psnr,ssim\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.6},{:.6}\n", r.view, r.psnr, r.ssim));
        }
        out.push_str(&format!(
            "mean,{:.6},{:.6}\n",
            self.mean_psnr, self.mean_ssim
        ));
        out
    }
}

/// Per-view PSNR/SSIM against ground truth plus the mean row.
pub fn evaluate(renders: &[Image], ground_truth: &[Image]) -> Result<MetricsTable> {
    if renders.len() != ground_truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} renders vs {} ground-truth images",
            renders.len(),
            ground_truth.len()
        )));
    }
    if renders.is_empty() {
        return Err(Error::DimensionMismatch("nothing to evaluate".into()));
    }
    let rows = renders
        .iter()
        .zip(ground_truth)
        .enumerate()
        .map(|(view, (r, g))| {
            Ok(ViewMetrics {
                view,
                psnr: psnr(r, g)?,
                ssim: ssim(r, g)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let dispersion = if renders.len() >= 2 {
        Some(chroma_dispersion(renders, None)?)
    } else {
        None
    };
    Ok(MetricsTable {
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rows,
        dispersion,
    })
}

//! Image container, PNG I/O, CIELab conversion and quality metrics.

mod image;
mod io;
mod lab;
mod metrics;

pub use self::image::Image;
pub use io::{load_image, save_image, save_image16};
pub use lab::{chroma_dispersion, rgb_to_lab, srgb_to_linear, ChromaStats, LabImage};
pub(crate) use metrics::blur_valid;
pub use metrics::{
    gaussian_window, psnr, ssim, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};

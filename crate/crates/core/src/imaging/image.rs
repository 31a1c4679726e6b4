use crate::error::{Error, Result};

/// RGB image with channels interleaved per pixel, rows top to bottom.
///
/// Values are sRGB-encoded intensities. Stored images live in `[0, 1]`;
/// intermediates produced during training may leave that range.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-sized image {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(3)
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_size(&self, other: &Image) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Scalar mean over all pixels and channels.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for px in self.pixels() {
            for c in 0..3 {
                acc[c] += px[c];
            }
        }
        let n = self.pixel_count() as f64;
        acc.map(|v| v / n)
    }

    /// Per-pixel mean of R, G, B.
    pub fn gray(&self) -> Vec<f64> {
        self.pixels().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect()
    }

    /// Adaptive average pooling to `out_w x out_h`. Each output cell
    /// averages the input pixels in `[floor(i*n/o), ceil((i+1)*n/o))`.
    pub fn resize_area(&self, out_w: usize, out_h: usize) -> Image {
        let bounds = |i: usize, n: usize, o: usize| {
            let lo = i * n / o;
            let hi = ((i + 1) * n).div_ceil(o).max(lo + 1);
            (lo, hi.min(n))
        };
        Image::from_fn(out_w, out_h, |ox, oy| {
            let (y0, y1) = bounds(oy, self.height, out_h);
            let (x0, x1) = bounds(ox, self.width, out_w);
            let mut acc = [0.0; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = self.pixel(x, y);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            acc.map(|v| v / n)
        })
    }
}

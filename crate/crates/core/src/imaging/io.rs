use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use super::Image;
use crate::error::{Error, Result};

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Loads an 8- or 16-bit RGB PNG, mapping codes to `[0, 1]` by
/// division by `2^bits - 1`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Png {
            path: path.to_path_buf(),
            source,
        })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageRgb8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other => {
            return Err(Error::InvalidImage(format!(
                "{}: expected an RGB PNG, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(w, h, data)
}

/// Writes an 8-bit RGB PNG (values clamped to `[0, 1]`, rounded to nearest).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| quantize(v, 255.0) as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .expect("buffer length matches image dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Png {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a 16-bit RGB PNG.
pub fn save_image16(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| quantize(v, 65535.0) as u16)
        .collect();
    let buf: ImageBuffer<Rgb<u16>, _> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .expect("buffer length matches image dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Png {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_values_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        let img = Image::from_fn(5, 3, |x, y| {
            [x as f64 * 51.0 / 255.0, y as f64 / 255.0, 1.0]
        });
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn endpoint_and_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.png");
        let img = Image::filled(2, 2, [1.0, 0.5, 1.7]);
        save_image(&img, &path).unwrap();
        let raw = image::open(&path).unwrap().to_rgb8();
        assert_eq!(raw.get_pixel(0, 0).0, [255, 128, 255]);
        let back = load_image(&path).unwrap();
        assert_eq!(back.pixel(1, 1), [1.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.png");
        let img = Image::from_fn(3, 2, |x, y| [(x * 1000 + y) as f64 / 65535.0, 0.0, 1.0]);
        save_image16(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn rejects_missing_and_non_rgb() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_image(dir.path().join("nope.png")).is_err());
        let gray = dir.path().join("gray.png");
        image::GrayImage::new(4, 4).save(&gray).unwrap();
        let err = load_image(&gray).unwrap_err();
        assert!(err.to_string().contains("expected an RGB PNG"), "{err}");
    }
}

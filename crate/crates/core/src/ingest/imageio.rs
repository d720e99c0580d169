use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::types::ImageTensor;

/// Decode a PNG/PPM/PGM file, resize to `side × side` (bilinear) and scale to `[0, 1]`.
///
/// Grayscale sources yield one channel, everything else three (alpha dropped).
pub fn decode_image(path: &Path, side: usize) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let side32 = u32::try_from(side).map_err(|_| Error::invalid("image side too large"))?;
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_)
    );
    let (channels, raw) = if gray {
        let mut g = img.to_luma8();
        if g.dimensions() != (side32, side32) {
            g = image::imageops::resize(&g, side32, side32, FilterType::Triangle);
        }
        (1, g.into_raw())
    } else {
        let mut rgb = img.to_rgb8();
        if rgb.dimensions() != (side32, side32) {
            rgb = image::imageops::resize(&rgb, side32, side32, FilterType::Triangle);
        }
        (3, rgb.into_raw())
    };
    // interleaved -> planar
    let n = side * side;
    let mut data = vec![0.0f32; n * channels];
    for (i, px) in raw.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * n + i] = v as f32 / 255.0;
        }
    }
    ImageTensor::new(side, side, channels, data)
}

pub fn write_png(image: &ImageTensor, path: &Path) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let result = match image.channels() {
        1 => {
            let raw = image.data().iter().map(|&v| to_u8(v)).collect();
            GrayImage::from_raw(w as u32, h as u32, raw)
                .expect("buffer sized from image dimensions")
                .save(path)
        }
        3 => {
            let n = h * w;
            let mut raw = Vec::with_capacity(n * 3);
            for i in 0..n {
                for c in 0..3 {
                    raw.push(to_u8(image.data()[c * n + i]));
                }
            }
            RgbImage::from_raw(w as u32, h as u32, raw)
                .expect("buffer sized from image dimensions")
                .save(path)
        }
        c => return Err(Error::invalid(format!("cannot write {c}-channel image as PNG"))),
    };
    result.map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_preserves_quantized_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let data: Vec<f32> = (0..48).map(|i| (i * 5) as f32 / 255.0).collect();
        let img = ImageTensor::new(4, 4, 3, data).unwrap();
        write_png(&img, &path).unwrap();
        let back = decode_image(&path, 4).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn corrupt_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.png");
        std::fs::write(&path, b"not a png").unwrap();
        let err = decode_image(&path, 8).unwrap_err();
        assert!(err.to_string().contains("broken.png"), "{err}");
    }

    #[test]
    fn resizes_to_side() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = ImageTensor::filled(10, 10, 1, 0.5);
        write_png(&img, &path).unwrap();
        let back = decode_image(&path, 6).unwrap();
        assert_eq!((back.height(), back.width(), back.channels()), (6, 6, 1));
    }
}

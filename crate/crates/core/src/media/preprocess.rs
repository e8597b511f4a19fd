use std::io::Cursor;

use image::imageops::FilterType;
use image::{DynamicImage, ImageFormat, RgbaImage};
use serde::{Deserialize, Serialize};

use super::MediaError;

/// JPEG quality used whenever a preprocessed image is re-encoded.
pub const JPEG_QUALITY: u8 = 90;

const MIN_EDGE_PX: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PreprocessOp {
    /// Downscale so the longest edge is at most `max_edge_px`, keeping aspect.
    Resize { max_edge_px: u32 },
    Crop { x: u32, y: u32, w: u32, h: u32 },
    /// 3x3 median filter blended with the original by `strength`.
    Denoise { strength: f32 },
    /// Linear contrast stretch around mid-grey: `(p - 128) * factor + 128`.
    Enhance { factor: f32 },
}

impl PreprocessOp {
    fn validate(&self, width: u32, height: u32) -> Result<(), MediaError> {
        match *self {
            PreprocessOp::Resize { max_edge_px } if max_edge_px < MIN_EDGE_PX => Err(
                MediaError::InvalidOp(format!("max_edge_px {max_edge_px} < {MIN_EDGE_PX}")),
            ),
            PreprocessOp::Crop { x, y, w, h } => {
                let inside = w > 0
                    && h > 0
                    && x.checked_add(w).is_some_and(|r| r <= width)
                    && y.checked_add(h).is_some_and(|b| b <= height);
                if inside {
                    Ok(())
                } else {
                    Err(MediaError::InvalidOp(format!(
                        "crop {w}x{h}+{x}+{y} outside {width}x{height} image"
                    )))
                }
            }
            PreprocessOp::Denoise { strength } if !(0.0..=1.0).contains(&strength) => Err(
                MediaError::InvalidOp(format!("denoise strength {strength} outside [0, 1]")),
            ),
            PreprocessOp::Enhance { factor } if !(factor > 0.0 && factor <= 4.0) => Err(
                MediaError::InvalidOp(format!("enhance factor {factor} outside (0, 4]")),
            ),
            _ => Ok(()),
        }
    }

    fn apply(&self, img: DynamicImage) -> DynamicImage {
        match *self {
            PreprocessOp::Resize { max_edge_px } => {
                let (w, h) = (img.width(), img.height());
                let longest = w.max(h);
                if longest <= max_edge_px {
                    return img;
                }
                let scale = |v: u32| {
                    ((v as u64 * max_edge_px as u64 + longest as u64 / 2) / longest as u64).max(1)
                        as u32
                };
                img.resize_exact(scale(w), scale(h), FilterType::Triangle)
            }
            PreprocessOp::Crop { x, y, w, h } => img.crop_imm(x, y, w, h),
            PreprocessOp::Denoise { strength } => {
                DynamicImage::ImageRgba8(median3(&img.to_rgba8(), strength))
            }
            PreprocessOp::Enhance { factor } => {
                let mut buf = img.to_rgba8();
                for p in buf.pixels_mut() {
                    for c in &mut p.0[..3] {
                        let v = (*c as f32 - 128.0) * factor + 128.0;
                        *c = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
                DynamicImage::ImageRgba8(buf)
            }
        }
    }
}

fn median3(src: &RgbaImage, strength: f32) -> RgbaImage {
    let (w, h) = src.dimensions();
    let mut out = src.clone();
    for y in 0..h {
        for x in 0..w {
            let mut window = [[0u8; 9]; 3];
            let mut n = 0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as u32;
                    let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as u32;
                    let p = src.get_pixel(sx, sy);
                    for c in 0..3 {
                        window[c][n] = p.0[c];
                    }
                    n += 1;
                }
            }
            let orig = src.get_pixel(x, y);
            let dst = out.get_pixel_mut(x, y);
            for c in 0..3 {
                window[c].sort_unstable();
                let med = window[c][4] as f32;
                let v = orig.0[c] as f32 * (1.0 - strength) + med * strength;
                dst.0[c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Applies `ops` left to right and re-encodes in the input's format.
///
/// JPEG output uses [`JPEG_QUALITY`]; PNG and TIFF are lossless. Other
/// decodable inputs are written as JPEG.
pub fn preprocess(image: &[u8], ops: &[PreprocessOp]) -> Result<Vec<u8>, MediaError> {
    let format = image::guess_format(image)
        .map_err(|_| MediaError::Malformed("unrecognized image format".into()))?;
    let mut img = image::load_from_memory_with_format(image, format)
        .map_err(|e| MediaError::Malformed(e.to_string()))?;
    for op in ops {
        op.validate(img.width(), img.height())?;
        img = op.apply(img);
    }
    encode(&img, format)
}

fn encode(img: &DynamicImage, format: ImageFormat) -> Result<Vec<u8>, MediaError> {
    let mut out = Cursor::new(Vec::new());
    match format {
        ImageFormat::Png | ImageFormat::Tiff => {
            let img = if img.color().has_alpha() {
                DynamicImage::ImageRgba8(img.to_rgba8())
            } else {
                DynamicImage::ImageRgb8(img.to_rgb8())
            };
            img.write_to(&mut out, format)?;
        }
        _ => {
            let rgb = img.to_rgb8();
            let encoder =
                image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY);
            rgb.write_with_encoder(encoder)?;
        }
    }
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Rgb};

    fn png(w: u32, h: u32) -> Vec<u8> {
        let img = ImageBuffer::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 77]));
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageRgb8(img)
            .write_to(&mut out, ImageFormat::Png)
            .unwrap();
        out.into_inner()
    }

    fn dims(bytes: &[u8]) -> (u32, u32) {
        let img = image::load_from_memory(bytes).unwrap();
        (img.width(), img.height())
    }

    #[test]
    fn resize_keeps_aspect() {
        let out = preprocess(&png(1024, 768), &[PreprocessOp::Resize { max_edge_px: 512 }]).unwrap();
        assert_eq!(dims(&out), (512, 384));
    }

    #[test]
    fn resize_is_dimension_idempotent() {
        let op = PreprocessOp::Resize { max_edge_px: 100 };
        let once = preprocess(&png(333, 217), &[op]).unwrap();
        let twice = preprocess(&once, &[op]).unwrap();
        assert_eq!(dims(&once), dims(&twice));
    }

    #[test]
    fn crop_outside_bounds_is_invalid() {
        let err = preprocess(&png(50, 50), &[PreprocessOp::Crop { x: 0, y: 0, w: 100, h: 100 }])
            .unwrap_err();
        assert!(matches!(err, MediaError::InvalidOp(_)));
    }

    #[test]
    fn crop_then_enhance_and_denoise() {
        let ops = [
            PreprocessOp::Crop { x: 10, y: 5, w: 20, h: 30 },
            PreprocessOp::Denoise { strength: 1.0 },
            PreprocessOp::Enhance { factor: 1.5 },
        ];
        assert_eq!(dims(&preprocess(&png(50, 50), &ops).unwrap()), (20, 30));
    }

    #[test]
    fn empty_ops_round_trip_keeps_dimensions() {
        let src = png(40, 30);
        let out = preprocess(&src, &[]).unwrap();
        assert_eq!(dims(&out), (40, 30));
        assert_eq!(
            image::load_from_memory(&out).unwrap().to_rgb8(),
            image::load_from_memory(&src).unwrap().to_rgb8()
        );
    }

    #[test]
    fn parameter_bounds() {
        let src = png(20, 20);
        for op in [
            PreprocessOp::Resize { max_edge_px: 15 },
            PreprocessOp::Denoise { strength: 1.5 },
            PreprocessOp::Enhance { factor: 0.0 },
            PreprocessOp::Enhance { factor: 4.5 },
        ] {
            assert!(matches!(preprocess(&src, &[op]), Err(MediaError::InvalidOp(_))), "{op:?}");
        }
    }

    #[test]
    fn median_removes_salt_noise() {
        let mut img = RgbaImage::from_pixel(5, 5, image::Rgba([10, 10, 10, 255]));
        img.put_pixel(2, 2, image::Rgba([255, 255, 255, 255]));
        let out = median3(&img, 1.0);
        assert_eq!(out.get_pixel(2, 2).0, [10, 10, 10, 255]);
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(preprocess(b"nope", &[]), Err(MediaError::Malformed(_))));
    }
}

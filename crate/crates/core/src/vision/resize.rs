//! Face crops resampled to network input size.

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};
use crate::vision::cascade::BoundingBox;
use crate::vision::image::ImageBuffer;
use crate::vision::VisionError;

pub const CROP_SIZE: u32 = 32;

/// Bilinear sample of channel `ch` at continuous source position `(sx, sy)`,
/// clamped to the pixel grid of `[x0, x1] x [y0, y1]`.
fn bilinear(img: &ImageBuffer, ch: usize, sx: f64, sy: f64, x0: u32, y0: u32, x1: u32, y1: u32) -> f64 {
    let fx = sx.clamp(x0 as f64, x1 as f64);
    let fy = sy.clamp(y0 as f64, y1 as f64);
    let ix = fx.floor() as u32;
    let iy = fy.floor() as u32;
    let ax = fx - ix as f64;
    let ay = fy - iy as f64;
    let jx = (ix + 1).min(x1);
    let jy = (iy + 1).min(y1);
    let p = |x: u32, y: u32| img.pixel(x, y)[ch] as f64;
    let top = p(ix, iy) * (1.0 - ax) + p(jx, iy) * ax;
    let bottom = p(ix, jy) * (1.0 - ax) + p(jx, jy) * ax;
    top * (1.0 - ay) + bottom * ay
}

/// Crops `bbox` and resamples it to `size x size` with pixel-center aligned
/// bilinear interpolation. Returns a `1 x 3 x size x size` tensor in `[0, 1]`.
pub fn crop_resize<T: Scalar>(img: &ImageBuffer, bbox: &BoundingBox, size: u32) -> Result<Tensor<T>, VisionError> {
    if bbox.width == 0
        || bbox.height == 0
        || bbox.x as u64 + bbox.width as u64 > img.width() as u64
        || bbox.y as u64 + bbox.height as u64 > img.height() as u64
    {
        return Err(VisionError::Geometry(format!(
            "box {}x{} at ({}, {}) outside {}x{} image",
            bbox.width,
            bbox.height,
            bbox.x,
            bbox.y,
            img.width(),
            img.height()
        )));
    }
    if size == 0 {
        return Err(VisionError::Geometry("output size must be positive".into()));
    }
    let s = size as usize;
    let kx = bbox.width as f64 / size as f64;
    let ky = bbox.height as f64 / size as f64;
    let (x1, y1) = (bbox.x + bbox.width - 1, bbox.y + bbox.height - 1);
    let mut out = Tensor::zeros(Shape::new(1, 3, s, s));
    for oy in 0..s {
        let sy = bbox.y as f64 + (oy as f64 + 0.5) * ky - 0.5;
        for ox in 0..s {
            let sx = bbox.x as f64 + (ox as f64 + 0.5) * kx - 0.5;
            for ch in 0..3 {
                let v = bilinear(img, ch, sx, sy, bbox.x, bbox.y, x1, y1);
                out.set(0, ch, oy, ox, T::from_f64_lossy(v / 255.0));
            }
        }
    }
    Ok(out)
}

/// Whole-image resample, for frames that are already face crops.
pub fn resize_image<T: Scalar>(img: &ImageBuffer, size: u32) -> Result<Tensor<T>, VisionError> {
    let full = BoundingBox { x: 0, y: 0, width: img.width(), height: img.height(), score: 0.0 };
    crop_resize(img, &full, size)
}

/// Inverse of the `[0, 1]` scaling: a `1 x 3 x H x W` tensor back to 8-bit
/// RGB, rounding to nearest.
pub fn tensor_to_image<T: Scalar>(t: &Tensor<T>) -> Result<ImageBuffer, VisionError> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(VisionError::Geometry(format!("expected a 1x3xHxW tensor, got {s}")));
    }
    let img = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        let q = |c| (t.get(0, c, y as usize, x as usize).to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8;
        [q(0), q(1), q(2)]
    });
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_region() {
        let img = ImageBuffer::filled(50, 40, [10, 20, 30]);
        let b = BoundingBox { x: 3, y: 4, width: 41, height: 29, score: 0.0 };
        let t: Tensor<f64> = crop_resize(&img, &b, CROP_SIZE).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 32, 32));
        for ch in 0..3 {
            let want = [10.0, 20.0, 30.0][ch] / 255.0;
            assert!(t.sample(0)[ch * 1024..(ch + 1) * 1024].iter().all(|&v| (v - want).abs() < 1e-12));
        }
    }

    #[test]
    fn same_size_box_copies_pixels() {
        let img = ImageBuffer::from_fn(40, 40, |x, y| [(x * 6) as u8, (y * 6) as u8, ((x * y) % 256) as u8]);
        let b = BoundingBox { x: 5, y: 7, width: 32, height: 32, score: 0.0 };
        let t: Tensor<f32> = crop_resize(&img, &b, 32).unwrap();
        let back = tensor_to_image(&t).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(back.pixel(x, y), img.pixel(x + 5, y + 7));
            }
        }
    }

    #[test]
    fn box_outside_image_is_rejected() {
        let img = ImageBuffer::filled(10, 10, [0, 0, 0]);
        let b = BoundingBox { x: 5, y: 0, width: 6, height: 4, score: 0.0 };
        assert!(matches!(crop_resize::<f32>(&img, &b, 32), Err(VisionError::Geometry(_))));
    }
}

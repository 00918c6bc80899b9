//! Summed-area tables over a grayscale plane.

use crate::vision::image::GrayImage;

/// `(width + 1) x (height + 1)` tables of intensity sums and squared sums;
/// row 0 and column 0 are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: u32,
    height: u32,
    sum: Vec<u64>,
    sq_sum: Vec<u64>,
}

impl IntegralImage {
    pub fn new(gray: &GrayImage) -> Self {
        let (w, h) = (gray.width as usize, gray.height as usize);
        let stride = w + 1;
        let mut sum = vec![0u64; stride * (h + 1)];
        let mut sq_sum = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            let mut row_sq = 0u64;
            for x in 0..w {
                let v = gray.data[y * w + x] as u64;
                row += v;
                row_sq += v * v;
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + row;
                sq_sum[i] = sq_sum[i - stride] + row_sq;
            }
        }
        Self { width: gray.width, height: gray.height, sum, sq_sum }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn lookup(table: &[u64], stride: usize, x: u32, y: u32, w: u32, h: u32) -> u64 {
        let (x0, y0, x1, y1) = (x as usize, y as usize, (x + w) as usize, (y + h) as usize);
        table[y1 * stride + x1] + table[y0 * stride + x0] - table[y0 * stride + x1] - table[y1 * stride + x0]
    }

    /// Sum of intensities over `[x, x + w) x [y, y + h)`.
    #[inline]
    pub fn rect_sum(&self, x: u32, y: u32, w: u32, h: u32) -> u64 {
        debug_assert!(x + w <= self.width && y + h <= self.height);
        Self::lookup(&self.sum, self.width as usize + 1, x, y, w, h)
    }

    #[inline]
    pub fn rect_sq_sum(&self, x: u32, y: u32, w: u32, h: u32) -> u64 {
        debug_assert!(x + w <= self.width && y + h <= self.height);
        Self::lookup(&self.sq_sum, self.width as usize + 1, x, y, w, h)
    }
}

pub fn integral_image(gray: &GrayImage) -> IntegralImage {
    IntegralImage::new(gray)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones() {
        let g = GrayImage { width: 4, height: 4, data: vec![1; 16] };
        let ii = integral_image(&g);
        assert_eq!(ii.rect_sum(0, 0, 4, 4), 16);
        assert_eq!(ii.rect_sum(1, 1, 2, 3), 6);
        assert_eq!(ii.rect_sq_sum(0, 0, 4, 4), 16);
    }

    #[test]
    fn single_pixels() {
        let g = GrayImage { width: 3, height: 2, data: vec![5, 250, 7, 0, 255, 9] };
        let ii = integral_image(&g);
        for y in 0..2 {
            for x in 0..3 {
                let v = g.get(x, y) as u64;
                assert_eq!(ii.rect_sum(x, y, 1, 1), v);
                assert_eq!(ii.rect_sq_sum(x, y, 1, 1), v * v);
            }
        }
    }

    #[test]
    fn empty_rect_is_zero() {
        let g = GrayImage { width: 2, height: 2, data: vec![9; 4] };
        assert_eq!(integral_image(&g).rect_sum(1, 1, 0, 1), 0);
    }
}

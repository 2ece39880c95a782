use crate::data::GrayImage;

/// Per-pixel feature vectors: the raw intensities of a `(2r+1)²` patch
/// followed by mean and variance pooled over the patch and over a wider
/// context window. Borders replicate the edge pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub patch_radius: u32,
    pub context_radius: u32,
}

impl FeatureLayout {
    pub fn new(patch_radius: u32) -> Self {
        FeatureLayout {
            patch_radius,
            context_radius: 3 * patch_radius + 1,
        }
    }

    pub fn len(&self) -> usize {
        let side = 2 * self.patch_radius as usize + 1;
        side * side + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Features for every pixel of the window `[x0, x1) × [y0, y1)`, row-major.
    pub fn extract(&self, img: &GrayImage, window: (u32, u32, u32, u32)) -> Vec<f32> {
        let (x0, y0, x1, y1) = window;
        let n = self.len();
        let (w, h) = (img.width() as i64, img.height() as i64);
        let sums = Integral::new(img);
        let r = self.patch_radius as i64;
        let mut out = Vec::with_capacity((x1 - x0) as usize * (y1 - y0) as usize * n);
        for y in y0 as i64..y1 as i64 {
            for x in x0 as i64..x1 as i64 {
                for dy in -r..=r {
                    let sy = (y + dy).clamp(0, h - 1) as u32;
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w - 1) as u32;
                        out.push(img.get(sx, sy) as f32 / 255.0);
                    }
                }
                for radius in [self.patch_radius, self.context_radius] {
                    let (mean, var) = sums.window_stats(x, y, radius as i64);
                    out.push(mean as f32);
                    out.push((4.0 * var) as f32);
                }
            }
        }
        debug_assert_eq!(out.len() % n, 0);
        out
    }
}

/// Summed-area tables of intensity and squared intensity, scaled to [0, 1].
struct Integral {
    w: i64,
    h: i64,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let stride = (w + 1) as usize;
        let mut sum = vec![0.0; stride * (h + 1) as usize];
        let mut sq = vec![0.0; stride * (h + 1) as usize];
        for y in 0..h as usize {
            let (mut row, mut row_sq) = (0.0, 0.0);
            for x in 0..w as usize {
                let v = img.get(x as u32, y as u32) as f64 / 255.0;
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        Integral { w, h, sum, sq }
    }

    /// Mean and variance over the square window of `radius` around `(x, y)`,
    /// clipped to the image.
    fn window_stats(&self, x: i64, y: i64, radius: i64) -> (f64, f64) {
        let xa = (x - radius).max(0) as usize;
        let ya = (y - radius).max(0) as usize;
        let xb = (x + radius + 1).min(self.w) as usize;
        let yb = (y + radius + 1).min(self.h) as usize;
        let stride = (self.w + 1) as usize;
        let area = |t: &[f64]| {
            t[yb * stride + xb] - t[ya * stride + xb] - t[yb * stride + xa] + t[ya * stride + xa]
        };
        let n = ((xb - xa) * (yb - ya)) as f64;
        let mean = area(&self.sum) / n;
        let var = (area(&self.sq) / n - mean * mean).max(0.0);
        (mean, var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_size() {
        assert_eq!(FeatureLayout::new(2).len(), 29);
        assert_eq!(FeatureLayout::new(1).len(), 13);
    }

    #[test]
    fn flat_image_features() {
        let img = GrayImage::from_pixels(5, 4, vec![51; 20]).unwrap();
        let layout = FeatureLayout::new(1);
        let f = layout.extract(&img, (0, 0, 5, 4));
        assert_eq!(f.len(), 20 * layout.len());
        for px in f.chunks(layout.len()) {
            assert!(px[..9].iter().all(|v| (*v - 0.2).abs() < 1e-6));
            assert!((px[9] - 0.2).abs() < 1e-6);
            assert!(px[10].abs() < 1e-6);
        }
    }

    #[test]
    fn window_stats_match_direct_computation() {
        let pixels: Vec<u8> = (0..64u32).map(|i| ((i * 37) % 251) as u8).collect();
        let img = GrayImage::from_pixels(8, 8, pixels).unwrap();
        let sums = Integral::new(&img);
        let (mean, var) = sums.window_stats(0, 3, 2);
        let vals: Vec<f64> = (1..=5)
            .flat_map(|y| (0..=2).map(move |x| (x, y)))
            .map(|(x, y)| img.get(x, y) as f64 / 255.0)
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
        assert!((mean - m).abs() < 1e-12);
        assert!((var - v).abs() < 1e-12);
    }
}

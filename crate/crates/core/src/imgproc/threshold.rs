//! Global (Otsu) and local-mean adaptive thresholding.

use image::GrayImage;

use super::{BinaryMask, Integral};
use crate::error::{Error, Result};

pub fn gray_histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.as_raw() {
        hist[v as usize] += 1;
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OtsuResult {
    /// Pixels with value `<= level` form the lower class.
    pub level: u8,
    /// Set when only one gray level is populated; `level` is that value.
    pub degenerate: bool,
}

pub fn otsu_threshold(hist: &[u64; 256]) -> Result<OtsuResult> {
    let total: u128 = hist.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return Err(Error::EmptyCollection("histogram"));
    }
    let populated: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    if populated.len() == 1 {
        return Ok(OtsuResult {
            level: populated[0] as u8,
            degenerate: true,
        });
    }
    let sum: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let (mut w0, mut s0) = (0u128, 0u128);
    let mut best = (-1.0f64, 0u8);
    for (level, &count) in hist.iter().enumerate().take(255) {
        w0 += count as u128;
        s0 += level as u128 * count as u128;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        // (m0 − m1)² w0 w1 ∝ (s0 w1 − s1 w0)² / (w0 w1); the numerator difference is exact.
        let diff = (s0 * w1).abs_diff((sum - s0) * w0) as f64;
        let var = diff * diff / (w0 as f64 * w1 as f64);
        if var > best.0 * (1.0 + 1e-12) {
            best = (var, level as u8);
        }
    }
    Ok(OtsuResult {
        level: best.1,
        degenerate: false,
    })
}

/// Ones where `value > local mean − offset`, with `window` an odd side length.
pub fn adaptive_threshold(img: &GrayImage, window: usize, offset: f64) -> Result<BinaryMask> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Range {
            field: "window",
            value: window as f64,
            expected: "odd and >= 3",
        });
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let integral = Integral::new(w, h, |x, y| raw[y * w + x] as f64);
    let r = window / 2;
    Ok(BinaryMask::from_fn(w, h, |x, y| raw[y * w + x] as f64 > integral.window_mean(x, y, r) - offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(hist: &[u64; 256]) -> u8 {
        let total: f64 = hist.iter().map(|&c| c as f64).sum();
        let mut best = (-1.0, 0u8);
        for t in 0..255 {
            let (mut w0, mut s0, mut w1, mut s1) = (0.0, 0.0, 0.0, 0.0);
            for (i, &c) in hist.iter().enumerate() {
                if i <= t {
                    w0 += c as f64;
                    s0 += i as f64 * c as f64;
                } else {
                    w1 += c as f64;
                    s1 += i as f64 * c as f64;
                }
            }
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let var = (w0 / total) * (w1 / total) * (s0 / w0 - s1 / w1).powi(2);
            if var > best.0 * (1.0 + 1e-12) {
                best = (var, t as u8);
            }
        }
        best.1
    }

    #[test]
    fn bimodal_split() {
        let mut hist = [0u64; 256];
        hist[50] = 100;
        hist[200] = 300;
        let r = otsu_threshold(&hist).unwrap();
        assert!(!r.degenerate);
        assert!((50..200).contains(&r.level));
        assert_eq!(r.level, 50);
    }

    #[test]
    fn matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let mut hist = [0u64; 256];
            let populated = rng.random_range(2..40);
            for _ in 0..populated {
                hist[rng.random_range(0..256)] += rng.random_range(1..1000);
            }
            assert_eq!(otsu_threshold(&hist).unwrap().level, brute_force(&hist), "{hist:?}");
        }
    }

    #[test]
    fn constant_is_degenerate_and_empty_errors() {
        let mut hist = [0u64; 256];
        hist[77] = 10;
        assert_eq!(
            otsu_threshold(&hist).unwrap(),
            OtsuResult {
                level: 77,
                degenerate: true
            }
        );
        assert!(otsu_threshold(&[0; 256]).is_err());
    }

    #[test]
    fn adaptive_examples() {
        let flat = GrayImage::from_pixel(40, 40, image::Luma([200]));
        assert_eq!(adaptive_threshold(&flat, 31, 10.0).unwrap().ones_fraction(), 1.0);
        assert_eq!(adaptive_threshold(&flat, 31, 0.0).unwrap().count_ones(), 0);
        assert!(adaptive_threshold(&flat, 4, 10.0).is_err());
    }

    #[test]
    fn dark_disk_on_bright_field() {
        let img = GrayImage::from_fn(128, 128, |x, y| {
            let (dx, dy) = (x as f64 - 64.0, y as f64 - 64.0);
            image::Luma([if dx * dx + dy * dy <= 12.0 * 12.0 { 40 } else { 230 }])
        });
        let field = img.as_raw().iter().filter(|&&v| v == 230).count() as f64 / (128.0 * 128.0);
        let frac = adaptive_threshold(&img, 31, 10.0).unwrap().ones_fraction();
        assert!((frac - field).abs() < 1e-12, "{frac} vs {field}");
    }
}

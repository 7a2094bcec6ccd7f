//! Pixel-level primitives shared by the slide scorers.

pub mod color;
pub mod morph;
pub mod pool;
pub mod stain;
pub mod texture;
pub mod threshold;

use std::path::Path;

pub use image::{GrayImage, RgbImage};

pub use color::{rgb_to_hsb, rgb_to_lab, to_gray, Hsb, Lab};
pub use morph::{connected_components, fill_holes, label_components, skeletonize, RegionStats};
pub use pool::{bilinear_pool, BilinearDescriptor, FeatureMap};
pub use stain::{deconvolve, estimate_stain_vectors, rgb_to_od, ConcentrationMaps, OdImage, StainEstimateParams, StainModel};
pub use texture::{fractal_dimension_dbc, glcm_features, glcm_features_default, histogram_stats, GlcmFeatures, HistogramStats};
pub use threshold::{adaptive_threshold, gray_histogram, otsu_threshold, OtsuResult};

use crate::error::{Error, Result};

/// Dense row-major scalar field (concentrations, optical densities, gray levels).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(width * height, data.len(), "field data does not match dimensions");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self::new(width, height, vec![v; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self::new(img.width() as usize, img.height() as usize, img.as_raw().iter().map(|&v| v as f64).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Field {
        Field::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Box mean filter with the given radius (window clamped at the borders).
    pub fn mean_filter(&self, radius: usize) -> Field {
        let integral = Integral::new(self.width, self.height, |x, y| self.get(x, y));
        Field::from_fn(self.width, self.height, |x, y| integral.window_mean(x, y, radius))
    }

    /// Linear map of `[lo, hi]` onto 0..=255 with clamping.
    pub fn to_gray_levels(&self, lo: f64, hi: f64) -> GrayImage {
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        let raw = self
            .data
            .iter()
            .map(|&v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, raw).expect("dimensions match")
    }
}

/// Summed-area table used for clamped-window means.
pub(crate) struct Integral {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl Integral {
    pub(crate) fn new(width: usize, height: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += value(x, y);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { width, height, sums }
    }

    /// Sum over the half-open rectangle `[x0, x1) × [y0, y1)`.
    pub(crate) fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.width + 1;
        self.sums[y1 * s + x1] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0] + self.sums[y0 * s + x0]
    }

    pub(crate) fn window_mean(&self, x: usize, y: usize, radius: usize) -> f64 {
        let x0 = x.saturating_sub(radius);
        let y0 = y.saturating_sub(radius);
        let x1 = (x + radius + 1).min(self.width);
        let y1 = (y + radius + 1).min(self.height);
        self.sum(x0, y0, x1, y1) / ((x1 - x0) * (y1 - y0)) as f64
    }
}

/// One bit per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as background.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ones_fraction(&self) -> f64 {
        self.count_ones() as f64 / self.bits.len() as f64
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Copy a rectangular region out of an image.
pub fn crop_rgb(img: &RgbImage, x0: u32, y0: u32, w: u32, h: u32) -> Result<RgbImage> {
    if x0 + w > img.width() || y0 + h > img.height() {
        return Err(Error::Size(format!(
            "crop {w}x{h} at ({x0},{y0}) exceeds {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(image::imageops::crop_imm(img, x0, y0, w, h).to_image())
}

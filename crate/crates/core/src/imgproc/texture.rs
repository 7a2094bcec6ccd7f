//! Texture descriptors: gray-level co-occurrence, histogram moments, differential box counting.

use image::GrayImage;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlcmFeatures {
    pub contrast: f64,
    /// Angular second moment.
    pub energy: f64,
    pub homogeneity: f64,
    pub correlation: f64,
}

pub const GLCM_LEVELS: usize = 8;
pub const GLCM_OFFSETS: [(isize, isize); 2] = [(1, 0), (0, 1)];

/// Symmetric, normalized co-occurrence matrix after uniform quantization to `levels`.
pub fn glcm_matrix(patch: &GrayImage, offset: (isize, isize), levels: usize) -> Result<Vec<f64>> {
    let (w, h) = (patch.width() as isize, patch.height() as isize);
    let (dx, dy) = offset;
    if dx.abs() >= w || dy.abs() >= h || !(2..=256).contains(&levels) {
        return Err(Error::Size(format!(
            "GLCM offset ({dx},{dy}) with {levels} levels does not fit a {w}x{h} patch"
        )));
    }
    let q = |v: u8| v as usize * levels / 256;
    let mut counts = vec![0u64; levels * levels];
    for y in 0..h {
        for x in 0..w {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let a = q(patch.get_pixel(x as u32, y as u32).0[0]);
            let b = q(patch.get_pixel(nx as u32, ny as u32).0[0]);
            counts[a * levels + b] += 1;
            counts[b * levels + a] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

pub fn glcm_features(patch: &GrayImage, offset: (isize, isize), levels: usize) -> Result<GlcmFeatures> {
    let p = glcm_matrix(patch, offset, levels)?;
    let at = |i: usize, j: usize| p[i * levels + j];
    let mut mean = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            mean += i as f64 * at(i, j);
        }
    }
    let (mut contrast, mut energy, mut homogeneity, mut var, mut cov) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..levels {
        for j in 0..levels {
            let v = at(i, j);
            let d = i as f64 - j as f64;
            contrast += d * d * v;
            energy += v * v;
            homogeneity += v / (1.0 + d * d);
            var += (i as f64 - mean).powi(2) * v;
            cov += (i as f64 - mean) * (j as f64 - mean) * v;
        }
    }
    let correlation = if var > 1e-15 { cov / var } else { 1.0 };
    Ok(GlcmFeatures {
        contrast,
        energy,
        homogeneity,
        correlation,
    })
}

/// Average of [`glcm_features`] over the default offsets with the default level count.
pub fn glcm_features_default(patch: &GrayImage) -> Result<GlcmFeatures> {
    let mut acc = GlcmFeatures {
        contrast: 0.0,
        energy: 0.0,
        homogeneity: 0.0,
        correlation: 0.0,
    };
    for offset in GLCM_OFFSETS {
        let f = glcm_features(patch, offset, GLCM_LEVELS)?;
        acc.contrast += f.contrast;
        acc.energy += f.energy;
        acc.homogeneity += f.homogeneity;
        acc.correlation += f.correlation;
    }
    let n = GLCM_OFFSETS.len() as f64;
    Ok(GlcmFeatures {
        contrast: acc.contrast / n,
        energy: acc.energy / n,
        homogeneity: acc.homogeneity / n,
        correlation: acc.correlation / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramStats {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub skewness: f64,
    /// Excess kurtosis.
    pub kurtosis: f64,
    /// Shannon entropy in bits over 256 equal bins spanning `range`.
    pub entropy: f64,
}

pub fn histogram_stats(values: &[f64], range: (f64, f64)) -> Result<HistogramStats> {
    if values.is_empty() {
        return Err(Error::EmptyCollection("field"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let (skewness, kurtosis) = if m2 > 1e-24 { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) } else { (0.0, 0.0) };
    let (lo, hi) = range;
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let mut bins = [0u64; 256];
    for &v in values {
        let b = (((v - lo) / span) * 256.0).floor().clamp(0.0, 255.0) as usize;
        bins[b] += 1;
    }
    let entropy = bins
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    Ok(HistogramStats {
        mean,
        variance: m2,
        skewness,
        kurtosis,
        entropy,
    })
}

/// Differential box-counting fractal dimension over box sides 2, 4, …, side/2.
pub fn fractal_dimension_dbc(patch: &GrayImage) -> Result<f64> {
    let (w, h) = (patch.width() as usize, patch.height() as usize);
    if w != h || w < 8 {
        return Err(Error::Size(format!("DBC needs a square patch of side >= 8, got {w}x{h}")));
    }
    let m = w;
    let gray_levels = 256.0;
    let mut points = Vec::new();
    let mut s = 2;
    while s <= m / 2 {
        let box_h = s as f64 * gray_levels / m as f64;
        let blocks = m / s;
        let mut count = 0.0;
        for by in 0..blocks {
            for bx in 0..blocks {
                let (mut lo, mut hi) = (u8::MAX, u8::MIN);
                for y in by * s..(by + 1) * s {
                    for x in bx * s..(bx + 1) * s {
                        let v = patch.get_pixel(x as u32, y as u32).0[0];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                count += (hi as f64 / box_h).floor() - (lo as f64 / box_h).floor() + 1.0;
            }
        }
        points.push(((m as f64 / s as f64).ln(), count.ln()));
        s *= 2;
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok((sxy / sxx).clamp(2.0, 3.0))
}

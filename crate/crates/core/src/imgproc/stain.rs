//! Optical density, Macenko-style stain estimation and colour deconvolution.

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::Field;
use crate::error::{Error, Result};

pub const DEFAULT_I0: f64 = 255.0;
pub const DEFAULT_OD_EPSILON: f64 = 1.0 / 255.0;

/// Two unit optical-density vectors plus the per-channel background intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainModel {
    pub hematoxylin: [f64; 3],
    pub dab: [f64; 3],
    pub i0: [f64; 3],
}

impl Default for StainModel {
    /// Ruifrok & Johnston H-DAB vectors.
    fn default() -> Self {
        Self::new([0.650, 0.704, 0.286], [0.268, 0.570, 0.776], [DEFAULT_I0; 3]).expect("reference vectors are valid")
    }
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.map(|c| c / n))
}

impl StainModel {
    /// Normalizes both vectors; rejects negative components and (near-)parallel pairs.
    pub fn new(hematoxylin: [f64; 3], dab: [f64; 3], i0: [f64; 3]) -> Result<Self> {
        if hematoxylin.iter().chain(&dab).any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(Error::Degenerate("stain vectors must have non-negative components".into()));
        }
        if i0.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return Err(Error::Range {
                field: "i0",
                value: i0.iter().cloned().fold(f64::INFINITY, f64::min),
                expected: "> 0",
            });
        }
        let h = normalize(hematoxylin).ok_or_else(|| Error::Degenerate("zero hematoxylin vector".into()))?;
        let d = normalize(dab).ok_or_else(|| Error::Degenerate("zero DAB vector".into()))?;
        let model = Self {
            hematoxylin: h,
            dab: d,
            i0,
        };
        model.pseudo_inverse()?;
        Ok(model)
    }

    /// Rows of (MᵀM)⁻¹Mᵀ for M = [h | dab].
    fn pseudo_inverse(&self) -> Result<[[f64; 3]; 2]> {
        let h = Vector3::from(self.hematoxylin);
        let d = Vector3::from(self.dab);
        let (hh, hd, dd) = (h.dot(&h), h.dot(&d), d.dot(&d));
        let det = hh * dd - hd * hd;
        if det.abs() < 1e-10 {
            return Err(Error::Degenerate("stain vectors are linearly dependent".into()));
        }
        let row_h = (h * dd - d * hd) / det;
        let row_d = (d * hh - h * hd) / det;
        Ok([row_h.into(), row_d.into()])
    }

    /// Forward model: intensity = I0 · 10^(−OD) with OD = c_h·h + c_dab·dab.
    pub fn render(&self, c_h: f64, c_dab: f64) -> [f64; 3] {
        std::array::from_fn(|k| self.i0[k] * 10f64.powf(-(c_h * self.hematoxylin[k] + c_dab * self.dab[k])))
    }

    pub fn render_pixel(&self, c_h: f64, c_dab: f64) -> Rgb<u8> {
        Rgb(self.render(c_h, c_dab).map(|v| v.round().clamp(0.0, 255.0) as u8))
    }

    /// Angle in degrees between corresponding vectors of two models (max over both stains).
    pub fn angular_error_deg(&self, other: &StainModel) -> f64 {
        angle_deg(self.hematoxylin, other.hematoxylin).max(angle_deg(self.dab, other.dab))
    }
}

pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot: f64 = (0..3).map(|k| a[k] * b[k]).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Per-pixel three-channel optical density.
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl OdImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Self {
        assert_eq!(width * height, data.len(), "OD data does not match dimensions");
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }
}

pub fn rgb_to_od(img: &RgbImage, i0: [f64; 3], epsilon: f64) -> OdImage {
    let data = img
        .pixels()
        .map(|p| std::array::from_fn(|k| -((p.0[k] as f64).max(epsilon) / i0[k]).log10()))
        .collect();
    OdImage::new(img.width() as usize, img.height() as usize, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainEstimateParams {
    /// OD-magnitude floor below which pixels count as background.
    pub od_floor: f64,
    /// Angular percentile trimmed at each extreme.
    pub percentile: f64,
    pub min_tissue_pixels: usize,
    pub i0: [f64; 3],
}

impl Default for StainEstimateParams {
    fn default() -> Self {
        Self {
            od_floor: 0.15,
            percentile: 1.0,
            min_tissue_pixels: 100,
            i0: [DEFAULT_I0; 3],
        }
    }
}

/// Linear-interpolated percentile of sorted data (`p` in percent).
pub(crate) fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn estimate_stain_vectors(od: &[[f64; 3]], params: &StainEstimateParams) -> Result<StainModel> {
    let tissue: Vec<Vector3<f64>> = od
        .iter()
        .map(|&v| Vector3::from(v))
        .filter(|v| v.norm() > params.od_floor)
        .collect();
    if tissue.len() < params.min_tissue_pixels {
        return Err(Error::Degenerate(format!(
            "{} tissue pixels above OD floor {} (need {})",
            tissue.len(),
            params.od_floor,
            params.min_tissue_pixels
        )));
    }
    let mut moment = Matrix3::zeros();
    for v in &tissue {
        moment += v * v.transpose();
    }
    moment /= tissue.len() as f64;
    let eig = SymmetricEigen::new(moment);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if l1 <= 0.0 || l2 / l1 < 1e-9 {
        return Err(Error::Degenerate("optical-density cloud is rank-deficient".into()));
    }
    let mut e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let mut e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into();
    if e1.sum() < 0.0 {
        e1 = -e1;
    }
    if e2.sum() < 0.0 {
        e2 = -e2;
    }
    let mut angles: Vec<f64> = tissue.iter().map(|v| v.dot(&e2).atan2(v.dot(&e1))).collect();
    angles.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&angles, params.percentile);
    let hi = percentile_sorted(&angles, 100.0 - params.percentile);
    let direction = |phi: f64| -> [f64; 3] {
        let v = e1 * phi.cos() + e2 * phi.sin();
        let v = if v.sum() < 0.0 { -v } else { v };
        [v.x.max(0.0), v.y.max(0.0), v.z.max(0.0)]
    };
    let (a, b) = (direction(lo), direction(hi));
    let (h, d) = if a[0] >= b[0] { (a, b) } else { (b, a) };
    StainModel::new(h, d, params.i0)
}

/// Per-pixel hematoxylin and DAB concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMaps {
    pub hematoxylin: Field,
    pub dab: Field,
}

pub fn deconvolve(od: &OdImage, model: &StainModel) -> Result<ConcentrationMaps> {
    let pinv = model.pseudo_inverse()?;
    let (w, h) = (od.width(), od.height());
    let mut ch = Vec::with_capacity(w * h);
    let mut cd = Vec::with_capacity(w * h);
    for p in od.pixels() {
        let dot = |row: &[f64; 3]| row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
        ch.push(dot(&pinv[0]).max(0.0));
        cd.push(dot(&pinv[1]).max(0.0));
    }
    Ok(ConcentrationMaps {
        hematoxylin: Field::new(w, h, ch),
        dab: Field::new(w, h, cd),
    })
}

/// RGB image straight to concentrations with the model's I0 and the default epsilon.
pub fn unmix(img: &RgbImage, model: &StainModel) -> Result<ConcentrationMaps> {
    deconvolve(&rgb_to_od(img, model.i0, DEFAULT_OD_EPSILON), model)
}

//! The 21-component handcrafted patch descriptor.

use image::RgbImage;
use sha2::{Digest, Sha256};

use crate::charcurve::HueWindow;
use crate::error::{Error, Result};
use crate::imgproc::stain::{unmix, StainModel};
use crate::imgproc::texture::{fractal_dimension_dbc, glcm_features_default, histogram_stats};
use crate::imgproc::{rgb_to_hsb, to_gray, Field};

pub const FEATURE_COUNT: usize = 21;

/// Concentration range mapped onto histogram bins and GLCM gray levels.
pub const CONCENTRATION_RANGE: (f64, f64) = (0.0, 2.0);
pub const SATURATION_CUTS: [f64; 2] = [0.15, 0.35];

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "h_mean",
    "h_variance",
    "h_skewness",
    "h_kurtosis",
    "h_entropy",
    "dab_mean",
    "dab_variance",
    "dab_skewness",
    "dab_kurtosis",
    "dab_entropy",
    "h_glcm_contrast",
    "h_glcm_energy",
    "h_glcm_homogeneity",
    "h_glcm_correlation",
    "dab_glcm_contrast",
    "dab_glcm_energy",
    "dab_glcm_homogeneity",
    "dab_glcm_correlation",
    "gray_fractal_dimension",
    "stained_fraction_s015",
    "stained_fraction_s035",
];

/// Hex SHA-256 of the newline-joined feature names.
pub fn feature_checksum() -> String {
    let mut h = Sha256::new();
    h.update(FEATURE_NAMES.join("\n").as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

fn channel_features(field: &Field, out: &mut Vec<f64>) -> Result<()> {
    let s = histogram_stats(field.values(), CONCENTRATION_RANGE)?;
    out.extend([s.mean, s.variance, s.skewness, s.kurtosis, s.entropy]);
    Ok(())
}

fn glcm_of(field: &Field, out: &mut Vec<f64>) -> Result<()> {
    let g = glcm_features_default(&field.to_gray_levels(CONCENTRATION_RANGE.0, CONCENTRATION_RANGE.1))?;
    out.extend([g.contrast, g.energy, g.homogeneity, g.correlation]);
    Ok(())
}

/// Fraction of pixels with hue in `window` and saturation ≥ `cut`.
pub fn stained_fraction_at(patch: &RgbImage, window: HueWindow, cut: f64) -> f64 {
    let n = patch.pixels().filter(|&&p| {
        let h = rgb_to_hsb(p);
        window.contains(h.hue) && h.saturation >= cut
    });
    n.count() as f64 / (patch.width() * patch.height()) as f64
}

pub fn extract_features(patch: &RgbImage, model: &StainModel) -> Result<FeatureVector> {
    if patch.width() != patch.height() || patch.width() < 8 {
        return Err(Error::Size(format!(
            "patches must be square with side >= 8, got {}x{}",
            patch.width(),
            patch.height()
        )));
    }
    let conc = unmix(patch, model)?;
    let mut v = Vec::with_capacity(FEATURE_COUNT);
    channel_features(&conc.hematoxylin, &mut v)?;
    channel_features(&conc.dab, &mut v)?;
    glcm_of(&conc.hematoxylin, &mut v)?;
    glcm_of(&conc.dab, &mut v)?;
    v.push(fractal_dimension_dbc(&to_gray(patch))?);
    for cut in SATURATION_CUTS {
        v.push(stained_fraction_at(patch, HueWindow::default(), cut));
    }
    let arr: [f64; FEATURE_COUNT] = v.try_into().map_err(|v: Vec<f64>| Error::Shape {
        expected: FEATURE_COUNT,
        got: v.len(),
    })?;
    if arr.iter().any(|x| !x.is_finite()) {
        return Err(Error::Degenerate("non-finite feature value".into()));
    }
    Ok(FeatureVector(arr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_tile, TileSpec};
    use image::Rgb;

    #[test]
    fn blank_patch() {
        let blank = RgbImage::from_pixel(64, 64, Rgb([255, 255, 255]));
        let f = extract_features(&blank, &StainModel::default()).unwrap();
        assert_eq!((f.0[19], f.0[20]), (0.0, 0.0));
        assert_eq!((f.0[1], f.0[6]), (0.0, 0.0));
    }

    #[test]
    fn deterministic() {
        let t = generate_tile(&TileSpec {
            width: 128,
            height: 128,
            cell_count: 12,
            membrane_completeness: 0.5,
            stain_intensity: 0.5,
            ..TileSpec::default()
        })
        .unwrap();
        let m = StainModel::default();
        assert_eq!(extract_features(&t.image, &m).unwrap(), extract_features(&t.image.clone(), &m).unwrap());
    }

    #[test]
    fn stained_fraction_matches_painted_ratio() {
        let t = generate_tile(&TileSpec {
            width: 128,
            height: 128,
            cell_count: 12,
            membrane_completeness: 0.6,
            complete_fraction: 0.5,
            stain_intensity: 0.5,
            seed: 5,
            ..TileSpec::default()
        })
        .unwrap();
        let f = extract_features(&t.image, &StainModel::default()).unwrap();
        let painted = t.painted_fraction();
        assert!(painted > 0.05);
        assert!((f.0[19] - painted).abs() <= 0.01, "{} vs {painted}", f.0[19]);
        assert!((f.0[20] - painted).abs() <= 0.01, "{} vs {painted}", f.0[20]);
    }

    #[test]
    fn checksum_is_stable_hex() {
        let c = feature_checksum();
        assert_eq!(c.len(), 64);
        assert_eq!(c, feature_checksum());
    }
}

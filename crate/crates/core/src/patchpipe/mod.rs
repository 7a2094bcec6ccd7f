//! Patch-based slide scoring: tiling, background rejection, features,
//! boosted patch classification, tallying and slide-level aggregation.

pub mod features;
pub mod localmax;
pub mod samme;

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgproc::stain::StainModel;
use crate::imgproc::{adaptive_threshold, crop_rgb, to_gray};
use crate::pcms::{pcms_morphological_tiles, MorphParams};
use crate::types::Her2Score;

pub use features::{extract_features, feature_checksum, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
pub use localmax::sample_patches_localmax;
pub use samme::{predict_samme, train_samme, SammeModel, SammeParams};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: u32,
    pub stride: u32,
    /// Row-major patch origins.
    pub origins: Vec<(u32, u32)>,
}

pub const DEFAULT_PATCH_SIZE: u32 = 128;

pub fn tile_image(width: u32, height: u32, patch_size: u32, stride: u32) -> Result<PatchGrid> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::Size("patch size and stride must be positive".into()));
    }
    if width < patch_size || height < patch_size {
        return Err(Error::Size(format!("image {width}x{height} is smaller than one {patch_size}px patch")));
    }
    let mut origins = Vec::new();
    let mut y = 0;
    while y + patch_size <= height {
        let mut x = 0;
        while x + patch_size <= width {
            origins.push((x, y));
            x += stride;
        }
        y += stride;
    }
    Ok(PatchGrid {
        patch_size,
        stride,
        origins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundParams {
    pub window: usize,
    pub offset: f64,
    pub ones_ratio: f64,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self {
            window: 31,
            offset: 10.0,
            ones_ratio: 0.9,
        }
    }
}

pub fn ones_fraction_mucs(patch: &RgbImage, params: &BackgroundParams) -> Result<f64> {
    Ok(adaptive_threshold(&to_gray(patch), params.window, params.offset)?.ones_fraction())
}

/// Background iff the adaptive-threshold ones fraction is at least `ones_ratio`.
pub fn is_background_mucs(patch: &RgbImage, params: &BackgroundParams) -> Result<bool> {
    Ok(ones_fraction_mucs(patch, params)? >= params.ones_ratio)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PatchTally {
    pub n: [usize; 4],
    pub background: usize,
}

impl PatchTally {
    pub fn total(&self) -> usize {
        self.n.iter().sum()
    }

    fn require_nonempty(&self) -> Result<usize> {
        match self.total() {
            0 => Err(Error::EmptyCollection("patch tally")),
            n => Ok(n),
        }
    }
}

/// `None` marks a background patch.
pub fn tally(categories: &[Option<Her2Score>]) -> PatchTally {
    let mut t = PatchTally::default();
    for c in categories {
        match c {
            Some(s) => t.n[s.index()] += 1,
            None => t.background += 1,
        }
    }
    t
}

/// Cascade 3+ if n3/N > 0.08, 2+ if n2/N > 0.4, 1+ if n1/N > 0.14, else 0.
pub fn aggregate_indus(t: &PatchTally) -> Result<Her2Score> {
    let n = t.require_nonempty()?;
    let [_, n1, n2, n3] = t.n;
    Ok(if n3 * 100 > 8 * n {
        Her2Score::Three
    } else if n2 * 10 > 4 * n {
        Her2Score::Two
    } else if n1 * 100 > 14 * n {
        Her2Score::One
    } else {
        Her2Score::Zero
    })
}

/// 3+ if n3/N ≥ 0.10; 2+ if n2/N ≥ 0.10 or 0.01 < n3/N < 0.10; 1+ if n1/N ≥ 0.10; else 0.
pub fn aggregate_mucs(t: &PatchTally) -> Result<Her2Score> {
    let n = t.require_nonempty()?;
    let [_, n1, n2, n3] = t.n;
    Ok(if n3 * 10 >= n {
        Her2Score::Three
    } else if n2 * 10 >= n || (n3 * 100 > n && n3 * 10 < n) {
        Her2Score::Two
    } else if n1 * 10 >= n {
        Her2Score::One
    } else {
        Her2Score::Zero
    })
}

/// First of 3+, 2+, 1+ whose share reaches 0.10, else 0.
pub fn aggregate_visilab(t: &PatchTally) -> Result<Her2Score> {
    let n = t.require_nonempty()?;
    Ok([Her2Score::Three, Her2Score::Two, Her2Score::One]
        .into_iter()
        .find(|s| t.n[s.index()] * 10 >= n)
        .unwrap_or(Her2Score::Zero))
}

/// 100 · (n2 + n3) / (n0 + n1 + n2 + n3).
pub fn pcms_eq2(t: &PatchTally) -> Result<f64> {
    let n = t.require_nonempty()?;
    Ok(100.0 * (t.n[2] + t.n[3]) as f64 / n as f64)
}

pub fn slide_confidence(confidences: &[f64]) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::EmptyCollection("patch confidences"));
    }
    Ok(confidences.iter().sum::<f64>() / confidences.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationRule {
    Indus,
    Mucs,
    Visilab,
}

impl AggregationRule {
    pub fn apply(self, t: &PatchTally) -> Result<Her2Score> {
        match self {
            AggregationRule::Indus => aggregate_indus(t),
            AggregationRule::Mucs => aggregate_mucs(t),
            AggregationRule::Visilab => aggregate_visilab(t),
        }
    }
}

impl FromStr for AggregationRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "indus" => Ok(AggregationRule::Indus),
            "mucs" => Ok(AggregationRule::Mucs),
            "visilab" => Ok(AggregationRule::Visilab),
            other => Err(format!("unknown aggregation rule {other} (expected indus, mucs or visilab)")),
        }
    }
}

impl fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationRule::Indus => "indus",
            AggregationRule::Mucs => "mucs",
            AggregationRule::Visilab => "visilab",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PcmsMode {
    Eq2,
    Morphological,
}

impl FromStr for PcmsMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eq2" | "patch" => Ok(PcmsMode::Eq2),
            "morphological" | "morph" => Ok(PcmsMode::Morphological),
            other => Err(format!("unknown PCMS mode {other} (expected eq2 or morphological)")),
        }
    }
}

impl fmt::Display for PcmsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PcmsMode::Eq2 => "eq2",
            PcmsMode::Morphological => "morphological",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchPipeConfig {
    pub patch_size: u32,
    pub stride: u32,
    pub background: BackgroundParams,
    pub stain: StainModel,
    pub rule: AggregationRule,
    pub pcms_mode: PcmsMode,
    pub morph: MorphParams,
}

impl Default for PatchPipeConfig {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_PATCH_SIZE,
            background: BackgroundParams::default(),
            stain: StainModel::default(),
            rule: AggregationRule::Mucs,
            pcms_mode: PcmsMode::Eq2,
            morph: MorphParams::default(),
        }
    }
}

/// Non-background patches of every tile, in tile then row-major order.
pub fn foreground_patches(tiles: &[RgbImage], config: &PatchPipeConfig) -> Result<(Vec<RgbImage>, usize)> {
    let mut jobs = Vec::new();
    for (i, t) in tiles.iter().enumerate() {
        if t.width() < config.patch_size || t.height() < config.patch_size {
            continue;
        }
        let grid = tile_image(t.width(), t.height(), config.patch_size, config.stride)?;
        jobs.extend(grid.origins.into_iter().map(|o| (i, o)));
    }
    let patches: Vec<Option<RgbImage>> = jobs
        .par_iter()
        .map(|&(i, (x, y))| -> Result<Option<RgbImage>> {
            let p = crop_rgb(&tiles[i], x, y, config.patch_size, config.patch_size)?;
            Ok((!is_background_mucs(&p, &config.background)?).then_some(p))
        })
        .collect::<Result<_>>()?;
    let total = patches.len();
    let fg: Vec<RgbImage> = patches.into_iter().flatten().collect();
    let background = total - fg.len();
    Ok((fg, background))
}

/// Feature vectors of every foreground patch of a slide, each labeled with the slide score.
pub fn labeled_patch_features(tiles: &[RgbImage], score: Her2Score, config: &PatchPipeConfig) -> Result<Vec<(Vec<f64>, usize)>> {
    let (patches, _) = foreground_patches(tiles, config)?;
    patches
        .par_iter()
        .map(|p| Ok((extract_features(p, &config.stain)?.0.to_vec(), score.index())))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSlideScore {
    pub score: Her2Score,
    pub confidence: f64,
    pub pcms: f64,
    pub tally: PatchTally,
}

pub fn score_slide_patchpipe(tiles: &[RgbImage], model: &SammeModel, config: &PatchPipeConfig) -> Result<PatchSlideScore> {
    let (patches, background) = foreground_patches(tiles, config)?;
    if patches.is_empty() {
        return Err(Error::Coverage(format!("all {background} patches are background")));
    }
    let predictions: Vec<(Her2Score, f64)> = patches
        .par_iter()
        .map(|p| -> Result<(Her2Score, f64)> {
            let v = extract_features(p, &config.stain)?;
            let (k, c) = predict_samme(model, &v.0)?;
            Ok((Her2Score::from_index(k).ok_or_else(|| Error::Model(format!("class index {k} outside 0..4")))?, c))
        })
        .collect::<Result<_>>()?;
    let mut t = tally(&predictions.iter().map(|p| Some(p.0)).collect::<Vec<_>>());
    t.background = background;
    let score = config.rule.apply(&t)?;
    let confidence = slide_confidence(&predictions.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let pcms = match config.pcms_mode {
        PcmsMode::Eq2 => pcms_eq2(&t)?,
        PcmsMode::Morphological => pcms_morphological_tiles(tiles, &config.stain, &config.morph)?.pcms,
    };
    Ok(PatchSlideScore {
        score,
        confidence,
        pcms,
        tally: t,
    })
}

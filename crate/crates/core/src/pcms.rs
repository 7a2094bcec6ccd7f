//! Percentage of completely membrane-stained cells (PCMS): morphological estimate from
//! hematoxylin nuclei and the DAB membrane skeleton, and the training-set class prior.

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgproc::stain::{unmix, StainModel};
use crate::imgproc::{fill_holes, gray_histogram, label_components, otsu_threshold, skeletonize, BinaryMask, Field, RegionStats};
use crate::ingest::GroundTruthFile;
use crate::types::Her2Score;

/// Concentration range quantized to 8 bits before Otsu.
pub const H_OTSU_RANGE: (f64, f64) = (0.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphParams {
    pub area_min: usize,
    pub area_max: usize,
    pub ecc_max: f64,
    pub dab_threshold: f64,
    /// Skeleton pixels farther than this multiple of the equivalent nucleus radius are ignored.
    pub reach_factor: f64,
    pub angular_bins: usize,
}

impl Default for MorphParams {
    fn default() -> Self {
        Self {
            area_min: 80,
            area_max: 2500,
            ecc_max: 0.92,
            dab_threshold: 0.1,
            reach_factor: 2.5,
            angular_bins: 36,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TumorMask {
    pub mask: BinaryMask,
    pub regions: Vec<RegionStats>,
    pub area: usize,
    pub empty: bool,
}

impl TumorMask {
    pub fn region_count(&self) -> usize {
        self.regions.len()
    }
}

pub fn segment_tumor_nuclei(hematoxylin: &Field, area_range: (usize, usize), ecc_max: f64) -> Result<TumorMask> {
    let (w, h) = (hematoxylin.width(), hematoxylin.height());
    let gray = hematoxylin.to_gray_levels(H_OTSU_RANGE.0, H_OTSU_RANGE.1);
    let otsu = otsu_threshold(&gray_histogram(&gray))?;
    let raw = if otsu.degenerate {
        BinaryMask::new(w, h)
    } else {
        BinaryMask::from_fn(w, h, |x, y| gray.get_pixel(x as u32, y as u32)[0] > otsu.level)
    };
    let (labels, stats) = label_components(&raw);
    let keep: Vec<bool> = std::iter::once(false)
        .chain(
            stats
                .iter()
                .map(|s| s.area >= area_range.0 && s.area <= area_range.1 && s.eccentricity <= ecc_max),
        )
        .collect();
    let mask = BinaryMask::from_fn(w, h, |x, y| keep[labels[y * w + x] as usize]);
    let regions: Vec<RegionStats> = stats.into_iter().filter(|s| keep[s.label as usize]).collect();
    let area = regions.iter().map(|r| r.area).sum();
    Ok(TumorMask {
        mask,
        empty: regions.is_empty(),
        regions,
        area,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembraneExtent {
    pub extent: f64,
    pub similarity: f64,
    pub binary: BinaryMask,
    pub skeleton: BinaryMask,
    pub filled: BinaryMask,
}

/// Dice overlap of two equally sized masks; two empty masks score 0.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let denom = a.count_ones() + b.count_ones();
    if denom == 0 {
        return 0.0;
    }
    2.0 * a.intersection_count(b) as f64 / denom as f64
}

/// Binarize at `dab_threshold`, thin, fill skeleton holes; extent = filled area × Dice(filled, binary).
pub fn membrane_extent(dab: &Field, dab_threshold: f64) -> MembraneExtent {
    let binary = BinaryMask::from_fn(dab.width(), dab.height(), |x, y| dab.get(x, y) > dab_threshold);
    let skeleton = skeletonize(&binary);
    let filled = fill_holes(&skeleton);
    let similarity = dice(&filled, &binary);
    MembraneExtent {
        extent: filled.count_ones() as f64 * similarity,
        similarity,
        binary,
        skeleton,
        filled,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcmsEstimate {
    pub pcms: f64,
    pub empty_tumor: bool,
}

/// 100 × extent / tumor area, clamped to [0, 100]; an empty tumor gives 0 with the flag set.
pub fn pcms_morphological(tumor: &TumorMask, membrane: &MembraneExtent) -> PcmsEstimate {
    ratio_pcms(membrane.extent, tumor.area)
}

fn ratio_pcms(extent: f64, tumor_area: usize) -> PcmsEstimate {
    if tumor_area == 0 {
        return PcmsEstimate {
            pcms: 0.0,
            empty_tumor: true,
        };
    }
    PcmsEstimate {
        pcms: (100.0 * extent / tumor_area as f64).clamp(0.0, 100.0),
        empty_tumor: false,
    }
}

/// Per-nucleus membrane coverage: the fraction of angular bins around the nucleus centroid
/// holding a skeleton pixel assigned to that nucleus, or 1 when the filled skeleton encloses it.
pub fn nucleus_coverage(tumor: &TumorMask, membrane: &MembraneExtent, params: &MorphParams) -> Vec<f64> {
    let regions = &tumor.regions;
    let bins = params.angular_bins.max(1);
    let mut hit = vec![vec![false; bins]; regions.len()];
    let reach: Vec<f64> = regions
        .iter()
        .map(|r| params.reach_factor * (r.area as f64 / std::f64::consts::PI).sqrt())
        .collect();
    let sk = &membrane.skeleton;
    for y in 0..sk.height() {
        for x in 0..sk.width() {
            if !sk.get(x, y) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (i, r) in regions.iter().enumerate() {
                let (dx, dy) = (x as f64 - r.centroid.0, y as f64 - r.centroid.1);
                let d = dx.hypot(dy);
                if d <= reach[i] && best.is_none_or(|b| d < b.1) {
                    best = Some((i, d));
                }
            }
            if let Some((i, _)) = best {
                let r = &regions[i];
                let phi = (y as f64 - r.centroid.1).atan2(x as f64 - r.centroid.0);
                let t = (phi / std::f64::consts::TAU).rem_euclid(1.0);
                hit[i][((t * bins as f64) as usize).min(bins - 1)] = true;
            }
        }
    }
    regions
        .iter()
        .zip(hit)
        .map(|(r, h)| {
            let (cx, cy) = (r.centroid.0.round() as usize, r.centroid.1.round() as usize);
            let enclosed = cx < membrane.filled.width()
                && cy < membrane.filled.height()
                && membrane.filled.get(cx, cy)
                && !membrane.skeleton.get(cx, cy);
            if enclosed {
                1.0
            } else {
                h.iter().filter(|&&b| b).count() as f64 / bins as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphPcms {
    pub pcms: f64,
    pub empty_tumor: bool,
    pub nuclei: usize,
    pub tumor_area: usize,
    pub extent: f64,
}

/// Cell-anchored morphological PCMS of one set of concentration maps:
/// each accepted nucleus contributes its area weighted by its membrane coverage.
pub fn pcms_morphological_maps(hematoxylin: &Field, dab: &Field, params: &MorphParams) -> Result<MorphPcms> {
    let tumor = segment_tumor_nuclei(hematoxylin, (params.area_min, params.area_max), params.ecc_max)?;
    let membrane = membrane_extent(dab, params.dab_threshold);
    let coverage = nucleus_coverage(&tumor, &membrane, params);
    let extent: f64 = tumor.regions.iter().zip(&coverage).map(|(r, c)| r.area as f64 * c).sum();
    let est = ratio_pcms(extent, tumor.area);
    Ok(MorphPcms {
        pcms: est.pcms,
        empty_tumor: est.empty_tumor,
        nuclei: tumor.region_count(),
        tumor_area: tumor.area,
        extent,
    })
}

/// Pooled over tiles: total weighted extent over total tumor area.
pub fn pcms_morphological_tiles(tiles: &[RgbImage], model: &StainModel, params: &MorphParams) -> Result<MorphPcms> {
    let per_tile: Vec<MorphPcms> = tiles
        .par_iter()
        .map(|t| {
            let conc = unmix(t, model)?;
            pcms_morphological_maps(&conc.hematoxylin, &conc.dab, params)
        })
        .collect::<Result<_>>()?;
    let extent: f64 = per_tile.iter().map(|p| p.extent).sum();
    let tumor_area: usize = per_tile.iter().map(|p| p.tumor_area).sum();
    let est = ratio_pcms(extent, tumor_area);
    Ok(MorphPcms {
        pcms: est.pcms,
        empty_tumor: est.empty_tumor,
        nuclei: per_tile.iter().map(|p| p.nuclei).sum(),
        tumor_area,
        extent,
    })
}

/// Mean reported PCMS over training cases with `score`.
pub fn pcms_class_prior(training: &GroundTruthFile, score: Her2Score) -> Result<f64> {
    let values: Vec<f64> = training
        .rows
        .iter()
        .filter(|r| r.score == score)
        .filter_map(|r| r.pcms)
        .collect();
    if values.is_empty() {
        return Err(Error::Coverage(format!("no training case with score {} and a reported PCMS", score.label())));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::fixtures::TRAINING_GT_CSV;
    use crate::ingest::parse_ground_truth;
    use crate::synth::{render_concentrations, TileSpec};

    fn tile(cells: usize, p: f64, cf: f64, seed: u64) -> TileSpec {
        TileSpec {
            width: 256,
            height: 256,
            cell_count: cells,
            membrane_completeness: p,
            complete_fraction: cf,
            stain_intensity: 0.6,
            noise_sigma: 0.0,
            seed,
            ..TileSpec::default()
        }
    }

    #[test]
    fn counts_generated_nuclei() {
        let (conc, _, _, cells) = render_concentrations(&tile(30, 0.5, 0.0, 3)).unwrap();
        assert_eq!(cells.len(), 30);
        let p = MorphParams::default();
        let t = segment_tumor_nuclei(&conc.hematoxylin, (p.area_min, p.area_max), p.ecc_max).unwrap();
        assert_eq!(t.region_count(), 30);
        assert!(!t.empty);
        assert_eq!(t.area, t.mask.count_ones());
    }

    #[test]
    fn elongated_fibers_rejected() {
        let h = Field::from_fn(200, 200, |x, y| if (50..150).contains(&x) && (98..102).contains(&y) { 1.0 } else { 0.1 });
        let t = segment_tumor_nuclei(&h, (80, 2500), 0.92).unwrap();
        assert!(t.empty);
        assert_eq!(t.area, 0);
    }

    #[test]
    fn blank_map_is_empty_tumor() {
        let t = segment_tumor_nuclei(&Field::filled(64, 64, 0.0), (80, 2500), 0.92).unwrap();
        assert!(t.empty);
        let m = membrane_extent(&Field::filled(64, 64, 0.0), 0.1);
        assert_eq!((m.extent, m.similarity), (0.0, 0.0));
        assert_eq!(pcms_morphological(&t, &m), PcmsEstimate { pcms: 0.0, empty_tumor: true });
    }

    #[test]
    fn lattice_similarity_near_one() {
        // Walls three pixels thick around single-pixel holes on a period of four.
        let dab = Field::from_fn(120, 120, |x, y| {
            let inside = (10..110).contains(&x) && (10..110).contains(&y);
            let hole = (x % 4 == 0) && (y % 4 == 0);
            if inside && !hole { 1.0 } else { 0.0 }
        });
        let m = membrane_extent(&dab, 0.5);
        assert!(m.similarity > 0.9, "{}", m.similarity);
        let filled = m.filled.count_ones() as f64;
        assert!((m.extent - filled).abs() <= 0.1 * filled);
        assert!(m.skeleton.is_subset_of(&m.filled));
    }

    #[test]
    fn scattered_dots_small_extent() {
        let dab = Field::from_fn(100, 100, |x, y| if x % 10 == 5 && y % 10 == 5 { 1.0 } else { 0.0 });
        let m = membrane_extent(&dab, 0.5);
        assert_eq!(m.similarity, 1.0);
        assert_eq!(m.extent, 100.0);
        assert!(m.extent / 10_000.0 < 0.02);
    }

    #[test]
    fn ratio_examples() {
        let mk = |area: usize| TumorMask {
            mask: BinaryMask::new(1, 1),
            regions: Vec::new(),
            area,
            empty: area == 0,
        };
        let mem = |extent: f64| MembraneExtent {
            extent,
            similarity: 1.0,
            binary: BinaryMask::new(1, 1),
            skeleton: BinaryMask::new(1, 1),
            filled: BinaryMask::new(1, 1),
        };
        assert_eq!(pcms_morphological(&mk(400), &mem(400.0)).pcms, 100.0);
        assert_eq!(pcms_morphological(&mk(400), &mem(0.0)).pcms, 0.0);
        assert_eq!(pcms_morphological(&mk(400), &mem(900.0)).pcms, 100.0);
    }

    #[test]
    fn recovers_completeness_on_noise_free_tiles() {
        let params = MorphParams::default();
        for (i, p) in [0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
            let cf = if p == 1.0 { 1.0 } else { 0.0 };
            let (conc, _, _, _) = render_concentrations(&tile(45, p, cf, 10 + i as u64)).unwrap();
            let est = pcms_morphological_maps(&conc.hematoxylin, &conc.dab, &params).unwrap();
            assert!((est.pcms - 100.0 * p).abs() <= 10.0, "p={p}: {}", est.pcms);
        }
    }

    #[test]
    fn rendered_tiles_recover_completeness() {
        let model = StainModel::default();
        for (i, p) in [0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
            let cf = if p == 1.0 { 1.0 } else { 0.0 };
            let t = crate::synth::generate_tile(&tile(45, p, cf, 20 + i as u64)).unwrap();
            let est = pcms_morphological_tiles(&[t.image], &model, &MorphParams::default()).unwrap();
            assert!(est.nuclei >= 40, "{}", est.nuclei);
            assert!((est.pcms - 100.0 * p).abs() <= 10.0, "p={p}: {}", est.pcms);
        }
    }

    #[test]
    fn class_prior_over_training_fixture() {
        let gt = parse_ground_truth(TRAINING_GT_CSV.as_bytes()).unwrap();
        assert_eq!(pcms_class_prior(&gt, Her2Score::Zero).unwrap(), 0.0);
        let ones: Vec<f64> = gt.rows.iter().filter(|r| r.score == Her2Score::One).filter_map(|r| r.pcms).collect();
        let mean = ones.iter().sum::<f64>() / ones.len() as f64;
        assert!((pcms_class_prior(&gt, Her2Score::One).unwrap() - mean).abs() < 1e-12);
        let single = GroundTruthFile {
            rows: vec![crate::GroundTruthRecord::new("7", Her2Score::Two, crate::FishStatus::NotPerformed, Some(42.0)).unwrap()],
            warnings: Vec::new(),
        };
        assert_eq!(pcms_class_prior(&single, Her2Score::Two).unwrap(), 42.0);
        assert!(matches!(pcms_class_prior(&single, Her2Score::One), Err(Error::Coverage(_))));
    }
}

//! Deterministic synthetic H-DAB tiles and cases with known ground truth.
//!
//! Tiles are rendered in optical-density space with the default stain model:
//! stroma carries a light hematoxylin wash, each cell has a hematoxylin nucleus
//! and a DAB membrane ring drawn over an angular fraction `p` of its circumference.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgproc::stain::StainModel;
use crate::imgproc::{BinaryMask, ConcentrationMaps, Field};
use crate::ingest::{render_ground_truth, GroundTruthFile};
use crate::types::{CaseId, FishStatus, GroundTruthRecord, Her2Score};

pub const CELL_RADIUS: i32 = 13;
pub const MEMBRANE_INNER: i32 = 10;
pub const NUCLEUS_RADIUS_RANGE: (i32, i32) = (7, 9);
pub const STROMA_H: f64 = 0.15;
pub const CYTOPLASM_H: f64 = 0.05;
pub const NUCLEUS_H_RANGE: (f64, f64) = (0.6, 0.8);
/// Cells per 512×512 of tissue.
pub const DEFAULT_CELL_DENSITY: f64 = 200.0;
const PLACEMENT_ATTEMPTS_PER_CELL: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TileSpec {
    pub width: u32,
    pub height: u32,
    pub cell_count: usize,
    /// Angular fraction of each incomplete cell's membrane ring that is stained.
    pub membrane_completeness: f64,
    /// Fraction of cells rendered with a fully stained ring (p = 1).
    pub complete_fraction: f64,
    pub stain_intensity: f64,
    /// Gaussian noise σ in gray levels.
    pub noise_sigma: f64,
    /// Tissue occupies columns `x < tissue_fraction · width`; the rest is blank glass.
    pub tissue_fraction: f64,
    pub seed: u64,
    pub tile_index: u64,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            cell_count: DEFAULT_CELL_DENSITY as usize,
            membrane_completeness: 0.0,
            complete_fraction: 0.0,
            stain_intensity: 0.0,
            noise_sigma: 2.0,
            tissue_fraction: 1.0,
            seed: 0,
            tile_index: 0,
        }
    }
}

impl TileSpec {
    fn validate(&self) -> Result<()> {
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Range {
                    field,
                    value: v,
                    expected: "[0, 1]",
                })
            }
        };
        unit("membrane_completeness", self.membrane_completeness)?;
        unit("complete_fraction", self.complete_fraction)?;
        unit("stain_intensity", self.stain_intensity)?;
        unit("tissue_fraction", self.tissue_fraction)?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Range {
                field: "noise_sigma",
                value: self.noise_sigma,
                expected: ">= 0",
            });
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Size("tile dimensions must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellAnnotation {
    pub id: usize,
    pub cx: i32,
    pub cy: i32,
    pub nucleus_radius: i32,
    pub nucleus_h: f64,
    /// Stained angular fraction of the membrane ring.
    pub completeness: f64,
    pub arc_start_deg: f64,
    pub intensity: f64,
}

impl CellAnnotation {
    pub fn is_complete(&self) -> bool {
        self.completeness >= 1.0 && self.intensity > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedTile {
    pub image: RgbImage,
    /// Noise-free ground-truth concentrations the image was rendered from.
    pub concentrations: ConcentrationMaps,
    /// Pixels painted with DAB.
    pub painted: BinaryMask,
    pub tissue: BinaryMask,
    pub cells: Vec<CellAnnotation>,
}

impl GeneratedTile {
    pub fn painted_fraction(&self) -> f64 {
        self.painted.ones_fraction()
    }

    pub fn complete_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_complete()).count()
    }
}

/// Fast stream splitter for deriving independent seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tile_rng(seed: u64, tile_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tile_index);
    rng
}

fn place_cells(spec: &TileSpec, rng: &mut ChaCha8Rng) -> Result<Vec<(i32, i32)>> {
    if spec.cell_count == 0 {
        return Ok(Vec::new());
    }
    let r = CELL_RADIUS;
    let tissue_w = (spec.tissue_fraction * spec.width as f64).floor() as i32;
    let (x_hi, y_hi) = (tissue_w - r - 1, spec.height as i32 - r - 1);
    if x_hi < r || y_hi < r {
        return Err(Error::Packing(format!(
            "{} cells do not fit a {}x{} tile with tissue fraction {}",
            spec.cell_count, spec.width, spec.height, spec.tissue_fraction
        )));
    }
    let min_d2 = (2 * r + 1) * (2 * r + 1);
    let mut centers: Vec<(i32, i32)> = Vec::with_capacity(spec.cell_count);
    let cap = PLACEMENT_ATTEMPTS_PER_CELL * spec.cell_count;
    for _ in 0..cap {
        let x = rng.random_range(r..=x_hi);
        let y = rng.random_range(r..=y_hi);
        if centers.iter().all(|&(a, b)| (x - a) * (x - a) + (y - b) * (y - b) >= min_d2) {
            centers.push((x, y));
            if centers.len() == spec.cell_count {
                return Ok(centers);
            }
        }
    }
    Err(Error::Packing(format!(
        "placed {} of {} cells after {cap} attempts in a {}x{} tile",
        centers.len(),
        spec.cell_count,
        spec.width,
        spec.height
    )))
}

fn in_arc(dx: i32, dy: i32, start_deg: f64, completeness: f64) -> bool {
    if completeness >= 1.0 {
        return true;
    }
    if completeness <= 0.0 {
        return false;
    }
    let phi = (dy as f64).atan2(dx as f64).to_degrees().rem_euclid(360.0);
    (phi - start_deg).rem_euclid(360.0) < 360.0 * completeness
}

/// Ground-truth concentrations, DAB paint mask and tissue mask for a tile.
pub fn render_concentrations(spec: &TileSpec) -> Result<(ConcentrationMaps, BinaryMask, BinaryMask, Vec<CellAnnotation>)> {
    spec.validate()?;
    let mut rng = tile_rng(spec.seed, spec.tile_index);
    let centers = place_cells(spec, &mut rng)?;
    let complete = (spec.complete_fraction * centers.len() as f64).round() as usize;
    let cells: Vec<CellAnnotation> = centers
        .iter()
        .enumerate()
        .map(|(id, &(cx, cy))| {
            let nucleus_radius = rng.random_range(NUCLEUS_RADIUS_RANGE.0..=NUCLEUS_RADIUS_RANGE.1);
            let nucleus_h = rng.random_range(NUCLEUS_H_RANGE.0..NUCLEUS_H_RANGE.1);
            let arc_start_deg = rng.random_range(0.0..360.0);
            let completeness = if spec.stain_intensity == 0.0 {
                0.0
            } else if id < complete {
                1.0
            } else {
                spec.membrane_completeness
            };
            CellAnnotation {
                id,
                cx,
                cy,
                nucleus_radius,
                nucleus_h,
                completeness,
                arc_start_deg,
                intensity: spec.stain_intensity,
            }
        })
        .collect();

    let (w, h) = (spec.width as usize, spec.height as usize);
    let tissue_w = (spec.tissue_fraction * spec.width as f64).floor() as usize;
    let tissue = BinaryMask::from_fn(w, h, |x, _| x < tissue_w);
    let mut ch = Field::from_fn(w, h, |x, _| if x < tissue_w { STROMA_H } else { 0.0 });
    let mut cd = Field::filled(w, h, 0.0);
    let mut painted = BinaryMask::new(w, h);
    let (outer2, inner2) = (CELL_RADIUS * CELL_RADIUS, MEMBRANE_INNER * MEMBRANE_INNER);
    for c in &cells {
        let n2 = c.nucleus_radius * c.nucleus_radius;
        for dy in -CELL_RADIUS..=CELL_RADIUS {
            for dx in -CELL_RADIUS..=CELL_RADIUS {
                let d2 = dx * dx + dy * dy;
                if d2 > outer2 {
                    continue;
                }
                let (x, y) = ((c.cx + dx) as usize, (c.cy + dy) as usize);
                if d2 <= n2 {
                    ch.set(x, y, c.nucleus_h);
                } else if d2 >= inner2 && in_arc(dx, dy, c.arc_start_deg, c.completeness) {
                    ch.set(x, y, 0.0);
                    cd.set(x, y, c.intensity);
                    painted.set(x, y, true);
                } else {
                    ch.set(x, y, CYTOPLASM_H);
                }
            }
        }
    }
    Ok((
        ConcentrationMaps {
            hematoxylin: ch,
            dab: cd,
        },
        painted,
        tissue,
        cells,
    ))
}

/// Noise-free, unquantized intensities for a concentration pair of fields.
pub fn render_intensity(conc: &ConcentrationMaps, model: &StainModel) -> Vec<[f64; 3]> {
    conc.hematoxylin
        .values()
        .iter()
        .zip(conc.dab.values())
        .map(|(&a, &b)| model.render(a, b))
        .collect()
}

pub fn generate_tile(spec: &TileSpec) -> Result<GeneratedTile> {
    let (concentrations, painted, tissue, cells) = render_concentrations(spec)?;
    let model = StainModel::default();
    let mut noise_rng = tile_rng(splitmix64(spec.seed), spec.tile_index);
    let normal = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let clean = render_intensity(&concentrations, &model);
    let mut raw = Vec::with_capacity(clean.len() * 3);
    for px in clean {
        for v in px {
            let noisy = if spec.noise_sigma > 0.0 { v + normal.sample(&mut noise_rng) } else { v };
            raw.push(noisy.clamp(0.0, 255.0).round() as u8);
        }
    }
    let image = RgbImage::from_raw(spec.width, spec.height, raw).expect("dimensions match");
    Ok(GeneratedTile {
        image,
        concentrations,
        painted,
        tissue,
        cells,
    })
}

/// Per-class rendering parameters drawn for one case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseParams {
    pub stain_intensity: f64,
    pub membrane_completeness: f64,
    pub complete_fraction: f64,
}

impl CaseParams {
    pub fn draw(score: Her2Score, rng: &mut impl Rng) -> Self {
        let (stain_intensity, membrane_completeness, complete_fraction) = match score {
            Her2Score::Zero => (0.0, 0.0, 0.0),
            Her2Score::One => (0.2, 0.4, rng.random_range(0.0..=0.05)),
            Her2Score::Two => (0.5, 0.4, rng.random_range(0.30..=0.70)),
            Her2Score::Three => (0.9, 0.4, rng.random_range(0.60..=0.95)),
        };
        Self {
            stain_intensity,
            membrane_completeness,
            complete_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub tile_width: u32,
    pub tile_height: u32,
    pub tile_count: usize,
    pub noise_sigma: f64,
    /// Cells per 512×512 of tissue.
    pub cell_density: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tile_width: 512,
            tile_height: 512,
            tile_count: 1,
            noise_sigma: 2.0,
            cell_density: DEFAULT_CELL_DENSITY,
        }
    }
}

impl SynthConfig {
    pub fn cells_per_tile(&self) -> usize {
        (self.cell_density * (self.tile_width as f64 * self.tile_height as f64) / (512.0 * 512.0)).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub score: Her2Score,
    pub params: CaseParams,
    pub tiles: Vec<GeneratedTile>,
    pub gt: GroundTruthRecord,
}

/// Percentage of annotated cells with a complete stained ring.
pub fn pcms_from_cells<'a>(cells: impl IntoIterator<Item = &'a CellAnnotation>) -> f64 {
    let (mut total, mut complete) = (0usize, 0usize);
    for c in cells {
        total += 1;
        complete += c.is_complete() as usize;
    }
    if total == 0 {
        0.0
    } else {
        100.0 * complete as f64 / total as f64
    }
}

pub fn generate_case(case_id: impl Into<CaseId>, score: Her2Score, config: &SynthConfig, seed: u64) -> Result<SyntheticCase> {
    let mut rng = tile_rng(seed, u64::MAX);
    let params = CaseParams::draw(score, &mut rng);
    let tiles = (0..config.tile_count)
        .into_par_iter()
        .map(|i| {
            generate_tile(&TileSpec {
                width: config.tile_width,
                height: config.tile_height,
                cell_count: config.cells_per_tile(),
                membrane_completeness: params.membrane_completeness,
                complete_fraction: params.complete_fraction,
                stain_intensity: params.stain_intensity,
                noise_sigma: config.noise_sigma,
                tissue_fraction: 1.0,
                seed,
                tile_index: i as u64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pcms = pcms_from_cells(tiles.iter().flat_map(|t| &t.cells));
    let gt = GroundTruthRecord::new(case_id, score, FishStatus::NotPerformed, Some(pcms))?;
    Ok(SyntheticCase {
        score,
        params,
        tiles,
        gt,
    })
}

/// Balanced dataset: case `k` (1-based) has score `(k − 1) mod 4`.
pub fn dataset_plan(per_class: usize, seed: u64) -> Vec<(CaseId, Her2Score, u64)> {
    (1..=4 * per_class)
        .map(|k| {
            let score = Her2Score::from_index((k - 1) % 4).expect("index < 4");
            (CaseId::from(k as u32), score, splitmix64(seed ^ (k as u64).wrapping_mul(0x2545_f491_4f6c_dd1d)))
        })
        .collect()
}

pub fn generate_dataset(per_class: usize, config: &SynthConfig, seed: u64) -> Result<Vec<SyntheticCase>> {
    dataset_plan(per_class, seed)
        .into_par_iter()
        .map(|(id, score, case_seed)| generate_case(id, score, config, case_seed))
        .collect()
}

pub fn annotations_csv(case: &SyntheticCase) -> String {
    let mut out = String::from("tile,cell,cx,cy,nucleus_radius,completeness,arc_start_deg,intensity,complete\n");
    for (t, tile) in case.tiles.iter().enumerate() {
        for c in &tile.cells {
            let _ = writeln!(
                out,
                "{t},{},{},{},{},{},{:.6},{},{}",
                c.id,
                c.cx,
                c.cy,
                c.nucleus_radius,
                c.completeness,
                c.arc_start_deg,
                c.intensity,
                c.is_complete() as u8
            );
        }
    }
    out
}

pub fn case_dir_name(id: &CaseId) -> String {
    format!("case_{id}")
}

/// Writes `case_<id>/ihc/tile_<n>.png` and `case_<id>/annotations.csv` under `out`.
pub fn write_case(case: &SyntheticCase, out: &Path) -> Result<()> {
    let dir = out.join(case_dir_name(&case.gt.case_id));
    let ihc = dir.join("ihc");
    std::fs::create_dir_all(&ihc)?;
    for (n, tile) in case.tiles.iter().enumerate() {
        crate::imgproc::write_png(&tile.image, &ihc.join(format!("tile_{n}.png")))?;
    }
    std::fs::write(dir.join("annotations.csv"), annotations_csv(case))?;
    Ok(())
}

pub fn write_ground_truth(rows: Vec<GroundTruthRecord>, out: &Path) -> Result<()> {
    let gt = GroundTruthFile { rows, warnings: Vec::new() };
    std::fs::write(out.join("gt.csv"), render_ground_truth(&gt))?;
    Ok(())
}

/// Writes every case with [`write_case`] and a root `gt.csv`.
pub fn write_dataset(cases: &[SyntheticCase], out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    cases.par_iter().try_for_each(|case| write_case(case, out))?;
    write_ground_truth(cases.iter().map(|c| c.gt.clone()).collect(), out)
}

/// Sorted tile images of one case directory (`ihc/tile_<n>.png`).
pub fn read_case_tiles(case_dir: &Path) -> Result<Vec<RgbImage>> {
    let ihc = case_dir.join("ihc");
    let dir = if ihc.is_dir() { ihc } else { case_dir.to_path_buf() };
    let mut paths: Vec<(u64, String, std::path::PathBuf)> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "tif" | "tiff"))
        })
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let n = stem.rsplit('_').next().and_then(|d| d.parse().ok()).unwrap_or(u64::MAX);
            (n, stem, p)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Coverage(format!("no tile images in {}", dir.display())));
    }
    paths.iter().map(|(_, _, p)| crate::imgproc::read_rgb(p)).collect()
}

/// A blank glass pixel under the default model.
pub fn glass_pixel() -> Rgb<u8> {
    StainModel::default().render_pixel(0.0, 0.0)
}

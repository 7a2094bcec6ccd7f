//! Pre-generated tile pyramids for slide viewers: `{case}/{stain}/{z}/{x}_{y}.png`,
//! level 0 at full resolution and each further level halving both dimensions.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::write_png;

pub const TILE_SIZE: u32 = 256;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_STAIN: &str = "ihc";

/// Level dimensions from full resolution down to the first level fitting in one tile.
pub fn level_dimensions(width: u32, height: u32, tile_size: u32) -> Vec<(u32, u32)> {
    let mut dims = vec![(width.max(1), height.max(1))];
    while let Some(&(w, h)) = dims.last() {
        if w <= tile_size && h <= tile_size {
            break;
        }
        dims.push((w.div_ceil(2), h.div_ceil(2)));
    }
    dims
}

pub fn tiles_across(extent: u32, tile_size: u32) -> u32 {
    extent.div_ceil(tile_size)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub case_id: String,
    pub stains: Vec<String>,
    pub depth: usize,
    pub tile_size: u32,
    /// `[width, height]` per level, level 0 first.
    pub levels: Vec<[u32; 2]>,
}

impl CaseManifest {
    pub fn tile_exists(&self, stain: &str, z: usize, x: u32, y: u32) -> bool {
        self.stains.iter().any(|s| s == stain)
            && self.levels.get(z).is_some_and(|&[w, h]| {
                x < tiles_across(w, self.tile_size) && y < tiles_across(h, self.tile_size)
            })
    }
}

pub fn tile_path(root: &Path, case_id: &str, stain: &str, z: usize, x: u32, y: u32) -> PathBuf {
    root.join(case_id).join(stain).join(z.to_string()).join(format!("{x}_{y}.png"))
}

/// Horizontal concatenation of equally tall tiles into one slide image.
pub fn mosaic(tiles: &[RgbImage]) -> Result<RgbImage> {
    let first = tiles.first().ok_or(Error::EmptyCollection("tiles"))?;
    let h = first.height();
    if let Some(t) = tiles.iter().find(|t| t.height() != h) {
        return Err(Error::Size(format!("tile heights differ: {h} vs {}", t.height())));
    }
    let w = tiles.iter().map(|t| t.width()).sum();
    let mut out = RgbImage::new(w, h);
    let mut x = 0;
    for t in tiles {
        imageops::replace(&mut out, t, x as i64, 0);
        x += t.width();
    }
    Ok(out)
}

/// Writes every level of `img` under `stain_dir/{z}/{x}_{y}.png`; edge tiles keep their partial size.
pub fn write_pyramid(img: &RgbImage, stain_dir: &Path, tile_size: u32) -> Result<Vec<[u32; 2]>> {
    let dims = level_dimensions(img.width(), img.height(), tile_size);
    let mut level = img.clone();
    for (z, &(w, h)) in dims.iter().enumerate() {
        if (level.width(), level.height()) != (w, h) {
            level = imageops::resize(&level, w, h, FilterType::Triangle);
        }
        let dir = stain_dir.join(z.to_string());
        std::fs::create_dir_all(&dir)?;
        for ty in 0..tiles_across(h, tile_size) {
            for tx in 0..tiles_across(w, tile_size) {
                let (x0, y0) = (tx * tile_size, ty * tile_size);
                let tile = imageops::crop_imm(&level, x0, y0, tile_size.min(w - x0), tile_size.min(h - y0)).to_image();
                write_png(&tile, &dir.join(format!("{tx}_{ty}.png")))?;
            }
        }
    }
    Ok(dims.into_iter().map(|(w, h)| [w, h]).collect())
}

/// Writes one pyramid per stain and the case manifest under `root/case_id`.
pub fn write_case_pyramid(root: &Path, case_id: &str, stains: &[(&str, &RgbImage)], tile_size: u32) -> Result<CaseManifest> {
    let first = stains.first().ok_or(Error::EmptyCollection("stains"))?.1;
    let mut levels = Vec::new();
    for (stain, img) in stains {
        if img.dimensions() != first.dimensions() {
            return Err(Error::Size(format!("stain {stain} differs in size from the first stain")));
        }
        levels = write_pyramid(img, &root.join(case_id).join(stain), tile_size)?;
    }
    let manifest = CaseManifest {
        case_id: case_id.to_string(),
        stains: stains.iter().map(|s| s.0.to_string()).collect(),
        depth: levels.len(),
        tile_size,
        levels,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Integrity(e.to_string()))?;
    std::fs::write(root.join(case_id).join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

pub fn read_manifest(case_dir: &Path) -> Result<CaseManifest> {
    let text = std::fs::read_to_string(case_dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("{}: {e}", case_dir.display())))
}

/// Manifests of every case directory under `root` holding a manifest, sorted by case id.
pub fn list_manifests(root: &Path) -> Result<Vec<CaseManifest>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() && path.join(MANIFEST_FILE).is_file() {
            out.push(read_manifest(&path)?);
        }
    }
    out.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(out)
}

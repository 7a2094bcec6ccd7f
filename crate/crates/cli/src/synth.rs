//! `synth`: balanced synthetic datasets with ground truth and optional labeled patches.

use std::path::{Path, PathBuf};

use clap::Args;
use her2kit_core::patchpipe::{foreground_patches, PatchPipeConfig};
use her2kit_core::synth::{case_dir_name, dataset_plan, generate_case, write_case, write_ground_truth, SynthConfig, SyntheticCase};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, ResultExt};

pub const DATASET_FILE: &str = "dataset.json";
pub const PATCH_DIR: &str = "patches";
/// Synthetic tiles stand in for a 10% crop of a 20× slide.
pub const SYNTH_ROI_SCALE: f64 = 0.1;

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Total number of cases (a multiple of 4).
    #[arg(long, conflicts_with = "per_class")]
    pub cases: Option<usize>,
    /// Cases per HER2 class.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Tiles per case.
    #[arg(long, default_value_t = 1)]
    pub tiles: usize,
    #[arg(long, default_value_t = 512)]
    pub tile_size: u32,
    /// Gaussian noise sigma in 8-bit units.
    #[arg(long, default_value_t = 2.0)]
    pub noise: f64,
    /// Also write foreground patches under patches/<class>/ for `train`.
    #[arg(long)]
    pub emit_patches: bool,
}

impl SynthArgs {
    pub fn new(per_class: usize, seed: u64, out: impl Into<PathBuf>) -> Self {
        Self {
            cases: None,
            per_class: Some(per_class),
            seed,
            out: out.into(),
            tiles: 1,
            tile_size: 512,
            noise: 2.0,
            emit_patches: false,
        }
    }
}

/// Generator settings recorded next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub per_class: usize,
    pub cases: usize,
    pub tiles_per_case: usize,
    pub tile_width: u32,
    pub tile_height: u32,
    pub noise_sigma: f64,
    pub cell_density: f64,
    /// Scale relative to the 20× working resolution, used to size scoring ROIs.
    pub roi_scale: f64,
    /// Foreground patches written under patches/ (0 unless requested).
    #[serde(skip)]
    pub patches: usize,
}

pub fn read_dataset_info(dir: &Path) -> CliResult<Option<DatasetInfo>> {
    let path = dir.join(DATASET_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).input(format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map(Some).input(format!("parsing {}", path.display()))
}

fn per_class(args: &SynthArgs) -> CliResult<usize> {
    let n = match (args.cases, args.per_class) {
        (Some(c), None) if c % 4 == 0 => c / 4,
        (Some(c), None) => return Err(CliError::input_msg(format!("--cases {c} is not a multiple of 4"))),
        (None, Some(p)) => p,
        (None, None) => return Err(CliError::input_msg("one of --cases or --per-class is required")),
        (Some(_), Some(_)) => return Err(CliError::input_msg("--cases and --per-class are exclusive")),
    };
    if n == 0 {
        return Err(CliError::input_msg("the dataset must hold at least one case per class"));
    }
    Ok(n)
}

fn write_patches(case: &SyntheticCase, out: &Path) -> CliResult<usize> {
    let tiles: Vec<_> = case.tiles.iter().map(|t| t.image.clone()).collect();
    let (patches, _) = foreground_patches(&tiles, &PatchPipeConfig::default())?;
    let dir = out.join(PATCH_DIR).join(case.score.digit().to_string());
    std::fs::create_dir_all(&dir).input(format!("creating {}", dir.display()))?;
    for (k, p) in patches.iter().enumerate() {
        let path = dir.join(format!("{}_{k}.png", case_dir_name(&case.gt.case_id)));
        her2kit_core::imgproc::write_png(p, &path).input(format!("writing {}", path.display()))?;
    }
    Ok(patches.len())
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<DatasetInfo> {
    let per_class = per_class(args)?;
    if args.tiles == 0 || args.tile_size < 128 {
        return Err(CliError::input_msg("need at least one tile of 128 px or more per case"));
    }
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(CliError::input_msg(format!("noise sigma {} must be finite and non-negative", args.noise)));
    }
    let config = SynthConfig {
        tile_width: args.tile_size,
        tile_height: args.tile_size,
        tile_count: args.tiles,
        noise_sigma: args.noise,
        ..SynthConfig::default()
    };
    std::fs::create_dir_all(&args.out).input(format!("creating {}", args.out.display()))?;
    let written = dataset_plan(per_class, args.seed)
        .into_par_iter()
        .map(|(id, score, case_seed)| -> CliResult<_> {
            let case = generate_case(id, score, &config, case_seed)?;
            write_case(&case, &args.out).input(format!("writing {}", args.out.display()))?;
            let patches = if args.emit_patches { write_patches(&case, &args.out)? } else { 0 };
            Ok((case.gt, patches))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let patches: usize = written.iter().map(|w| w.1).sum();
    let cases: Vec<_> = written.into_iter().map(|w| w.0).collect();
    write_ground_truth(cases.clone(), &args.out).input("writing gt.csv")?;
    let info = DatasetInfo {
        seed: args.seed,
        per_class,
        cases: cases.len(),
        tiles_per_case: config.tile_count,
        tile_width: config.tile_width,
        tile_height: config.tile_height,
        noise_sigma: config.noise_sigma,
        cell_density: config.cell_density,
        roi_scale: SYNTH_ROI_SCALE,
        patches,
    };
    let text = serde_json::to_string_pretty(&info).internal("serializing dataset info")?;
    std::fs::write(args.out.join(DATASET_FILE), text + "\n").input("writing dataset info")?;
    Ok(info)
}

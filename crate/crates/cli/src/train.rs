//! `train`: SAMME patch classifier from class-labeled patch directories.

use std::path::{Path, PathBuf};

use clap::Args;
use her2kit_core::imgproc::read_rgb;
use her2kit_core::imgproc::stain::StainModel;
use her2kit_core::patchpipe::features::extract_features;
use her2kit_core::patchpipe::samme::{model_to_json, train_samme, SammeModel, SammeParams};
use her2kit_core::Her2Score;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, ResultExt};

/// Share of samples used for fitting; the rest is held out.
pub const TRAIN_SHARE: f64 = 0.75;

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Class directories (named 0, 1+, 2+, 3+ or 0..3) or parents of such directories.
    #[arg(long = "patches", required = true, num_args = 1..)]
    pub patches: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = SammeParams::default().rounds)]
    pub rounds: usize,
    #[arg(long, default_value_t = SammeParams::default().max_depth)]
    pub depth: usize,
    /// Seed of the 75/25 split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn new(patches: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        let p = SammeParams::default();
        Self {
            patches: vec![patches.into()],
            out: out.into(),
            rounds: p.rounds,
            depth: p.max_depth,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: SammeModel,
    pub train_count: usize,
    pub held_out_count: usize,
    /// `None` when nothing was held out.
    pub held_out_accuracy: Option<f64>,
    /// Hex SHA-256 of the written model file.
    pub checksum: String,
}

fn class_of(dir: &Path) -> Option<Her2Score> {
    dir.file_name()?.to_str()?.parse().ok()
}

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "tif" | "tiff"))
}

fn sorted_entries(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .input(format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

/// Labeled patch files, sorted by path.
pub fn collect_patches(roots: &[PathBuf]) -> CliResult<Vec<(PathBuf, Her2Score)>> {
    let mut out = Vec::new();
    for root in roots {
        let class_dirs: Vec<(PathBuf, Her2Score)> = match class_of(root) {
            Some(c) => vec![(root.clone(), c)],
            None => sorted_entries(root)?
                .into_iter()
                .filter(|p| p.is_dir())
                .filter_map(|p| class_of(&p).map(|c| (p, c)))
                .collect(),
        };
        if class_dirs.is_empty() {
            return Err(CliError::input_msg(format!("{} holds no class directories", root.display())));
        }
        for (dir, class) in class_dirs {
            out.extend(sorted_entries(&dir)?.into_iter().filter(|p| is_image(p)).map(|p| (p, class)));
        }
    }
    out.sort();
    Ok(out)
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainReport> {
    if args.rounds == 0 || args.depth == 0 {
        return Err(CliError::input_msg("--rounds and --depth must be at least 1"));
    }
    let files = collect_patches(&args.patches)?;
    let classes: std::collections::BTreeSet<Her2Score> = files.iter().map(|f| f.1).collect();
    if classes.len() < 2 {
        return Err(CliError::input_msg(format!("need patches from at least 2 classes, found {}", classes.len())));
    }
    let stain = StainModel::default();
    let samples: Vec<(Vec<f64>, usize)> = files
        .par_iter()
        .map(|(path, class)| -> CliResult<(Vec<f64>, usize)> {
            let img = read_rgb(path).input(format!("reading {}", path.display()))?;
            let v = extract_features(&img, &stain).input(format!("features of {}", path.display()))?;
            Ok((v.0.to_vec(), class.index()))
        })
        .collect::<CliResult<_>>()?;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(args.seed));
    let n_train = ((samples.len() as f64 * TRAIN_SHARE).round() as usize).clamp(1, samples.len());
    let (train_idx, test_idx) = order.split_at(n_train);
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) { idx.iter().map(|&i| samples[i].clone()).unzip() };
    let (x, y) = pick(train_idx);
    let (tx, ty) = pick(test_idx);

    let params = SammeParams {
        rounds: args.rounds,
        max_depth: args.depth,
    };
    let model = train_samme(&x, &y, &params).input("training")?;
    let held_out_accuracy = if tx.is_empty() { None } else { Some(1.0 - model.error_rate(&tx, &ty)?) };
    let json = model_to_json(&model)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).internal(format!("creating {}", dir.display()))?;
    }
    std::fs::write(&args.out, &json).internal(format!("writing {}", args.out.display()))?;
    let report = TrainReport {
        train_count: x.len(),
        held_out_count: tx.len(),
        held_out_accuracy,
        checksum: hex_sha256(json.as_bytes()),
        model,
    };
    Ok(report)
}

//! `score`: one submission row per case directory.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use her2kit_core::charcurve::{score_slide_charcurve, CentroidModel, CharcurveConfig, RoiParams};
use her2kit_core::imgproc::stain::StainModel;
use her2kit_core::ingest::{render_submission, SubmissionFile};
use her2kit_core::patchpipe::samme::{load_model, SammeModel};
use her2kit_core::patchpipe::{score_slide_patchpipe, AggregationRule, PatchPipeConfig, PcmsMode};
use her2kit_core::pcms::{pcms_morphological_tiles, MorphParams};
use her2kit_core::synth::read_case_tiles;
use her2kit_core::{CaseId, Error, Her2Score, Prediction};
use rayon::prelude::*;

use crate::error::{CliError, CliResult, ResultExt};
use crate::synth::read_dataset_info;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Charcurve,
    Patchpipe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PcmsChoice {
    /// The method's own estimate: first curve sample for charcurve, patch shares for patchpipe.
    Native,
    /// Nucleus-anchored membrane coverage.
    Morphological,
}

#[derive(Args, Debug, Clone)]
pub struct ScoreArgs {
    /// Directory holding one sub-directory per case.
    #[arg(long)]
    pub images: PathBuf,
    /// Submission CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "charcurve")]
    pub method: Method,
    /// SAMME model (patchpipe, required) or centroid file (charcurve, optional).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Patch-to-slide aggregation rule: indus, mucs or visilab.
    #[arg(long, default_value = "mucs")]
    pub rule: AggregationRule,
    #[arg(long, value_enum, default_value = "native")]
    pub pcms: PcmsChoice,
    /// ROI scale relative to 20×; read from dataset.json when omitted.
    #[arg(long)]
    pub roi_scale: Option<f64>,
    /// Team name written into the submission.
    #[arg(long, default_value = "her2kit")]
    pub team: String,
}

impl ScoreArgs {
    pub fn new(images: impl Into<PathBuf>, out: impl Into<PathBuf>, method: Method) -> Self {
        Self {
            images: images.into(),
            out: out.into(),
            method,
            model: None,
            rule: AggregationRule::Mucs,
            pcms: PcmsChoice::Native,
            roi_scale: None,
            team: "her2kit".into(),
        }
    }
}

enum Scorer {
    Charcurve(CharcurveConfig, CentroidModel),
    Patchpipe(PatchPipeConfig, SammeModel),
}

/// Case directories sorted by case id; `case_` prefixes are dropped from the id.
pub fn case_dirs(root: &Path) -> CliResult<Vec<(CaseId, PathBuf)>> {
    let mut out: Vec<(CaseId, PathBuf)> = std::fs::read_dir(root)
        .input(format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n != crate::synth::PATCH_DIR))
        .map(|p| {
            let name = p.file_name().expect("named dir").to_string_lossy().to_string();
            let id = name.strip_prefix("case_").unwrap_or(&name).to_string();
            (CaseId::new(id), p)
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::input_msg(format!("no case directories in {}", root.display())));
    }
    Ok(out)
}

fn scorer(args: &ScoreArgs) -> CliResult<Scorer> {
    Ok(match args.method {
        Method::Charcurve => {
            let scale = match args.roi_scale {
                Some(s) => s,
                None => read_dataset_info(&args.images)?.map_or(1.0, |i| i.roi_scale),
            };
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(CliError::input_msg(format!("ROI scale {scale} must be positive")));
            }
            let model = match &args.model {
                Some(p) => CentroidModel::load(p).input(format!("reading {}", p.display()))?,
                None => CentroidModel::default(),
            };
            Scorer::Charcurve(CharcurveConfig { roi: RoiParams::at_scale(scale) }, model)
        }
        Method::Patchpipe => {
            let path = args.model.as_ref().ok_or_else(|| CliError::input_msg("--model is required for --method patchpipe"))?;
            let model = load_model(path).input(format!("reading {}", path.display()))?;
            let config = PatchPipeConfig {
                rule: args.rule,
                pcms_mode: match args.pcms {
                    PcmsChoice::Native => PcmsMode::Eq2,
                    PcmsChoice::Morphological => PcmsMode::Morphological,
                },
                ..PatchPipeConfig::default()
            };
            Scorer::Patchpipe(config, model)
        }
    })
}

/// A scored case, or the coverage problem that kept it from being scored.
fn score_case(scorer: &Scorer, pcms: PcmsChoice, dir: &Path) -> CliResult<Result<(Her2Score, f64, f64), String>> {
    let tiles = match read_case_tiles(dir) {
        Ok(t) => t,
        Err(Error::Coverage(m)) => return Ok(Err(m)),
        Err(e) => return Err(CliError::input(e).context(format!("reading {}", dir.display()))),
    };
    let scored = match scorer {
        Scorer::Charcurve(config, model) => score_slide_charcurve(&tiles, config, model).and_then(|s| {
            let p = match pcms {
                PcmsChoice::Native => s.pcms,
                PcmsChoice::Morphological => pcms_morphological_tiles(&tiles, &StainModel::default(), &MorphParams::default())?.pcms,
            };
            Ok((s.score, s.confidence, p))
        }),
        Scorer::Patchpipe(config, model) => score_slide_patchpipe(&tiles, model, config).map(|s| (s.score, s.confidence, s.pcms)),
    };
    match scored {
        Ok(s) => Ok(Ok(s)),
        Err(Error::Coverage(m)) => Ok(Err(m)),
        Err(e) => Err(CliError::from(e).context(format!("scoring {}", dir.display()))),
    }
}

pub fn score_dir(args: &ScoreArgs) -> CliResult<SubmissionFile> {
    let scorer = scorer(args)?;
    let cases = case_dirs(&args.images)?;
    let scored = cases
        .par_iter()
        .map(|(_, dir)| score_case(&scorer, args.pcms, dir))
        .collect::<CliResult<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut flags = Vec::new();
    for ((id, _), s) in cases.iter().zip(scored) {
        let (pred, flag) = match s {
            Ok((score, confidence, pcms)) => (Prediction::new(id.clone(), score, confidence.clamp(0.0, 1.0), Some(pcms.clamp(0.0, 100.0))), String::new()),
            Err(m) => (Prediction::new(id.clone(), Her2Score::Zero, 0.0, None), format!("coverage: {m}")),
        };
        rows.push(pred.map_err(CliError::internal)?);
        flags.push(flag);
    }
    Ok(SubmissionFile {
        team: args.team.clone(),
        rows,
        flags,
    })
}

pub fn cmd_score(args: &ScoreArgs) -> CliResult<SubmissionFile> {
    let sub = score_dir(args)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).internal(format!("creating {}", dir.display()))?;
    }
    std::fs::write(&args.out, render_submission(&sub)).internal(format!("writing {}", args.out.display()))?;
    Ok(sub)
}

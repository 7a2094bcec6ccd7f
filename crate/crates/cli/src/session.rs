//! Man-vs-Machine session plumbing: `serve`, `export-log`, `pyramid`, `export-fixtures`.

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use clap::Args;
use her2kit_core::ingest::{file_stem_for_team, fixtures, read_ground_truth, read_submission_dir, render_submission, SubmissionFile};
use her2kit_core::pyramid::{mosaic, write_case_pyramid, CaseManifest, DEFAULT_STAIN, TILE_SIZE};
use her2kit_core::synth::read_case_tiles;
use her2kit_service::{read_log, serve, ServiceConfig};

use crate::error::{CliError, CliResult, ResultExt};
use crate::evaluate::ScoringFlags;
use crate::score::case_dirs;

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Root of pre-generated tile pyramids (see `pyramid`).
    #[arg(long)]
    pub tiles: Option<PathBuf>,
    /// Ground-truth CSV; the bundled session ground truth when omitted.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Directory of machine submission CSVs shown next to rater results.
    #[arg(long)]
    pub machine: Option<PathBuf>,
    /// Append-only event log.
    #[arg(long)]
    pub log: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringFlags,
}

pub fn service_config(args: &ServeArgs) -> CliResult<ServiceConfig> {
    if let Some(root) = &args.tiles {
        if !root.is_dir() {
            return Err(CliError::input_msg(format!("tile root {} is not a directory", root.display())));
        }
    }
    let ground_truth = match &args.gt {
        Some(p) => read_ground_truth(p).input(format!("reading {}", p.display()))?,
        None => fixtures::load_fixtures().input("loading fixtures")?.mvm_gt,
    };
    let machine = match &args.machine {
        Some(d) => read_submission_dir(d).input(format!("reading {}", d.display()))?,
        None => Vec::new(),
    };
    Ok(ServiceConfig {
        tile_root: args.tiles.clone(),
        ground_truth,
        machine,
        log_path: args.log.clone(),
        eval: args.scoring.options(),
    })
}

pub fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    let config = service_config(args)?;
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new().internal("starting runtime")?;
    eprintln!("listening on http://{addr}");
    runtime
        .block_on(serve(config, addr))
        .map_err(|e| CliError::internal(anyhow::anyhow!("{e}")))
}

#[derive(Args, Debug, Clone)]
pub struct ExportLogArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Directory receiving one submission CSV per rater.
    #[arg(long)]
    pub out: PathBuf,
}

/// Each rater's latest score per case, as submissions.
pub fn cmd_export_log(args: &ExportLogArgs) -> CliResult<Vec<SubmissionFile>> {
    let state = read_log(&args.log).input(format!("reading {}", args.log.display()))?;
    std::fs::create_dir_all(&args.out).internal(format!("creating {}", args.out.display()))?;
    let mut subs = Vec::new();
    for rater in &state.raters {
        let rows = state.latest_predictions(rater);
        let sub = SubmissionFile {
            team: rater.clone(),
            flags: vec![String::new(); rows.len()],
            rows,
        };
        let path = args.out.join(format!("{}.csv", file_stem_for_team(rater)));
        std::fs::write(&path, render_submission(&sub)).internal(format!("writing {}", path.display()))?;
        subs.push(sub);
    }
    Ok(subs)
}

#[derive(Args, Debug, Clone)]
pub struct PyramidArgs {
    /// Dataset directory with one sub-directory per case.
    #[arg(long)]
    pub images: PathBuf,
    /// Tile root to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = TILE_SIZE)]
    pub tile_size: u32,
}

/// Writes one pyramid per case from its tiles laid side by side.
pub fn cmd_pyramid(args: &PyramidArgs) -> CliResult<Vec<CaseManifest>> {
    if args.tile_size == 0 {
        return Err(CliError::input_msg("--tile-size must be positive"));
    }
    let mut out = Vec::new();
    for (id, dir) in case_dirs(&args.images)? {
        let tiles = read_case_tiles(&dir).input(format!("reading {}", dir.display()))?;
        let img = mosaic(&tiles).input(format!("assembling {}", dir.display()))?;
        out.push(write_case_pyramid(&args.out, id.as_str(), &[(DEFAULT_STAIN, &img)], args.tile_size).internal(format!("writing pyramid for case {id}"))?);
    }
    Ok(out)
}

#[derive(Args, Debug, Clone)]
pub struct ExportFixturesArgs {
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_export_fixtures(args: &ExportFixturesArgs) -> CliResult<()> {
    fixtures::export_fixtures(&args.out).internal(format!("writing {}", args.out.display()))
}

//! `her2kit` command-line front end: contest evaluation, slide scoring, SAMME
//! training, synthetic data, Man-vs-Machine reporting and the scoring service.

pub mod error;
pub mod evaluate;
pub mod score;
pub mod session;
pub mod synth;
pub mod train;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult, EXIT_INPUT, EXIT_INTERNAL, EXIT_OK};
pub use evaluate::{cmd_evaluate, cmd_mvm, EvaluateArgs, MvmArgs};
pub use score::{cmd_score, Method, PcmsChoice, ScoreArgs};
pub use session::{cmd_export_fixtures, cmd_export_log, cmd_pyramid, cmd_serve, ExportFixturesArgs, ExportLogArgs, PyramidArgs, ServeArgs};
pub use synth::{cmd_synth, SynthArgs};
pub use train::{cmd_train, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "her2kit", version, about = "HER2 IHC scoring, contest evaluation and synthetic data")]
pub struct Cli {
    /// Worker threads for image work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the four leaderboards and a per-case report.
    Evaluate(EvaluateArgs),
    /// Score case image directories into a submission CSV.
    Score(ScoreArgs),
    /// Train a SAMME patch classifier.
    Train(TrainArgs),
    /// Generate a balanced synthetic dataset.
    Synth(SynthArgs),
    /// Pooled rater matrix and points summary.
    Mvm(MvmArgs),
    /// Run the scoring-session HTTP service.
    Serve(ServeArgs),
    /// Write the bundled reference tables to a directory.
    ExportFixtures(ExportFixturesArgs),
    /// Turn a session event log into per-rater submissions.
    ExportLog(ExportLogArgs),
    /// Build viewer tile pyramids from case images.
    Pyramid(PyramidArgs),
}

fn dispatch(command: &Command) -> CliResult<()> {
    match command {
        Command::Evaluate(a) => {
            let results = cmd_evaluate(a)?;
            print!("{}", evaluate::leaderboard_csv(&results, her2kit_core::eval::Criterion::Points)?);
        }
        Command::Score(a) => {
            let sub = cmd_score(a)?;
            let flagged = sub.flags.iter().filter(|f| !f.is_empty()).count();
            println!("scored {} cases ({flagged} flagged) into {}", sub.rows.len(), a.out.display());
        }
        Command::Train(a) => {
            let r = cmd_train(a)?;
            println!("trained {} rounds on {} patches ({} held out)", r.model.rounds.len(), r.train_count, r.held_out_count);
            match r.held_out_accuracy {
                Some(acc) => println!("held-out accuracy: {acc:.4}"),
                None => println!("held-out accuracy: n/a"),
            }
            println!("model sha256: {}", r.checksum);
        }
        Command::Synth(a) => {
            let info = cmd_synth(a)?;
            println!("wrote {} cases to {}", info.cases, a.out.display());
            if a.emit_patches {
                println!("wrote {} foreground patches to {}", info.patches, a.out.join(synth::PATCH_DIR).display());
            }
        }
        Command::Mvm(a) => {
            let report = cmd_mvm(a)?;
            print!("{}\n{}", report.table.to_csv(), report.summary_csv());
        }
        Command::Serve(a) => cmd_serve(a)?,
        Command::ExportFixtures(a) => {
            cmd_export_fixtures(a)?;
            println!("wrote fixtures to {}", a.out.display());
        }
        Command::ExportLog(a) => {
            let subs = cmd_export_log(a)?;
            println!("exported {} raters to {}", subs.len(), a.out.display());
        }
        Command::Pyramid(a) => {
            let m = cmd_pyramid(a)?;
            println!("wrote {} case pyramids to {}", m.len(), a.out.display());
        }
    }
    Ok(())
}

/// Runs `f` on a pool of `jobs` workers, or the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match jobs {
        None => f(),
        Some(0) => Err(CliError::input_msg("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(CliError::internal)?
            .install(f),
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Serve(a) => cmd_serve(a),
        other => with_jobs(cli.jobs, || dispatch(other)),
    }
}

/// Parses arguments, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

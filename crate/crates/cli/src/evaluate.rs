//! `evaluate` and `mvm`: leaderboards, per-case reports and the pooled rater matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use her2kit_core::eval::{common_cases, evaluate_submission, pooled_agreement_table, rank, Criterion, Eq1Mode, EvalOptions, PooledTable, SubmissionResult};
use her2kit_core::ingest::{fixtures, read_ground_truth, read_submission_dir, GroundTruthFile, SubmissionFile};
use her2kit_core::{CaseId, Prediction};

use crate::error::{CliError, CliResult, ResultExt};

#[derive(Args, Debug, Clone, Default)]
pub struct ScoringFlags {
    /// Weighted-confidence formula: corrected or literal.
    #[arg(long, default_value = "corrected")]
    pub eq1_mode: Eq1Mode,
    /// Multiply agreement plus bonus (instead of agreement alone) by the weighted confidence.
    #[arg(long)]
    pub combined_with_bonus: bool,
}

impl ScoringFlags {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            eq1_mode: self.eq1_mode,
            combined_includes_bonus: self.combined_with_bonus,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct InputPaths {
    /// Ground-truth CSV; omit together with --submissions to use the bundled fixtures.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Directory of submission CSVs, one per team.
    #[arg(long)]
    pub submissions: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: InputPaths,
    /// Output directory for the leaderboards and per_case.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringFlags,
    /// Evaluate only cases scored by every submission.
    #[arg(long)]
    pub common_cases: bool,
}

#[derive(Args, Debug, Clone)]
pub struct MvmArgs {
    #[command(flatten)]
    pub inputs: InputPaths,
    /// Output directory for pooled_matrix.csv and mvm_summary.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rank over every case each rater scored instead of the common case set.
    #[arg(long)]
    pub all_cases: bool,
}

#[derive(Debug, Clone)]
pub struct Inputs {
    pub gt: GroundTruthFile,
    pub submissions: Vec<SubmissionFile>,
}

pub fn load_inputs(paths: &InputPaths) -> CliResult<Inputs> {
    let (gt, submissions) = match (&paths.gt, &paths.submissions) {
        (None, None) => {
            let f = fixtures::load_fixtures().input("loading fixtures")?;
            (f.mvm_gt, f.mvm_submissions)
        }
        (Some(gt), Some(dir)) => {
            let gt = read_ground_truth(gt).input(format!("reading {}", gt.display()))?;
            let subs = read_submission_dir(dir).input(format!("reading {}", dir.display()))?;
            if subs.is_empty() {
                return Err(CliError::input_msg(format!("no submissions found in {}", dir.display())));
            }
            (gt, subs)
        }
        _ => return Err(CliError::input_msg("--gt and --submissions must be given together")),
    };
    for w in &gt.warnings {
        eprintln!("warning: {w}");
    }
    Ok(Inputs { gt, submissions })
}

/// Rows of a submission without a flag.
pub fn unflagged(sub: &SubmissionFile) -> Vec<Prediction> {
    sub.rows
        .iter()
        .enumerate()
        .filter(|(i, _)| sub.flags.get(*i).is_none_or(|f| f.is_empty()))
        .map(|(_, p)| p.clone())
        .collect()
}

/// Predictions per team, restricted to the common case set when asked.
fn prepared(inputs: &Inputs, common: bool) -> (GroundTruthFile, Vec<(String, Vec<Prediction>)>) {
    let mut sets: Vec<(String, Vec<Prediction>)> = inputs.submissions.iter().map(|s| (s.team.clone(), unflagged(s))).collect();
    if !common {
        return (inputs.gt.clone(), sets);
    }
    let keep = common_cases(sets.iter().map(|(_, p)| p.as_slice()));
    for (_, preds) in &mut sets {
        preds.retain(|p| keep.contains(&p.case_id));
    }
    (inputs.gt.restricted_to(&keep), sets)
}

pub fn evaluate_inputs(inputs: &Inputs, options: EvalOptions, common: bool) -> CliResult<Vec<SubmissionResult>> {
    let (gt, sets) = prepared(inputs, common);
    sets.iter()
        .map(|(team, preds)| evaluate_submission(team, &gt.rows, preds, options).input(format!("evaluating {team}")))
        .collect()
}

pub(crate) fn field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn leaderboard_csv(results: &[SubmissionResult], criterion: Criterion) -> CliResult<String> {
    let entries = rank(results, criterion)?;
    let cases: BTreeMap<&str, usize> = results.iter().map(|r| (r.team.as_str(), r.evaluated_case_count)).collect();
    let mut out = String::from("rank,team,value,evaluated_cases,note\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.rank,
            field(&e.team),
            criterion.render(e.value),
            cases[e.team.as_str()],
            field(e.tiebreak_note.as_deref().unwrap_or(""))
        );
    }
    Ok(out)
}

pub fn per_case_csv(inputs: &Inputs, results: &[SubmissionResult]) -> String {
    let truth: BTreeMap<&CaseId, _> = inputs.gt.rows.iter().map(|r| (&r.case_id, r.score)).collect();
    let mut out = String::from("team,case_id,ground_truth,prediction,confidence,agreement,bonus,weighted_confidence,combined\n");
    for (sub, result) in inputs.submissions.iter().zip(results) {
        let preds: BTreeMap<&CaseId, &Prediction> = sub.rows.iter().map(|p| (&p.case_id, p)).collect();
        for (case, ev) in &result.per_case {
            let p = preds[case];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6},{:.6}",
                field(&result.team),
                field(case.as_str()),
                truth[case],
                p.score,
                p.confidence,
                ev.agreement,
                ev.bonus.map(|b| b.to_string()).unwrap_or_default(),
                ev.weighted_confidence,
                ev.combined
            );
        }
    }
    out
}

pub fn leaderboard_file(criterion: Criterion) -> String {
    format!("leaderboard_{}.csv", criterion.name())
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).internal(format!("writing {}", path.display()))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<Vec<SubmissionResult>> {
    let inputs = load_inputs(&args.inputs)?;
    let results = evaluate_inputs(&inputs, args.scoring.options(), args.common_cases)?;
    std::fs::create_dir_all(&args.out).internal(format!("creating {}", args.out.display()))?;
    for c in Criterion::ALL {
        write(&args.out.join(leaderboard_file(c)), &leaderboard_csv(&results, c)?)?;
    }
    write(&args.out.join("per_case.csv"), &per_case_csv(&inputs, &results))?;
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub rank: usize,
    pub team: String,
    pub points: String,
    pub bonus: String,
    pub points_plus_bonus: String,
    pub cases: usize,
}

#[derive(Debug, Clone)]
pub struct MvmReport {
    pub table: PooledTable,
    pub summary: Vec<SummaryRow>,
}

impl MvmReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("rank,team,points,bonus,points_plus_bonus,cases\n");
        for r in &self.summary {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.rank, field(&r.team), r.points, r.bonus, r.points_plus_bonus, r.cases);
        }
        out
    }
}

pub fn cmd_mvm(args: &MvmArgs) -> CliResult<MvmReport> {
    let inputs = load_inputs(&args.inputs)?;
    let sets: Vec<(String, Vec<Prediction>)> = inputs.submissions.iter().map(|s| (s.team.clone(), unflagged(s))).collect();
    let table = pooled_agreement_table(&inputs.gt.rows, &sets);
    let results = evaluate_inputs(&inputs, EvalOptions::default(), !args.all_cases)?;
    let summary = rank(&results, Criterion::PointsPlusBonus)?
        .into_iter()
        .map(|e| {
            let r = results.iter().find(|r| r.team == e.team).expect("ranked team");
            SummaryRow {
                rank: e.rank,
                team: e.team.clone(),
                points: r.totals.points.to_string(),
                bonus: r.totals.bonus.to_string(),
                points_plus_bonus: r.totals.points_plus_bonus.to_string(),
                cases: r.evaluated_case_count,
            }
        })
        .collect();
    let report = MvmReport { table, summary };
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).internal(format!("creating {}", out.display()))?;
        write(&out.join("pooled_matrix.csv"), &report.table.to_csv())?;
        write(&out.join("mvm_summary.csv"), &report.summary_csv())?;
    }
    Ok(report)
}

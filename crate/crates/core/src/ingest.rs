//! Ground-truth and submission CSV parsing, rendering, and the bundled
//! Man-vs-Machine / training fixtures.
//!
//! Formats (header rows are mandatory and must match exactly):
//!
//! ```text
//! case_id,score,fish,pcms            ground truth
//! case_id,score,confidence,pcms      submission (optional trailing `flag` column)
//! ```
//!
//! An empty `pcms` cell means the value was not reported.

use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{check_confidence, check_pcms, CaseId, FishStatus, GroundTruthRecord, Her2Score, Prediction};

pub const GROUND_TRUTH_HEADER: [&str; 4] = ["case_id", "score", "fish", "pcms"];
pub const SUBMISSION_HEADER: [&str; 4] = ["case_id", "score", "confidence", "pcms"];
pub const FLAG_COLUMN: &str = "flag";

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFile {
    pub rows: Vec<GroundTruthRecord>,
    /// Non-fatal observations, e.g. FISH reported for a non-2+ case.
    pub warnings: Vec<String>,
}

impl GroundTruthFile {
    /// Keep only the listed cases.
    pub fn restricted_to(&self, cases: &std::collections::BTreeSet<CaseId>) -> GroundTruthFile {
        GroundTruthFile {
            rows: self.rows.iter().filter(|r| cases.contains(&r.case_id)).cloned().collect(),
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmissionFile {
    pub team: String,
    pub rows: Vec<Prediction>,
    /// Per-row flags from the optional `flag` column (empty string = unflagged).
    pub flags: Vec<String>,
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn records<R: Read>(input: R, expected: &[&str], optional_tail: Option<&str>) -> Result<(Vec<(u64, csv::StringRecord)>, bool)> {
    let mut rdr = reader(input);
    let mut iter = rdr.records();
    let header = match iter.next() {
        Some(h) => h.map_err(|e| csv_error(e, "header"))?,
        None => return Err(Error::format(1, "header", "missing header row")),
    };
    let names: Vec<&str> = header.iter().collect();
    let has_tail = matches!(optional_tail, Some(tail) if names.len() == expected.len() + 1 && names.last() == Some(&tail));
    let core = if has_tail { &names[..expected.len()] } else { &names[..] };
    if core != expected {
        return Err(Error::format(1, "header", format!("expected `{}`, found `{}`", expected.join(","), names.join(","))));
    }
    let width = names.len();
    let mut out = Vec::new();
    for rec in iter {
        let rec = rec.map_err(|e| csv_error(e, "row"))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != width {
            return Err(Error::format(line, "row", format!("expected {width} fields, found {}", rec.len())));
        }
        out.push((line, rec));
    }
    Ok((out, has_tail))
}

fn csv_error(e: csv::Error, field: &str) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::format(line, field, e.to_string())
}

fn parse_score(line: u64, tok: &str) -> Result<Her2Score> {
    tok.parse().map_err(|msg: String| Error::format(line, "score", msg))
}

fn parse_number(line: u64, field: &str, tok: &str) -> Result<f64> {
    tok.trim_end_matches('%')
        .parse::<f64>()
        .map_err(|_| Error::format(line, field, format!("not a number: {tok:?}")))
}

fn parse_optional_pcms(line: u64, tok: &str) -> Result<Option<f64>> {
    if tok.is_empty() {
        return Ok(None);
    }
    let v = parse_number(line, "pcms", tok)?;
    check_pcms(v).map(Some).map_err(|e| Error::format(line, "pcms", e.to_string()))
}

pub fn parse_ground_truth<R: Read>(input: R) -> Result<GroundTruthFile> {
    let (rows, _) = records(input, &GROUND_TRUTH_HEADER, None)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    let mut warnings = Vec::new();
    for (line, rec) in rows {
        let id = CaseId::new(&rec[0]);
        if id.as_str().is_empty() {
            return Err(Error::format(line, "case_id", "empty case id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::format(line, "case_id", format!("duplicate case {id}")));
        }
        let score = parse_score(line, &rec[1])?;
        let fish: FishStatus = rec[2].parse().map_err(|m: String| Error::format(line, "fish", m))?;
        let pcms = parse_optional_pcms(line, &rec[3])?;
        let record = GroundTruthRecord {
            case_id: id,
            score,
            fish,
            pcms,
        };
        warnings.extend(record.warning().map(|w| format!("line {line}: {w}")));
        out.push(record);
    }
    if out.is_empty() {
        return Err(Error::format(2, "row", "ground truth has no rows"));
    }
    Ok(GroundTruthFile { rows: out, warnings })
}

pub fn parse_submission<R: Read>(input: R, team: &str) -> Result<SubmissionFile> {
    let (rows, has_flag) = records(input, &SUBMISSION_HEADER, Some(FLAG_COLUMN))?;
    let mut seen = HashSet::new();
    let mut preds = Vec::with_capacity(rows.len());
    let mut flags = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let id = CaseId::new(&rec[0]);
        if id.as_str().is_empty() {
            return Err(Error::format(line, "case_id", "empty case id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::format(line, "case_id", format!("duplicate case {id}")));
        }
        let score = parse_score(line, &rec[1])?;
        let confidence = parse_number(line, "confidence", &rec[2])?;
        check_confidence(confidence).map_err(|e| Error::format(line, "confidence", e.to_string()))?;
        let pcms = parse_optional_pcms(line, &rec[3])?;
        preds.push(Prediction {
            case_id: id,
            score,
            confidence,
            pcms,
        });
        flags.push(if has_flag { rec[4].to_string() } else { String::new() });
    }
    Ok(SubmissionFile {
        team: team.to_string(),
        rows: preds,
        flags,
    })
}

fn render_number(v: f64) -> String {
    // Shortest representation that parses back to the same f64.
    format!("{v}")
}

pub fn render_ground_truth(file: &GroundTruthFile) -> String {
    let mut out = GROUND_TRUTH_HEADER.join(",");
    out.push('\n');
    for r in &file.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            quote(r.case_id.as_str()),
            r.score.digit(),
            r.fish.token(),
            r.pcms.map(render_number).unwrap_or_default()
        ));
    }
    out
}

pub fn render_submission(file: &SubmissionFile) -> String {
    let with_flags = file.flags.iter().any(|f| !f.is_empty());
    let mut out = SUBMISSION_HEADER.join(",");
    if with_flags {
        out.push(',');
        out.push_str(FLAG_COLUMN);
    }
    out.push('\n');
    for (i, p) in file.rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}",
            quote(p.case_id.as_str()),
            p.score.digit(),
            render_number(p.confidence),
            p.pcms.map(render_number).unwrap_or_default()
        ));
        if with_flags {
            out.push(',');
            out.push_str(&quote(file.flags.get(i).map_or("", String::as_str)));
        }
        out.push('\n');
    }
    out
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) || s != s.trim() {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Team name for a submission file: the file stem with `_` read as a space.
pub fn team_from_path(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().replace('_', " ")).unwrap_or_default()
}

/// File stem for a team name (inverse of [`team_from_path`]).
pub fn file_stem_for_team(team: &str) -> String {
    team.replace(' ', "_")
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruthFile> {
    let f = std::fs::File::open(path)?;
    parse_ground_truth(f)
}

pub fn read_submission(path: &Path) -> Result<SubmissionFile> {
    let f = std::fs::File::open(path)?;
    parse_submission(f, &team_from_path(path))
}

/// All `*.csv` submissions in a directory, ordered by file name.
pub fn read_submission_dir(dir: &Path) -> Result<Vec<SubmissionFile>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_submission(p)).collect()
}

pub mod fixtures {
    //! Reference tables bundled with the crate: the 52-case training ground
    //! truth, the 28-case Man-vs-Machine ground truth with six raters' scores,
    //! the pooled agreement matrix and the published Man-vs-Machine summary.
    //!
    //! None of the tables publish confidences or per-rater PCMS, so every
    //! fixture submission carries confidence 1.0 and an empty PCMS cell.
    //! Only agreement totals are reproducible from them.

    use super::*;

    pub const TRAINING_GT_CSV: &str = include_str!("../fixtures/training_gt.csv");
    pub const MVM_GT_CSV: &str = include_str!("../fixtures/mvm_gt.csv");
    pub const POOLED_MATRIX_CSV: &str = include_str!("../fixtures/pooled_matrix.csv");
    pub const PUBLISHED_SUMMARY_CSV: &str = include_str!("../fixtures/published_summary.csv");

    /// Raters in pooled-table order, with their bundled CSV.
    pub const SUBMISSIONS: [(&str, &str); 6] = [
        ("Expert 1", include_str!("../fixtures/submissions/Expert_1.csv")),
        ("Expert 2", include_str!("../fixtures/submissions/Expert_2.csv")),
        ("Expert 3", include_str!("../fixtures/submissions/Expert_3.csv")),
        ("Team Indus", include_str!("../fixtures/submissions/Team_Indus.csv")),
        ("VISILAB", include_str!("../fixtures/submissions/VISILAB.csv")),
        ("MUCS-1", include_str!("../fixtures/submissions/MUCS-1.csv")),
    ];

    pub const TRAINING_CASES: usize = 52;
    pub const MVM_CASES: usize = 28;
    /// Cases 1–15 were scored by the pathologists.
    pub const EXPERT_CASES: usize = 15;

    /// Environment variable that points at an on-disk fixture directory.
    pub const FIXTURES_ENV: &str = "HER2KIT_FIXTURES";

    #[derive(Debug, Clone)]
    pub struct Fixtures {
        pub training_gt: GroundTruthFile,
        pub mvm_gt: GroundTruthFile,
        pub mvm_submissions: Vec<SubmissionFile>,
    }

    impl Fixtures {
        /// Cases every bundled rater scored (the Man-vs-Machine event subset).
        pub fn event_cases(&self) -> std::collections::BTreeSet<CaseId> {
            crate::eval::common_cases(self.mvm_submissions.iter().map(|s| s.rows.as_slice()))
        }

        pub fn submission(&self, team: &str) -> Option<&SubmissionFile> {
            self.mvm_submissions.iter().find(|s| s.team == team)
        }
    }

    /// A row of the published Man-vs-Machine summary.
    #[derive(Debug, Clone, PartialEq)]
    pub struct PublishedSummary {
        pub team: String,
        pub points: crate::types::Points,
        pub bonus: crate::types::Points,
    }

    pub fn published_mvm_summary() -> Vec<PublishedSummary> {
        PUBLISHED_SUMMARY_CSV
            .lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                PublishedSummary {
                    team: f[0].to_string(),
                    points: crate::types::Points::parse(f[1]).expect("bundled table"),
                    bonus: crate::types::Points::parse(f[2]).expect("bundled table"),
                }
            })
            .collect()
    }

    /// Load the bundled fixtures, or the directory named by `HER2KIT_FIXTURES`.
    pub fn load_fixtures() -> Result<Fixtures> {
        match std::env::var_os(FIXTURES_ENV) {
            Some(dir) => load_fixtures_from(Path::new(&dir)),
            None => load_bundled(),
        }
    }

    pub fn load_bundled() -> Result<Fixtures> {
        let subs = SUBMISSIONS
            .iter()
            .map(|(team, text)| parse_submission(text.as_bytes(), team))
            .collect::<Result<Vec<_>>>()
            .map_err(integrity)?;
        assemble(
            parse_ground_truth(TRAINING_GT_CSV.as_bytes()).map_err(integrity)?,
            parse_ground_truth(MVM_GT_CSV.as_bytes()).map_err(integrity)?,
            subs,
        )
    }

    /// Load fixtures laid out as `training_gt.csv`, `mvm_gt.csv` and
    /// `submissions/<Team_Name>.csv`.
    pub fn load_fixtures_from(dir: &Path) -> Result<Fixtures> {
        let training = read_ground_truth(&dir.join("training_gt.csv")).map_err(integrity)?;
        let mvm = read_ground_truth(&dir.join("mvm_gt.csv")).map_err(integrity)?;
        let mut subs = Vec::new();
        for (team, _) in SUBMISSIONS {
            let path = dir.join("submissions").join(format!("{}.csv", file_stem_for_team(team)));
            subs.push(read_submission(&path).map_err(integrity)?);
        }
        assemble(training, mvm, subs)
    }

    /// Write the bundled fixtures to `dir` in the on-disk layout.
    pub fn export_fixtures(dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("submissions"))?;
        std::fs::write(dir.join("training_gt.csv"), TRAINING_GT_CSV)?;
        std::fs::write(dir.join("mvm_gt.csv"), MVM_GT_CSV)?;
        std::fs::write(dir.join("pooled_matrix.csv"), POOLED_MATRIX_CSV)?;
        std::fs::write(dir.join("published_summary.csv"), PUBLISHED_SUMMARY_CSV)?;
        for (team, text) in SUBMISSIONS {
            std::fs::write(dir.join("submissions").join(format!("{}.csv", file_stem_for_team(team))), text)?;
        }
        Ok(())
    }

    fn integrity(e: Error) -> Error {
        match e {
            Error::Integrity(_) => e,
            other => Error::Integrity(format!("fixture bundle: {other}")),
        }
    }

    fn assemble(training_gt: GroundTruthFile, mvm_gt: GroundTruthFile, mvm_submissions: Vec<SubmissionFile>) -> Result<Fixtures> {
        let check = |ok: bool, what: String| if ok { Ok(()) } else { Err(Error::Integrity(what)) };
        check(
            training_gt.rows.len() == TRAINING_CASES,
            format!("training ground truth has {} rows, expected {TRAINING_CASES}", training_gt.rows.len()),
        )?;
        check(
            mvm_gt.rows.len() == MVM_CASES,
            format!("Man-vs-Machine ground truth has {} rows, expected {MVM_CASES}", mvm_gt.rows.len()),
        )?;
        let known: HashSet<&CaseId> = mvm_gt.rows.iter().map(|r| &r.case_id).collect();
        for sub in &mvm_submissions {
            let expected = if sub.team.starts_with("Expert") { EXPERT_CASES } else { MVM_CASES };
            check(
                sub.rows.len() == expected,
                format!("{} covers {} cases, expected {expected}", sub.team, sub.rows.len()),
            )?;
            if let Some(p) = sub.rows.iter().find(|p| !known.contains(&p.case_id)) {
                return Err(Error::Integrity(format!("{} scores unknown case {}", sub.team, p.case_id)));
            }
        }
        Ok(Fixtures {
            training_gt,
            mvm_gt,
            mvm_submissions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GT_HEADER: &str = "case_id,score,fish,pcms\n";
    const SUB_HEADER: &str = "case_id,score,confidence,pcms\n";

    #[test]
    fn ground_truth_rows() {
        let f = parse_ground_truth(format!("{GT_HEADER}4,2,Negative,60\n1,0,N/A,0\n").as_bytes()).unwrap();
        assert_eq!(f.rows[0], GroundTruthRecord::new("4", Her2Score::Two, FishStatus::Negative, Some(60.0)).unwrap());
        assert_eq!(f.rows[1].fish, FishStatus::NotPerformed);
        assert_eq!(f.rows[1].pcms, Some(0.0));
        assert!(f.warnings.is_empty());
    }

    #[test]
    fn ground_truth_errors_name_line_and_field() {
        let err = parse_ground_truth(format!("{GT_HEADER}1,0,N/A,0\n9,5,N/A,70\n").as_bytes()).unwrap_err();
        match err {
            Error::Format { line, field, message } => {
                assert_eq!((line, field.as_str()), (3, "score"));
                assert_eq!(message, "unknown score 5");
            }
            other => panic!("unexpected {other}"),
        }
        let err = parse_ground_truth(format!("{GT_HEADER}1,0,N/A,101\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, ref field, .. } if field == "pcms"));
        let err = parse_ground_truth(format!("{GT_HEADER}1,0,N/A,0\n1,1,N/A,0\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, ref field, .. } if field == "case_id"));
        assert!(parse_ground_truth("case,score,fish,pcms\n1,0,N/A,0\n".as_bytes()).is_err());
        assert!(parse_ground_truth(GT_HEADER.as_bytes()).is_err());
    }

    #[test]
    fn fish_on_non_equivocal_case_warns() {
        let f = parse_ground_truth(format!("{GT_HEADER}1,3,Positive,90\n").as_bytes()).unwrap();
        assert_eq!(f.warnings.len(), 1);
    }

    #[test]
    fn crlf_quoting_and_plus_tokens() {
        let text = "case_id,score,fish,pcms\r\n\"7\",2+,\"Borderline amplified\",70\r\n";
        let f = parse_ground_truth(text.as_bytes()).unwrap();
        assert_eq!(f.rows[0].fish, FishStatus::Borderline);
        assert_eq!(f.rows[0].score, Her2Score::Two);
    }

    #[test]
    fn submission_rows() {
        let s = parse_submission(format!("{SUB_HEADER}7,2,0.83,40\n").as_bytes(), "T").unwrap();
        assert_eq!(s.rows[0], Prediction::new("7", Her2Score::Two, 0.83, Some(40.0)).unwrap());
        let err = parse_submission(format!("{SUB_HEADER}7,2,1.2,40\n").as_bytes(), "T").unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, ref field, .. } if field == "confidence"));
        let err = parse_submission(format!("{SUB_HEADER}7,2,0.5,40\n7,2,0.5,40\n").as_bytes(), "T").unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }));
    }

    #[test]
    fn submission_flag_column() {
        let text = "case_id,score,confidence,pcms,flag\n1,3,0.9,80,\n2,0,0,0,coverage\n";
        let s = parse_submission(text.as_bytes(), "T").unwrap();
        assert_eq!(s.flags, ["", "coverage"]);
        assert_eq!(parse_submission(render_submission(&s).as_bytes(), "T").unwrap(), s);
    }

    #[test]
    fn team_names_from_paths() {
        assert_eq!(team_from_path(Path::new("/x/Team_Indus.csv")), "Team Indus");
        assert_eq!(file_stem_for_team("Expert 1"), "Expert_1");
    }

    #[test]
    fn bundled_fixtures_load() {
        let f = fixtures::load_bundled().unwrap();
        assert_eq!(f.training_gt.rows.len(), 52);
        assert_eq!(f.mvm_gt.rows.len(), 28);
        let case7 = f.mvm_gt.rows.iter().find(|r| r.case_id.as_str() == "7").unwrap();
        assert_eq!((case7.score, case7.fish), (Her2Score::Two, FishStatus::Borderline));
        assert_eq!(f.mvm_submissions.len(), 6);
        assert_eq!(f.submission("Expert 3").unwrap().rows.len(), 15);
        assert_eq!(f.submission("Team Indus").unwrap().rows.len(), 28);
        assert_eq!(f.event_cases().len(), 15);
        assert!(f.training_gt.warnings.is_empty());
    }

    #[test]
    fn corrupted_bundle_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::export_fixtures(dir.path()).unwrap();
        assert!(fixtures::load_fixtures_from(dir.path()).is_ok());
        let path = dir.path().join("training_gt.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(fixtures::load_fixtures_from(dir.path()), Err(Error::Integrity(_))));
        std::fs::write(&path, "garbage").unwrap();
        assert!(matches!(fixtures::load_fixtures_from(dir.path()), Err(Error::Integrity(_))));
    }
}

//! Contest evaluation: agreement points, PCMS bonus, weighted confidence,
//! combined points, per-submission totals and leaderboards.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_confidence, CaseId, GroundTruthRecord, Her2Score, Points, Prediction};

/// Agreement matrix in half points, rows = ground truth, columns = prediction.
const AGREEMENT_HALVES: [[i64; 4]; 4] = [
    [30, 30, 20, 0],
    [30, 30, 20, 0],
    [5, 5, 30, 10],
    [0, 0, 20, 30],
];

/// Maximum agreement points a single case can earn.
pub const MAX_CASE_POINTS: Points = Points::whole(15);

pub fn agreement_points(gt: Her2Score, pred: Her2Score) -> Points {
    Points::from_halves(AGREEMENT_HALVES[gt.index()][pred.index()])
}

/// PCMS bonus for one case.
///
/// Returns `None` only when the score is correct but a PCMS value the tier
/// needs is missing, in which case the bonus cannot be determined.
pub fn bonus_points(gt: &GroundTruthRecord, pred: &Prediction) -> Option<Points> {
    if pred.score != gt.score {
        return Some(Points::ZERO);
    }
    match gt.score {
        Her2Score::Zero => Some(Points::ZERO),
        Her2Score::One => {
            let truth = gt.pcms?;
            if truth < 3.0 {
                return Some(Points::whole(1));
            }
            let dev = (pred.pcms? - truth).abs();
            Some(if dev <= 2.0 { Points::whole(3) } else { Points::ZERO })
        }
        Her2Score::Two | Her2Score::Three => {
            let dev = (pred.pcms? - gt.pcms?).abs();
            Some(if dev <= 5.0 {
                Points::whole(5)
            } else if dev <= 10.0 {
                Points::from_halves(5)
            } else {
                Points::ZERO
            })
        }
    }
}

/// How the weighted-confidence formula is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eq1Mode {
    /// Correct branch `(1 + 2c - c²)/2`: spans [0, 1] and meets the wrong branch at c = 0.
    #[default]
    Corrected,
    /// Correct branch `(2c - c²)/2` exactly as printed.
    Literal,
}

impl std::str::FromStr for Eq1Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "corrected" => Ok(Eq1Mode::Corrected),
            "literal" => Ok(Eq1Mode::Literal),
            other => Err(format!("unknown weighted-confidence mode {other}")),
        }
    }
}

pub fn weighted_confidence(correct: bool, c: f64, mode: Eq1Mode) -> Result<f64> {
    let c = check_confidence(c)?;
    Ok(if !correct {
        (1.0 - c * c) / 2.0
    } else {
        match mode {
            Eq1Mode::Corrected => (1.0 + 2.0 * c - c * c) / 2.0,
            Eq1Mode::Literal => (2.0 * c - c * c) / 2.0,
        }
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub eq1_mode: Eq1Mode,
    /// Combined = (agreement + bonus) × w_c instead of agreement × w_c.
    pub combined_includes_bonus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEvaluation {
    pub agreement: Points,
    /// `None` when the bonus tier could not be decided (PCMS not reported).
    pub bonus: Option<Points>,
    pub weighted_confidence: f64,
    pub combined: f64,
}

pub fn evaluate_case(gt: &GroundTruthRecord, pred: &Prediction, opts: EvalOptions) -> Result<CaseEvaluation> {
    if gt.case_id != pred.case_id {
        return Err(Error::Identifier(format!(
            "prediction for case {} evaluated against ground truth case {}",
            pred.case_id, gt.case_id
        )));
    }
    let agreement = agreement_points(gt.score, pred.score);
    let bonus = bonus_points(gt, pred);
    let w_c = weighted_confidence(gt.score == pred.score, pred.confidence, opts.eq1_mode)?;
    let base = if opts.combined_includes_bonus {
        agreement + bonus.unwrap_or(Points::ZERO)
    } else {
        agreement
    };
    Ok(CaseEvaluation {
        agreement,
        bonus,
        weighted_confidence: w_c,
        combined: base.as_f64() * w_c,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub points: Points,
    pub bonus: Points,
    pub points_plus_bonus: Points,
    pub weighted_confidence: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionResult {
    pub team: String,
    pub per_case: BTreeMap<CaseId, CaseEvaluation>,
    pub totals: Totals,
    pub evaluated_case_count: usize,
    /// False when at least one case's bonus could not be decided.
    pub bonus_complete: bool,
    /// Ground-truth cases the submission did not score.
    pub skipped: Vec<CaseId>,
}

impl SubmissionResult {
    pub fn criterion_value(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Points => self.totals.points.as_f64(),
            Criterion::PointsPlusBonus => self.totals.points_plus_bonus.as_f64(),
            Criterion::WeightedConfidence => self.totals.weighted_confidence,
            Criterion::Combined => self.totals.combined,
        }
    }
}

/// Score one submission against the ground truth. Ground-truth cases without
/// a prediction are skipped and listed in `skipped`.
pub fn evaluate_submission(
    team: &str,
    gt: &[GroundTruthRecord],
    predictions: &[Prediction],
    opts: EvalOptions,
) -> Result<SubmissionResult> {
    let by_case: BTreeMap<&CaseId, &GroundTruthRecord> = gt.iter().map(|r| (&r.case_id, r)).collect();
    let mut seen = HashSet::new();
    let mut per_case = BTreeMap::new();
    for p in predictions {
        if !seen.insert(&p.case_id) {
            return Err(Error::format(0, "case_id", format!("duplicate case {} in submission {team}", p.case_id)));
        }
        let truth = by_case
            .get(&p.case_id)
            .ok_or_else(|| Error::Identifier(format!("submission {team} scores unknown case {}", p.case_id)))?;
        per_case.insert(p.case_id.clone(), evaluate_case(truth, p, opts)?);
    }

    let mut totals = Totals::default();
    let mut bonus_complete = true;
    for ev in per_case.values() {
        totals.points += ev.agreement;
        match ev.bonus {
            Some(b) => totals.bonus += b,
            None => bonus_complete = false,
        }
        totals.weighted_confidence += ev.weighted_confidence;
        totals.combined += ev.combined;
    }
    totals.points_plus_bonus = totals.points + totals.bonus;

    let skipped = by_case.keys().filter(|id| !per_case.contains_key(**id)).map(|id| (*id).clone()).collect();
    Ok(SubmissionResult {
        team: team.to_string(),
        evaluated_case_count: per_case.len(),
        per_case,
        totals,
        bonus_complete,
        skipped,
    })
}

/// Case ids scored by every one of the given prediction sets.
pub fn common_cases<'a, I>(sets: I) -> BTreeSet<CaseId>
where
    I: IntoIterator<Item = &'a [Prediction]>,
{
    let mut iter = sets.into_iter();
    let Some(first) = iter.next() else {
        return BTreeSet::new();
    };
    let mut common: BTreeSet<CaseId> = first.iter().map(|p| p.case_id.clone()).collect();
    for set in iter {
        let ids: HashSet<&CaseId> = set.iter().map(|p| &p.case_id).collect();
        common.retain(|c| ids.contains(c));
    }
    common
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Points,
    PointsPlusBonus,
    WeightedConfidence,
    Combined,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Points,
        Criterion::PointsPlusBonus,
        Criterion::WeightedConfidence,
        Criterion::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Points => "points",
            Criterion::PointsPlusBonus => "points_plus_bonus",
            Criterion::WeightedConfidence => "weighted_confidence",
            Criterion::Combined => "combined",
        }
    }

    /// Render a value of this criterion: points with one decimal when
    /// fractional, confidence-derived values with three decimals.
    pub fn render(self, value: f64) -> String {
        match self {
            Criterion::Points | Criterion::PointsPlusBonus => {
                Points::from_halves((value * 2.0).round() as i64).to_string()
            }
            Criterion::WeightedConfidence | Criterion::Combined => format!("{value:.3}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub team: String,
    pub value: f64,
    pub tiebreak_note: Option<String>,
}

/// Rank submissions by one criterion. Ties on points are broken by bonus
/// total; any remaining tie falls back to team name and is annotated.
pub fn rank(results: &[SubmissionResult], criterion: Criterion) -> Result<Vec<LeaderboardEntry>> {
    if results.is_empty() {
        return Err(Error::EmptyCollection("no submissions to rank"));
    }
    let mut order: Vec<&SubmissionResult> = results.iter().collect();
    let by_bonus = criterion == Criterion::Points;
    order.sort_by(|a, b| {
        let primary = b.criterion_value(criterion).total_cmp(&a.criterion_value(criterion));
        let bonus = if by_bonus {
            b.totals.bonus.cmp(&a.totals.bonus)
        } else {
            std::cmp::Ordering::Equal
        };
        primary.then(bonus).then_with(|| a.team.cmp(&b.team))
    });

    let tied = |a: &SubmissionResult, b: &SubmissionResult| a.criterion_value(criterion) == b.criterion_value(criterion);
    let entries = order
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let neighbours = [i.checked_sub(1), Some(i + 1)];
            let mut note = None;
            for j in neighbours.into_iter().flatten() {
                let Some(other) = order.get(j) else { continue };
                if !tied(r, other) {
                    continue;
                }
                let text = if by_bonus && r.totals.bonus != other.totals.bonus {
                    format!("tied on points with {}; ordered by bonus ({} vs {})", other.team, r.totals.bonus, other.totals.bonus)
                } else {
                    format!("tied with {}; ordered by team name", other.team)
                };
                note = Some(match note {
                    None => text,
                    Some(prev) => format!("{prev}; {text}"),
                });
            }
            LeaderboardEntry {
                rank: i + 1,
                team: r.team.clone(),
                value: r.criterion_value(criterion),
                tiebreak_note: note,
            }
        })
        .collect();
    Ok(entries)
}

/// Case-by-rater score matrix in the layout of the pooled agreement table.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledTable {
    pub raters: Vec<String>,
    pub rows: Vec<PooledRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledRow {
    pub case_id: CaseId,
    pub ground_truth: Her2Score,
    pub fish: crate::types::FishStatus,
    pub scores: Vec<Option<Her2Score>>,
}

pub fn pooled_agreement_table(gt: &[GroundTruthRecord], submissions: &[(String, Vec<Prediction>)]) -> PooledTable {
    let lookups: Vec<BTreeMap<&CaseId, Her2Score>> = submissions
        .iter()
        .map(|(_, preds)| preds.iter().map(|p| (&p.case_id, p.score)).collect())
        .collect();
    let mut records: Vec<&GroundTruthRecord> = gt.iter().collect();
    records.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let rows = records
        .into_iter()
        .map(|r| PooledRow {
            case_id: r.case_id.clone(),
            ground_truth: r.score,
            fish: r.fish,
            scores: lookups.iter().map(|m| m.get(&r.case_id).copied()).collect(),
        })
        .collect();
    PooledTable {
        raters: submissions.iter().map(|(t, _)| t.clone()).collect(),
        rows,
    }
}

impl PooledTable {
    /// Canonical CSV rendering: scores as `0`/`1+`/`2+`/`3+`, `-` for blanks
    /// and for FISH not performed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("Case,Ground Truth,FISH Results");
        for r in &self.raters {
            out.push(',');
            out.push_str(r);
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{},{},{}", row.case_id, row.ground_truth, row.fish.table_token()));
            for s in &row.scores {
                out.push(',');
                out.push_str(s.map_or("-", Her2Score::label));
            }
            out.push('\n');
        }
        out
    }
}

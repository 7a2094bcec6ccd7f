//! Contest data model shared by every module: scores, case identifiers,
//! ground-truth records, predictions and half-point arithmetic.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// IHC HER2 score, ordered `0 < 1+ < 2+ < 3+`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Her2Score {
    Zero,
    One,
    Two,
    Three,
}

impl Her2Score {
    pub const ALL: [Her2Score; 4] = [Her2Score::Zero, Her2Score::One, Her2Score::Two, Her2Score::Three];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Label as printed in result tables: `0`, `1+`, `2+`, `3+`.
    pub fn label(self) -> &'static str {
        match self {
            Her2Score::Zero => "0",
            Her2Score::One => "1+",
            Her2Score::Two => "2+",
            Her2Score::Three => "3+",
        }
    }

    /// Bare digit used in CSV files.
    pub fn digit(self) -> char {
        (b'0' + self as u8) as char
    }
}

impl fmt::Display for Her2Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Her2Score {
    type Err = String;

    /// Accepts `0`..`3` and `1+`..`3+` (surrounding whitespace ignored).
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "0" | "0+" => Ok(Her2Score::Zero),
            "1" | "1+" => Ok(Her2Score::One),
            "2" | "2+" => Ok(Her2Score::Two),
            "3" | "3+" => Ok(Her2Score::Three),
            other => Err(format!("unknown score {other}")),
        }
    }
}

impl Serialize for Her2Score {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Her2Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Int(i) if (0..4).contains(&i) => Her2Score::from_index(i as usize),
            Raw::Int(i) => return Err(serde::de::Error::custom(format!("unknown score {i}"))),
            Raw::Text(t) => Some(t.parse().map_err(serde::de::Error::custom)?),
        };
        Ok(parsed.expect("index checked"))
    }
}

/// FISH outcome recorded alongside the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FishStatus {
    Negative,
    Positive,
    Borderline,
    NotPerformed,
}

impl FishStatus {
    /// Token used in ground-truth CSV files.
    pub fn token(self) -> &'static str {
        match self {
            FishStatus::Negative => "Negative",
            FishStatus::Positive => "Positive",
            FishStatus::Borderline => "Borderline amplified",
            FishStatus::NotPerformed => "N/A",
        }
    }

    /// Token used in the pooled agreement table (`-` when not performed).
    pub fn table_token(self) -> &'static str {
        match self {
            FishStatus::NotPerformed => "-",
            other => other.token(),
        }
    }
}

impl FromStr for FishStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "negative" => Ok(FishStatus::Negative),
            "positive" => Ok(FishStatus::Positive),
            "borderline" | "borderline amplified" => Ok(FishStatus::Borderline),
            "n/a" | "na" | "-" | "" | "not performed" | "not_performed" => Ok(FishStatus::NotPerformed),
            _ => Err(format!("unknown FISH status {t}")),
        }
    }
}

/// Opaque case identifier. Purely numeric identifiers sort numerically,
/// everything else lexicographically after them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseId(String);

impl CaseId {
    pub fn new(id: impl Into<String>) -> Self {
        CaseId(id.into().trim().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric(&self) -> Option<u64> {
        self.0.parse().ok()
    }
}

impl Ord for CaseId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for CaseId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CaseId {
    fn from(s: &str) -> Self {
        CaseId::new(s)
    }
}

impl From<String> for CaseId {
    fn from(s: String) -> Self {
        CaseId::new(s)
    }
}

impl From<u32> for CaseId {
    fn from(n: u32) -> Self {
        CaseId(n.to_string())
    }
}

/// Contest points stored as an exact count of half points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Points(i64);

impl Points {
    pub const ZERO: Points = Points(0);

    pub const fn from_halves(halves: i64) -> Self {
        Points(halves)
    }

    pub const fn whole(p: i64) -> Self {
        Points(p * 2)
    }

    pub fn halves(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// Parse a decimal that must be a multiple of 0.5.
    pub fn parse(s: &str) -> Option<Self> {
        let v: f64 = s.trim().parse().ok()?;
        let halves = v * 2.0;
        (halves.fract() == 0.0 && halves.is_finite()).then_some(Points(halves as i64))
    }
}

impl fmt::Display for Points {
    /// One decimal when fractional, none otherwise (`220`, `212.5`).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{:.1}", self.as_f64())
        }
    }
}

impl Add for Points {
    type Output = Points;
    fn add(self, rhs: Points) -> Points {
        Points(self.0 + rhs.0)
    }
}

impl AddAssign for Points {
    fn add_assign(&mut self, rhs: Points) {
        self.0 += rhs.0;
    }
}

impl Sum for Points {
    fn sum<I: Iterator<Item = Points>>(iter: I) -> Points {
        iter.fold(Points::ZERO, Add::add)
    }
}

impl Serialize for Points {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Points {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Points::parse(&v.to_string()).ok_or_else(|| serde::de::Error::custom("points must be a multiple of 0.5"))
    }
}

pub fn check_pcms(v: f64) -> Result<f64> {
    if v.is_finite() && (0.0..=100.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Range {
            field: "pcms",
            value: v,
            expected: "[0, 100]",
        })
    }
}

pub fn check_confidence(v: f64) -> Result<f64> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Range {
            field: "confidence",
            value: v,
            expected: "[0, 1]",
        })
    }
}

/// One ground-truth row. `pcms` is `None` when the source does not publish it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub case_id: CaseId,
    pub score: Her2Score,
    pub fish: FishStatus,
    pub pcms: Option<f64>,
}

impl GroundTruthRecord {
    pub fn new(case_id: impl Into<CaseId>, score: Her2Score, fish: FishStatus, pcms: Option<f64>) -> Result<Self> {
        if let Some(p) = pcms {
            check_pcms(p)?;
        }
        Ok(Self {
            case_id: case_id.into(),
            score,
            fish,
            pcms,
        })
    }

    /// FISH is normally only reported for equivocal (2+) cases.
    pub fn warning(&self) -> Option<String> {
        (self.fish != FishStatus::NotPerformed && self.score != Her2Score::Two).then(|| {
            format!(
                "case {}: FISH status {} reported for a {} case",
                self.case_id,
                self.fish.token(),
                self.score
            )
        })
    }
}

/// One submitted prediction. `pcms` is `None` when the rater did not report it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub case_id: CaseId,
    pub score: Her2Score,
    pub confidence: f64,
    pub pcms: Option<f64>,
}

impl Prediction {
    pub fn new(case_id: impl Into<CaseId>, score: Her2Score, confidence: f64, pcms: Option<f64>) -> Result<Self> {
        check_confidence(confidence)?;
        if let Some(p) = pcms {
            check_pcms(p)?;
        }
        Ok(Self {
            case_id: case_id.into(),
            score,
            confidence,
            pcms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_tokens_normalize() {
        for (tok, s) in [("0", Her2Score::Zero), ("1", Her2Score::One), ("2+", Her2Score::Two), (" 3+ ", Her2Score::Three)] {
            assert_eq!(tok.parse::<Her2Score>().unwrap(), s);
        }
        assert_eq!("5".parse::<Her2Score>().unwrap_err(), "unknown score 5");
        assert!(Her2Score::Zero < Her2Score::One && Her2Score::Two < Her2Score::Three);
    }

    #[test]
    fn case_ids_sort_numerically() {
        let mut ids: Vec<CaseId> = ["10", "2", "b", "1", "a"].into_iter().map(CaseId::from).collect();
        ids.sort();
        let got: Vec<&str> = ids.iter().map(CaseId::as_str).collect();
        assert_eq!(got, ["1", "2", "10", "a", "b"]);
    }

    #[test]
    fn points_render() {
        assert_eq!(Points::whole(220).to_string(), "220");
        assert_eq!(Points::from_halves(425).to_string(), "212.5");
        assert_eq!(Points::parse("2.5"), Some(Points::from_halves(5)));
        assert_eq!(Points::parse("2.25"), None);
    }

    #[test]
    fn score_json_accepts_ints_and_labels() {
        let a: Her2Score = serde_json::from_str("2").unwrap();
        let b: Her2Score = serde_json::from_str("\"2+\"").unwrap();
        assert_eq!(a, b);
        assert!(serde_json::from_str::<Her2Score>("7").is_err());
        assert_eq!(serde_json::to_string(&Her2Score::Three).unwrap(), "\"3+\"");
    }

    #[test]
    fn prediction_ranges() {
        assert!(Prediction::new("7", Her2Score::Two, 1.2, Some(40.0)).is_err());
        assert!(Prediction::new("7", Her2Score::Two, 0.83, Some(100.5)).is_err());
        assert!(Prediction::new("7", Her2Score::Two, 0.83, Some(40.0)).is_ok());
    }
}

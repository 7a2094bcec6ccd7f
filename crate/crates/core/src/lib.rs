//! Core algorithms for HER2 immunohistochemistry scoring.
//!
//! * [`eval`]: contest evaluation (agreement, bonus, weighted confidence, leaderboards)
//! * [`ingest`]: ground-truth / submission CSV formats and the bundled reference fixtures
//! * [`imgproc`]: colour spaces, optical density, stain unmixing, thresholds, morphology, texture
//! * [`charcurve`]: percentage-saturation characteristic-curve scorer
//! * [`patchpipe`]: patch tiling, handcrafted features, SAMME boosting, slide aggregation
//! * [`pcms`]: morphological and class-prior PCMS estimation
//! * [`synth`]: deterministic synthetic IHC tiles and cases
//! * [`pyramid`]: tile pyramids for slide viewers

pub mod error;
pub mod charcurve;
pub mod eval;
pub mod imgproc;
pub mod synth;
pub mod ingest;
pub mod patchpipe;
pub mod pcms;
pub mod pyramid;
pub mod types;

pub use error::{Error, Result};
pub use eval::{
    agreement_points, bonus_points, evaluate_case, evaluate_submission, rank, weighted_confidence, CaseEvaluation,
    Criterion, Eq1Mode, EvalOptions, LeaderboardEntry, SubmissionResult,
};
pub use ingest::{GroundTruthFile, SubmissionFile};
pub use types::{CaseId, FishStatus, GroundTruthRecord, Her2Score, Points, Prediction};

//! Statistical battery and normative database.
//!
//! Four pieces, layered bottom-up:
//!
//! - [`dist`]: self-contained special functions (log-gamma, regularized
//!   incomplete beta) and the Student-t / F CDFs and tail probabilities
//!   built on them.
//! - [`hypothesis`]: one-way ANOVA, unpaired t-test (pooled or Welch), and
//!   the regression slope test, all reporting [`TestResult`]s with exact
//!   handling of degenerate variance cases.
//! - [`normative`]: per-(layer, sector) population mean/SD tables with a
//!   pinned JSON format, bundled instrument reference series, subject
//!   z-score comparison, and population aggregation.
//! - [`population`]: the synthetic-cohort recovery check that drives the
//!   whole pipeline end to end against injected, known covariate effects.

use crate::segmentation::SegmentationError;
use crate::thickness::{LayerKey, ThicknessError};
use crate::volume::VolumeError;

pub mod dist;
pub mod hypothesis;
pub mod normative;
pub mod population;

pub use dist::{f_cdf, f_tail, inc_beta, ln_gamma, t_cdf, t_two_sided_p};
pub use hypothesis::{
    anova_oneway, slope_test, ttest_unpaired, EffectDirection, SlopeFit, TVariance, TestResult,
};
pub use normative::{
    builtin, builtin_names, compare_to_normative, population_aggregate, AggregateStatistic,
    CellClass, ComparisonCell, ComparisonReport, NormCell, NormativeTable, ZThresholds,
    DEFAULT_NORMATIVE, VARIABILITY_NORMATIVE,
};
pub use population::{
    synthetic_population_check, CellOutcome, CellRole, CovariateRecovery, PopulationConfig,
    PopulationReport, Sex, AGE_LAYER, DETECTION_P, NULL_P, NULL_PASS_FRACTION, SEX_LAYER,
};

/// Errors from the statistics and normative-database layer.
#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {needed} {what}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("F is undefined: no variance within or between groups")]
    UndefinedF,
    #[error("t is undefined: both samples are constant and equal")]
    UndefinedT,
    #[error("regression x values are all equal")]
    DegenerateX,
    #[error("x and y lengths differ ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid normative table: {0}")]
    Norm(String),
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("key mismatch: {0}")]
    KeyMismatch(String),
    #[error("layer {layer} sector {sector} is empty")]
    EmptySector { layer: LayerKey, sector: u8 },
    #[error("invalid population config: {0}")]
    Population(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Thickness(#[from] ThicknessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

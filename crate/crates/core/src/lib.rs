//! Competitive balance in football leagues and the effect of a scoring-rule
//! change on it.
//!
//! The crate turns match logs into season tables ([`league`]), computes
//! balance indices ([`metrics`]), assembles a leagues × seasons panel
//! ([`panel`]), and estimates the effect of a rule change with a nested
//! synthetic control ([`scm`]), robustness refits ([`inference`]) and a
//! difference-in-differences regression ([`did`]). [`sim`] generates seeded
//! synthetic panels with known effects.

pub mod config;
pub mod did;
pub mod inference;
pub mod league;
pub mod metrics;
pub mod panel;
pub mod scm;
pub mod sim;

pub use config::AnalysisConfig;
pub use league::{MatchRecord, PointsRule, RuleSchedule, SeasonTable};
pub use panel::{OutcomeKind, PanelDataset, PredictorSpec};
pub use scm::{ScmConfig, ScmFit};

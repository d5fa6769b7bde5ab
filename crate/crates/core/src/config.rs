//! Declarative analysis configuration (TOML).
//!
//! ```toml
//! matches = "matches.csv"
//! outcome = "dcb"
//! treated = "ENG"
//! treatment_year = 1981
//! donors = ["FRA", "ESP", "NED", "ITA", "GER"]
//! lag_gap = 2
//! covariates = ["avg_win_share", "avg_draw_share", "team_count"]
//! did_covariates = ["avg_draw_share", "team_count"]
//! window = { first = 1963, last = 1993 }
//! seed = 42
//!
//! [rule_schedule]
//! ENG = 1981
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::league::RuleSchedule;
use crate::panel::{default_donors, CovariateSet, OutcomeKind, PanelDataset, PanelError, PredictorSpec};
use crate::scm::{OptimizerOptions, ScmConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("window first {first} is after last {last}")]
    Window { first: i32, last: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub first: i32,
    pub last: i32,
}

fn default_outcome() -> String {
    "dcb".into()
}
fn default_treated() -> String {
    "ENG".into()
}
fn default_treatment_year() -> i32 {
    1981
}
fn default_lag_gap() -> u32 {
    2
}
fn default_covariates() -> Vec<String> {
    CovariateSet::ALL.names().into_iter().map(String::from).collect()
}
fn default_did_covariates() -> Vec<String> {
    vec!["avg_draw_share".into(), "team_count".into()]
}
fn default_window() -> Option<Window> {
    Some(Window {
        first: 1963,
        last: 1993,
    })
}
fn default_seed() -> u64 {
    OptimizerOptions::default().seed
}
fn default_random_starts() -> usize {
    OptimizerOptions::default().random_starts
}
fn default_max_evals() -> usize {
    OptimizerOptions::default().max_evals
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Matches CSV, relative to the config file's directory.
    #[serde(default)]
    pub matches: Option<PathBuf>,
    #[serde(default = "default_outcome")]
    pub outcome: String,
    #[serde(default = "default_treated")]
    pub treated: String,
    #[serde(default = "default_treatment_year")]
    pub treatment_year: i32,
    /// Empty means the default pool: leagues adopting after the window.
    #[serde(default)]
    pub donors: Vec<String>,
    #[serde(default = "default_lag_gap")]
    pub lag_gap: u32,
    #[serde(default = "default_covariates")]
    pub covariates: Vec<String>,
    /// Regression covariates. Mean win share is an exact affine function of
    /// mean draw share in a round robin, so it is left out by default.
    #[serde(default = "default_did_covariates")]
    pub did_covariates: Vec<String>,
    #[serde(default = "default_window")]
    pub window: Option<Window>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_random_starts")]
    pub random_starts: usize,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub pseudo_year: Option<i32>,
    #[serde(default = "RuleSchedule::historical")]
    pub rule_schedule: RuleSchedule,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl AnalysisConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: AnalysisConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.outcome_kind()?;
        self.covariate_set()?;
        self.did_covariate_set()?;
        PredictorSpec::new(self.lag_gap, CovariateSet::NONE)?;
        if let Some(w) = self.window {
            if w.first > w.last {
                return Err(ConfigError::Window {
                    first: w.first,
                    last: w.last,
                });
            }
        }
        Ok(())
    }

    pub fn outcome_kind(&self) -> Result<OutcomeKind, PanelError> {
        self.outcome.parse()
    }

    pub fn covariate_set(&self) -> Result<CovariateSet, PanelError> {
        CovariateSet::from_names(&self.covariates)
    }

    pub fn did_covariate_set(&self) -> Result<CovariateSet, PanelError> {
        CovariateSet::from_names(&self.did_covariates)
    }

    pub fn window_bounds(&self) -> Option<(i32, i32)> {
        self.window.map(|w| (w.first, w.last))
    }

    pub fn optimizer(&self) -> OptimizerOptions {
        OptimizerOptions {
            seed: self.seed,
            random_starts: self.random_starts,
            max_evals: self.max_evals,
            standardize: self.standardize,
        }
    }

    /// Resolves donors against `panel` and produces the SCM request.
    pub fn scm_config(&self, panel: &PanelDataset) -> Result<ScmConfig, ConfigError> {
        let donors = if self.donors.is_empty() {
            default_donors(panel, &self.treated, &self.rule_schedule)
        } else {
            self.donors.clone()
        };
        let mut spec = PredictorSpec::new(self.lag_gap, self.covariate_set()?)?;
        spec.first_year = self.window.map(|w| w.first);
        Ok(ScmConfig {
            treated: self.treated.clone(),
            treatment_year: self.treatment_year,
            donors,
            spec,
            optimizer: self.optimizer(),
            eval_end: None,
        })
    }
}

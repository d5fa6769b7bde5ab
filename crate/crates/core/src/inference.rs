//! Placebo-in-space, placebo-in-time and leave-one-out refits around a
//! synthetic-control configuration. Every refit reruns the full nested
//! optimization; jobs run in parallel and results keep input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::PanelDataset;
use crate::scm::{fit_scm, ScmConfig, ScmError, ScmFit};

/// Donor weights above this count as positive.
pub const POSITIVE_WEIGHT: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error("placebo-in-space needs at least 2 donors, have {0}")]
    TooFewDonors(usize),
    #[error("pseudo year {pseudo} must lie strictly inside the pre-period before {treatment}")]
    PseudoYearOutside { pseudo: i32, treatment: i32 },
    #[error("pseudo year {0} leaves fewer than 2 pre-period seasons")]
    ShortPrePeriod(i32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceboLabel {
    Unit(String),
    Year(i32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboResult {
    pub label: PlaceboLabel,
    pub ate: f64,
    pub seasons: Vec<i32>,
    pub effect_path: Vec<f64>,
    pub pre_rmse: f64,
    pub fit: ScmFit,
}

impl PlaceboResult {
    fn from_fit(label: PlaceboLabel, fit: ScmFit) -> Self {
        Self {
            label,
            ate: fit.ate,
            seasons: fit.seasons.clone(),
            effect_path: fit.gaps.clone(),
            pre_rmse: fit.pre_rmse,
            fit,
        }
    }
}

/// Reassigns treatment to each donor in turn; the pseudo-donor pool is the
/// other donors, so the truly treated unit never serves as a control.
pub fn placebo_in_space(
    panel: &PanelDataset,
    config: &ScmConfig,
) -> Result<Vec<PlaceboResult>, InferenceError> {
    if config.donors.len() < 2 {
        return Err(InferenceError::TooFewDonors(config.donors.len()));
    }
    config
        .donors
        .par_iter()
        .map(|pseudo| {
            let cfg = ScmConfig {
                treated: pseudo.clone(),
                donors: config.donors.iter().filter(|d| *d != pseudo).cloned().collect(),
                ..config.clone()
            };
            let fit = fit_scm(panel, &cfg)?;
            Ok(PlaceboResult::from_fit(PlaceboLabel::Unit(pseudo.clone()), fit))
        })
        .collect()
}

/// Moves treatment back to `pseudo_year` and evaluates only the seasons
/// before the real treatment.
pub fn placebo_in_time(
    panel: &PanelDataset,
    config: &ScmConfig,
    pseudo_year: i32,
) -> Result<PlaceboResult, InferenceError> {
    let first = config.spec.first_year.unwrap_or(panel.seasons[0]);
    if pseudo_year <= first || pseudo_year >= config.treatment_year {
        return Err(InferenceError::PseudoYearOutside {
            pseudo: pseudo_year,
            treatment: config.treatment_year,
        });
    }
    let pre = panel
        .seasons
        .iter()
        .filter(|&&s| s >= first && s < pseudo_year)
        .count();
    if pre < 2 {
        return Err(InferenceError::ShortPrePeriod(pseudo_year));
    }
    let cfg = ScmConfig {
        treatment_year: pseudo_year,
        eval_end: Some(config.treatment_year - 1),
        ..config.clone()
    };
    let fit = fit_scm(panel, &cfg)?;
    Ok(PlaceboResult::from_fit(PlaceboLabel::Year(pseudo_year), fit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub year: i32,
    pub base_effect: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooResult {
    pub refits: Vec<(String, ScmFit)>,
    /// Per season of the base fit: min and max effect across refits.
    pub envelope: Vec<EnvelopeRow>,
    /// Set when the base fit had a single positively weighted donor.
    pub single_positive_donor: bool,
    pub warnings: Vec<String>,
}

/// Refits once per positively weighted donor of `base`, with that donor
/// removed from the pool.
pub fn leave_one_out(
    panel: &PanelDataset,
    config: &ScmConfig,
    base: &ScmFit,
) -> Result<LooResult, InferenceError> {
    let positive: Vec<String> = base
        .donor_ids
        .iter()
        .zip(base.g.weights.iter())
        .filter(|(_, w)| **w > POSITIVE_WEIGHT)
        .map(|(d, _)| d.clone())
        .collect();
    let mut warnings = Vec::new();
    let single_positive_donor = positive.len() == 1;
    if single_positive_donor {
        warnings.push("base fit has a single positively weighted donor".to_string());
    }

    let jobs: Vec<(String, Vec<String>)> = positive
        .iter()
        .filter_map(|dropped| {
            let pool: Vec<String> = config.donors.iter().filter(|d| *d != dropped).cloned().collect();
            if pool.is_empty() {
                warnings.push(format!("dropping {dropped} empties the donor pool; skipped"));
                None
            } else {
                Some((dropped.clone(), pool))
            }
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }

    let refits: Vec<(String, ScmFit)> = jobs
        .into_par_iter()
        .map(|(dropped, pool)| {
            let cfg = ScmConfig {
                donors: pool,
                ..config.clone()
            };
            fit_scm(panel, &cfg).map(|fit| (dropped, fit))
        })
        .collect::<Result<_, _>>()?;

    let envelope = if refits.is_empty() {
        Vec::new()
    } else {
        base.seasons
            .iter()
            .enumerate()
            .map(|(t, &year)| {
                let (min, max) = refits.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, (_, f)| {
                    (acc.0.min(f.gaps[t]), acc.1.max(f.gaps[t]))
                });
                EnvelopeRow {
                    year,
                    base_effect: base.gaps[t],
                    min,
                    max,
                }
            })
            .collect()
    };
    Ok(LooResult {
        refits,
        envelope,
        single_positive_donor,
        warnings,
    })
}

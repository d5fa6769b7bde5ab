//! Difference-in-differences regression with heteroskedasticity-robust
//! (HC1) standard errors.
//!
//! `y = β₀ + β₁·time + β₂·treated + δ·(time × treated) + γ'covariates + ε`
//! over every league-season of a balanced panel; `δ` is the effect.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::panel::{CovariateSet, PanelDataset, PanelError};

pub const ROBUST_VARIANT: &str = "HC1";

#[derive(Debug, Error, PartialEq)]
pub enum DidError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("need at least 2 units, got {0}")]
    TooFewUnits(usize),
    #[error("treatment year {0} leaves no pre or no post seasons")]
    TreatmentOutOfRange(i32),
    #[error("design is rank deficient: `{column}` is collinear with {}", .earlier.join(", "))]
    RankDeficient { column: String, earlier: Vec<String> },
    #[error("need more observations ({n}) than coefficients ({p})")]
    TooFewObservations { n: usize, p: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Regressor matrix with named columns; one row per league-season.
#[derive(Debug, Clone, PartialEq)]
pub struct DidDesign {
    pub columns: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub rows: Vec<(String, i32)>,
}

pub fn build_did_design(
    panel: &PanelDataset,
    treated: &str,
    treatment_year: i32,
    covariates: CovariateSet,
) -> Result<DidDesign, DidError> {
    if panel.units.len() < 2 {
        return Err(DidError::TooFewUnits(panel.units.len()));
    }
    let tr = panel.unit_index(treated)?;
    let pre = panel.seasons.iter().any(|&s| s < treatment_year);
    let post = panel.seasons.iter().any(|&s| s >= treatment_year);
    if !pre || !post {
        return Err(DidError::TreatmentOutOfRange(treatment_year));
    }
    let mut columns: Vec<String> = vec!["time".into(), "time_x_treatment".into(), "treatment".into()];
    columns.extend(covariates.names().into_iter().map(String::from));
    columns.push("constant".into());

    let n = panel.units.len() * panel.seasons.len();
    let mut x = DMatrix::zeros(n, columns.len());
    let mut y = DVector::zeros(n);
    let mut rows = Vec::with_capacity(n);
    let mut i = 0;
    for (u, unit) in panel.units.iter().enumerate() {
        for (t, &season) in panel.seasons.iter().enumerate() {
            let time = f64::from(u8::from(season >= treatment_year));
            let treat = f64::from(u8::from(u == tr));
            let c = &panel.covariates[u][t];
            let mut row = vec![time, time * treat, treat];
            if covariates.avg_wins {
                row.push(c.avg_win_share);
            }
            if covariates.avg_draws {
                row.push(c.avg_draw_share);
            }
            if covariates.team_count {
                row.push(c.team_count as f64);
            }
            row.push(1.0);
            for (j, v) in row.into_iter().enumerate() {
                x[(i, j)] = v;
            }
            y[i] = panel.outcome[(u, t)];
            rows.push((unit.clone(), season));
            i += 1;
        }
    }
    Ok(DidDesign { columns, x, y, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
}

impl Coefficient {
    /// `***` p<0.01, `**` p<0.05, `*` p<0.1.
    pub fn stars(&self) -> &'static str {
        match self.p_value {
            p if p < 0.01 => "***",
            p if p < 0.05 => "**",
            p if p < 0.1 => "*",
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidFit {
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub n_observations: usize,
    pub robust_variant: String,
}

impl DidFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn interaction(&self) -> &Coefficient {
        self.coefficient("time_x_treatment").expect("design always has the interaction")
    }
}

/// OLS via Householder QR with HC1 sandwich standard errors.
pub fn fit_ols(design: &DidDesign) -> Result<DidFit, DidError> {
    let (n, p) = design.x.shape();
    if design.y.len() != n || design.columns.len() != p {
        return Err(DidError::Shape(format!(
            "X {n}x{p}, y {}, {} names",
            design.y.len(),
            design.columns.len()
        )));
    }
    if n <= p {
        return Err(DidError::TooFewObservations { n, p });
    }
    let qr = design.x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let col_norm = design.x.column(j).norm();
        if r[(j, j)].abs() <= 1e-10 * col_norm.max(1.0) {
            return Err(DidError::RankDeficient {
                column: design.columns[j].clone(),
                earlier: design.columns[..j].to_vec(),
            });
        }
    }
    let qty = qr.q().transpose() * &design.y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| DidError::Shape("singular R".into()))?;

    let resid = &design.y - &design.x * &beta;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| DidError::Shape("singular R".into()))?;
    let bread = &r_inv * r_inv.transpose();
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..n {
        let xi = design.x.row(i).transpose();
        meat += (resid[i] * resid[i]) * &xi * xi.transpose();
    }
    let cov = (&bread * meat * &bread) * (n as f64 / (n - p) as f64);

    let mean_y = design.y.mean();
    let sst: f64 = design.y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r_squared = if sst > 0.0 {
        1.0 - resid.norm_squared() / sst
    } else {
        f64::NAN
    };

    let normal = Normal::standard();
    let coefficients = design
        .columns
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = beta[j] / se;
            let p_value = if se > 0.0 {
                2.0 * (1.0 - normal.cdf(z.abs()))
            } else {
                f64::NAN
            };
            Coefficient {
                name: name.clone(),
                estimate: beta[j],
                std_error: se,
                p_value,
            }
        })
        .collect();
    Ok(DidFit {
        coefficients,
        r_squared,
        n_observations: n,
        robust_variant: ROBUST_VARIANT.to_string(),
    })
}

pub fn fit_did(
    panel: &PanelDataset,
    treated: &str,
    treatment_year: i32,
    covariates: CovariateSet,
) -> Result<DidFit, DidError> {
    fit_ols(&build_did_design(panel, treated, treatment_year, covariates)?)
}

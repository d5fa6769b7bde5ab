//! Synthetic control estimation.

mod fit;
mod qp;

pub use fit::{
    fit_scm, optimize_v, pre_rmse, BalanceRow, OptimizerOptions, ScmConfig, ScmFit, VSearch,
    VWeights, RMSE_TIE_TOL,
};
pub use qp::{inner_objective, solve_inner, DonorWeights, QpError};

use thiserror::Error;

use crate::panel::PanelError;

#[derive(Debug, Error, PartialEq)]
pub enum ScmError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("no predictors")]
    NoPredictors,
    #[error("no pre-treatment seasons")]
    EmptyPrePeriod,
    #[error("no post-treatment seasons in the evaluation window")]
    EmptyPostPeriod,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

//! Nested synthetic-control fit: predictor weights `V` chosen to minimize
//! pre-treatment outcome RMSE, donor weights `G*(V)` from the inner QP.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qp::{solve_inner, DonorWeights};
use super::ScmError;
use crate::panel::{build_predictors, PanelDataset, PredictorBlock, PredictorSpec};

/// RMSE values closer than this are treated as ties.
pub const RMSE_TIE_TOL: f64 = 1e-10;

/// Diagonal of `V`, normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct VWeights {
    pub weights: Vec<f64>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub seed: u64,
    /// Dirichlet starts added to equal weights and the one-hot vertices.
    pub random_starts: usize,
    /// Nelder-Mead evaluation budget per start.
    pub max_evals: usize,
    /// Divide each predictor row by its std-dev across units before matching.
    pub standardize: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            random_starts: 4,
            max_evals: 400,
            standardize: true,
        }
    }
}

/// Outcome of the outer search.
#[derive(Debug, Clone)]
pub struct VSearch {
    pub v: VWeights,
    pub g: DonorWeights,
    pub pre_rmse: f64,
    pub warnings: Vec<String>,
}

struct Problem<'a> {
    x1: DVector<f64>,
    x0: DMatrix<f64>,
    y1: &'a DVector<f64>,
    y0: &'a DMatrix<f64>,
}

impl Problem<'_> {
    fn evaluate(&self, v: &[f64]) -> (DonorWeights, f64) {
        let g = solve_inner(&self.x1, &self.x0, v).expect("dimensions checked upfront");
        let rmse = pre_rmse(self.y1, self.y0, &g.weights);
        (g, rmse)
    }
}

/// `sqrt(mean((y₁ − Y₀g)²))` over the rows given.
pub fn pre_rmse(y1: &DVector<f64>, y0: &DMatrix<f64>, g: &DVector<f64>) -> f64 {
    let gap = y1 - y0 * g;
    (gap.norm_squared() / gap.len().max(1) as f64).sqrt()
}

fn standardize(block: &PredictorBlock) -> (DVector<f64>, DMatrix<f64>) {
    let mut x1 = block.treated.clone();
    let mut x0 = block.donors.clone();
    let n = x0.ncols() + 1;
    for r in 0..x0.nrows() {
        let vals: Vec<f64> = std::iter::once(x1[r]).chain(x0.row(r).iter().copied()).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
        let sd = var.sqrt();
        if sd > 0.0 {
            x1[r] /= sd;
            x0.row_mut(r).scale_mut(1.0 / sd);
        }
    }
    (x1, x0)
}

fn to_simplex(z: &[f64]) -> Vec<f64> {
    let total: f64 = z.iter().map(|x| x * x).sum();
    if total <= 0.0 || !total.is_finite() {
        return vec![1.0 / z.len() as f64; z.len()];
    }
    z.iter().map(|x| x * x / total).collect()
}

fn distance_to_equal(v: &[f64]) -> f64 {
    let e = 1.0 / v.len() as f64;
    v.iter().map(|x| (x - e).powi(2)).sum::<f64>().sqrt()
}

/// Nelder-Mead on `f`, returning the best point seen and its value.
fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let dim = start.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), eval(start)));
    for i in 0..dim {
        let mut x = start.to_vec();
        x[i] += if x[i].abs() > 0.5 { -step } else { step };
        let fx = eval(&x);
        simplex.push((x, fx));
    }
    while evals.get() < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[dim].1 - simplex[0].1;
        if spread.abs() < 1e-14 {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|p| p.0[j]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = along(0.5);
                let fx = eval(&x);
                (x, fx)
            } else {
                let x = along(-0.5);
                let fx = eval(&x);
                (x, fx)
            };
            if fc < worst.1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    for (xj, bj) in p.0.iter_mut().zip(&best) {
                        *xj = bj + 0.5 * (*xj - bj);
                    }
                    p.1 = eval(&p.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

fn starts(dim: usize, opts: &OptimizerOptions) -> Vec<Vec<f64>> {
    let mut out = vec![vec![(1.0 / dim as f64).sqrt(); dim]];
    for k in 0..dim {
        let mut z = vec![0.0; dim];
        z[k] = 1.0;
        out.push(z);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.random_starts {
        let e: Vec<f64> = (0..dim).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = e.iter().sum();
        out.push(e.iter().map(|x| (x / total).sqrt()).collect());
    }
    out
}

fn donors_identical(block: &PredictorBlock, y0: &DMatrix<f64>) -> bool {
    let same = |m: &DMatrix<f64>| {
        (1..m.ncols()).all(|c| (m.column(c) - m.column(0)).amax() <= 1e-12)
    };
    block.donors.ncols() > 1 && same(&block.donors) && same(y0)
}

/// Outer search over `V`. `y1` and `y0` hold the pre-period outcome of the
/// treated unit and the donors (rows are seasons).
pub fn optimize_v(
    block: &PredictorBlock,
    y1: &DVector<f64>,
    y0: &DMatrix<f64>,
    opts: &OptimizerOptions,
) -> Result<VSearch, ScmError> {
    let k = block.treated.len();
    let n = block.donors.ncols();
    if k == 0 {
        return Err(ScmError::NoPredictors);
    }
    if block.donors.nrows() != k || y0.ncols() != n || y0.nrows() != y1.len() {
        return Err(ScmError::Shape(format!(
            "X0 {}x{}, x1 {}, Y0 {}x{}, y1 {}",
            block.donors.nrows(),
            n,
            k,
            y0.nrows(),
            y0.ncols(),
            y1.len()
        )));
    }
    if y1.is_empty() {
        return Err(ScmError::EmptyPrePeriod);
    }
    let labels = block.labels.clone();
    let equal_v = vec![1.0 / k as f64; k];

    if donors_identical(block, y0) {
        let msg = "all donors are identical; using equal donor weights".to_string();
        log::warn!("{msg}");
        let g = DVector::from_element(n, 1.0 / n as f64);
        let objective = super::qp::inner_objective(&block.treated, &block.donors, &equal_v, &g);
        return Ok(VSearch {
            pre_rmse: pre_rmse(y1, y0, &g),
            v: VWeights {
                weights: equal_v,
                labels,
            },
            g: DonorWeights { weights: g, objective },
            warnings: vec![msg],
        });
    }

    let (x1, x0) = if opts.standardize {
        standardize(block)
    } else {
        (block.treated.clone(), block.donors.clone())
    };
    let problem = Problem { x1, x0, y1, y0 };

    let candidates: Vec<(Vec<f64>, f64)> = if k == 1 {
        vec![(vec![1.0], problem.evaluate(&[1.0]).1)]
    } else {
        starts(k, opts)
            .par_iter()
            .map(|z0| {
                let (z, _) = nelder_mead(
                    |z| problem.evaluate(&to_simplex(z)).1,
                    z0,
                    0.25,
                    opts.max_evals,
                );
                let v = to_simplex(&z);
                let rmse = problem.evaluate(&v).1;
                (v, rmse)
            })
            .collect()
    };

    let best_rmse = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let (v, _) = candidates
        .into_iter()
        .filter(|c| c.1 <= best_rmse + RMSE_TIE_TOL)
        .min_by(|a, b| distance_to_equal(&a.0).total_cmp(&distance_to_equal(&b.0)))
        .expect("at least one start");

    let (g_std, rmse) = problem.evaluate(&v);
    // Report the objective on the caller's (unstandardized) predictors.
    let objective = super::qp::inner_objective(&block.treated, &block.donors, &v, &g_std.weights);
    Ok(VSearch {
        v: VWeights { weights: v, labels },
        g: DonorWeights {
            weights: g_std.weights,
            objective,
        },
        pre_rmse: rmse,
        warnings: Vec::new(),
    })
}

/// Estimation request for one synthetic-control fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    pub treated: String,
    pub treatment_year: i32,
    pub donors: Vec<String>,
    pub spec: PredictorSpec,
    pub optimizer: OptimizerOptions,
    /// Last season counted in the ATE; the panel's last season when `None`.
    pub eval_end: Option<i32>,
}

/// One predictor row of the covariate-balance table. Biases are percent
/// deviations from the treated value, positive when the comparison is above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub predictor: String,
    pub v_weight: f64,
    pub treated: f64,
    pub synthetic: f64,
    pub synthetic_bias_pct: Option<f64>,
    pub donor_average: f64,
    pub donor_average_bias_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmFit {
    pub treated: String,
    pub treatment_year: i32,
    pub eval_end: i32,
    pub donor_ids: Vec<String>,
    pub g: DonorWeights,
    pub v: VWeights,
    pub seasons: Vec<i32>,
    pub actual: Vec<f64>,
    pub synthetic: Vec<f64>,
    pub gaps: Vec<f64>,
    pub ate: f64,
    pub pre_rmse: f64,
    pub balance: Vec<BalanceRow>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl ScmFit {
    /// Season indices entering the ATE.
    pub fn post_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.seasons.len())
            .filter(|&t| self.seasons[t] >= self.treatment_year && self.seasons[t] <= self.eval_end)
    }

    pub fn effect_at(&self, year: i32) -> Option<f64> {
        self.seasons.iter().position(|&s| s == year).map(|t| self.gaps[t])
    }

    pub fn weight_of(&self, donor: &str) -> Option<f64> {
        self.donor_ids
            .iter()
            .position(|d| d == donor)
            .map(|i| self.g.weights[i])
    }
}

fn bias_pct(value: f64, treated: f64) -> Option<f64> {
    (treated != 0.0).then(|| 100.0 * (value - treated) / treated)
}

/// Runs predictor construction, the nested optimization and the effect path.
pub fn fit_scm(panel: &PanelDataset, config: &ScmConfig) -> Result<ScmFit, ScmError> {
    let block = build_predictors(
        panel,
        &config.treated,
        config.treatment_year,
        &config.donors,
        &config.spec,
    )?;
    let tr = panel.unit_index(&config.treated)?;
    let donor_idx: Vec<usize> = config
        .donors
        .iter()
        .map(|d| panel.unit_index(d))
        .collect::<Result<_, _>>()?;
    let first = config.spec.first_year.unwrap_or(panel.seasons[0]);
    let eval_end = config
        .eval_end
        .unwrap_or(*panel.seasons.last().expect("non-empty panel"));
    if eval_end < config.treatment_year {
        return Err(ScmError::EmptyPostPeriod);
    }
    let pre: Vec<usize> = (0..panel.seasons.len())
        .filter(|&t| panel.seasons[t] >= first && panel.seasons[t] < config.treatment_year)
        .collect();
    let y1_pre = DVector::from_iterator(pre.len(), pre.iter().map(|&t| panel.outcome[(tr, t)]));
    let y0_pre = DMatrix::from_fn(pre.len(), donor_idx.len(), |r, c| {
        panel.outcome[(donor_idx[c], pre[r])]
    });
    let search = optimize_v(&block, &y1_pre, &y0_pre, &config.optimizer)?;

    let y0_all = DMatrix::from_fn(panel.seasons.len(), donor_idx.len(), |t, c| {
        panel.outcome[(donor_idx[c], t)]
    });
    let synthetic: Vec<f64> = (&y0_all * &search.g.weights).iter().copied().collect();
    let actual = panel.series(tr);
    let gaps: Vec<f64> = actual.iter().zip(&synthetic).map(|(a, s)| a - s).collect();
    let post: Vec<usize> = (0..panel.seasons.len())
        .filter(|&t| panel.seasons[t] >= config.treatment_year && panel.seasons[t] <= eval_end)
        .collect();
    if post.is_empty() {
        return Err(ScmError::EmptyPostPeriod);
    }
    let ate = post.iter().map(|&t| gaps[t]).sum::<f64>() / post.len() as f64;

    let synth_x = &block.donors * &search.g.weights;
    let balance = (0..block.labels.len())
        .map(|r| {
            let treated = block.treated[r];
            let donor_average = block.donors.row(r).mean();
            BalanceRow {
                predictor: block.labels[r].clone(),
                v_weight: search.v.weights[r],
                treated,
                synthetic: synth_x[r],
                synthetic_bias_pct: bias_pct(synth_x[r], treated),
                donor_average,
                donor_average_bias_pct: bias_pct(donor_average, treated),
            }
        })
        .collect();

    Ok(ScmFit {
        treated: config.treated.clone(),
        treatment_year: config.treatment_year,
        eval_end,
        donor_ids: config.donors.clone(),
        g: search.g,
        v: search.v,
        seasons: panel.seasons.clone(),
        actual,
        synthetic,
        gaps,
        ate,
        pre_rmse: search.pre_rmse,
        balance,
        seed: config.optimizer.seed,
        warnings: search.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::league::SeasonCovariates;
    use crate::panel::{CovariateSet, OutcomeKind};

    fn panel_from_paths(paths: &[Vec<f64>], first: i32) -> PanelDataset {
        let units: Vec<String> = (0..paths.len()).map(|u| format!("U{u}")).collect();
        let t = paths[0].len();
        let outcome = DMatrix::from_fn(paths.len(), t, |u, s| paths[u][s]);
        let cov = vec![
            vec![
                SeasonCovariates {
                    avg_win_share: 0.35,
                    avg_draw_share: 0.28,
                    team_count: 18
                };
                t
            ];
            paths.len()
        ];
        PanelDataset::new(units, (first..first + t as i32).collect(), outcome, cov, OutcomeKind::Dcb)
            .unwrap()
    }

    fn config(treated: &str, donors: &[&str], year: i32, gap: u32) -> ScmConfig {
        ScmConfig {
            treated: treated.into(),
            treatment_year: year,
            donors: donors.iter().map(|s| s.to_string()).collect(),
            spec: PredictorSpec::new(gap, CovariateSet::NONE).unwrap(),
            optimizer: OptimizerOptions::default(),
            eval_end: None,
        }
    }

    #[test]
    fn perfect_fit_on_copied_donor() {
        let a: Vec<f64> = (0..12).map(|t| 0.3 + 0.02 * (t as f64).sin()).collect();
        let b: Vec<f64> = (0..12).map(|t| 0.5 - 0.01 * t as f64).collect();
        let c: Vec<f64> = (0..12).map(|t| 0.2 + 0.03 * (t as f64 * 0.7).cos()).collect();
        let panel = panel_from_paths(&[a.clone(), a, b, c], 2000);
        let fit = fit_scm(&panel, &config("U0", &["U1", "U2", "U3"], 2008, 1)).unwrap();
        assert!((fit.g.weights[0] - 1.0).abs() < 1e-9);
        assert!(fit.pre_rmse < 1e-9);
        assert!(fit.ate.abs() < 1e-9);
    }

    #[test]
    fn synthetic_path_is_matrix_product_and_ate_is_post_mean() {
        let paths: Vec<Vec<f64>> = (0..4)
            .map(|u| (0..15).map(|t| 0.3 + 0.05 * u as f64 + 0.01 * ((t * (u + 1)) as f64).sin()).collect())
            .collect();
        let panel = panel_from_paths(&paths, 1970);
        let fit = fit_scm(&panel, &config("U1", &["U0", "U2", "U3"], 1980, 2)).unwrap();
        for t in 0..15 {
            let s: f64 = (0..3).map(|j| paths[[0, 2, 3][j]][t] * fit.g.weights[j]).sum();
            assert!((s - fit.synthetic[t]).abs() < 1e-12);
        }
        let post: Vec<f64> = (10..15).map(|t| paths[1][t] - fit.synthetic[t]).collect();
        let ate = post.iter().sum::<f64>() / post.len() as f64;
        assert!((ate - fit.ate).abs() < 1e-12);
        assert_eq!(fit.post_indices().count(), 5);
        assert!((fit.v.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(fit.balance.len(), 5);
    }

    #[test]
    fn identical_donors_fall_back_to_equal_weights() {
        let a: Vec<f64> = (0..8).map(|t| 0.3 + 0.01 * t as f64).collect();
        let tr: Vec<f64> = (0..8).map(|t| 0.4 + 0.02 * t as f64).collect();
        let panel = panel_from_paths(&[tr, a.clone(), a], 2000);
        let fit = fit_scm(&panel, &config("U0", &["U1", "U2"], 2005, 1)).unwrap();
        assert_eq!(fit.g.weights.as_slice(), &[0.5, 0.5]);
        assert_eq!(fit.warnings.len(), 1);
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let paths: Vec<Vec<f64>> = (0..5)
            .map(|u| (0..20).map(|t| ((u * 7 + t * 3) % 11) as f64 / 20.0).collect())
            .collect();
        let panel = panel_from_paths(&paths, 1963);
        let cfg = config("U0", &["U1", "U2", "U3", "U4"], 1975, 2);
        let a = fit_scm(&panel, &cfg).unwrap();
        let b = fit_scm(&panel, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn balance_bias_sign() {
        assert_eq!(bias_pct(0.2923, 0.323).map(|b| (b * 100.0).round() / 100.0), Some(-9.5));
        assert_eq!(bias_pct(1.0, 0.0), None);
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let (x, f) = nelder_mead(|x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2), &[0.0, 0.0], 0.5, 2000);
        assert!(f < 1e-10);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] + 2.0).abs() < 1e-4);
    }
}

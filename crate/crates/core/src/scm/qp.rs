//! Donor weights: `min (x₁ − X₀g)' V (x₁ − X₀g)` over the probability simplex.
//!
//! Primal active-set method. On the current free set the sum-to-one
//! constraint is eliminated with an orthonormal (Helmert) null-space basis
//! and the reduced least-squares problem is solved by SVD, so rank-deficient
//! `V` or collinear donors are handled with minimum-norm steps.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: x1 has {x1} rows, X0 is {rows}x{cols}, V has {v} entries")]
    Dimensions {
        x1: usize,
        rows: usize,
        cols: usize,
        v: usize,
    },
    #[error("predictor weight {0} is negative or not finite")]
    BadWeight(f64),
    #[error("no donors")]
    NoDonors,
}

/// Convex donor weights and the attained quadratic-form value.
#[derive(Debug, Clone, PartialEq)]
pub struct DonorWeights {
    pub weights: DVector<f64>,
    pub objective: f64,
}

const MAX_ITER_PER_DONOR: usize = 50;

/// Value of the weighted quadratic form at `g`.
pub fn inner_objective(x1: &DVector<f64>, x0: &DMatrix<f64>, v: &[f64], g: &DVector<f64>) -> f64 {
    let resid = x1 - x0 * g;
    resid.iter().zip(v).map(|(r, w)| w * r * r).sum()
}

/// Orthonormal basis of `{z : Σz = 0}` in `n` dimensions, as columns.
fn helmert_basis(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n.saturating_sub(1), |i, k| {
        let c = (k + 1) as f64;
        let norm = (c * (c + 1.0)).sqrt();
        if i <= k {
            1.0 / norm
        } else if i == k + 1 {
            -c / norm
        } else {
            0.0
        }
    })
}

/// Solves the simplex-constrained weighted least-squares problem exactly.
pub fn solve_inner(
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    v: &[f64],
) -> Result<DonorWeights, QpError> {
    let (k, n) = x0.shape();
    if x1.len() != k || v.len() != k {
        return Err(QpError::Dimensions {
            x1: x1.len(),
            rows: k,
            cols: n,
            v: v.len(),
        });
    }
    if n == 0 {
        return Err(QpError::NoDonors);
    }
    if let Some(&bad) = v.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(QpError::BadWeight(bad));
    }

    let sqrt_v: Vec<f64> = v.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(k, n, |r, c| sqrt_v[r] * x0[(r, c)]);
    let b = DVector::from_fn(k, |r, _| sqrt_v[r] * x1[r]);
    let scale = a.amax().max(b.amax()).max(1.0);

    // Start from the best single donor.
    let start = (0..n)
        .min_by(|&i, &j| {
            let fi = (a.column(i) - &b).norm_squared();
            let fj = (a.column(j) - &b).norm_squared();
            fi.total_cmp(&fj)
        })
        .unwrap();
    let mut g = DVector::zeros(n);
    g[start] = 1.0;
    let mut free = vec![false; n];
    free[start] = true;

    let step_tol = 1e-15;
    let mult_tol = 1e-13 * scale * scale;
    for _ in 0..MAX_ITER_PER_DONOR * n {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let resid = &a * &g - &b;
        let step = if idx.len() > 1 {
            let z = helmert_basis(idx.len());
            let a_free = DMatrix::from_fn(k, idx.len(), |r, c| a[(r, idx[c])]);
            let m = &a_free * &z;
            let svd = m.svd(true, true);
            let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
            let y = svd.solve(&(-&resid), eps).unwrap_or_else(|_| DVector::zeros(idx.len() - 1));
            &z * y
        } else {
            DVector::zeros(1)
        };

        if step.amax() > step_tol {
            let mut alpha = 1.0f64;
            let mut blocking = None;
            for (p, &i) in step.iter().zip(&idx) {
                if *p < 0.0 {
                    let ratio = g[i] / -p;
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(i);
                    }
                }
            }
            for (p, &i) in step.iter().zip(&idx) {
                g[i] += alpha * p;
            }
            if let Some(bi) = blocking {
                g[bi] = 0.0;
                free[bi] = false;
            }
            for &i in &idx {
                if g[i] <= 0.0 {
                    g[i] = 0.0;
                    free[i] = false;
                }
            }
            let total: f64 = g.sum();
            g /= total;
            if !free.iter().any(|f| *f) {
                let best = g.imax();
                free[best] = true;
            }
            continue;
        }

        // Stationary on the free set: price the bound constraints.
        let grad = 2.0 * a.transpose() * &resid;
        let lambda = idx.iter().map(|&i| grad[i]).sum::<f64>() / idx.len() as f64;
        let entering = (0..n)
            .filter(|&i| !free[i])
            .map(|i| (i, grad[i] - lambda))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        match entering {
            Some((i, mu)) if mu < -mult_tol => free[i] = true,
            _ => break,
        }
    }

    let objective = inner_objective(x1, x0, v, &g);
    Ok(DonorWeights {
        weights: g,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feasible(g: &DVector<f64>) -> bool {
        g.iter().all(|w| *w >= 0.0) && (g.sum() - 1.0).abs() < 1e-9
    }

    #[test]
    fn helmert_is_orthonormal_and_sums_to_zero() {
        for n in 2..7 {
            let z = helmert_basis(n);
            let gram = z.transpose() * &z;
            assert!((gram - DMatrix::identity(n - 1, n - 1)).amax() < 1e-14);
            for c in 0..n - 1 {
                assert!(z.column(c).sum().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn exact_match_picks_that_donor() {
        let x0 = DMatrix::from_row_slice(3, 3, &[0.1, 0.5, 0.9, 0.3, 0.2, 0.7, 1.0, 2.0, 4.0]);
        let x1 = x0.column(1).into_owned();
        let w = solve_inner(&x1, &x0, &[1.0, 1.0, 1.0]).unwrap();
        assert!((w.weights[1] - 1.0).abs() < 1e-12);
        assert!(w.objective < 1e-20);
    }

    #[test]
    fn single_donor_is_forced() {
        let x0 = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x1 = DVector::from_vec(vec![0.0, 0.0]);
        let w = solve_inner(&x1, &x0, &[0.5, 2.0]).unwrap();
        assert_eq!(w.weights[0], 1.0);
        assert!((w.objective - (0.5 + 8.0)).abs() < 1e-14);
    }

    #[test]
    fn interpolation_midpoint() {
        let x0 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let x1 = DVector::from_vec(vec![0.5]);
        for v in [0.1, 1.0, 7.0] {
            let w = solve_inner(&x1, &x0, &[v]).unwrap();
            assert!((w.weights[0] - 0.5).abs() < 1e-12);
            assert!((w.weights[1] - 0.5).abs() < 1e-12);
            assert!(w.objective < 1e-24);
        }
    }

    #[test]
    fn zero_weight_predictors_are_ignored() {
        let x0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 5.0, -5.0]);
        let x1 = DVector::from_vec(vec![0.25, 100.0]);
        let w = solve_inner(&x1, &x0, &[1.0, 0.0]).unwrap();
        assert!((w.weights[1] - 0.25).abs() < 1e-12);
        assert!(feasible(&w.weights));
    }

    #[test]
    fn all_zero_v_still_feasible() {
        let x0 = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let x1 = DVector::from_vec(vec![1.0, 1.0]);
        let w = solve_inner(&x1, &x0, &[0.0, 0.0]).unwrap();
        assert!(feasible(&w.weights));
        assert_eq!(w.objective, 0.0);
    }

    #[test]
    fn errors() {
        let x0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let x1 = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            solve_inner(&x1, &x0, &[1.0, 1.0]),
            Err(QpError::Dimensions { .. })
        ));
        let x1 = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            solve_inner(&x1, &x0, &[1.0, -1.0]),
            Err(QpError::BadWeight(_))
        ));
    }

    #[test]
    fn identical_donors() {
        let x0 = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let x1 = DVector::from_vec(vec![0.0, 0.0]);
        let w = solve_inner(&x1, &x0, &[1.0, 1.0]).unwrap();
        assert!(feasible(&w.weights));
        assert!((w.objective - 5.0).abs() < 1e-12);
    }
}

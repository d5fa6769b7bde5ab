//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use pointshift::league::{build_season_table, MatchRecord, PointsRule, SeasonTable};
use pointshift::panel::{CovariateSet, PredictorSpec};
use pointshift::scm::{OptimizerOptions, ScmConfig};
use pointshift::sim::{six_league_scenario, MixtureScenario, PanelScenario};

/// Double round robin; `outcome(i, j)` is 1 for a home win, 0 for a draw and
/// -1 for an away win with `i` at home.
pub fn round_robin(k: usize, outcome: impl Fn(usize, usize) -> i32) -> Vec<MatchRecord> {
    let mut out = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let (h, a) = match outcome(i, j) {
                1 => (2, 1),
                0 => (1, 1),
                _ => (0, 3),
            };
            out.push(MatchRecord::new("L", 1990, format!("T{i:02}"), format!("T{j:02}"), h, a).unwrap());
        }
    }
    out
}

pub fn table(matches: &[MatchRecord], rule: PointsRule) -> SeasonTable {
    build_season_table(matches, rule).unwrap()
}

pub fn random_outcomes<R: Rng>(rng: &mut R, k: usize) -> Vec<i32> {
    (0..k * k).map(|_| rng.random_range(-1..=1)).collect()
}

pub fn random_season<R: Rng>(rng: &mut R, k: usize) -> Vec<MatchRecord> {
    let o = random_outcomes(rng, k);
    round_robin(k, |i, j| o[i * k + j])
}

/// Random inner-QP instance with `k` predictors and `n` donors.
pub fn qp_instance<R: Rng>(rng: &mut R, k: usize, n: usize) -> (DVector<f64>, DMatrix<f64>, Vec<f64>) {
    let x1 = DVector::from_fn(k, |_, _| rng.random::<f64>());
    let x0 = DMatrix::from_fn(k, n, |_, _| rng.random::<f64>());
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = raw.iter().sum();
    (x1, x0, raw.into_iter().map(|v| v / s).collect())
}

/// Minimum of the weighted quadratic form over the simplex grid with
/// weights in multiples of `1/steps`.
pub fn grid_min(x1: &DVector<f64>, x0: &DMatrix<f64>, v: &[f64], steps: usize) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn walk(
        col: usize,
        left: usize,
        steps: usize,
        fit: &mut Vec<f64>,
        x1: &DVector<f64>,
        x0: &DMatrix<f64>,
        v: &[f64],
        best: &mut f64,
    ) {
        let n = x0.ncols();
        let h = 1.0 / steps as f64;
        if col + 1 == n {
            let g = left as f64 * h;
            let val: f64 = (0..x1.len())
                .map(|r| {
                    let e = x1[r] - fit[r] - x0[(r, col)] * g;
                    v[r] * e * e
                })
                .sum();
            if val < *best {
                *best = val;
            }
            return;
        }
        for units in 0..=left {
            let g = units as f64 * h;
            for r in 0..x1.len() {
                fit[r] += x0[(r, col)] * g;
            }
            walk(col + 1, left - units, steps, fit, x1, x0, v, best);
            for r in 0..x1.len() {
                fit[r] -= x0[(r, col)] * g;
            }
        }
    }
    let mut best = f64::INFINITY;
    let mut fit = vec![0.0; x1.len()];
    walk(0, steps, steps, &mut fit, x1, x0, v, &mut best);
    best
}

/// `(XᵀX)⁻¹Xᵀy` by Gauss-Jordan elimination with partial pivoting on the
/// normal equations.
pub fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let p = x.ncols();
    let n = x.nrows();
    let mut a = vec![vec![0.0f64; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = (0..n).map(|r| x[(r, i)] * x[(r, j)]).sum();
        }
        a[i][p] = (0..n).map(|r| x[(r, i)] * y[r]).sum();
    }
    for c in 0..p {
        let piv = (c..p)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        a[c].iter_mut().for_each(|x| *x /= d);
        let pivot = a[c].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i != c {
                let f = row[c];
                row.iter_mut().zip(&pivot).for_each(|(x, p)| *x -= f * p);
            }
        }
    }
    a.into_iter().map(|row| row[p]).collect()
}

/// Simulated donor leagues without the treated one.
pub fn donor_scenario(seed: u64) -> PanelScenario {
    let mut s = six_league_scenario(seed, 0.0);
    s.leagues.retain(|l| l.league_id != "ENG");
    s.treated = "FRA".into();
    s
}

pub const MIX_A: &str = "GER";
pub const MIX_B: &str = "ESP";

/// Treated unit `TRT` = 0.6 A + 0.4 B with low noise and a -0.05 shift. A and
/// B share a team count, so the integer covariate mixes exactly.
pub fn mixture_scenario(seed: u64) -> MixtureScenario {
    MixtureScenario {
        donors: donor_scenario(seed),
        treated: "TRT".into(),
        weights: vec![(MIX_A.into(), 0.6), (MIX_B.into(), 0.4)],
        noise_sd: 0.0025,
        effect: -0.05,
        treatment_year: 1981,
        seed,
    }
}

pub fn scm_config(treated: &str, donors: &[&str], seed: u64) -> ScmConfig {
    ScmConfig {
        treated: treated.into(),
        treatment_year: 1981,
        donors: donors.iter().map(|d| d.to_string()).collect(),
        spec: PredictorSpec::new(2, CovariateSet::ALL).unwrap(),
        optimizer: OptimizerOptions {
            seed,
            ..OptimizerOptions::default()
        },
        eval_end: None,
    }
}

pub const MIX_DONORS: [&str; 5] = ["FRA", "ESP", "NED", "ITA", "GER"];

pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

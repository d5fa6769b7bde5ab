//! Python bindings: season tables, balance indices, panels, synthetic
//! control with its inference, DID and the simulator.

// Python-facing functions take the full keyword-argument set.
#![allow(clippy::too_many_arguments)]

use std::collections::BTreeMap;
use std::fs::File;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pointshift::did;
use pointshift::inference;
use pointshift::league::{self, PointsRule, RuleSchedule, SeasonTable};
use pointshift::metrics;
use pointshift::panel::{build_panel, CovariateSet, OutcomeKind, PanelDataset, PredictorSpec};
use pointshift::scm::{self, OptimizerOptions, ScmConfig, ScmFit};
use pointshift::sim;

create_exception!(pointshift, PointshiftError, PyValueError);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PointshiftError::new_err(e.to_string())
}

fn rule(win_points: u32) -> PyResult<PointsRule> {
    PointsRule::new(win_points, 1, 0).map_err(err)
}

fn schedule(map: Option<BTreeMap<String, i32>>) -> PyResult<RuleSchedule> {
    match map {
        None => Ok(RuleSchedule::historical()),
        Some(m) => {
            let mut s = RuleSchedule::new();
            for (league, year) in m {
                s.insert(league, year).map_err(err)?;
            }
            Ok(s)
        }
    }
}

fn read_records(path: &str) -> PyResult<Vec<league::MatchRecord>> {
    let file = File::open(path).map_err(err)?;
    Ok(league::parse_matches(file).map_err(err)?.records)
}

#[pyclass(name = "SeasonTable", module = "pointshift", frozen)]
struct PySeasonTable {
    inner: SeasonTable,
}

#[pymethods]
impl PySeasonTable {
    #[getter]
    fn league_id(&self) -> &str {
        &self.inner.league_id
    }

    #[getter]
    fn season(&self) -> i32 {
        self.inner.season_start_year
    }

    #[getter]
    fn win_points(&self) -> u32 {
        self.inner.rule.win_points
    }

    #[getter]
    fn team_count(&self) -> usize {
        self.inner.team_count()
    }

    fn teams(&self) -> Vec<String> {
        self.inner.rows.iter().map(|r| r.team.clone()).collect()
    }

    fn points(&self) -> Vec<u64> {
        self.inner.rows.iter().map(|r| r.points).collect()
    }

    fn points_shares(&self) -> Vec<f64> {
        self.inner.points_shares()
    }

    /// DCB with the table's own rule, or under `win_points` if given.
    #[pyo3(signature = (win_points=None))]
    fn dcb(&self, win_points: Option<u32>) -> PyResult<f64> {
        let r = match win_points {
            Some(w) => rule(w)?,
            None => self.inner.rule,
        };
        metrics::dcb(&self.inner, r).map_err(err)
    }

    fn indices<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let i = metrics::balance_indices(&self.inner).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("dcb", i.dcb)?;
        d.set_item("hhi", i.hhi)?;
        d.set_item("sigma", i.sigma)?;
        d.set_item("r", i.r)?;
        d.set_item("sigma_hat", i.sigma_hat)?;
        d.set_item("r_hat", i.r_hat)?;
        d.set_item("namsi", i.namsi)?;
        d.set_item("namsi_hat", i.namsi_hat)?;
        d.set_item("hhi_w", i.hhi_w)?;
        d.set_item("ahhi_w", i.ahhi_w)?;
        d.set_item("hhi_d", i.hhi_d)?;
        d.set_item("ahhi_d", i.ahhi_d)?;
        d.set_item("avg_goals_per_team_match", i.avg_goals_per_team_match)?;
        d.set_item("mean_win_share", i.mean_win_share)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "SeasonTable({} {}, {} teams, {}-pt)",
            self.inner.league_id,
            self.inner.season_start_year,
            self.inner.team_count(),
            self.inner.rule.win_points
        )
    }
}

/// Season tables from a matches CSV. `schedule` maps league to adoption
/// year of the three-point rule; historical years when omitted.
#[pyfunction]
#[pyo3(signature = (path, schedule=None))]
fn read_tables(path: &str, schedule: Option<BTreeMap<String, i32>>) -> PyResult<Vec<PySeasonTable>> {
    let s = self::schedule(schedule)?;
    let tables = league::build_all_tables(&read_records(path)?, &s).map_err(err)?;
    Ok(tables.into_iter().map(|inner| PySeasonTable { inner }).collect())
}

/// `(hhi_min, hhi_max, method)` for `teams` under a win-points rule.
#[pyfunction]
#[pyo3(signature = (teams, win_points=2))]
fn hhi_bounds(teams: usize, win_points: u32) -> PyResult<(f64, f64, String)> {
    let b = metrics::hhi_bounds(teams, rule(win_points)?).map_err(err)?;
    let method = match b.method {
        metrics::BoundsMethod::Exhaustive => "exhaustive",
        metrics::BoundsMethod::CascadeFormula => "cascade-formula",
    };
    Ok((b.hhi_min, b.hhi_max, method.to_string()))
}

#[pyclass(name = "Panel", module = "pointshift", frozen)]
struct PyPanel {
    inner: PanelDataset,
}

#[pymethods]
impl PyPanel {
    #[staticmethod]
    #[pyo3(signature = (path, outcome="dcb", schedule=None, first=Some(1963), last=Some(1993)))]
    fn from_matches(
        path: &str,
        outcome: &str,
        schedule: Option<BTreeMap<String, i32>>,
        first: Option<i32>,
        last: Option<i32>,
    ) -> PyResult<Self> {
        let s = self::schedule(schedule)?;
        let kind: OutcomeKind = outcome.parse().map_err(err)?;
        let tables = league::build_all_tables(&read_records(path)?, &s).map_err(err)?;
        let window = first.zip(last);
        let inner = build_panel(&tables, kind, &s, window).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn units(&self) -> Vec<String> {
        self.inner.units.clone()
    }

    #[getter]
    fn seasons(&self) -> Vec<i32> {
        self.inner.seasons.clone()
    }

    #[getter]
    fn outcome_name(&self) -> &'static str {
        self.inner.outcome_name.label()
    }

    /// Outcome matrix as one list per unit.
    fn outcome(&self) -> Vec<Vec<f64>> {
        (0..self.inner.units.len()).map(|u| self.inner.series(u)).collect()
    }

    fn series(&self, unit: &str) -> PyResult<Vec<f64>> {
        let u = self.inner.unit_index(unit).map_err(err)?;
        Ok(self.inner.series(u))
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel({} units x {} seasons, {})",
            self.inner.units.len(),
            self.inner.seasons.len(),
            self.inner.outcome_name.label()
        )
    }
}

#[pyclass(name = "ScmFit", module = "pointshift", frozen)]
struct PyScmFit {
    inner: ScmFit,
}

#[pymethods]
impl PyScmFit {
    #[getter]
    fn treated(&self) -> &str {
        &self.inner.treated
    }

    #[getter]
    fn treatment_year(&self) -> i32 {
        self.inner.treatment_year
    }

    #[getter]
    fn ate(&self) -> f64 {
        self.inner.ate
    }

    #[getter]
    fn pre_rmse(&self) -> f64 {
        self.inner.pre_rmse
    }

    #[getter]
    fn weights(&self) -> BTreeMap<String, f64> {
        self.inner
            .donor_ids
            .iter()
            .cloned()
            .zip(self.inner.g.weights.iter().copied())
            .collect()
    }

    #[getter]
    fn v_weights(&self) -> Vec<(String, f64)> {
        self.inner
            .v
            .labels
            .iter()
            .cloned()
            .zip(self.inner.v.weights.iter().copied())
            .collect()
    }

    #[getter]
    fn seasons(&self) -> Vec<i32> {
        self.inner.seasons.clone()
    }

    #[getter]
    fn actual(&self) -> Vec<f64> {
        self.inner.actual.clone()
    }

    #[getter]
    fn synthetic(&self) -> Vec<f64> {
        self.inner.synthetic.clone()
    }

    #[getter]
    fn gaps(&self) -> Vec<f64> {
        self.inner.gaps.clone()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "ScmFit({} {}, ate={:.4}, pre_rmse={:.4})",
            self.inner.treated, self.inner.treatment_year, self.inner.ate, self.inner.pre_rmse
        )
    }
}

fn scm_config(
    panel: &PanelDataset,
    treated: &str,
    treatment_year: i32,
    donors: Option<Vec<String>>,
    lag_gap: u32,
    covariates: Option<Vec<String>>,
    seed: u64,
) -> PyResult<ScmConfig> {
    let covariates = match covariates {
        Some(names) => CovariateSet::from_names(&names).map_err(err)?,
        None => CovariateSet::ALL,
    };
    let donors = donors.unwrap_or_else(|| {
        panel
            .units
            .iter()
            .filter(|u| u.as_str() != treated)
            .cloned()
            .collect()
    });
    Ok(ScmConfig {
        treated: treated.to_string(),
        treatment_year,
        donors,
        spec: PredictorSpec::new(lag_gap, covariates).map_err(err)?,
        optimizer: OptimizerOptions {
            seed,
            ..OptimizerOptions::default()
        },
        eval_end: None,
    })
}

#[pyfunction]
#[pyo3(signature = (panel, treated="ENG", treatment_year=1981, donors=None, lag_gap=2, covariates=None, seed=42))]
fn fit_scm(
    py: Python<'_>,
    panel: &PyPanel,
    treated: &str,
    treatment_year: i32,
    donors: Option<Vec<String>>,
    lag_gap: u32,
    covariates: Option<Vec<String>>,
    seed: u64,
) -> PyResult<PyScmFit> {
    let cfg = scm_config(&panel.inner, treated, treatment_year, donors, lag_gap, covariates, seed)?;
    let inner = py.detach(|| scm::fit_scm(&panel.inner, &cfg)).map_err(err)?;
    Ok(PyScmFit { inner })
}

/// One fit per donor with treatment reassigned to it.
#[pyfunction]
#[pyo3(signature = (panel, treated="ENG", treatment_year=1981, donors=None, lag_gap=2, covariates=None, seed=42))]
fn placebo_in_space(
    py: Python<'_>,
    panel: &PyPanel,
    treated: &str,
    treatment_year: i32,
    donors: Option<Vec<String>>,
    lag_gap: u32,
    covariates: Option<Vec<String>>,
    seed: u64,
) -> PyResult<Vec<(String, PyScmFit)>> {
    let cfg = scm_config(&panel.inner, treated, treatment_year, donors, lag_gap, covariates, seed)?;
    let results = py
        .detach(|| inference::placebo_in_space(&panel.inner, &cfg))
        .map_err(err)?;
    Ok(results
        .into_iter()
        .map(|r| {
            let label = match r.label {
                inference::PlaceboLabel::Unit(u) => u,
                inference::PlaceboLabel::Year(y) => y.to_string(),
            };
            (label, PyScmFit { inner: r.fit })
        })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (panel, pseudo_year, treated="ENG", treatment_year=1981, donors=None, lag_gap=2, covariates=None, seed=42))]
fn placebo_in_time(
    py: Python<'_>,
    panel: &PyPanel,
    pseudo_year: i32,
    treated: &str,
    treatment_year: i32,
    donors: Option<Vec<String>>,
    lag_gap: u32,
    covariates: Option<Vec<String>>,
    seed: u64,
) -> PyResult<PyScmFit> {
    let cfg = scm_config(&panel.inner, treated, treatment_year, donors, lag_gap, covariates, seed)?;
    let r = py
        .detach(|| inference::placebo_in_time(&panel.inner, &cfg, pseudo_year))
        .map_err(err)?;
    Ok(PyScmFit { inner: r.fit })
}

type LooOutput = (Vec<(i32, f64, f64, f64)>, Vec<(String, PyScmFit)>);

/// `(envelope, refits)`: envelope rows are `(year, base_effect, min, max)`.
#[pyfunction]
#[pyo3(signature = (panel, treated="ENG", treatment_year=1981, donors=None, lag_gap=2, covariates=None, seed=42))]
fn leave_one_out(
    py: Python<'_>,
    panel: &PyPanel,
    treated: &str,
    treatment_year: i32,
    donors: Option<Vec<String>>,
    lag_gap: u32,
    covariates: Option<Vec<String>>,
    seed: u64,
) -> PyResult<LooOutput> {
    let cfg = scm_config(&panel.inner, treated, treatment_year, donors, lag_gap, covariates, seed)?;
    let loo = py
        .detach(|| {
            let base = scm::fit_scm(&panel.inner, &cfg)?;
            inference::leave_one_out(&panel.inner, &cfg, &base).map_err(|e| e.to_string().into())
        })
        .map_err(|e: Box<dyn std::error::Error + Send + Sync>| err(e))?;
    let envelope = loo
        .envelope
        .iter()
        .map(|r| (r.year, r.base_effect, r.min, r.max))
        .collect();
    let refits = loo
        .refits
        .into_iter()
        .map(|(d, inner)| (d, PyScmFit { inner }))
        .collect();
    Ok((envelope, refits))
}

/// Difference-in-differences with HC1 standard errors. Coefficients map
/// term to `(estimate, std_error, p_value)`.
#[pyfunction]
#[pyo3(signature = (panel, treated="ENG", treatment_year=1981, covariates=None))]
fn fit_did<'py>(
    py: Python<'py>,
    panel: &PyPanel,
    treated: &str,
    treatment_year: i32,
    covariates: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cov = match covariates {
        Some(names) => CovariateSet::from_names(&names).map_err(err)?,
        None => CovariateSet::from_names(&["avg_draw_share", "team_count"]).map_err(err)?,
    };
    let fit = did::fit_did(&panel.inner, treated, treatment_year, cov).map_err(err)?;
    let coefs = PyDict::new(py);
    for c in &fit.coefficients {
        coefs.set_item(&c.name, (c.estimate, c.std_error, c.p_value))?;
    }
    let d = PyDict::new(py);
    d.set_item("coefficients", coefs)?;
    d.set_item("r_squared", fit.r_squared)?;
    d.set_item("n_observations", fit.n_observations)?;
    d.set_item("robust_variant", fit.robust_variant)?;
    Ok(d)
}

/// Six simulated leagues, 1963-1993, the first one treated in 1981 with a
/// dispersion shift of `effect`. Returns the panel and the realized effect.
#[pyfunction]
#[pyo3(signature = (seed=42, effect=0.0))]
fn simulate(py: Python<'_>, seed: u64, effect: f64) -> PyResult<(PyPanel, f64)> {
    let sim = py
        .detach(|| sim::generate_panel_scenario(&sim::six_league_scenario(seed, effect)))
        .map_err(err)?;
    Ok((PyPanel { inner: sim.panel }, sim.truth.realized_effect))
}

#[pymodule]
#[pyo3(name = "pointshift")]
fn pointshift_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PointshiftError", m.py().get_type::<PointshiftError>())?;
    m.add_class::<PySeasonTable>()?;
    m.add_class::<PyPanel>()?;
    m.add_class::<PyScmFit>()?;
    m.add_function(wrap_pyfunction!(read_tables, m)?)?;
    m.add_function(wrap_pyfunction!(hhi_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scm, m)?)?;
    m.add_function(wrap_pyfunction!(placebo_in_space, m)?)?;
    m.add_function(wrap_pyfunction!(placebo_in_time, m)?)?;
    m.add_function(wrap_pyfunction!(leave_one_out, m)?)?;
    m.add_function(wrap_pyfunction!(fit_did, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

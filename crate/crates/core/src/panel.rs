//! Leagues × seasons outcome panel and SCM predictor construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::league::{season_covariates, RuleSchedule, SeasonCovariates, SeasonTable};
use crate::metrics::{self, MetricsError};

#[derive(Debug, Error, PartialEq)]
pub enum PanelError {
    #[error("panel is missing league-seasons: {}", .0.join(", "))]
    Gaps(Vec<String>),
    #[error("duplicate table for {0} {1}")]
    DuplicateCell(String, i32),
    #[error("{league} {season}: {source}")]
    Outcome {
        league: String,
        season: i32,
        source: MetricsError,
    },
    #[error("no tables in window")]
    Empty,
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("treatment year {year} outside seasons {first}..={last}")]
    TreatmentOutOfRange { year: i32, first: i32, last: i32 },
    #[error("no pre-treatment seasons before {0}")]
    EmptyPrePeriod(i32),
    #[error("donor pool is empty")]
    NoDonors,
    #[error("treated unit `{0}` cannot also be a donor")]
    TreatedAsDonor(String),
    #[error("lag gap must be one of 1, 2, 3, 5; got {0}")]
    BadLagGap(u32),
    #[error("unknown outcome `{0}`")]
    UnknownOutcome(String),
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("panel shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Dcb,
    NamsiHat,
    AvgGoals,
}

impl OutcomeKind {
    pub fn label(self) -> &'static str {
        match self {
            OutcomeKind::Dcb => "DCB",
            OutcomeKind::NamsiHat => "NAMSI_hat",
            OutcomeKind::AvgGoals => "Goals",
        }
    }

    pub fn compute(self, table: &SeasonTable) -> Result<f64, MetricsError> {
        match self {
            OutcomeKind::Dcb => metrics::dcb(table, table.rule),
            OutcomeKind::NamsiHat => metrics::namsi_hat(table),
            OutcomeKind::AvgGoals => metrics::table_avg_goals(table),
        }
    }
}

impl FromStr for OutcomeKind {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dcb" => Ok(OutcomeKind::Dcb),
            "namsi_hat" | "namsi-hat" => Ok(OutcomeKind::NamsiHat),
            "avg_goals" | "goals" => Ok(OutcomeKind::AvgGoals),
            _ => Err(PanelError::UnknownOutcome(s.to_string())),
        }
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeKind::Dcb => "dcb",
            OutcomeKind::NamsiHat => "namsi_hat",
            OutcomeKind::AvgGoals => "avg_goals",
        })
    }
}

/// Rectangular units × seasons panel. `outcome[(u, t)]` is unit `u` in
/// season `seasons[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub units: Vec<String>,
    pub seasons: Vec<i32>,
    pub outcome: DMatrix<f64>,
    pub covariates: Vec<Vec<SeasonCovariates>>,
    pub outcome_name: OutcomeKind,
}

impl PanelDataset {
    /// Builds a panel from explicit values, checking shape and ordering.
    pub fn new(
        units: Vec<String>,
        seasons: Vec<i32>,
        outcome: DMatrix<f64>,
        covariates: Vec<Vec<SeasonCovariates>>,
        outcome_name: OutcomeKind,
    ) -> Result<Self, PanelError> {
        if outcome.nrows() != units.len() || outcome.ncols() != seasons.len() {
            return Err(PanelError::Shape(format!(
                "outcome is {}x{}, expected {}x{}",
                outcome.nrows(),
                outcome.ncols(),
                units.len(),
                seasons.len()
            )));
        }
        if covariates.len() != units.len() || covariates.iter().any(|c| c.len() != seasons.len()) {
            return Err(PanelError::Shape("covariate grid does not match".into()));
        }
        if seasons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PanelError::Shape("seasons must be strictly increasing".into()));
        }
        let distinct: BTreeSet<&String> = units.iter().collect();
        if distinct.len() != units.len() {
            return Err(PanelError::Shape("duplicate unit".into()));
        }
        Ok(Self {
            units,
            seasons,
            outcome,
            covariates,
            outcome_name,
        })
    }

    pub fn unit_index(&self, unit: &str) -> Result<usize, PanelError> {
        self.units
            .iter()
            .position(|u| u == unit)
            .ok_or_else(|| PanelError::UnknownUnit(unit.to_string()))
    }

    pub fn season_index(&self, year: i32) -> Option<usize> {
        self.seasons.iter().position(|&s| s == year)
    }

    pub fn series(&self, unit: usize) -> Vec<f64> {
        self.outcome.row(unit).iter().copied().collect()
    }

    /// Restricts to `first..=last` seasons.
    pub fn window(&self, first: i32, last: i32) -> Result<PanelDataset, PanelError> {
        let cols: Vec<usize> = (0..self.seasons.len())
            .filter(|&t| (first..=last).contains(&self.seasons[t]))
            .collect();
        if cols.is_empty() {
            return Err(PanelError::Empty);
        }
        let outcome = DMatrix::from_fn(self.units.len(), cols.len(), |u, j| self.outcome[(u, cols[j])]);
        Ok(PanelDataset {
            units: self.units.clone(),
            seasons: cols.iter().map(|&t| self.seasons[t]).collect(),
            outcome,
            covariates: self
                .covariates
                .iter()
                .map(|row| cols.iter().map(|&t| row[t]).collect())
                .collect(),
            outcome_name: self.outcome_name,
        })
    }

    /// Keeps only the listed units, in the given order.
    pub fn select_units(&self, units: &[String]) -> Result<PanelDataset, PanelError> {
        let idx: Vec<usize> = units
            .iter()
            .map(|u| self.unit_index(u))
            .collect::<Result<_, _>>()?;
        let outcome = DMatrix::from_fn(idx.len(), self.seasons.len(), |r, t| self.outcome[(idx[r], t)]);
        PanelDataset::new(
            units.to_vec(),
            self.seasons.clone(),
            outcome,
            idx.iter().map(|&i| self.covariates[i].clone()).collect(),
            self.outcome_name,
        )
    }
}

/// Assembles the panel from season tables. Each table is re-scored under
/// the rule `schedule` puts in force for its league-season before the
/// outcome is computed. Seasons outside `window` are dropped.
pub fn build_panel(
    tables: &[SeasonTable],
    outcome: OutcomeKind,
    schedule: &RuleSchedule,
    window: Option<(i32, i32)>,
) -> Result<PanelDataset, PanelError> {
    let mut cells: BTreeMap<(String, i32), &SeasonTable> = BTreeMap::new();
    for t in tables {
        if let Some((a, b)) = window {
            if t.season_start_year < a || t.season_start_year > b {
                continue;
            }
        }
        let key = (t.league_id.clone(), t.season_start_year);
        if cells.insert(key, t).is_some() {
            return Err(PanelError::DuplicateCell(t.league_id.clone(), t.season_start_year));
        }
    }
    if cells.is_empty() {
        return Err(PanelError::Empty);
    }
    let units: Vec<String> = cells
        .keys()
        .map(|(l, _)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let seasons: Vec<i32> = match window {
        Some((a, b)) => (a..=b).collect(),
        None => cells.keys().map(|(_, s)| *s).collect::<BTreeSet<_>>().into_iter().collect(),
    };

    let mut gaps = Vec::new();
    let mut values = DMatrix::zeros(units.len(), seasons.len());
    let mut covariates = Vec::with_capacity(units.len());
    for (u, league) in units.iter().enumerate() {
        let mut row = Vec::with_capacity(seasons.len());
        for (t, &season) in seasons.iter().enumerate() {
            match cells.get(&(league.clone(), season)) {
                None => {
                    gaps.push(format!("{league} {season}"));
                    row.push(SeasonCovariates {
                        avg_win_share: f64::NAN,
                        avg_draw_share: f64::NAN,
                        team_count: 0,
                    });
                }
                Some(table) => {
                    let rescored = table.with_rule(schedule.rule_for(league, season));
                    values[(u, t)] = outcome.compute(&rescored).map_err(|source| {
                        PanelError::Outcome {
                            league: league.clone(),
                            season,
                            source,
                        }
                    })?;
                    row.push(season_covariates(&rescored));
                }
            }
        }
        covariates.push(row);
    }
    if !gaps.is_empty() {
        return Err(PanelError::Gaps(gaps));
    }
    PanelDataset::new(units, seasons, values, covariates, outcome)
}

/// Which pre-period covariate averages enter the predictor set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSet {
    pub avg_wins: bool,
    pub avg_draws: bool,
    pub team_count: bool,
}

impl CovariateSet {
    pub const ALL: CovariateSet = CovariateSet {
        avg_wins: true,
        avg_draws: true,
        team_count: true,
    };
    pub const NONE: CovariateSet = CovariateSet {
        avg_wins: false,
        avg_draws: false,
        team_count: false,
    };

    /// Parses names such as `avg_win_share`, `avg_draw_share`, `team_count`.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, PanelError> {
        let mut set = Self::NONE;
        for n in names {
            match n.as_ref() {
                "avg_win_share" | "wins" => set.avg_wins = true,
                "avg_draw_share" | "draws" => set.avg_draws = true,
                "team_count" | "teams" => set.team_count = true,
                other => return Err(PanelError::UnknownCovariate(other.to_string())),
            }
        }
        Ok(set)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.avg_wins {
            v.push("avg_win_share");
        }
        if self.avg_draws {
            v.push("avg_draw_share");
        }
        if self.team_count {
            v.push("team_count");
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub lag_gap: u32,
    pub covariates: CovariateSet,
    /// First pre-period season; the panel's first season when `None`.
    pub first_year: Option<i32>,
}

impl PredictorSpec {
    pub fn new(lag_gap: u32, covariates: CovariateSet) -> Result<Self, PanelError> {
        if ![1, 2, 3, 5].contains(&lag_gap) {
            return Err(PanelError::BadLagGap(lag_gap));
        }
        Ok(Self {
            lag_gap,
            covariates,
            first_year: None,
        })
    }

    /// Lag years anchored at `first`, stepping by the gap, before `treatment_year`.
    pub fn lag_years(&self, first: i32, treatment_year: i32) -> Vec<i32> {
        (first..treatment_year).step_by(self.lag_gap as usize).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorBlock {
    pub treated: DVector<f64>,
    /// Predictors × donors, columns in donor-list order.
    pub donors: DMatrix<f64>,
    pub labels: Vec<String>,
    pub donor_ids: Vec<String>,
}

/// Default donor pool: every other unit whose three-point adoption falls
/// after the panel's last season (or never happens).
pub fn default_donors(panel: &PanelDataset, treated: &str, schedule: &RuleSchedule) -> Vec<String> {
    let last = panel.seasons.last().copied().unwrap_or(i32::MIN);
    panel
        .units
        .iter()
        .filter(|u| u.as_str() != treated)
        .filter(|u| schedule.adoption_year(u).is_none_or(|y| y > last))
        .cloned()
        .collect()
}

/// Stacks lagged outcome rows and pre-period covariate means for the treated
/// unit and each donor.
pub fn build_predictors(
    panel: &PanelDataset,
    treated: &str,
    treatment_year: i32,
    donors: &[String],
    spec: &PredictorSpec,
) -> Result<PredictorBlock, PanelError> {
    if ![1, 2, 3, 5].contains(&spec.lag_gap) {
        return Err(PanelError::BadLagGap(spec.lag_gap));
    }
    let first = *panel.seasons.first().ok_or(PanelError::Empty)?;
    let last = *panel.seasons.last().ok_or(PanelError::Empty)?;
    if treatment_year < first || treatment_year > last {
        return Err(PanelError::TreatmentOutOfRange {
            year: treatment_year,
            first,
            last,
        });
    }
    let tr = panel.unit_index(treated)?;
    if donors.is_empty() {
        return Err(PanelError::NoDonors);
    }
    if donors.iter().any(|d| d == treated) {
        return Err(PanelError::TreatedAsDonor(treated.to_string()));
    }
    let donor_idx: Vec<usize> = donors
        .iter()
        .map(|d| panel.unit_index(d))
        .collect::<Result<_, _>>()?;

    let start = spec.first_year.unwrap_or(first).max(first);
    let pre: Vec<usize> = (0..panel.seasons.len())
        .filter(|&t| panel.seasons[t] >= start && panel.seasons[t] < treatment_year)
        .collect();
    if pre.is_empty() {
        return Err(PanelError::EmptyPrePeriod(treatment_year));
    }

    let mut labels = Vec::new();
    let mut rows: Vec<Box<dyn Fn(usize) -> f64 + '_>> = Vec::new();
    for year in spec.lag_years(start, treatment_year) {
        if let Some(t) = panel.season_index(year) {
            labels.push(format!("{}({year})", panel.outcome_name.label()));
            rows.push(Box::new(move |u| panel.outcome[(u, t)]));
        }
    }
    let pre_mean = |f: fn(&SeasonCovariates) -> f64| {
        let pre = pre.clone();
        move |u: usize| pre.iter().map(|&t| f(&panel.covariates[u][t])).sum::<f64>() / pre.len() as f64
    };
    if spec.covariates.avg_wins {
        labels.push("avg_win_share".into());
        rows.push(Box::new(pre_mean(|c| c.avg_win_share)));
    }
    if spec.covariates.avg_draws {
        labels.push("avg_draw_share".into());
        rows.push(Box::new(pre_mean(|c| c.avg_draw_share)));
    }
    if spec.covariates.team_count {
        labels.push("team_count".into());
        rows.push(Box::new(pre_mean(|c| c.team_count as f64)));
    }

    let treated_vec = DVector::from_iterator(rows.len(), rows.iter().map(|f| f(tr)));
    let donor_mat = DMatrix::from_fn(rows.len(), donor_idx.len(), |k, j| rows[k](donor_idx[j]));
    Ok(PredictorBlock {
        treated: treated_vec,
        donors: donor_mat,
        labels,
        donor_ids: donors.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::league::{build_season_table, fixtures, MatchRecord, PointsRule};

    fn toy_panel(units: usize, seasons: std::ops::RangeInclusive<i32>) -> PanelDataset {
        let names: Vec<String> = (0..units).map(|u| format!("U{u}")).collect();
        let years: Vec<i32> = seasons.collect();
        let outcome = DMatrix::from_fn(units, years.len(), |u, t| u as f64 + 0.01 * t as f64);
        let cov = (0..units)
            .map(|u| {
                (0..years.len())
                    .map(|t| SeasonCovariates {
                        avg_win_share: 0.3 + 0.01 * u as f64,
                        avg_draw_share: 0.2 + 0.001 * t as f64,
                        team_count: 18 + u,
                    })
                    .collect()
            })
            .collect();
        PanelDataset::new(names, years, outcome, cov, OutcomeKind::Dcb).unwrap()
    }

    fn relabel(ms: Vec<MatchRecord>, league: &str, season: i32) -> Vec<MatchRecord> {
        ms.into_iter()
            .map(|mut m| {
                m.league_id = league.into();
                m.season_start_year = season;
                m
            })
            .collect()
    }

    #[test]
    fn panel_shape_and_rule_schedule() {
        let mut tables = Vec::new();
        for league in ["ENG", "FRA"] {
            for season in 1980..=1982 {
                // Draws make the 3-pt rescoring visible in DCB.
                let ms = fixtures::round_robin(4, |i, j| match (i + j + season as usize) % 3 {
                    0 => 0,
                    1 => 1,
                    _ => -1,
                });
                let ms = relabel(ms, league, season);
                tables.push(build_season_table(&ms, PointsRule::TWO_POINT).unwrap());
            }
        }
        let sched = RuleSchedule::historical();
        let panel = build_panel(&tables, OutcomeKind::Dcb, &sched, None).unwrap();
        assert_eq!(panel.outcome.shape(), (2, 3));
        assert_eq!(panel.units, vec!["ENG", "FRA"]);
        // Same results, so ENG and FRA only differ where ENG plays under 3 points.
        assert_eq!(panel.outcome[(0, 0)], panel.outcome[(1, 0)]);
        assert_ne!(panel.outcome[(0, 1)], panel.outcome[(1, 1)]);
        let expected = metrics::dcb(&tables[1], PointsRule::THREE_POINT).unwrap();
        assert_eq!(panel.outcome[(0, 1)], expected);

        let alt = build_panel(&tables, OutcomeKind::NamsiHat, &sched, None).unwrap();
        assert_eq!(alt.covariates, panel.covariates);
        assert_ne!(alt.outcome, panel.outcome);
    }

    #[test]
    fn panel_reports_gaps() {
        let t1 = build_season_table(&relabel(fixtures::cascade(3), "A", 1990), PointsRule::TWO_POINT)
            .unwrap();
        let t2 = build_season_table(&relabel(fixtures::cascade(3), "B", 1991), PointsRule::TWO_POINT)
            .unwrap();
        match build_panel(&[t1, t2], OutcomeKind::Dcb, &RuleSchedule::new(), None) {
            Err(PanelError::Gaps(g)) => assert_eq!(g, vec!["A 1991", "B 1990"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gap_two_lags_from_first_year() {
        let panel = toy_panel(3, 1963..=1993);
        let spec = PredictorSpec::new(2, CovariateSet::ALL).unwrap();
        let donors = vec!["U1".to_string(), "U2".to_string()];
        let block = build_predictors(&panel, "U0", 1981, &donors, &spec).unwrap();
        let lag_labels: Vec<&str> = block.labels[..9].iter().map(String::as_str).collect();
        assert_eq!(
            lag_labels,
            [
                "DCB(1963)", "DCB(1965)", "DCB(1967)", "DCB(1969)", "DCB(1971)", "DCB(1973)",
                "DCB(1975)", "DCB(1977)", "DCB(1979)"
            ]
        );
        assert_eq!(block.labels.len(), 12);
        assert_eq!(block.donors.shape(), (12, 2));
        // DCB(1969) for donor U2 is column 1.
        assert_eq!(block.donors[(3, 1)], panel.outcome[(2, 6)]);
        // Team count is the pre-period mean.
        assert_eq!(block.treated[11], 18.0);
        let mean_draw: f64 = (0..18).map(|t| 0.2 + 0.001 * t as f64).sum::<f64>() / 18.0;
        assert!((block.treated[10] - mean_draw).abs() < 1e-15);

        let spec3 = PredictorSpec::new(3, CovariateSet::NONE).unwrap();
        let b3 = build_predictors(&panel, "U0", 1981, &donors, &spec3).unwrap();
        assert_eq!(b3.labels.first().unwrap(), "DCB(1963)");
        assert_eq!(b3.labels.last().unwrap(), "DCB(1978)");
        assert_eq!(b3.labels.len(), 6);
    }

    #[test]
    fn lag_row_count_formula() {
        for gap in [1u32, 2, 3, 5] {
            let spec = PredictorSpec::new(gap, CovariateSet::NONE).unwrap();
            for treat in 1964..1990 {
                let n = spec.lag_years(1963, treat).len() as i32;
                assert_eq!(n, (treat - 1 - 1963) / gap as i32 + 1);
            }
        }
    }

    #[test]
    fn minimal_block_and_errors() {
        let panel = toy_panel(2, 2000..=2001);
        let spec = PredictorSpec::new(1, CovariateSet::NONE).unwrap();
        let d = vec!["U1".to_string()];
        let b = build_predictors(&panel, "U0", 2001, &d, &spec).unwrap();
        assert_eq!(b.donors.shape(), (1, 1));
        assert_eq!(
            build_predictors(&panel, "U0", 2001, &[], &spec),
            Err(PanelError::NoDonors)
        );
        assert_eq!(
            build_predictors(&panel, "U0", 2000, &d, &spec),
            Err(PanelError::EmptyPrePeriod(2000))
        );
        assert!(PredictorSpec::new(4, CovariateSet::NONE).is_err());
        assert!(matches!(
            build_predictors(&panel, "U0", 2005, &d, &spec),
            Err(PanelError::TreatmentOutOfRange { .. })
        ));
    }

    #[test]
    fn default_donor_pool_excludes_early_adopters() {
        let panel = toy_panel(3, 1963..=1993);
        let mut sched = RuleSchedule::new();
        sched.insert("U0", 1981).unwrap();
        sched.insert("U1", 1990).unwrap();
        sched.insert("U2", 1995).unwrap();
        assert_eq!(default_donors(&panel, "U0", &sched), vec!["U2"]);
    }

    #[test]
    fn window_and_select() {
        let panel = toy_panel(3, 1963..=1993);
        let w = panel.window(1970, 1975).unwrap();
        assert_eq!(w.seasons, (1970..=1975).collect::<Vec<_>>());
        assert_eq!(w.outcome[(1, 0)], panel.outcome[(1, 7)]);
        let s = panel.select_units(&["U2".into(), "U0".into()]).unwrap();
        assert_eq!(s.series(0), panel.series(2));
    }
}

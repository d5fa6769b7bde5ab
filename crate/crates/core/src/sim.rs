//! Seeded generator of synthetic multi-league panels.
//!
//! Match results follow a Davidson-type model: with strength difference
//! `Δ = s_home − s_away`, the home win, draw and away win masses are
//! `e^{Δ/2}`, `ν` and `e^{−Δ/2}`, where `ν = 2p/(1 − p)` so that `p` is the
//! exact draw rate between equal teams. Every fixture draws from its own
//! RNG stream keyed by `(seed, league, season, home, away)`, which makes
//! output independent of generation order and couples twin runs that only
//! differ in strengths.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::league::{build_all_tables, LeagueError, MatchRecord, RuleSchedule, SeasonCovariates};
use crate::panel::{build_panel, OutcomeKind, PanelDataset, PanelError};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("league {league} needs at least 2 teams, has {teams}")]
    TooFewTeams { league: String, teams: usize },
    #[error("league {0}: strength vector length differs from team count")]
    StrengthLength(String),
    #[error("draw propensity {0} outside [0, 1]")]
    DrawPropensity(f64),
    #[error("league {0}: seasons differ from the rest of the panel")]
    SeasonMismatch(String),
    #[error("treated league `{0}` not in scenario")]
    UnknownTreated(String),
    #[error("common factor has {got} entries for {want} seasons")]
    CommonFactorLength { got: usize, want: usize },
    #[error("mixture weights must be non-negative and sum to 1")]
    MixtureWeights,
    #[error(transparent)]
    League(#[from] LeagueError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeagueScenario {
    pub league_id: String,
    /// Latent abilities, one per team.
    pub strengths: Vec<f64>,
    pub draw_propensity: f64,
    pub first_season: i32,
    pub last_season: i32,
    /// Std-dev of the per-season, per-team strength perturbation.
    pub strength_drift: f64,
    pub seed: u64,
}

impl LeagueScenario {
    pub fn teams(&self) -> usize {
        self.strengths.len()
    }

    pub fn seasons(&self) -> std::ops::RangeInclusive<i32> {
        self.first_season..=self.last_season
    }

    pub fn team_name(&self, k: usize) -> String {
        format!("{}-T{:02}", self.league_id, k + 1)
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.teams() < 2 {
            return Err(SimError::TooFewTeams {
                league: self.league_id.clone(),
                teams: self.teams(),
            });
        }
        if !(0.0..=1.0).contains(&self.draw_propensity) {
            return Err(SimError::DrawPropensity(self.draw_propensity));
        }
        Ok(())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED, |acc, p| splitmix(acc ^ splitmix(*p)))
}

fn label_hash(s: &str) -> u64 {
    // FNV-1a
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

const DRIFT_STREAM: u64 = u64::MAX;

/// Strengths in force for `season`, scaled by `dispersion` about zero.
pub fn season_strengths(scenario: &LeagueScenario, season: i32, dispersion: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[
        scenario.seed,
        label_hash(&scenario.league_id),
        season as u64,
        DRIFT_STREAM,
    ]));
    let drift = Normal::new(0.0, scenario.strength_drift.max(0.0)).expect("finite sd");
    scenario
        .strengths
        .iter()
        .map(|s| dispersion.max(0.0) * (s + drift.sample(&mut rng)))
        .collect()
}

/// Home win, draw and away win probabilities.
pub fn outcome_probabilities(strength_diff: f64, draw_propensity: f64) -> [f64; 3] {
    if draw_propensity >= 1.0 {
        return [0.0, 1.0, 0.0];
    }
    let nu = 2.0 * draw_propensity / (1.0 - draw_propensity);
    let h = (strength_diff / 2.0).exp();
    let a = (-strength_diff / 2.0).exp();
    let total = h + nu + a;
    [h / total, nu / total, a / total]
}

/// Full double round robin for one season at unit dispersion.
pub fn generate_season(scenario: &LeagueScenario, season: i32) -> Result<Vec<MatchRecord>, SimError> {
    generate_season_scaled(scenario, season, 1.0)
}

pub fn generate_season_scaled(
    scenario: &LeagueScenario,
    season: i32,
    dispersion: f64,
) -> Result<Vec<MatchRecord>, SimError> {
    scenario.validate()?;
    let strengths = season_strengths(scenario, season, dispersion);
    let league_key = label_hash(&scenario.league_id);
    let k = scenario.teams();
    let mut out = Vec::with_capacity(k * (k - 1));
    for h in 0..k {
        for a in 0..k {
            if h == a {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[
                scenario.seed,
                league_key,
                season as u64,
                h as u64,
                a as u64,
            ]));
            let [ph, pd, _] = outcome_probabilities(strengths[h] - strengths[a], scenario.draw_propensity);
            let u: f64 = rng.random();
            let draw_goals = Poisson::new(1.0).expect("positive rate");
            let loser_goals = Poisson::new(0.7).expect("positive rate");
            let margin = Poisson::new(0.5).expect("positive rate");
            let (hg, ag) = if u < ph {
                let l = loser_goals.sample(&mut rng) as u32;
                (l + 1 + margin.sample(&mut rng) as u32, l)
            } else if u < ph + pd {
                let g = draw_goals.sample(&mut rng) as u32;
                (g, g)
            } else {
                let l = loser_goals.sample(&mut rng) as u32;
                (l, l + 1 + margin.sample(&mut rng) as u32)
            };
            out.push(MatchRecord {
                league_id: scenario.league_id.clone(),
                season_start_year: season,
                home_team: scenario.team_name(h),
                away_team: scenario.team_name(a),
                home_goals: hg,
                away_goals: ag,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelScenario {
    pub leagues: Vec<LeagueScenario>,
    pub treated: String,
    pub treatment_year: i32,
    /// Per-season additive shock to every league's strength dispersion;
    /// empty for none.
    pub common_factor: Vec<f64>,
    /// Additive dispersion shift for the treated league from the treatment
    /// year on. Zero is the null scenario.
    pub treated_effect: f64,
    pub rule_schedule: RuleSchedule,
    pub outcome: OutcomeKind,
}

/// Injected ground truth, with the realized outcome shift measured against
/// a twin run that differs only in `treated_effect = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub treated: String,
    pub treatment_year: i32,
    pub nominal_effect: f64,
    pub realized_effect: f64,
    pub realized_path: Vec<(i32, f64)>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: PanelDataset,
    pub matches: Vec<MatchRecord>,
    pub truth: Truth,
}

impl PanelScenario {
    fn seasons(&self) -> Result<Vec<i32>, SimError> {
        let first = self.leagues.first().ok_or(SimError::UnknownTreated(self.treated.clone()))?;
        for l in &self.leagues {
            if l.seasons() != first.seasons() {
                return Err(SimError::SeasonMismatch(l.league_id.clone()));
            }
        }
        Ok(first.seasons().collect())
    }

    fn dispersion(&self, league: &str, t: usize, season: i32, effect: f64) -> f64 {
        let common = self.common_factor.get(t).copied().unwrap_or(0.0);
        let shift = if league == self.treated && season >= self.treatment_year {
            effect
        } else {
            0.0
        };
        1.0 + common + shift
    }

    fn matches_with_effect(&self, effect: f64) -> Result<Vec<MatchRecord>, SimError> {
        let seasons = self.seasons()?;
        if !self.common_factor.is_empty() && self.common_factor.len() != seasons.len() {
            return Err(SimError::CommonFactorLength {
                got: self.common_factor.len(),
                want: seasons.len(),
            });
        }
        let jobs: Vec<(&LeagueScenario, usize, i32)> = self
            .leagues
            .iter()
            .flat_map(|l| seasons.iter().enumerate().map(move |(t, &s)| (l, t, s)))
            .collect();
        let chunks: Vec<Vec<MatchRecord>> = jobs
            .par_iter()
            .map(|(l, t, s)| generate_season_scaled(l, *s, self.dispersion(&l.league_id, *t, *s, effect)))
            .collect::<Result<_, _>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    fn panel_from(&self, matches: &[MatchRecord]) -> Result<PanelDataset, SimError> {
        let tables = build_all_tables(matches, &self.rule_schedule)?;
        Ok(build_panel(&tables, self.outcome, &self.rule_schedule, None)?)
    }
}

pub fn generate_panel_scenario(spec: &PanelScenario) -> Result<SimulatedPanel, SimError> {
    if !spec.leagues.iter().any(|l| l.league_id == spec.treated) {
        return Err(SimError::UnknownTreated(spec.treated.clone()));
    }
    let matches = spec.matches_with_effect(spec.treated_effect)?;
    let panel = spec.panel_from(&matches)?;
    let tr = panel.unit_index(&spec.treated)?;

    let realized_path: Vec<(i32, f64)> = if spec.treated_effect == 0.0 {
        panel
            .seasons
            .iter()
            .filter(|&&s| s >= spec.treatment_year)
            .map(|&s| (s, 0.0))
            .collect()
    } else {
        let twin = spec.panel_from(&spec.matches_with_effect(0.0)?)?;
        panel
            .seasons
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= spec.treatment_year)
            .map(|(t, &s)| (s, panel.outcome[(tr, t)] - twin.outcome[(tr, t)]))
            .collect()
    };
    let realized_effect = if realized_path.is_empty() {
        0.0
    } else {
        realized_path.iter().map(|p| p.1).sum::<f64>() / realized_path.len() as f64
    };
    Ok(SimulatedPanel {
        panel,
        matches,
        truth: Truth {
            treated: spec.treated.clone(),
            treatment_year: spec.treatment_year,
            nominal_effect: spec.treated_effect,
            realized_effect,
            realized_path,
            seed: spec.leagues.first().map(|l| l.seed),
        },
    })
}

/// Searches the dispersion shift whose realized mean outcome shift is
/// closest to `target` (bisection on `[-0.95, 0.95]`).
pub fn calibrate_effect(spec: &PanelScenario, target: f64) -> Result<f64, SimError> {
    let realized = |e: f64| -> Result<f64, SimError> {
        let s = PanelScenario {
            treated_effect: e,
            ..spec.clone()
        };
        Ok(generate_panel_scenario(&s)?.truth.realized_effect)
    };
    let (mut lo, mut hi) = if target < 0.0 { (-0.95, 0.0) } else { (0.0, 0.95) };
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        let r = realized(mid)?;
        // Outcome rises with dispersion.
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Six leagues over 1963-1993 with one treated league, in the shape of the
/// historical study. Leagues differ in size, spread and draw propensity.
pub fn six_league_scenario(seed: u64, treated_effect: f64) -> PanelScenario {
    let ids = ["ENG", "FRA", "ESP", "NED", "ITA", "GER"];
    let teams = [22, 20, 18, 18, 16, 18];
    let spread = [1.05, 0.95, 1.15, 1.25, 0.85, 1.0];
    let draws = [0.27, 0.28, 0.26, 0.25, 0.32, 0.27];
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, 0xC0FFEE]));
    let common_noise = Normal::new(0.0, 0.08).expect("finite sd");
    let common_factor: Vec<f64> = (0..31)
        .map(|t| 0.12 * (t as f64 * 0.45).sin() + common_noise.sample(&mut rng))
        .collect();
    let leagues = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let k = teams[i];
            // Evenly spaced abilities keep the league's spread exact.
            let strengths = (0..k)
                .map(|j| spread[i] * (1.0 - 2.0 * j as f64 / (k - 1) as f64) * 1.2)
                .collect();
            LeagueScenario {
                league_id: id.to_string(),
                strengths,
                draw_propensity: draws[i],
                first_season: 1963,
                last_season: 1993,
                strength_drift: 0.15,
                seed,
            }
        })
        .collect();
    PanelScenario {
        leagues,
        treated: "ENG".into(),
        treatment_year: 1981,
        common_factor,
        treated_effect,
        rule_schedule: RuleSchedule::new(),
        outcome: OutcomeKind::Dcb,
    }
}

/// Donor leagues simulated match by match; the treated unit's outcome and
/// covariates are a fixed convex combination of donors plus Gaussian noise,
/// shifted by `effect` from the treatment year on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureScenario {
    pub donors: PanelScenario,
    pub treated: String,
    pub weights: Vec<(String, f64)>,
    pub noise_sd: f64,
    pub effect: f64,
    pub treatment_year: i32,
    pub seed: u64,
}

pub fn generate_mixture_panel(spec: &MixtureScenario) -> Result<SimulatedPanel, SimError> {
    let total: f64 = spec.weights.iter().map(|w| w.1).sum();
    if spec.weights.iter().any(|w| w.1 < 0.0) || (total - 1.0).abs() > 1e-12 {
        return Err(SimError::MixtureWeights);
    }
    let matches = spec.donors.matches_with_effect(0.0)?;
    let donor_panel = spec.donors.panel_from(&matches)?;
    let idx: Vec<(usize, f64)> = spec
        .weights
        .iter()
        .map(|(id, w)| donor_panel.unit_index(id).map(|i| (i, *w)))
        .collect::<Result<_, _>>()?;

    let build = |effect: f64| -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[spec.seed, label_hash(&spec.treated)]));
        let noise = Normal::new(0.0, spec.noise_sd.max(0.0)).expect("finite sd");
        let t_len = donor_panel.seasons.len();
        let n = donor_panel.units.len();
        let mut treated_row = Vec::with_capacity(t_len);
        let mut treated_cov = Vec::with_capacity(t_len);
        for (t, &season) in donor_panel.seasons.iter().enumerate() {
            let mix = |f: &dyn Fn(usize) -> f64| idx.iter().map(|(i, w)| w * f(*i)).sum::<f64>();
            let shift = if season >= spec.treatment_year { effect } else { 0.0 };
            treated_row.push(mix(&|i| donor_panel.outcome[(i, t)]) + noise.sample(&mut rng) + shift);
            treated_cov.push(SeasonCovariates {
                avg_win_share: mix(&|i| donor_panel.covariates[i][t].avg_win_share),
                avg_draw_share: mix(&|i| donor_panel.covariates[i][t].avg_draw_share),
                team_count: mix(&|i| donor_panel.covariates[i][t].team_count as f64).round() as usize,
            });
        }
        let mut units = vec![spec.treated.clone()];
        units.extend(donor_panel.units.iter().cloned());
        let outcome = DMatrix::from_fn(n + 1, t_len, |u, t| {
            if u == 0 {
                treated_row[t]
            } else {
                donor_panel.outcome[(u - 1, t)]
            }
        });
        let mut covariates = vec![treated_cov];
        covariates.extend(donor_panel.covariates.iter().cloned());
        PanelDataset::new(units, donor_panel.seasons.clone(), outcome, covariates, donor_panel.outcome_name)
            .expect("shape preserved")
    };

    let panel = build(spec.effect);
    let twin = build(0.0);
    let realized_path: Vec<(i32, f64)> = panel
        .seasons
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= spec.treatment_year)
        .map(|(t, &s)| (s, panel.outcome[(0, t)] - twin.outcome[(0, t)]))
        .collect();
    let realized_effect =
        realized_path.iter().map(|p| p.1).sum::<f64>() / realized_path.len().max(1) as f64;
    Ok(SimulatedPanel {
        panel,
        matches,
        truth: Truth {
            treated: spec.treated.clone(),
            treatment_year: spec.treatment_year,
            nominal_effect: spec.effect,
            realized_effect,
            realized_path,
            seed: Some(spec.seed),
        },
    })
}

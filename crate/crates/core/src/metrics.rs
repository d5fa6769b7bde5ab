//! Competitive-balance indices for a single league-season.
//!
//! Two readings of a team's "win share" coexist here: the win percentage
//! `wins / matches_played` used by the σ, r and NAMSI families, and the
//! share of all league wins used by the HHI_W family. They are exposed
//! through distinct accessors on [`SeasonTable`].

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::league::{MatchRecord, PointsRule, SeasonTable};

/// Tolerance on `Σ s = 1` for share vectors.
pub const SHARE_SUM_TOL: f64 = 1e-9;
/// Normalized HHI within this distance of `[0, 1]` is clamped.
pub const DCB_CLAMP_TOL: f64 = 1e-9;
/// Largest league size solved by exhaustive enumeration of results.
pub const MAX_EXHAUSTIVE_TEAMS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shares sum to {0}, expected 1")]
    ShareSum(f64),
    #[error("negative share {0}")]
    NegativeShare(f64),
    #[error("need at least 2 teams, got {0}")]
    TooFewTeams(usize),
    #[error("no points were awarded")]
    NoPoints,
    #[error("degenerate HHI bounds: max {max} <= min {min}")]
    DegenerateBounds { min: f64, max: f64 },
    #[error("normalized HHI {raw} outside [0, 1]: hhi_max ({method:?}) is not the true maximum here")]
    BoundsViolation { raw: f64, method: BoundsMethod },
    #[error("team {0} played no matches")]
    NoMatches(String),
    #[error("no wins in season; win-share HHI undefined")]
    NoWins,
    #[error("no draws in season; draw-share HHI undefined")]
    NoDraws,
    #[error("degenerate NAMSI denominator")]
    DegenerateNamsi,
    #[error("season has no matches")]
    EmptySeason,
    #[error("goals divisor must be positive, got {0}")]
    BadDivisor(f64),
}

pub fn hhi(shares: &[f64]) -> Result<f64, MetricsError> {
    if let Some(&neg) = shares.iter().find(|s| **s < 0.0) {
        return Err(MetricsError::NegativeShare(neg));
    }
    let sum: f64 = shares.iter().sum();
    if (sum - 1.0).abs() > SHARE_SUM_TOL {
        return Err(MetricsError::ShareSum(sum));
    }
    Ok(shares.iter().map(|s| s * s).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundsMethod {
    Exhaustive,
    CascadeFormula,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HhiBounds {
    pub hhi_min: f64,
    pub hhi_max: f64,
    pub teams: usize,
    pub rule: PointsRule,
    pub method: BoundsMethod,
}

/// HHI of the fully hierarchical double round robin, where each team beats
/// every lower-ranked team home and away. With zero points for a loss this
/// is `2(2K−1) / (3K(K−1))` whatever the win value.
pub fn cascade_hhi(teams: usize, rule: PointsRule) -> f64 {
    let k = teams as u64;
    let pts: Vec<u64> = (0..k)
        .map(|rank| {
            let wins = 2 * (k - 1 - rank);
            let losses = 2 * rank;
            u64::from(rule.win_points) * wins + u64::from(rule.loss_points) * losses
        })
        .collect();
    let total: u64 = pts.iter().sum();
    let sq: u64 = pts.iter().map(|p| p * p).sum();
    sq as f64 / (total * total) as f64
}

/// Exact maximum HHI over every result assignment of a `teams`-team double
/// round robin, with the maximizing points vector. Ratios are compared in
/// integer arithmetic.
pub fn exhaustive_hhi_max(teams: usize, rule: PointsRule) -> (f64, Vec<u64>) {
    let fixtures: Vec<(usize, usize)> = (0..teams)
        .flat_map(|i| (0..teams).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let n = fixtures.len() as u32;
    let w = u64::from(rule.win_points);
    let d = u64::from(rule.draw_points);
    let l = u64::from(rule.loss_points);
    let mut best_num: u128 = 0;
    let mut best_den: u128 = 1;
    let mut best_pts = vec![0u64; teams];
    let mut pts = vec![0u64; teams];
    for code in 0..3u64.pow(n) {
        pts.iter_mut().for_each(|p| *p = 0);
        let mut c = code;
        for &(h, a) in &fixtures {
            match c % 3 {
                0 => {
                    pts[h] += w;
                    pts[a] += l;
                }
                1 => {
                    pts[h] += d;
                    pts[a] += d;
                }
                _ => {
                    pts[h] += l;
                    pts[a] += w;
                }
            }
            c /= 3;
        }
        let total: u128 = pts.iter().map(|&p| u128::from(p)).sum();
        let sq: u128 = pts.iter().map(|&p| u128::from(p * p)).sum();
        let den = total * total;
        if sq * best_den > best_num * den {
            best_num = sq;
            best_den = den;
            best_pts.copy_from_slice(&pts);
        }
    }
    (best_num as f64 / best_den as f64, best_pts)
}

fn bounds_cache() -> &'static Mutex<HashMap<(usize, PointsRule), HhiBounds>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, PointsRule), HhiBounds>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Lower and upper HHI bounds for a `teams`-team league. Leagues of up to
/// four teams are solved exactly; larger ones use the cascade configuration.
pub fn hhi_bounds(teams: usize, rule: PointsRule) -> Result<HhiBounds, MetricsError> {
    if teams < 2 {
        return Err(MetricsError::TooFewTeams(teams));
    }
    if let Some(b) = bounds_cache().lock().unwrap().get(&(teams, rule)) {
        return Ok(*b);
    }
    let (hhi_max, method) = if teams <= MAX_EXHAUSTIVE_TEAMS {
        (exhaustive_hhi_max(teams, rule).0, BoundsMethod::Exhaustive)
    } else {
        (cascade_hhi(teams, rule), BoundsMethod::CascadeFormula)
    };
    let b = HhiBounds {
        hhi_min: 1.0 / teams as f64,
        hhi_max,
        teams,
        rule,
        method,
    };
    bounds_cache().lock().unwrap().insert((teams, rule), b);
    Ok(b)
}

/// Min-max normalized HHI of points shares, square-rooted.
pub fn dcb_from_shares(shares: &[f64], bounds: &HhiBounds) -> Result<f64, MetricsError> {
    if bounds.hhi_max <= bounds.hhi_min {
        return Err(MetricsError::DegenerateBounds {
            min: bounds.hhi_min,
            max: bounds.hhi_max,
        });
    }
    hhi(shares)?;
    // HHI − 1/K written as squared deviations from 1/K, which stays exact
    // near perfect balance where sqrt magnifies cancellation error.
    let excess: f64 = shares.iter().map(|s| (s - bounds.hhi_min).powi(2)).sum();
    let raw = excess / (bounds.hhi_max - bounds.hhi_min);
    if !(-DCB_CLAMP_TOL..=1.0 + DCB_CLAMP_TOL).contains(&raw) {
        return Err(MetricsError::BoundsViolation {
            raw,
            method: bounds.method,
        });
    }
    Ok(raw.clamp(0.0, 1.0).sqrt())
}

/// Distance to competitive balance of a season's points distribution under
/// `rule`.
pub fn dcb(table: &SeasonTable, rule: PointsRule) -> Result<f64, MetricsError> {
    let table = table.with_rule(rule);
    if table.team_count() < 2 {
        return Err(MetricsError::TooFewTeams(table.team_count()));
    }
    if table.total_points() == 0 {
        return Err(MetricsError::NoPoints);
    }
    let bounds = hhi_bounds(table.team_count(), rule)?;
    dcb_from_shares(&table.points_shares(), &bounds)
}

fn check_played(table: &SeasonTable) -> Result<(), MetricsError> {
    if table.team_count() < 2 {
        return Err(MetricsError::TooFewTeams(table.team_count()));
    }
    match table.rows.iter().find(|r| r.matches_played == 0) {
        Some(r) => Err(MetricsError::NoMatches(r.team.clone())),
        None => Ok(()),
    }
}

fn rms_about(values: &[f64], centre: f64) -> f64 {
    (values.iter().map(|w| (w - centre).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Mean win percentage across teams.
pub fn mean_win_share(table: &SeasonTable) -> f64 {
    let w = table.win_fractions();
    w.iter().sum::<f64>() / w.len().max(1) as f64
}

/// Per-team matches used by the r family; the mean when teams differ.
fn matches_for_ratio(table: &SeasonTable) -> f64 {
    match table.uniform_matches_played() {
        Some(m) => f64::from(m),
        None => {
            let m = table.mean_matches_played();
            log::warn!(
                "{} {}: teams played different match counts, using mean m = {m}",
                table.league_id,
                table.season_start_year
            );
            m
        }
    }
}

/// Standard deviation of win percentages about the perfectly balanced 0.5.
pub fn sigma(table: &SeasonTable) -> Result<f64, MetricsError> {
    check_played(table)?;
    Ok(rms_about(&table.win_fractions(), 0.5))
}

/// σ relative to the idealized standard deviation `0.5/√m`.
pub fn r(table: &SeasonTable) -> Result<f64, MetricsError> {
    let s = sigma(table)?;
    Ok(s / (0.5 / matches_for_ratio(table).sqrt()))
}

/// Like [`sigma`], centred on the season's mean win percentage.
pub fn sigma_hat(table: &SeasonTable) -> Result<f64, MetricsError> {
    check_played(table)?;
    Ok(rms_about(&table.win_fractions(), mean_win_share(table)))
}

/// σ̂ over the same `0.5/√m` benchmark as r.
pub fn r_hat(table: &SeasonTable) -> Result<f64, MetricsError> {
    let s = sigma_hat(table)?;
    Ok(s / (0.5 / matches_for_ratio(table).sqrt()))
}

/// Win percentages of a fully predictable season, best team first:
/// `(K − j)/(K − 1)` for rank `j = 1..K`.
pub fn full_predictability_win_shares(teams: usize) -> Vec<f64> {
    (1..=teams)
        .map(|j| (teams - j) as f64 / (teams - 1) as f64)
        .collect()
}

fn namsi_about(table: &SeasonTable, centre: f64) -> Result<f64, MetricsError> {
    check_played(table)?;
    let num: f64 = table
        .win_fractions()
        .iter()
        .map(|w| (w - centre).powi(2))
        .sum();
    let den: f64 = full_predictability_win_shares(table.team_count())
        .iter()
        .map(|w| (w - centre).powi(2))
        .sum();
    if den <= 0.0 {
        return Err(MetricsError::DegenerateNamsi);
    }
    Ok((num / den).sqrt())
}

/// National measure of seasonal imbalance.
pub fn namsi(table: &SeasonTable) -> Result<f64, MetricsError> {
    namsi_about(table, 0.5)
}

/// NAMSI with 0.5 replaced by the season's mean win percentage.
pub fn namsi_hat(table: &SeasonTable) -> Result<f64, MetricsError> {
    namsi_about(table, mean_win_share(table))
}

pub fn hhi_w(table: &SeasonTable) -> Result<f64, MetricsError> {
    hhi(&table.win_shares_of_total().ok_or(MetricsError::NoWins)?)
}

pub fn ahhi_w(table: &SeasonTable) -> Result<f64, MetricsError> {
    Ok(hhi_w(table)? - 1.0 / table.team_count() as f64)
}

pub fn hhi_d(table: &SeasonTable) -> Result<f64, MetricsError> {
    hhi(&table.draw_shares_of_total().ok_or(MetricsError::NoDraws)?)
}

pub fn ahhi_d(table: &SeasonTable) -> Result<f64, MetricsError> {
    Ok(hhi_d(table)? - 1.0 / table.team_count() as f64)
}

/// Total goals over `divisor × matches`.
pub fn goals_per_match(matches: &[MatchRecord], divisor: f64) -> Result<f64, MetricsError> {
    if matches.is_empty() {
        return Err(MetricsError::EmptySeason);
    }
    if divisor <= 0.0 || divisor.is_nan() {
        return Err(MetricsError::BadDivisor(divisor));
    }
    let goals: u64 = matches
        .iter()
        .map(|m| u64::from(m.home_goals) + u64::from(m.away_goals))
        .sum();
    Ok(goals as f64 / (divisor * matches.len() as f64))
}

/// Goals per team per match.
pub fn avg_goals_per_team_match(matches: &[MatchRecord]) -> Result<f64, MetricsError> {
    goals_per_match(matches, 2.0)
}

/// Goals per team per match from a table's goal totals.
pub fn table_avg_goals(table: &SeasonTable) -> Result<f64, MetricsError> {
    let played: u64 = table.rows.iter().map(|r| u64::from(r.matches_played)).sum();
    if played == 0 {
        return Err(MetricsError::EmptySeason);
    }
    Ok(table.total_goals() as f64 / played as f64)
}

/// Every index for one league-season. Win- and draw-share HHIs are absent
/// when the season had no wins or no draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceIndices {
    pub dcb: f64,
    pub hhi: f64,
    pub sigma: f64,
    pub r: f64,
    pub sigma_hat: f64,
    pub r_hat: f64,
    pub namsi: f64,
    pub namsi_hat: f64,
    pub hhi_w: Option<f64>,
    pub ahhi_w: Option<f64>,
    pub hhi_d: Option<f64>,
    pub ahhi_d: Option<f64>,
    pub avg_goals_per_team_match: f64,
    pub mean_win_share: f64,
}

/// Computes all indices with points taken under the table's own rule.
pub fn balance_indices(table: &SeasonTable) -> Result<BalanceIndices, MetricsError> {
    let defined = |r: Result<f64, MetricsError>| match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::NoWins | MetricsError::NoDraws) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(BalanceIndices {
        dcb: dcb(table, table.rule)?,
        hhi: hhi(&table.points_shares())?,
        sigma: sigma(table)?,
        r: r(table)?,
        sigma_hat: sigma_hat(table)?,
        r_hat: r_hat(table)?,
        namsi: namsi(table)?,
        namsi_hat: namsi_hat(table)?,
        hhi_w: defined(hhi_w(table))?,
        ahhi_w: defined(ahhi_w(table))?,
        hhi_d: defined(hhi_d(table))?,
        ahhi_d: defined(ahhi_d(table))?,
        avg_goals_per_team_match: table_avg_goals(table)?,
        mean_win_share: mean_win_share(table),
    })
}

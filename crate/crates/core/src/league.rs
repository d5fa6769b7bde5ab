//! Match ingestion and season standings.
//!
//! A season table is built from the realized fixtures of one league-season,
//! so incomplete round robins and leagues that change size between seasons
//! are handled without special cases. Rows are kept in team-identifier order.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Header of the matches CSV format.
pub const MATCHES_HEADER: [&str; 6] = [
    "league_id",
    "season_start_year",
    "home_team",
    "away_team",
    "home_goals",
    "away_goals",
];

#[derive(Debug, Error, PartialEq)]
pub enum LeagueError {
    #[error("line {line}: field `{field}`: {reason}")]
    Parse {
        line: u64,
        field: &'static str,
        reason: String,
    },
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("invalid points rule {win}/{draw}/{loss}: need win > draw > loss")]
    InvalidRule { win: u32, draw: u32, loss: u32 },
    #[error("season table needs at least one match")]
    EmptySeason,
    #[error("mixed league-seasons in one table: {0}/{1} and {2}/{3}")]
    MixedSeason(String, i32, String, i32),
    #[error("team {0} plays itself")]
    SelfMatch(String),
    #[error("rule schedule lists league {0} more than once")]
    DuplicateSchedule(String),
    #[error("rule schedule entry `{0}` is not `league = year`")]
    ScheduleSyntax(String),
}

/// One played fixture.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchRecord {
    pub league_id: String,
    pub season_start_year: i32,
    pub home_team: String,
    pub away_team: String,
    pub home_goals: u32,
    pub away_goals: u32,
}

impl MatchRecord {
    pub fn new(
        league_id: impl Into<String>,
        season_start_year: i32,
        home_team: impl Into<String>,
        away_team: impl Into<String>,
        home_goals: u32,
        away_goals: u32,
    ) -> Result<Self, LeagueError> {
        let rec = Self {
            league_id: league_id.into(),
            season_start_year,
            home_team: home_team.into(),
            away_team: away_team.into(),
            home_goals,
            away_goals,
        };
        if rec.home_team == rec.away_team {
            return Err(LeagueError::SelfMatch(rec.home_team));
        }
        Ok(rec)
    }

    pub fn is_draw(&self) -> bool {
        self.home_goals == self.away_goals
    }
}

/// A non-fatal finding from [`parse_matches`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedMatches {
    pub records: Vec<MatchRecord>,
    pub warnings: Vec<ParseWarning>,
}

fn field(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<&str, LeagueError> {
    rec.get(idx)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| LeagueError::Parse {
            line,
            field: MATCHES_HEADER[idx],
            reason: "missing value".into(),
        })
}

fn number<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: u64,
) -> Result<T, LeagueError>
where
    T::Err: std::fmt::Display,
{
    let raw = field(rec, idx, line)?;
    raw.parse::<T>().map_err(|e| LeagueError::Parse {
        line,
        field: MATCHES_HEADER[idx],
        reason: format!("`{raw}`: {e}"),
    })
}

/// Parses the matches CSV format. Row order is preserved; an exact repeat of
/// a fixture within a season is kept and reported as a warning.
pub fn parse_matches<R: Read>(source: R) -> Result<ParsedMatches, LeagueError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader.headers().map_err(|e| LeagueError::Header {
        expected: MATCHES_HEADER.join(","),
        found: e.to_string(),
    })?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != MATCHES_HEADER {
        return Err(LeagueError::Header {
            expected: MATCHES_HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut out = ParsedMatches::default();
    let mut seen: HashMap<(String, i32, String, String), u64> = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| LeagueError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            field: "row",
            reason: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != MATCHES_HEADER.len() {
            return Err(LeagueError::Parse {
                line,
                field: "row",
                reason: format!("expected 6 fields, found {}", row.len()),
            });
        }
        let league = field(&row, 0, line)?.to_string();
        let season: i32 = number(&row, 1, line)?;
        let home = field(&row, 2, line)?.to_string();
        let away = field(&row, 3, line)?.to_string();
        let home_goals: u32 = number(&row, 4, line)?;
        let away_goals: u32 = number(&row, 5, line)?;
        if home == away {
            return Err(LeagueError::Parse {
                line,
                field: "away_team",
                reason: format!("team `{home}` cannot play itself"),
            });
        }
        let key = (league.clone(), season, home.clone(), away.clone());
        if let Some(first) = seen.get(&key) {
            out.warnings.push(ParseWarning {
                line,
                message: format!(
                    "duplicate fixture {home} v {away} in {league} {season} (first at line {first})"
                ),
            });
        } else {
            seen.insert(key, line);
        }
        out.records.push(MatchRecord {
            league_id: league,
            season_start_year: season,
            home_team: home,
            away_team: away,
            home_goals,
            away_goals,
        });
    }
    for w in &out.warnings {
        log::warn!("line {}: {}", w.line, w.message);
    }
    Ok(out)
}

/// Writes records in the matches CSV format.
pub fn write_matches<W: std::io::Write>(
    records: &[MatchRecord],
    sink: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(MATCHES_HEADER)?;
    for r in records {
        w.write_record([
            r.league_id.as_str(),
            &r.season_start_year.to_string(),
            &r.home_team,
            &r.away_team,
            &r.home_goals.to_string(),
            &r.away_goals.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// League points awarded per result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointsRule {
    pub win_points: u32,
    pub draw_points: u32,
    pub loss_points: u32,
}

impl PointsRule {
    pub const TWO_POINT: PointsRule = PointsRule {
        win_points: 2,
        draw_points: 1,
        loss_points: 0,
    };
    pub const THREE_POINT: PointsRule = PointsRule {
        win_points: 3,
        draw_points: 1,
        loss_points: 0,
    };

    pub fn new(win_points: u32, draw_points: u32, loss_points: u32) -> Result<Self, LeagueError> {
        if !(win_points > draw_points && draw_points > loss_points) {
            return Err(LeagueError::InvalidRule {
                win: win_points,
                draw: draw_points,
                loss: loss_points,
            });
        }
        Ok(Self {
            win_points,
            draw_points,
            loss_points,
        })
    }

    pub fn points(&self, wins: u32, draws: u32, losses: u32) -> u64 {
        u64::from(self.win_points) * u64::from(wins)
            + u64::from(self.draw_points) * u64::from(draws)
            + u64::from(self.loss_points) * u64::from(losses)
    }
}

/// First season (by start year) in which each league awarded three points
/// for a win. Leagues absent from the map never switch inside the data.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleSchedule {
    adoption: BTreeMap<String, i32>,
}

impl RuleSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adoption years for the six leagues of the 1963-1993 study window.
    pub fn historical() -> Self {
        let mut s = Self::new();
        for (league, year) in [
            ("ENG", 1981),
            ("GER", 1995),
            ("ESP", 1995),
            ("NED", 1995),
            ("ITA", 1994),
            ("FRA", 1994),
        ] {
            s.adoption.insert(league.to_string(), year);
        }
        s
    }

    pub fn insert(&mut self, league: impl Into<String>, year: i32) -> Result<(), LeagueError> {
        let league = league.into();
        if self.adoption.contains_key(&league) {
            return Err(LeagueError::DuplicateSchedule(league));
        }
        self.adoption.insert(league, year);
        Ok(())
    }

    /// Parses `league = year` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, LeagueError> {
        let mut s = Self::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (league, year) = line
                .split_once('=')
                .ok_or_else(|| LeagueError::ScheduleSyntax(raw.to_string()))?;
            let league = league.trim().trim_matches('"');
            let year: i32 = year
                .trim()
                .parse()
                .map_err(|_| LeagueError::ScheduleSyntax(raw.to_string()))?;
            if league.is_empty() {
                return Err(LeagueError::ScheduleSyntax(raw.to_string()));
            }
            s.insert(league, year)?;
        }
        Ok(s)
    }

    pub fn adoption_year(&self, league: &str) -> Option<i32> {
        self.adoption.get(league).copied()
    }

    pub fn rule_for(&self, league: &str, season: i32) -> PointsRule {
        match self.adoption_year(league) {
            Some(y) if season >= y => PointsRule::THREE_POINT,
            _ => PointsRule::TWO_POINT,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i32)> {
        self.adoption.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamRow {
    pub team: String,
    pub matches_played: u32,
    pub wins: u32,
    pub draws: u32,
    pub losses: u32,
    pub goals_for: u32,
    pub goals_against: u32,
    pub points: u64,
}

/// Standings of one league-season under a points rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonTable {
    pub league_id: String,
    pub season_start_year: i32,
    pub rule: PointsRule,
    pub rows: Vec<TeamRow>,
}

pub fn build_season_table(
    matches: &[MatchRecord],
    rule: PointsRule,
) -> Result<SeasonTable, LeagueError> {
    let first = matches.first().ok_or(LeagueError::EmptySeason)?;
    let mut acc: BTreeMap<&str, TeamRow> = BTreeMap::new();
    let blank = |team: &str| TeamRow {
        team: team.to_string(),
        matches_played: 0,
        wins: 0,
        draws: 0,
        losses: 0,
        goals_for: 0,
        goals_against: 0,
        points: 0,
    };
    for m in matches {
        if m.league_id != first.league_id || m.season_start_year != first.season_start_year {
            return Err(LeagueError::MixedSeason(
                first.league_id.clone(),
                first.season_start_year,
                m.league_id.clone(),
                m.season_start_year,
            ));
        }
        if m.home_team == m.away_team {
            return Err(LeagueError::SelfMatch(m.home_team.clone()));
        }
        for (team, gf, ga) in [
            (&m.home_team, m.home_goals, m.away_goals),
            (&m.away_team, m.away_goals, m.home_goals),
        ] {
            let row = acc.entry(team.as_str()).or_insert_with(|| blank(team));
            row.matches_played += 1;
            row.goals_for += gf;
            row.goals_against += ga;
            match gf.cmp(&ga) {
                std::cmp::Ordering::Greater => row.wins += 1,
                std::cmp::Ordering::Equal => row.draws += 1,
                std::cmp::Ordering::Less => row.losses += 1,
            }
        }
    }
    let mut table = SeasonTable {
        league_id: first.league_id.clone(),
        season_start_year: first.season_start_year,
        rule,
        rows: acc.into_values().collect(),
    };
    table.apply_rule(rule);
    Ok(table)
}

impl SeasonTable {
    /// Recomputes points under another rule; results are unchanged.
    pub fn with_rule(&self, rule: PointsRule) -> SeasonTable {
        let mut t = self.clone();
        t.apply_rule(rule);
        t
    }

    fn apply_rule(&mut self, rule: PointsRule) {
        self.rule = rule;
        for row in &mut self.rows {
            row.points = rule.points(row.wins, row.draws, row.losses);
        }
    }

    pub fn team_count(&self) -> usize {
        self.rows.len()
    }

    pub fn total_points(&self) -> u64 {
        self.rows.iter().map(|r| r.points).sum()
    }

    pub fn match_count(&self) -> u64 {
        self.rows.iter().map(|r| u64::from(r.matches_played)).sum::<u64>() / 2
    }

    pub fn total_goals(&self) -> u64 {
        self.rows.iter().map(|r| u64::from(r.goals_for)).sum()
    }

    /// Points shares `s`; all zero when no points were awarded.
    pub fn points_shares(&self) -> Vec<f64> {
        let total = self.total_points();
        if total == 0 {
            return vec![0.0; self.rows.len()];
        }
        self.rows
            .iter()
            .map(|r| r.points as f64 / total as f64)
            .collect()
    }

    /// Win percentage `wins / matches_played` per team.
    pub fn win_fractions(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| f64::from(r.wins) / f64::from(r.matches_played.max(1)))
            .collect()
    }

    /// Draw percentage `draws / matches_played` per team.
    pub fn draw_fractions(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| f64::from(r.draws) / f64::from(r.matches_played.max(1)))
            .collect()
    }

    /// Each team's share of all wins in the league; `None` if nobody won.
    pub fn win_shares_of_total(&self) -> Option<Vec<f64>> {
        share_of_total(self.rows.iter().map(|r| r.wins))
    }

    /// Each team's share of all per-team draws; `None` if nothing was drawn.
    pub fn draw_shares_of_total(&self) -> Option<Vec<f64>> {
        share_of_total(self.rows.iter().map(|r| r.draws))
    }

    pub fn uniform_matches_played(&self) -> Option<u32> {
        let m = self.rows.first()?.matches_played;
        self.rows.iter().all(|r| r.matches_played == m).then_some(m)
    }

    pub fn mean_matches_played(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| f64::from(r.matches_played)).sum::<f64>()
            / self.rows.len() as f64
    }
}

fn share_of_total(counts: impl Iterator<Item = u32> + Clone) -> Option<Vec<f64>> {
    let total: u64 = counts.clone().map(u64::from).sum();
    (total > 0).then(|| counts.map(|c| f64::from(c) / total as f64).collect())
}

/// Season-level covariates used as SCM predictors and DID controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonCovariates {
    pub avg_win_share: f64,
    pub avg_draw_share: f64,
    pub team_count: usize,
}

pub fn season_covariates(table: &SeasonTable) -> SeasonCovariates {
    let k = table.team_count();
    let mean = |v: Vec<f64>| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    SeasonCovariates {
        avg_win_share: mean(table.win_fractions()),
        avg_draw_share: mean(table.draw_fractions()),
        team_count: k,
    }
}

/// Splits a match list into league-season groups, preserving row order
/// within each group.
pub fn group_by_season(records: &[MatchRecord]) -> BTreeMap<(String, i32), Vec<MatchRecord>> {
    let mut out: BTreeMap<(String, i32), Vec<MatchRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.league_id.clone(), r.season_start_year))
            .or_default()
            .push(r.clone());
    }
    out
}

/// Builds every league-season table, each under the rule the schedule
/// puts in force for it.
pub fn build_all_tables(
    records: &[MatchRecord],
    schedule: &RuleSchedule,
) -> Result<Vec<SeasonTable>, LeagueError> {
    group_by_season(records)
        .into_iter()
        .map(|((league, season), ms)| build_season_table(&ms, schedule.rule_for(&league, season)))
        .collect()
}

//! `pointshift` command-line runner.

pub mod io;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use pointshift::config::AnalysisConfig;
use pointshift::did::fit_did;
use pointshift::inference::{leave_one_out, placebo_in_space, placebo_in_time, PlaceboLabel};
use pointshift::league::{build_all_tables, parse_matches, write_matches, MatchRecord, RuleSchedule};
use pointshift::metrics::{self, balance_indices, hhi_bounds, MetricsError};
use pointshift::panel::{build_panel, PanelDataset, PredictorSpec};
use pointshift::scm::{fit_scm, ScmConfig, ScmFit};
use pointshift::sim::{calibrate_effect, generate_panel_scenario, six_league_scenario};
use pointshift::PointsRule;

use crate::io::{num, opt, write_json, Table};

#[derive(Debug, Parser)]
#[command(name = "pointshift", version, about = "Competitive balance and rule-change effects for football leagues")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a matches file and write season standings.
    Ingest(IngestArgs),
    /// Balance indices for every league-season.
    Metrics(MetricsArgs),
    /// Fit the synthetic control.
    Scm(ScmArgs),
    /// Placebo-in-space and placebo-in-time refits.
    Placebo(PlaceboArgs),
    /// Leave-one-out donor sensitivity.
    Loo(AnalysisArgs),
    /// Difference-in-differences regression.
    Did(AnalysisArgs),
    /// Generate a synthetic six-league matches file with a known effect.
    Simulate(SimulateArgs),
    /// Bundle a run directory's tables and figure series into report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub matches: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Rule schedule file of `league = year` lines (historical defaults otherwise).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub matches: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct AnalysisArgs {
    /// Analysis config (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's matches path.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScmArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Also fit every lag gap (1, 2, 3, 5) and write specs.csv.
    #[arg(long)]
    pub compare_specs: bool,
}

#[derive(Debug, Args)]
pub struct PlaceboArgs {
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Pseudo treatment year for the in-time placebo.
    #[arg(long)]
    pub pseudo_year: Option<i32>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Dispersion shift applied to the treated league from 1981.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "target_effect")]
    pub effect: Option<f64>,
    /// Calibrate the dispersion shift to this realized mean DCB change.
    #[arg(long, allow_hyphen_values = true)]
    pub target_effect: Option<f64>,
    /// Apply the historical three-point adoption years instead of none.
    #[arg(long)]
    pub historical_rules: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Metrics(a) => metrics_cmd(&a),
        Command::Scm(a) => scm_cmd(&a),
        Command::Placebo(a) => placebo_cmd(&a),
        Command::Loo(a) => loo_cmd(&a),
        Command::Did(a) => did_cmd(&a),
        Command::Simulate(a) => simulate_cmd(&a),
        Command::Report(a) => report_cmd(&a),
    }
}

fn read_matches(path: &Path) -> Result<Vec<MatchRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let parsed = parse_matches(file).with_context(|| format!("parsing {}", path.display()))?;
    for w in &parsed.warnings {
        log::warn!("{} line {}: {}", path.display(), w.line, w.message);
    }
    Ok(parsed.records)
}

fn read_schedule(path: Option<&Path>) -> Result<Option<RuleSchedule>> {
    path.map(|p| {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(RuleSchedule::parse(&text)?)
    })
    .transpose()
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    matches: Option<String>,
    seed: Option<u64>,
    config: Option<&'a AnalysisConfig>,
    outputs: Vec<&'a str>,
}

fn write_manifest(
    out: &Path,
    command: &str,
    matches: Option<&Path>,
    config: Option<&AnalysisConfig>,
    outputs: &[&str],
) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        matches: matches.map(|p| p.display().to_string()),
        seed: config.map(|c| c.seed),
        config,
        outputs: outputs.to_vec(),
    };
    write_json(&out.join("run_manifest.json"), &manifest)
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let records = read_matches(&a.matches)?;
    let schedule = read_schedule(a.schedule.as_deref())?.unwrap_or_else(RuleSchedule::historical);
    let tables = build_all_tables(&records, &schedule)?;
    let mut t = Table::new(&[
        "league_id",
        "season_start_year",
        "win_points",
        "team",
        "matches_played",
        "wins",
        "draws",
        "losses",
        "goals_for",
        "goals_against",
        "points",
    ]);
    for table in &tables {
        for r in &table.rows {
            t.push(vec![
                table.league_id.clone(),
                table.season_start_year.to_string(),
                table.rule.win_points.to_string(),
                r.team.clone(),
                r.matches_played.to_string(),
                r.wins.to_string(),
                r.draws.to_string(),
                r.losses.to_string(),
                r.goals_for.to_string(),
                r.goals_against.to_string(),
                r.points.to_string(),
            ]);
        }
    }
    t.write(&a.out.join("tables.csv"))?;
    write_manifest(&a.out, "ingest", Some(&a.matches), None, &["tables.csv"])?;
    println!("{} matches, {} league-seasons", records.len(), tables.len());
    Ok(())
}

const METRICS_COLUMNS: [&str; 23] = [
    "league_id",
    "season_start_year",
    "win_points",
    "team_count",
    "dcb",
    "hhi",
    "hhi_min",
    "hhi_max",
    "bounds_method",
    "dcb_two_point",
    "dcb_three_point",
    "sigma",
    "r",
    "sigma_hat",
    "r_hat",
    "namsi",
    "namsi_hat",
    "hhi_w",
    "ahhi_w",
    "hhi_d",
    "ahhi_d",
    "avg_goals_per_team_match",
    "mean_win_share",
];

fn dcb_cell(table: &pointshift::SeasonTable, rule: PointsRule) -> String {
    match metrics::dcb(table, rule) {
        Ok(v) => num(v),
        Err(e @ MetricsError::BoundsViolation { .. }) => {
            log::warn!("{} {}: {e}", table.league_id, table.season_start_year);
            String::new()
        }
        Err(e) => {
            log::warn!("{} {}: {e}", table.league_id, table.season_start_year);
            String::new()
        }
    }
}

fn metrics_cmd(a: &MetricsArgs) -> Result<()> {
    let records = read_matches(&a.matches)?;
    let schedule = read_schedule(a.schedule.as_deref())?.unwrap_or_else(RuleSchedule::historical);
    let tables = build_all_tables(&records, &schedule)?;
    let mut out = Table::new(&METRICS_COLUMNS);
    for table in &tables {
        let idx = balance_indices(table).with_context(|| {
            format!("{} {}", table.league_id, table.season_start_year)
        })?;
        let bounds = hhi_bounds(table.team_count(), table.rule)?;
        out.push(vec![
            table.league_id.clone(),
            table.season_start_year.to_string(),
            table.rule.win_points.to_string(),
            table.team_count().to_string(),
            num(idx.dcb),
            num(idx.hhi),
            num(bounds.hhi_min),
            num(bounds.hhi_max),
            serde_json::to_value(bounds.method)?.as_str().unwrap_or_default().to_string(),
            dcb_cell(table, PointsRule::TWO_POINT),
            dcb_cell(table, PointsRule::THREE_POINT),
            num(idx.sigma),
            num(idx.r),
            num(idx.sigma_hat),
            num(idx.r_hat),
            num(idx.namsi),
            num(idx.namsi_hat),
            opt(idx.hhi_w),
            opt(idx.ahhi_w),
            opt(idx.hhi_d),
            opt(idx.ahhi_d),
            num(idx.avg_goals_per_team_match),
            num(idx.mean_win_share),
        ]);
    }
    out.write(&a.out.join("metrics.csv"))?;
    write_manifest(&a.out, "metrics", Some(&a.matches), None, &["metrics.csv"])?;
    Ok(())
}

/// Resolved inputs shared by the analysis subcommands.
pub struct Analysis {
    pub config: AnalysisConfig,
    pub matches_path: PathBuf,
    pub panel: PanelDataset,
    pub scm: ScmConfig,
}

pub fn load_analysis(a: &AnalysisArgs) -> Result<Analysis> {
    let mut config = match &a.config {
        Some(p) => AnalysisConfig::parse(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("config {}", p.display()))?,
        None => AnalysisConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(s) = read_schedule(a.schedule.as_deref())? {
        config.rule_schedule = s;
    }
    let matches_path = match (&a.matches, &config.matches) {
        (Some(m), _) => m.clone(),
        (None, Some(m)) => {
            let base = a
                .config
                .as_deref()
                .and_then(Path::parent)
                .unwrap_or_else(|| Path::new(""));
            base.join(m)
        }
        (None, None) => bail!("no matches file: pass --matches or set `matches` in the config"),
    };
    config.matches = Some(matches_path.clone());
    let records = read_matches(&matches_path)?;
    let tables = build_all_tables(&records, &config.rule_schedule)?;
    let panel = build_panel(
        &tables,
        config.outcome_kind()?,
        &config.rule_schedule,
        config.window_bounds(),
    )?;
    let scm = config.scm_config(&panel)?;
    Ok(Analysis {
        config,
        matches_path,
        panel,
        scm,
    })
}

fn write_scm_outputs(out: &Path, fit: &ScmFit) -> Result<()> {
    let mut w = Table::new(&["donor", "weight"]);
    for (d, g) in fit.donor_ids.iter().zip(fit.g.weights.iter()) {
        w.push(vec![d.clone(), num(*g)]);
    }
    w.write(&out.join("weights.csv"))?;

    let mut v = Table::new(&["predictor", "v_weight"]);
    for (l, x) in fit.v.labels.iter().zip(&fit.v.weights) {
        v.push(vec![l.clone(), num(*x)]);
    }
    v.write(&out.join("vweights.csv"))?;

    let mut b = Table::new(&[
        "predictor",
        "v_weight",
        "treated",
        "synthetic",
        "synthetic_bias_pct",
        "donor_average",
        "donor_average_bias_pct",
    ]);
    for r in &fit.balance {
        b.push(vec![
            r.predictor.clone(),
            num(r.v_weight),
            num(r.treated),
            num(r.synthetic),
            opt(r.synthetic_bias_pct),
            num(r.donor_average),
            opt(r.donor_average_bias_pct),
        ]);
    }
    b.write(&out.join("balance.csv"))?;

    let mut e = Table::new(&["year", "actual", "predicted", "effect"]);
    for t in 0..fit.seasons.len() {
        e.push(vec![
            fit.seasons[t].to_string(),
            num(fit.actual[t]),
            num(fit.synthetic[t]),
            num(fit.gaps[t]),
        ]);
    }
    e.write(&out.join("effects.csv"))?;

    write_json(
        &out.join("summary.json"),
        &json!({
            "treated": fit.treated,
            "treatment_year": fit.treatment_year,
            "eval_end": fit.eval_end,
            "ate": fit.ate,
            "pre_rmse": fit.pre_rmse,
            "seed": fit.seed,
            "donors": fit.donor_ids,
            "donor_weights": fit.g.weights.as_slice(),
            "v_weights": fit.v.weights,
            "predictors": fit.v.labels,
            "warnings": fit.warnings,
        }),
    )
}

fn scm_cmd(a: &ScmArgs) -> Result<()> {
    let an = load_analysis(&a.analysis)?;
    let out = &a.analysis.out;
    let fit = fit_scm(&an.panel, &an.scm)?;
    write_scm_outputs(out, &fit)?;
    let mut outputs = vec!["weights.csv", "vweights.csv", "balance.csv", "effects.csv", "summary.json"];
    if a.compare_specs {
        let mut t = Table::new(&["lag_gap", "pre_rmse", "ate"]);
        for gap in [1u32, 2, 3, 5] {
            let cfg = ScmConfig {
                spec: PredictorSpec {
                    lag_gap: gap,
                    ..an.scm.spec
                },
                ..an.scm.clone()
            };
            let f = fit_scm(&an.panel, &cfg)?;
            t.push(vec![gap.to_string(), num(f.pre_rmse), num(f.ate)]);
        }
        t.write(&out.join("specs.csv"))?;
        outputs.push("specs.csv");
    }
    write_manifest(out, "scm", Some(&an.matches_path), Some(&an.config), &outputs)?;
    println!("ate {:.4}  pre_rmse {:.4}", fit.ate, fit.pre_rmse);
    Ok(())
}

fn placebo_cmd(a: &PlaceboArgs) -> Result<()> {
    let an = load_analysis(&a.analysis)?;
    let out = &a.analysis.out;
    let space = placebo_in_space(&an.panel, &an.scm)?;
    let first = an.scm.spec.first_year.unwrap_or(an.panel.seasons[0]);
    let pseudo = a
        .pseudo_year
        .or(an.config.pseudo_year)
        .unwrap_or(first + (an.scm.treatment_year - first) / 2);
    let time = placebo_in_time(&an.panel, &an.scm, pseudo)?;

    let mut s = Table::new(&["pseudo_treated", "ate", "pre_rmse"]);
    let mut paths = Table::new(&["placebo", "year", "effect"]);
    for r in space.iter().chain(std::iter::once(&time)) {
        let label = match &r.label {
            PlaceboLabel::Unit(u) => {
                s.push(vec![u.clone(), num(r.ate), num(r.pre_rmse)]);
                u.clone()
            }
            PlaceboLabel::Year(y) => y.to_string(),
        };
        for (year, eff) in r.seasons.iter().zip(&r.effect_path) {
            paths.push(vec![label.clone(), year.to_string(), num(*eff)]);
        }
    }
    s.write(&out.join("placebo_space.csv"))?;
    let mut t = Table::new(&["pseudo_year", "eval_end", "ate", "pre_rmse"]);
    t.push(vec![
        pseudo.to_string(),
        time.fit.eval_end.to_string(),
        num(time.ate),
        num(time.pre_rmse),
    ]);
    t.write(&out.join("placebo_time.csv"))?;
    paths.write(&out.join("placebo_paths.csv"))?;
    write_manifest(
        out,
        "placebo",
        Some(&an.matches_path),
        Some(&an.config),
        &["placebo_space.csv", "placebo_time.csv", "placebo_paths.csv"],
    )
}

fn loo_cmd(a: &AnalysisArgs) -> Result<()> {
    let an = load_analysis(a)?;
    let base = fit_scm(&an.panel, &an.scm)?;
    let loo = leave_one_out(&an.panel, &an.scm, &base)?;
    let mut env = Table::new(&["year", "base_effect", "min", "max"]);
    for row in &loo.envelope {
        env.push(vec![row.year.to_string(), num(row.base_effect), num(row.min), num(row.max)]);
    }
    env.write(&a.out.join("loo_envelope.csv"))?;
    let mut fits = Table::new(&["dropped", "ate", "pre_rmse"]);
    for (d, f) in &loo.refits {
        fits.push(vec![d.clone(), num(f.ate), num(f.pre_rmse)]);
    }
    fits.write(&a.out.join("loo_fits.csv"))?;
    write_manifest(
        &a.out,
        "loo",
        Some(&an.matches_path),
        Some(&an.config),
        &["loo_envelope.csv", "loo_fits.csv"],
    )
}

fn did_cmd(a: &AnalysisArgs) -> Result<()> {
    let an = load_analysis(a)?;
    let mut units = vec![an.scm.treated.clone()];
    units.extend(an.scm.donors.iter().cloned());
    let panel = an.panel.select_units(&units)?;
    let fit = fit_did(
        &panel,
        &an.scm.treated,
        an.scm.treatment_year,
        an.config.did_covariate_set()?,
    )?;
    let mut t = Table::new(&["term", "estimate", "std_error", "stars"]);
    for c in &fit.coefficients {
        t.push(vec![c.name.clone(), num(c.estimate), num(c.std_error), c.stars().to_string()]);
    }
    t.push(vec!["observations".into(), fit.n_observations.to_string(), String::new(), String::new()]);
    t.push(vec!["r_squared".into(), num(fit.r_squared), String::new(), String::new()]);
    t.write(&a.out.join("did.csv"))?;
    write_json(&a.out.join("did.json"), &fit)?;
    write_manifest(&a.out, "did", Some(&an.matches_path), Some(&an.config), &["did.csv", "did.json"])
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let mut scenario = six_league_scenario(a.seed, 0.0);
    if a.historical_rules {
        scenario.rule_schedule = RuleSchedule::historical();
    }
    scenario.treated_effect = match (a.effect, a.target_effect) {
        (Some(e), _) => e,
        (None, Some(target)) => calibrate_effect(&scenario, target)?,
        (None, None) => 0.0,
    };
    let sim = generate_panel_scenario(&scenario)?;
    let mut buf = Vec::new();
    write_matches(&sim.matches, &mut buf)?;
    io::write_atomic(&a.out.join("matches.csv"), &buf)?;
    write_json(&a.out.join("truth.json"), &sim.truth)?;

    let config = AnalysisConfig {
        matches: Some(PathBuf::from("matches.csv")),
        treated: scenario.treated.clone(),
        treatment_year: scenario.treatment_year,
        seed: a.seed,
        rule_schedule: scenario.rule_schedule.clone(),
        ..AnalysisConfig::default()
    };
    io::write_atomic(&a.out.join("analysis.toml"), toml::to_string(&config)?.as_bytes())?;
    write_manifest(&a.out, "simulate", None, Some(&config), &["matches.csv", "truth.json", "analysis.toml"])?;
    println!(
        "dispersion shift {:.4}, realized effect {:.4}",
        scenario.treated_effect, sim.truth.realized_effect
    );
    Ok(())
}

fn optional_table(dir: &Path, name: &str) -> Result<Option<Table>> {
    let p = dir.join(name);
    if p.exists() {
        Ok(Some(Table::read(&p)?))
    } else {
        Ok(None)
    }
}

/// Builds the consolidated report from a run directory's artifacts.
pub fn build_report(dir: &Path) -> Result<serde_json::Value> {
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.join("summary.json")).context("run directory lacks summary.json")?,
    )?;
    let treatment_year = summary["treatment_year"].as_i64().unwrap_or(i64::MIN);
    let effects = Table::read(&dir.join("effects.csv"))?;
    let years = effects.numbers("year")?;
    let actual = effects.numbers("actual")?;
    let predicted = effects.numbers("predicted")?;
    let effect = effects.numbers("effect")?;

    let mut effect_rows = Vec::new();
    let mut sums = [0.0; 3];
    let mut n = 0usize;
    for t in 0..years.len() {
        let y = years[t].unwrap_or(f64::NAN);
        if (y as i64) < treatment_year {
            continue;
        }
        let (a, p, e) = (
            actual[t].unwrap_or(f64::NAN),
            predicted[t].unwrap_or(f64::NAN),
            effect[t].unwrap_or(f64::NAN),
        );
        sums[0] += a;
        sums[1] += p;
        sums[2] += e;
        n += 1;
        effect_rows.push(json!({"year": y as i64, "actual": a, "predicted": p, "effect": e}));
    }
    let nf = n.max(1) as f64;
    let actual_series: Vec<_> = (0..years.len())
        .map(|t| json!({"year": years[t].map(|y| y as i64), "actual": actual[t], "synthetic": predicted[t]}))
        .collect();
    let gap_series: Vec<_> = (0..years.len())
        .map(|t| json!({"year": years[t].map(|y| y as i64), "gap": effect[t]}))
        .collect();

    let balance = Table::read(&dir.join("balance.csv"))?;
    let weights = Table::read(&dir.join("weights.csv"))?;
    let loo = optional_table(dir, "loo_envelope.csv")?;
    let envelope_series = match &loo {
        Some(t) => {
            let (y, lo, hi) = (t.numbers("year")?, t.numbers("min")?, t.numbers("max")?);
            (0..y.len())
                .map(|i| json!({"year": y[i].map(|v| v as i64), "min": lo[i], "max": hi[i]}))
                .collect::<Vec<_>>()
        }
        None => Vec::new(),
    };
    let loo_fits = optional_table(dir, "loo_fits.csv")?;
    let did = optional_table(dir, "did.csv")?;
    let placebo_space = optional_table(dir, "placebo_space.csv")?;
    let placebo_time = optional_table(dir, "placebo_time.csv")?;

    Ok(json!({
        "summary": summary,
        "balance": balance.to_records(),
        "donor_weights": weights.to_records(),
        "effects": {
            "rows": effect_rows,
            "mean": {"actual": sums[0] / nf, "predicted": sums[1] / nf, "effect": sums[2] / nf},
        },
        "loo_envelope": loo.as_ref().map(Table::to_records),
        "loo_fits": loo_fits.as_ref().map(Table::to_records),
        "did": did.as_ref().map(Table::to_records),
        "placebo_space": placebo_space.as_ref().map(Table::to_records),
        "placebo_time": placebo_time.as_ref().map(Table::to_records),
        "series_actual_vs_synthetic": actual_series,
        "series_gap": gap_series,
        "series_loo_envelope": envelope_series,
    }))
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let report = build_report(&a.run)?;
    write_json(&a.run.join("report.json"), &report)?;
    write_manifest(&a.run, "report", None, None, &["report.json"])
}

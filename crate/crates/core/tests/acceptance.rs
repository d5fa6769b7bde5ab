//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when
//! any runnable criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use pointshift::did::{fit_did, fit_ols, DidDesign};
use pointshift::inference::{leave_one_out, placebo_in_space, placebo_in_time};
use pointshift::league::{build_all_tables, parse_matches, PointsRule, RuleSchedule, SeasonCovariates};
use pointshift::metrics::{self, cascade_hhi, exhaustive_hhi_max, namsi};
use pointshift::panel::{build_panel, CovariateSet, OutcomeKind, PanelDataset};
use pointshift::scm::{fit_scm, solve_inner};
use pointshift::sim::{generate_mixture_panel, generate_panel_scenario, six_league_scenario};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

const RULES: [(&str, PointsRule); 2] = [("2-pt", PointsRule::TWO_POINT), ("3-pt", PointsRule::THREE_POINT)];

fn c1_index_correctness() -> Verdict {
    let mut failures = Vec::new();
    for k in 2..=4 {
        for (name, rule) in RULES {
            let draws = table(&round_robin(k, |_, _| 0), rule);
            let d0 = metrics::dcb(&draws, rule).unwrap();
            if d0.abs() > 1e-9 {
                failures.push(format!("all-draw K={k} {name}: {d0}"));
            }
            let cascade = table(&round_robin(k, |i, j| if i < j { 1 } else { -1 }), rule);
            match metrics::dcb(&cascade, rule) {
                Ok(d1) if (d1 - 1.0).abs() <= 1e-9 => {}
                Ok(d1) => failures.push(format!("cascade K={k} {name}: {d1:.6}")),
                Err(e) => failures.push(format!("cascade K={k} {name}: {e}")),
            }
            let formula = 2.0 * (2 * k - 1) as f64 / (3 * k * (k - 1)) as f64;
            let (exhaustive, _) = exhaustive_hhi_max(k, rule);
            if (formula - exhaustive).abs() > 1e-9 || (formula - cascade_hhi(k, rule)).abs() > 1e-9 {
                failures.push(format!(
                    "hhi_max K={k} {name}: formula {formula:.6} vs exhaustive {exhaustive:.6}"
                ));
            }
        }
    }
    let t = Instant::now();
    exhaustive_hhi_max(4, PointsRule::TWO_POINT);
    exhaustive_hhi_max(4, PointsRule::THREE_POINT);
    let secs = t.elapsed().as_secs_f64();
    if secs >= 30.0 {
        failures.push(format!("K=4 enumeration took {secs:.1}s"));
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("12 cases exact; K=4 enumeration {secs:.2}s")
        } else {
            failures.join("; ")
        },
    )
}

fn c2_variance_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..=20);
        let t = table(&random_season(&mut rng, k), PointsRule::TWO_POINT);
        let s = metrics::sigma(&t).unwrap();
        let sh = metrics::sigma_hat(&t).unwrap();
        let w = metrics::mean_win_share(&t);
        worst = worst.max((s * s - sh * sh - (w - 0.5).powi(2)).abs());
    }
    verdict(worst <= 1e-12, format!("max residual {worst:.2e} over 1000 seasons"))
}

fn c3_namsi_bounds() -> Verdict {
    let mut failures = Vec::new();
    for k in 2..=20 {
        // Home side always wins: every team wins exactly half its matches.
        let balanced = table(&round_robin(k, |_, _| 1), PointsRule::TWO_POINT);
        let cascade = table(&round_robin(k, |i, j| if i < j { 1 } else { -1 }), PointsRule::TWO_POINT);
        let (lo, hi) = (namsi(&balanced).unwrap(), namsi(&cascade).unwrap());
        if lo != 0.0 || hi != 1.0 {
            failures.push(format!("K={k}: {lo} / {hi}"));
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() { "0 and 1 exact for K=2..20".into() } else { failures.join("; ") },
    )
}

fn c4_qp_optimality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let instances: Vec<_> = (0..500)
        .map(|_| {
            let k = rng.random_range(1..=6);
            let n = rng.random_range(1..=5);
            qp_instance(&mut rng, k, n)
        })
        .collect();
    use rayon::prelude::*;
    let results: Vec<(f64, usize)> = instances
        .par_iter()
        .map(|(x1, x0, v)| {
            let sol = solve_inner(x1, x0, v).unwrap();
            let g = &sol.weights;
            let infeasible = g.iter().filter(|&&w| w < 0.0).count()
                + usize::from((g.sum() - 1.0).abs() > 1e-12);
            (sol.objective - grid_min(x1, x0, v, 100), infeasible)
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let violations: usize = results.iter().map(|r| r.1).sum();
    verdict(
        worst <= 1e-8 && violations == 0,
        format!("max excess over grid {worst:.2e}, {violations} feasibility violations"),
    )
}

fn c5_v_scaling() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=5);
        let k = rng.random_range(n..=6);
        let (x1, x0, v) = qp_instance(&mut rng, k, n);
        let c = rng.random_range(0.1..10.0);
        let cv: Vec<f64> = v.iter().map(|x| x * c).collect();
        let a = solve_inner(&x1, &x0, &v).unwrap().weights;
        let b = solve_inner(&x1, &x0, &cv).unwrap().weights;
        worst = worst.max((a - b).amax());
    }
    verdict(worst <= 1e-8, format!("max |G(V) - G(cV)| {worst:.2e} over 100 instances"))
}

fn c6_scm_recovery() -> Verdict {
    let t = Instant::now();
    let mut weight_hits = 0;
    let mut ate_hits = 0;
    let mut worst_w = 0.0f64;
    let mut worst_ate = 0.0f64;
    for seed in 0..30u64 {
        let sim = generate_mixture_panel(&mixture_scenario(1000 + seed)).unwrap();
        let fit = fit_scm(&sim.panel, &scm_config("TRT", &MIX_DONORS, seed)).unwrap();
        let target = |d: &str| match d {
            MIX_A => 0.6,
            MIX_B => 0.4,
            _ => 0.0,
        };
        let werr = fit
            .donor_ids
            .iter()
            .map(|d| (fit.weight_of(d).unwrap() - target(d)).abs())
            .fold(0.0, f64::max);
        let aerr = (fit.ate - sim.truth.realized_effect).abs();
        worst_w = worst_w.max(werr);
        worst_ate = worst_ate.max(aerr);
        weight_hits += usize::from(werr <= 0.05);
        ate_hits += usize::from(aerr <= 0.02);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        weight_hits == 30 && ate_hits >= 27 && secs < 120.0,
        format!(
            "weights within 0.05 in {weight_hits}/30 (worst {worst_w:.3}); \
             ATE within 0.02 in {ate_hits}/30 (worst {worst_ate:.3}); {secs:.1}s"
        ),
    )
}

fn c7_null_calibration() -> Verdict {
    let mut bad = Vec::new();
    for seed in 0..30u64 {
        let sim = generate_panel_scenario(&six_league_scenario(500 + seed, 0.0)).unwrap();
        let cfg = scm_config("ENG", &MIX_DONORS, seed);
        let base = fit_scm(&sim.panel, &cfg).unwrap();
        let space = placebo_in_space(&sim.panel, &cfg).unwrap();
        let time = placebo_in_time(&sim.panel, &cfg, 1972).unwrap();
        let ates: Vec<f64> = space.iter().map(|p| p.ate).collect();
        let bound = 3.0 * sample_sd(&ates);
        let worst_placebo = ates.iter().map(|a| a.abs()).fold(0.0, f64::max);
        if base.ate.abs() > bound || worst_placebo > bound || time.ate.abs() > bound {
            bad.push(format!(
                "seed {}: |ATE| {:.3}, max placebo {:.3}, time {:.3}, 3sd {:.3}",
                500 + seed,
                base.ate.abs(),
                worst_placebo,
                time.ate.abs(),
                bound
            ));
        }
    }
    verdict(
        bad.is_empty(),
        if bad.is_empty() {
            "30/30 panels within 3 placebo sd".into()
        } else {
            format!("{}/30 panels outside: {}", bad.len(), bad.join("; "))
        },
    )
}

fn toy_panel(units: usize, seasons: usize, y: impl Fn(usize, usize) -> f64) -> PanelDataset {
    PanelDataset::new(
        (0..units).map(|u| format!("U{u}")).collect(),
        (2000..2000 + seasons as i32).collect(),
        DMatrix::from_fn(units, seasons, y),
        (0..units)
            .map(|_| {
                (0..seasons)
                    .map(|_| SeasonCovariates {
                        avg_win_share: 0.35,
                        avg_draw_share: 0.3,
                        team_count: 18,
                    })
                    .collect()
            })
            .collect(),
        OutcomeKind::Dcb,
    )
    .unwrap()
}

fn c8_did_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_oracle = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(20..80);
        let p = rng.random_range(2..7);
        let x = DMatrix::from_fn(n, p, |_, j| if j + 1 == p { 1.0 } else { rng.random::<f64>() * 4.0 - 2.0 });
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let design = DidDesign {
            columns: (0..p).map(|j| format!("x{j}")).collect(),
            rows: (0..n).map(|i| ("U".into(), i as i32)).collect(),
            x: x.clone(),
            y: y.clone(),
        };
        let fit = fit_ols(&design).unwrap();
        let oracle = normal_equations(&x, &y);
        for (c, o) in fit.coefficients.iter().zip(oracle) {
            worst_oracle = worst_oracle.max((c.estimate - o).abs());
        }
    }

    let panel = toy_panel(6, 10, |u, t| {
        let time = f64::from(u8::from(t >= 5));
        let treat = f64::from(u8::from(u == 0));
        1.0 + 0.5 * time + 0.2 * treat - 0.3 * time * treat
    });
    let noiseless = (fit_did(&panel, "U0", 2005, CovariateSet::NONE).unwrap().interaction().estimate + 0.3).abs();

    let cells: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
    let two = toy_panel(5, 2, |u, t| cells[u * 2 + t]);
    let est = fit_did(&two, "U0", 2001, CovariateSet::NONE).unwrap().interaction().estimate;
    let ctrl = |t: usize| (1..5).map(|u| cells[u * 2 + t]).sum::<f64>() / 4.0;
    let four_cell = (cells[1] - cells[0]) - (ctrl(1) - ctrl(0));
    let collapsed = (est - four_cell).abs();

    verdict(
        worst_oracle <= 1e-8 && noiseless <= 1e-10 && collapsed <= 1e-10,
        format!("oracle {worst_oracle:.2e}, noiseless {noiseless:.2e}, 2x2 {collapsed:.2e}"),
    )
}

fn c9_loo_contract() -> Verdict {
    let sim = generate_mixture_panel(&mixture_scenario(9)).unwrap();
    let cfg = scm_config("TRT", &MIX_DONORS, 9);
    let base = fit_scm(&sim.panel, &cfg).unwrap();
    let loo = leave_one_out(&sim.panel, &cfg, &base).unwrap();
    let Some((_, drop_a)) = loo.refits.iter().find(|(d, _)| d == MIX_A) else {
        return Verdict::Fail("donor A has no positive weight in the base fit".into());
    };
    let rmse_ok = drop_a.pre_rmse >= base.pre_rmse;
    let mut bracket_ok = true;
    for row in &loo.envelope {
        for (_, f) in &loo.refits {
            let e = f.effect_at(row.year).unwrap();
            bracket_ok &= row.min <= e && e <= row.max;
        }
    }
    verdict(
        rmse_ok && bracket_ok,
        format!(
            "drop-A pre_rmse {:.4} vs base {:.4}; envelope brackets {} refits: {bracket_ok}",
            drop_a.pre_rmse,
            base.pre_rmse,
            loo.refits.len()
        ),
    )
}

fn c10_determinism() -> Verdict {
    let sim = generate_panel_scenario(&six_league_scenario(10, -0.3)).unwrap();
    let cfg = scm_config("ENG", &MIX_DONORS, 10);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| format!("{:?}", fit_scm(&sim.panel, &cfg).unwrap()))
    };
    let a = run(1);
    let b = run(4);
    let c = run(4);
    let regenerated = generate_panel_scenario(&six_league_scenario(10, -0.3)).unwrap();
    let same_data = regenerated.matches == sim.matches;
    verdict(
        a == b && b == c && same_data,
        format!("fits identical across 1/4/4 threads: {}; data regenerated identically: {same_data}", a == b && b == c),
    )
}

const ENG_DCB_1981_1993: [f64; 13] = [0.35, 0.25, 0.30, 0.36, 0.43, 0.31, 0.41, 0.32, 0.32, 0.38, 0.30, 0.25, 0.38];

fn c11_real_data() -> Verdict {
    let Ok(path) = std::env::var("POINTSHIFT_REAL_MATCHES") else {
        return Verdict::Skip("set POINTSHIFT_REAL_MATCHES to a six-league 1963-1993 matches file".into());
    };
    let records = parse_matches(std::fs::File::open(&path).unwrap()).unwrap().records;
    let schedule = RuleSchedule::historical();
    let tables = build_all_tables(&records, &schedule).unwrap();
    let panel = build_panel(&tables, OutcomeKind::Dcb, &schedule, Some((1963, 1993))).unwrap();
    let eng = panel.unit_index("ENG").unwrap();
    let dcb_err = (1981..=1993)
        .zip(ENG_DCB_1981_1993)
        .map(|(y, v)| (panel.outcome[(eng, panel.season_index(y).unwrap())] - v).abs())
        .fold(0.0, f64::max);
    let did = fit_did(&panel, "ENG", 1981, CovariateSet::ALL).map(|f| f.interaction().estimate);
    let fit = fit_scm(&panel, &scm_config("ENG", &MIX_DONORS, 42)).unwrap();
    let did_ok = matches!(did, Ok(b) if (b + 0.0545).abs() <= 0.005);
    verdict(
        dcb_err <= 0.01 && did_ok && (fit.ate + 0.05).abs() <= 0.01,
        format!("DCB max err {dcb_err:.4}; DID {did:?}; SCM ATE {:.4}", fit.ate),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("1 index correctness", c1_index_correctness),
        ("2 variance decomposition", c2_variance_identity),
        ("3 NAMSI boundary values", c3_namsi_bounds),
        ("4 inner QP optimality", c4_qp_optimality),
        ("5 V-scaling invariance", c5_v_scaling),
        ("6 SCM recovery", c6_scm_recovery),
        ("7 null calibration", c7_null_calibration),
        ("8 DID oracle equivalence", c8_did_oracle),
        ("9 LOO contract", c9_loo_contract),
        ("10 determinism", c10_determinism),
        ("11 real-data validation", c11_real_data),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t = Instant::now();
        let v = run();
        let secs = t.elapsed().as_secs_f64();
        match v {
            Verdict::Pass(d) => println!("PASS  {name} ({secs:.1}s): {d}"),
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {d}");
            }
            Verdict::Skip(d) => println!("SKIP  {name}: {d}"),
        }
    }
    println!("acceptance: {failed} failing criteria");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Acceptance suite: one pass/fail line per criterion. Run with
//! `cargo test -p lastiter --test acceptance`.

use std::time::{Duration, Instant};

use lastiter::bounds::{self, BoundKind};
use lastiter::certify::{self, SuiteOptions};
use lastiter::continual::{self, PocsProblem};
use lastiter::harness::{self, ExperimentConfig, ExperimentReport, ProblemSpec, StartSpec};
use lastiter::kaczmarz;
use lastiter::linalg::{dist_sq, norm};
use lastiter::optimizer::{self, Estimand, RecordFlags, SamplingScheme, StepsizePolicy};
use lastiter::problems::{self, FiniteSum};

const EQUIVALENCE_TOL: f64 = 1e-9;
const FD_TOL: f64 = 1e-6;
const FIT_TOL: f64 = 1e-12;
const MONOTONE_TOL: f64 = 1e-14;

type Outcome = Result<String, String>;

fn realizable() -> ProblemSpec {
    ProblemSpec::RealizableLs {
        d: 20,
        n: 100,
        seed: 0,
    }
}

fn low_noise() -> ProblemSpec {
    ProblemSpec::LowNoiseLs {
        d: 20,
        n: 100,
        sigma_star: 0.05,
        seed: 0,
    }
}

fn config(
    problem: ProblemSpec,
    policy: StepsizePolicy,
    t_hi: u32,
    replicates: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        x1: StartSpec::Offset {
            distance: 1.0,
            seed: 1,
        },
        policy,
        scheme: SamplingScheme::WithReplacement,
        t_grid: harness::dyadic_grid(3, t_hi),
        replicates,
        base_seed: 0,
        estimand: Estimand::LastIterate,
        bounds: vec![],
        output: None,
    }
}

fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport, String> {
    harness::run_experiment(cfg).map_err(|e| e.to_string())
}

/// Smallest `bound + 2·stderr − mean` over a report, with the row where it occurs.
fn worst_slack(r: &ExperimentReport, k: usize) -> (f64, usize) {
    r.rows
        .iter()
        .map(|row| (row.bounds[k] + 2.0 * row.stderr - row.mean, row.t))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
}

fn require_all(r: &ExperimentReport, label: &str) -> Result<String, String> {
    let mut notes = Vec::new();
    for (k, name) in r.bound_names().iter().enumerate() {
        let (slack, t) = worst_slack(r, k);
        if slack < 0.0 {
            return Err(format!(
                "{label}: {name} exceeded at T={t} by {:.3e}",
                -slack
            ));
        }
        notes.push(format!("{name} min slack {slack:.3e}@T={t}"));
    }
    Ok(format!("{label}: {}", notes.join(", ")))
}

fn within(elapsed: Duration, limit_s: u64, msg: String) -> Outcome {
    if elapsed > Duration::from_secs(limit_s) {
        Err(format!(
            "{msg}; runtime {:.1}s over {limit_s}s",
            elapsed.as_secs_f64()
        ))
    } else {
        Ok(msg)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut cfg = config(realizable(), StepsizePolicy::Fixed { eta: 1.0 }, 10, 200);
    cfg.bounds = vec![BoundKind::Thm1, BoundKind::Thm1Greedy];
    let r = run(&cfg)?;
    for row in &r.rows {
        let expect = 3.0 / (row.t as f64).sqrt();
        if (row.bounds[1] - expect).abs() > 1e-12 * expect || (r.beta - 1.0).abs() > 1e-12 {
            return Err(format!("3/sqrt(T) curve mismatch at T={}", row.t));
        }
    }
    let msg = require_all(&r, "eta=1")?;
    within(start.elapsed(), 60, msg)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut cfg = config(realizable(), StepsizePolicy::LogTuned, 10, 200);
    cfg.bounds = vec![BoundKind::Thm1Log, BoundKind::Thm1];
    let r = run(&cfg)?;
    for row in &r.rows {
        let tf = row.t as f64;
        if (row.eta - 1.0 / tf.log2()).abs() > 1e-15
            || (row.bounds[0] - 6.0 * tf.log2() / tf).abs() > 1e-12
        {
            return Err(format!(
                "stepsize or 6 log2(T)/T curve mismatch at T={}",
                row.t
            ));
        }
    }
    let msg = require_all(&r, "eta=1/log2 T")?;
    within(start.elapsed(), 60, msg)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut cfg = config(low_noise(), StepsizePolicy::Thm2Tuned, 10, 400);
    cfg.bounds = vec![BoundKind::Thm2];
    let r = run(&cfg)?;
    if (r.sigma_star_sq - 0.05 * 0.05).abs() > 1e-10 {
        return Err(format!("instance has sigma*^2 = {}", r.sigma_star_sq));
    }
    let msg = require_all(&r, "thm2 at tuned eta")?;
    within(start.elapsed(), 180, msg)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut out = Vec::new();
    for (policy, label) in [
        (StepsizePolicy::Fixed { eta: 1.0 }, "eta=1"),
        (StepsizePolicy::LogTuned, "eta=1/log2 T"),
    ] {
        let mut cfg = config(
            ProblemSpec::RealizableLs {
                d: 20,
                n: 2048,
                seed: 0,
            },
            policy,
            11,
            200,
        );
        cfg.scheme = SamplingScheme::WithoutReplacement;
        cfg.bounds = vec![BoundKind::Thm3Wor];
        let r = run(&cfg)?;
        out.push(require_all(&r, label)?);
        for row in &r.rows {
            let special = match policy {
                StepsizePolicy::Fixed { .. } => {
                    bounds::greedy_without_replacement_bound(r.beta, r.d0_sq, row.t)
                }
                _ => bounds::log_tuned_without_replacement_bound(r.beta, r.d0_sq, row.t),
            }
            .map_err(|e| e.to_string())?;
            if !harness::passes(row.mean, row.stderr, special) {
                return Err(format!(
                    "{label}: specialization {special:.3e} exceeded at T={}",
                    row.t
                ));
            }
        }
    }
    within(start.elapsed(), 300, out.join("; "))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut out = Vec::new();
    for (problem, eta, label) in [
        (realizable(), 1.0, "realizable eta=1"),
        (low_noise(), 0.5, "low noise eta=0.5"),
    ] {
        let mut cfg = config(problem, StepsizePolicy::Fixed { eta }, 10, 200);
        cfg.estimand = Estimand::AverageIterate;
        cfg.bounds = vec![BoundKind::AvgIterateB];
        let r = run(&cfg)?;
        if eta == 1.0 {
            for row in &r.rows {
                if (row.bounds[0] - 2.0 / row.t as f64).abs() > 1e-12 {
                    return Err(format!("2/T curve mismatch at T={}", row.t));
                }
            }
        }
        out.push(require_all(&r, label)?);
    }
    within(start.elapsed(), 300, out.join("; "))
}

fn criterion_6() -> Outcome {
    let problem = ProblemSpec::StronglyConvexLs {
        d: 7,
        n: 100,
        alpha: 0.1,
        seed: 1,
    };
    let p = problem.build().map_err(|e| e.to_string())?;
    let (a, beta) = (p.strong_convexity, p.beta);
    if (a - 0.1).abs() > 0.02 || beta > 1.0 + 1e-12 || p.sigma_star_sq != 0.0 {
        return Err(format!(
            "instance has alpha_sc = {a}, beta = {beta}, sigma*^2 = {}",
            p.sigma_star_sq
        ));
    }
    let eta = 1.0;
    let rate = 0.5 * eta * (2.0 - eta * beta) * a;
    let t_end = ((1e10f64).ln() / rate).ceil() as usize;
    let mut grid: Vec<usize> = (1..=8).map(|k| k * t_end / 8).collect();
    grid.dedup();
    let mut cfg = config(problem, StepsizePolicy::Fixed { eta }, 3, 200);
    cfg.t_grid = grid;
    cfg.estimand = Estimand::FinalDistanceSq;
    cfg.bounds = vec![BoundKind::StronglyConvexC];
    let r = run(&cfg)?;
    let last = r.rows.last().expect("grid");
    if last.bounds[0] > 1e-10 * (1.0 + 1e-9) {
        return Err(format!("grid stops at bound {:.3e}", last.bounds[0]));
    }
    require_all(&r, &format!("alpha_sc={a:.4}, T up to {t_end}"))
}

fn criterion_7() -> Outcome {
    let mut out = Vec::new();
    for eta in [0.25, 0.1] {
        let mut cfg = config(realizable(), StepsizePolicy::Fixed { eta }, 10, 200);
        cfg.bounds = vec![BoundKind::ThmDAlt];
        let r = run(&cfg)?;
        out.push(require_all(&r, &format!("eta={eta}"))?);
    }
    let t = 10_000;
    let a = bounds::last_iterate_bound(1.0, 0.5, 1.0, t).map_err(|e| e.to_string())?;
    let b = bounds::small_stepsize_bound(1.0, 0.5, 1.0, 0.0, t).map_err(|e| e.to_string())?;
    if a >= b {
        return Err(format!(
            "thm1 {a:.4e} does not beat thmD_alt {b:.4e} at T=1e4, eta=0.5"
        ));
    }
    out.push(format!("T=1e4, eta=0.5: thm1 {a:.3e} < thmD_alt {b:.3e}"));
    Ok(out.join("; "))
}

fn criterion_8() -> Outcome {
    let t = 100;
    let scheme = SamplingScheme::WithReplacement;
    let mut worst = [0.0f64; 3];
    let fail = |e: &dyn std::fmt::Display| e.to_string();
    for seed in 0..20u64 {
        let sys = kaczmarz::make_block_system(8, 10, &[2; 10], seed, true).map_err(|e| fail(&e))?;
        let c = [1.0, 0.5, 1.0 / (t as f64).log2()][seed as usize % 3];
        let kz = kaczmarz::run_kaczmarz(&sys, c, scheme, t, seed).map_err(|e| fail(&e))?;
        let reduced = kaczmarz::reduced_problem(&sys).map_err(|e| fail(&e))?;
        let sgd = optimizer::run_sgd_with_stepsize(
            &reduced,
            &[0.0; 8],
            c,
            scheme,
            t,
            seed,
            RecordFlags::default(),
        )
        .map_err(|e| fail(&e))?;
        worst[0] = worst[0].max(kz.max_relative_deviation(&sgd));

        let tasks = continual::make_task_collection(8, 10, &[2; 10], seed).map_err(|e| fail(&e))?;
        let cr =
            continual::run_continual_regression(&tasks, scheme, t, seed).map_err(|e| fail(&e))?;
        let kz1 =
            kaczmarz::run_kaczmarz(&tasks.system, 1.0, scheme, t, seed).map_err(|e| fail(&e))?;
        worst[1] = worst[1].max(cr.max_relative_deviation(&kz1));

        let sets = continual::make_set_collection(5, 9, seed).map_err(|e| fail(&e))?;
        let pocs = continual::run_pocs(&sets, scheme, t, seed).map_err(|e| fail(&e))?;
        let sgd = optimizer::run_sgd_with_stepsize(
            &PocsProblem { sets: &sets },
            &[0.0; 5],
            1.0,
            scheme,
            t,
            seed,
            RecordFlags::default(),
        )
        .map_err(|e| fail(&e))?;
        worst[2] = worst[2].max(pocs.max_relative_deviation(&sgd));
    }
    let msg = format!(
        "max relative deviation: kaczmarz/sgd {:.2e}, continual/kaczmarz {:.2e}, pocs/sgd {:.2e}",
        worst[0], worst[1], worst[2]
    );
    if worst.iter().all(|&w| w <= EQUIVALENCE_TOL) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn summarize_studies(studies: &[harness::Study], label: &str) -> Outcome {
    let mut notes = Vec::new();
    for s in studies {
        let (slack, t) = s
            .rows
            .iter()
            .map(|r| (r.bound + 2.0 * r.stderr - r.mean, r.t))
            .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
        if slack < 0.0 {
            return Err(format!("{label} {}: exceeded at T={t}", s.quantity));
        }
        notes.push(format!("{} ok", s.quantity));
    }
    Ok(format!("{label}: {}", notes.join(", ")))
}

fn criterion_9() -> Outcome {
    let e = |e: harness::HarnessError| e.to_string();
    let wr = SamplingScheme::WithReplacement;
    let wor = SamplingScheme::WithoutReplacement;
    let grid = harness::dyadic_grid(3, 8);
    let wor_grid = harness::dyadic_grid(3, 6);
    let mut notes = Vec::new();

    let small = kaczmarz::make_block_system(6, 8, &[2; 8], 3, true).map_err(|x| x.to_string())?;
    let wide = kaczmarz::make_block_system(6, 64, &[2; 64], 3, true).map_err(|x| x.to_string())?;
    for c in [1.0, 0.5] {
        let s = harness::kaczmarz_study(&small, c, wr, &grid, 100, 0).map_err(e)?;
        notes.push(summarize_studies(&[s], &format!("kaczmarz c={c} with"))?);
    }
    let s = harness::kaczmarz_study(&wide, 1.0, wor, &wor_grid, 100, 0).map_err(e)?;
    notes.push(summarize_studies(&[s], "kaczmarz c=1 without")?);

    let tasks = continual::make_task_collection(6, 8, &[2; 8], 3).map_err(|x| x.to_string())?;
    let many = continual::make_task_collection(6, 64, &[2; 64], 3).map_err(|x| x.to_string())?;
    notes.push(summarize_studies(
        &harness::continual_study(&tasks, wr, &grid, 100, 0).map_err(e)?,
        "continual with",
    )?);
    notes.push(summarize_studies(
        &harness::continual_study(&many, wor, &wor_grid, 100, 0).map_err(e)?,
        "continual without",
    )?);

    let sets = continual::make_set_collection(4, 6, 1).map_err(|x| x.to_string())?;
    let many_sets = continual::make_set_collection(4, 64, 1).map_err(|x| x.to_string())?;
    notes.push(summarize_studies(
        &[harness::pocs_study(&sets, wr, &grid, 100, 0).map_err(e)?],
        "pocs with",
    )?);
    notes.push(summarize_studies(
        &[harness::pocs_study(&many_sets, wor, &wor_grid, 100, 0).map_err(e)?],
        "pocs without",
    )?);
    Ok(notes.join("; "))
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let records =
        certify::run_certification_suite(&SuiteOptions::default()).map_err(|e| e.to_string())?;
    let failed: Vec<String> = records
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}={:.3e}", r.check_name, r.margin_or_z))
        .collect();
    if !failed.is_empty() {
        return Err(format!("failed checks: {}", failed.join(", ")));
    }
    let z = records
        .iter()
        .find(|r| r.check_name == "lemma1_expectation")
        .map(|r| r.margin_or_z);
    within(
        start.elapsed(),
        300,
        format!(
            "{} checks pass, lemma1 z = {:.2}",
            records.len(),
            z.unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_11() -> Outcome {
    let fail = |e: &dyn std::fmt::Display| e.to_string();
    let families = vec![
        problems::make_realizable_least_squares(8, 40, 7).map_err(|e| fail(&e))?,
        problems::make_low_noise_least_squares(8, 40, 0.1, 7).map_err(|e| fail(&e))?,
        problems::make_logcosh_realizable(8, 40, 7).map_err(|e| fail(&e))?,
        problems::make_strongly_convex_ls(4, 40, 0.1, 7).map_err(|e| fail(&e))?,
    ];
    let x1 = [0.3, -0.2, 0.5, 0.1, -0.4, 0.0, 0.25, -0.1];

    // bit-identical reruns
    for p in &families {
        for scheme in [
            SamplingScheme::WithReplacement,
            SamplingScheme::WithoutReplacement,
        ] {
            let x = &x1[..p.dim];
            let a = optimizer::run_sgd_with_stepsize(
                p,
                x,
                0.8 / p.beta,
                scheme,
                40,
                11,
                RecordFlags {
                    gradient_norms: true,
                },
            )
            .map_err(|e| fail(&e))?;
            let b = optimizer::run_sgd_with_stepsize(
                p,
                x,
                0.8 / p.beta,
                scheme,
                40,
                11,
                RecordFlags {
                    gradient_norms: true,
                },
            )
            .map_err(|e| fail(&e))?;
            let same = a.indices == b.indices
                && a.iterates
                    .iter()
                    .flatten()
                    .zip(b.iterates.iter().flatten())
                    .all(|(u, v)| u.to_bits() == v.to_bits());
            if !same {
                return Err(format!("{:?} rerun differs", p.family));
            }
        }
    }

    // distance to x★ never increases on realizable runs with η < 2/β
    for p in families.iter().filter(|p| p.is_realizable()) {
        for frac in [0.3, 1.0, 1.9] {
            for seed in 0..10 {
                let tr = optimizer::run_sgd_with_stepsize(
                    p,
                    &x1[..p.dim],
                    frac / p.beta,
                    SamplingScheme::WithReplacement,
                    200,
                    seed,
                    RecordFlags::default(),
                )
                .map_err(|e| fail(&e))?;
                for t in 1..=200 {
                    let (d0, d1) = (
                        dist_sq(tr.x(t), &p.x_star).sqrt(),
                        dist_sq(tr.x(t + 1), &p.x_star).sqrt(),
                    );
                    if d1 > d0 + MONOTONE_TOL {
                        return Err(format!(
                            "{:?}: distance grew at step {t} ({d0:e} -> {d1:e})",
                            p.family
                        ));
                    }
                }
            }
        }
    }

    // gradients against central differences
    let mut worst_fd = 0.0f64;
    for p in &families {
        let x = &x1[..p.dim];
        for i in 0..p.n() {
            let g = p.component_grad(i, x);
            let h = 1e-5;
            let fd: Vec<f64> = (0..p.dim)
                .map(|k| {
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[k] += h;
                    xm[k] -= h;
                    (p.component_value(i, &xp) - p.component_value(i, &xm)) / (2.0 * h)
                })
                .collect();
            let err = norm(&lastiter::linalg::sub(&fd, &g)) / norm(&g).max(1.0);
            worst_fd = worst_fd.max(err);
        }
    }
    if worst_fd > FD_TOL {
        return Err(format!("finite-difference error {worst_fd:e}"));
    }

    // exact power-law fits
    for slope in [-0.5, -1.0, -0.75] {
        let pts: Vec<(usize, f64)> = harness::dyadic_grid(3, 11)
            .iter()
            .map(|&t| (t, 2.5 * (t as f64).powf(slope)))
            .collect();
        let f = harness::fit_rate(&pts).map_err(|e| fail(&e))?;
        if (f.slope - slope).abs() > FIT_TOL || (f.r_squared - 1.0).abs() > FIT_TOL {
            return Err(format!("fit slope {} for {slope}", f.slope));
        }
    }

    // report round trip
    let dir = tempfile::tempdir().map_err(|e| fail(&e))?;
    let mut cfg = config(
        ProblemSpec::RealizableLs {
            d: 5,
            n: 20,
            seed: 4,
        },
        StepsizePolicy::Greedy,
        7,
        20,
    );
    cfg.bounds = vec![BoundKind::Thm1];
    let r = run(&cfg)?;
    harness::write_report(&r, &dir.path().join("report")).map_err(|e| fail(&e))?;
    let back = harness::read_report(&dir.path().join("report")).map_err(|e| fail(&e))?;
    if back != r {
        return Err("report changed across a write/read round trip".into());
    }
    Ok(format!(
        "determinism, monotonicity, finite differences (worst {worst_fd:.1e}), fits, round trip"
    ))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 11] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    let mut failures = 0;
    for (k, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {k:>2}: PASS ({secs:.1}s) {msg}"),
            Err(msg) => {
                failures += 1;
                println!("criterion {k:>2}: FAIL ({secs:.1}s) {msg}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

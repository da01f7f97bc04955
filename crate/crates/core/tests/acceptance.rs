//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary under `cargo test`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use flexnet::oracles::random_feasible_allocation;
use flexnet::planner::capacity_boundary;
use flexnet::presets::{dag5, dag5_with_rates, fig8, preset, xmodel, DAG5_MU, DAG5_MU_MODE2};
use flexnet::sim::{frozen_estimator_harness, run, MetricsSeries, SimConfig, SimError};
use flexnet::verify::{run_suite, Suite, VerifyOptions};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// Index of queue (2,4) in the five-task network's queue order.
const QUEUE_4: usize = 3;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn run_preset(name: &str, seed: u64) -> Result<MetricsSeries, SimError> {
    let p = preset(name).expect("bundled preset");
    let mut cfg = SimConfig::new(p.horizon, seed);
    cfg.stride = p.horizon;
    run(&p.network, &p.policy, &p.arrivals, &cfg).map(|o| o.metrics)
}

fn run_seeds(name: &str) -> Vec<Result<MetricsSeries, SimError>> {
    SEEDS.par_iter().map(|&s| run_preset(name, s)).collect()
}

fn fmt_list(v: &[f64], digits: usize) -> String {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", cells.join(", "))
}

fn c1_capacity() -> Outcome {
    let d = capacity_boundary(&dag5(0.23), &[1.0]).unwrap();
    let x = capacity_boundary(&xmodel(0.3), &[1.0, 1.0]).unwrap();
    let ok = (d - 6.0 / 23.0).abs() <= 1e-5 && (x - 0.375).abs() <= 1e-5;
    outcome(ok, format!("five-task {d:.8} vs 6/23, X model {x:.8} vs 3/8"))
}

fn c2_mode2() -> Outcome {
    let b = capacity_boundary(&dag5_with_rates(0.1, DAG5_MU_MODE2.to_vec()), &[1.0]).unwrap();
    outcome((b - 3.0 / 14.0).abs() <= 1e-5, format!("{b:.8} vs 3/14"))
}

fn p_star() -> Vec<f64> {
    DAG5_MU.iter().map(|mu| 0.23 / mu).collect()
}

fn c3_convergence(runs: &[Result<MetricsSeries, SimError>]) -> Outcome {
    let target = p_star();
    let errs: Vec<f64> = runs
        .iter()
        .map(|r| match r {
            Ok(m) => m
                .final_allocation
                .iter()
                .zip(&target)
                .map(|(p, t)| (p - t).abs())
                .fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        })
        .collect();
    let good = errs.iter().filter(|&&e| e <= 0.05).count();
    outcome(good >= 4, format!("sup-norm errors {} ({good}/5 within 0.05)", fmt_list(&errs, 4)))
}

fn max_q_over_n(runs: &[Result<MetricsSeries, SimError>]) -> Vec<f64> {
    runs.iter()
        .map(|r| r.as_ref().map_or(f64::INFINITY, MetricsSeries::max_q_over_n))
        .collect()
}

fn c4_rate_stability(runs: &[Result<MetricsSeries, SimError>]) -> Outcome {
    let q = max_q_over_n(runs);
    outcome(q.iter().all(|&v| v <= 0.01), format!("max Q^N/N per seed {}", fmt_list(&q, 5)))
}

fn c5_delta_slack(base: &[Result<MetricsSeries, SimError>], slack: &[Result<MetricsSeries, SimError>]) -> Outcome {
    let tail = |r: &Result<MetricsSeries, SimError>| r.as_ref().map_or(f64::NAN, |m| m.mean_queue_tail[QUEUE_4]);
    let ratios: Vec<f64> = base.iter().zip(slack).map(|(b, s)| tail(s) / tail(b)).collect();
    outcome(
        ratios.iter().all(|&r| r <= 0.2),
        format!(
            "queue-4 tail means {} vs {} (ratios {})",
            fmt_list(&slack.iter().map(tail).collect::<Vec<_>>(), 1),
            fmt_list(&base.iter().map(tail).collect::<Vec<_>>(), 1),
            fmt_list(&ratios, 3)
        ),
    )
}

fn c6_xmodel(runs: &[Result<MetricsSeries, SimError>]) -> Outcome {
    let mut ok = true;
    let mut worst_alloc: f64 = 0.0;
    let q = max_q_over_n(runs);
    for r in runs {
        match r {
            Ok(m) => {
                let dev = m.final_allocation.iter().map(|p| (p - 0.5).abs()).fold(0.0, f64::max);
                worst_alloc = worst_alloc.max(dev);
                ok &= dev <= 0.05 && m.max_q_over_n() >= 0.03;
            }
            Err(_) => ok = false,
        }
    }
    outcome(
        ok,
        format!("largest |p_kj - 1/2| = {worst_alloc:.4}, max Q^N/N per seed {}", fmt_list(&q, 4)),
    )
}

fn c7_estimator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut cases = Vec::new();
    for (name, spec) in [("five-task", dag5(0.23)), ("routed", fig8())] {
        for _ in 0..3 {
            let p = random_feasible_allocation(&mut rng, spec.service(), (0.3, 0.95));
            cases.push((name, spec.clone(), p, rng.gen::<u64>()));
        }
    }
    let zs: Vec<Result<f64, SimError>> = cases
        .par_iter()
        .map(|(_, spec, p, seed)| frozen_estimator_harness(spec, p, 100_000, *seed).map(|s| s.max_z()))
        .collect();
    let ok = zs.iter().all(|z| matches!(z, Ok(v) if *v <= 4.0));
    let shown: Vec<f64> = zs.iter().map(|z| *z.as_ref().unwrap_or(&f64::INFINITY)).collect();
    outcome(ok, format!("max |z| per allocation {} (limit 4)", fmt_list(&shown, 2)))
}

fn suite_outcome(suite: Suite) -> Outcome {
    let r = run_suite(suite, &VerifyOptions::default());
    let detail = if r.passed() {
        format!("{} checks", r.checks)
    } else {
        format!("{} of {} checks failed: {}", r.failures.len(), r.checks, r.failures.join("; "))
    };
    outcome(r.passed(), detail)
}

fn c10_conservation(all: &[&[Result<MetricsSeries, SimError>]]) -> Outcome {
    let mut checks = 0;
    let mut violations = 0;
    let mut mismatches = 0;
    let mut other_errors = 0;
    for runs in all {
        for r in runs.iter() {
            match r {
                Ok(m) => {
                    checks += m.conservation_checks;
                    violations += m.conservation_violations;
                }
                Err(SimError::IdentityMismatch { .. }) => mismatches += 1,
                Err(_) => other_errors += 1,
            }
        }
    }
    outcome(
        violations == 0 && mismatches == 0 && other_errors == 0 && checks > 0,
        format!("{checks} checkpoints, {violations} violations, {mismatches} identity mismatches"),
    )
}

fn c11_fqn(runs: &[Result<MetricsSeries, SimError>]) -> Outcome {
    let q = max_q_over_n(runs);
    outcome(q.iter().all(|&v| v <= 0.01), format!("max Q^N/N per seed {}", fmt_list(&q, 5)))
}

fn c12_bursty(runs: &[Result<MetricsSeries, SimError>]) -> Outcome {
    let guard = runs.iter().any(|r| matches!(r, Err(SimError::MemoryGuard { .. })));
    let q = max_q_over_n(runs);
    outcome(
        !guard && q.iter().all(|&v| v <= 0.02),
        format!("memory guard {}, max Q^N/N per seed {}", if guard { "hit" } else { "not hit" }, fmt_list(&q, 5)),
    )
}

fn report(id: usize, name: &str, start: Instant, o: &Outcome) {
    println!(
        "{} [{id:>2}] {name}: {} ({:.1}s)",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    let mut all_passed = true;
    let mut record = |id: usize, name: &str, start: Instant, o: Outcome| {
        report(id, name, start, &o);
        all_passed &= o.passed;
    };

    let t = Instant::now();
    record(1, "capacity boundaries", t, c1_capacity());
    let t = Instant::now();
    record(2, "second-mode boundary", t, c2_mode2());

    let t = Instant::now();
    let eps_runs = run_seeds("fig4b");
    record(3, "robust-eps convergence to nu/mu", t, c3_convergence(&eps_runs));
    record(4, "rate stability Q^N/N", t, c4_rate_stability(&eps_runs));

    let t = Instant::now();
    let base_runs = run_seeds("fig4a");
    let slack_runs = run_seeds("fig4c");
    record(5, "delta-slack queue reduction", t, c5_delta_slack(&base_runs, &slack_runs));

    let t = Instant::now();
    let x_runs = run_seeds("fig6");
    record(6, "X-model instability", t, c6_xmodel(&x_runs));

    let t = Instant::now();
    record(7, "estimator unbiasedness", t, c7_estimator());
    let t = Instant::now();
    record(8, "projection oracle equivalence", t, suite_outcome(Suite::Projection));
    let t = Instant::now();
    record(9, "LP cross-check and homogeneity", t, suite_outcome(Suite::Lp));

    let t = Instant::now();
    let fqn_runs = run_seeds("fqn-demo");
    let bursty_runs = run_seeds("fig4d");
    let t10 = Instant::now();
    record(
        10,
        "conservation and identity",
        t10,
        c10_conservation(&[&eps_runs, &base_runs, &slack_runs, &x_runs, &fqn_runs, &bursty_runs]),
    );
    record(11, "routed-network stability", t, c11_fqn(&fqn_runs));
    record(12, "bursty time-varying stability", t, c12_bursty(&bursty_runs));

    if !all_passed {
        std::process::exit(1);
    }
}

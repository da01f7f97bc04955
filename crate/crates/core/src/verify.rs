//! Property suites run by `flexnet verify`: LP and projection oracle comparisons,
//! estimator Monte Carlo, conservation and identity checks, and convergence of the updates.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{NetworkSpec, NominalRates, ServerSpec, ServiceModel, ServiceRates};
use crate::oracles::{grid_projection, grid_static_plan, hall_member, random_feasible_allocation, random_service};
use crate::planner::{capacity_boundary, solve_static_plan};
use crate::policies::{PolicyConfig, PolicyKind, PolicyState, StepSizeSchedule, UpdateRule};
use crate::presets::{dag5, dag5_with_rates, fig8, preset, xmodel, DAG5_MU, DAG5_MU_MODE2};
use crate::projection::{PolyhedronSpec, ProjectionError};
use crate::scalar::sq_dist;
use crate::sim::{frozen_estimator_harness, run, SimConfig, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Lp,
    Projection,
    Estimator,
    Conservation,
    Convergence,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Lp,
        Suite::Projection,
        Suite::Estimator,
        Suite::Conservation,
        Suite::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lp => "lp",
            Suite::Projection => "projection",
            Suite::Estimator => "estimator",
            Suite::Conservation => "conservation",
            Suite::Convergence => "convergence",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite {s:?} (expected one of lp, projection, estimator, conservation, convergence)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub suites: Vec<Suite>,
    pub seed: u64,
    /// Flip the sign of every update step, to confirm the suites notice.
    pub invert_step: bool,
    /// Horizon of the simulated convergence and conservation runs.
    pub horizon: u64,
    pub estimator_samples: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            suites: Suite::ALL.to_vec(),
            seed: 2024,
            invert_step: false,
            horizon: 300_000,
            estimator_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            checks: 0,
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }
}

/// Runs the selected suites in parallel, reporting in the order requested.
pub fn run_verification(opts: &VerifyOptions) -> Vec<SuiteReport> {
    opts.suites.par_iter().map(|&s| run_suite(s, opts)).collect()
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> SuiteReport {
    match suite {
        Suite::Lp => lp_suite(opts),
        Suite::Projection => projection_suite(opts),
        Suite::Estimator => estimator_suite(opts),
        Suite::Conservation => conservation_suite(opts),
        Suite::Convergence => convergence_suite(opts),
    }
}

fn lp_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut r = SuiteReport::new(Suite::Lp);
    let boundaries = [
        ("five-task network", dag5(0.23), vec![1.0], 6.0 / 23.0),
        ("X model", xmodel(0.3), vec![1.0, 1.0], 3.0 / 8.0),
        ("second mode", dag5_with_rates(0.1, DAG5_MU_MODE2.to_vec()), vec![1.0], 3.0 / 14.0),
    ];
    for (name, spec, dir, want) in boundaries {
        match capacity_boundary(&spec, &dir) {
            Ok(got) => r.check((got - want).abs() <= 1e-5, || format!("{name}: boundary {got}, expected {want}")),
            Err(e) => r.check(false, || format!("{name}: {e}")),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for i in 0..50 {
        let service = random_service(&mut rng, 3, 2);
        let nu: Vec<f64> = (0..service.num_tasks()).map(|_| rng.gen_range(0.05..0.6)).collect();
        let plan = match solve_static_plan(&service, &NominalRates { nu: nu.clone() }) {
            Ok(p) => p,
            Err(e) => {
                r.check(false, || format!("instance {i}: {e}"));
                continue;
            }
        };
        let (oracle, bound) = grid_static_plan(&service, &nu, 0.01);
        r.check(plan.rho_star <= oracle + 1e-9 && oracle - plan.rho_star <= bound + 1e-9, || {
            format!("instance {i}: simplex {} vs grid {oracle} (bound {bound})", plan.rho_star)
        });
        let c = rng.gen_range(0.25..4.0);
        let scaled: Vec<f64> = nu.iter().map(|v| v * c).collect();
        match solve_static_plan(&service, &NominalRates { nu: scaled }) {
            Ok(s) => r.check((s.rho_star - c * plan.rho_star).abs() <= 1e-9, || {
                format!("instance {i}: rho*({c} nu) = {} but {c} rho*(nu) = {}", s.rho_star, c * plan.rho_star)
            }),
            Err(e) => r.check(false, || format!("instance {i} scaled: {e}")),
        }
    }
    r
}

fn projection_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut r = SuiteReport::new(Suite::Projection);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    for i in 0..100 {
        let service = random_service(&mut rng, 3, 2);
        let k_total = service.num_tasks();
        let alpha = service.alphas();
        let caps = service.capability_sets();
        let mut eps0 = 0.0;
        let poly = if rng.gen_bool(0.5) {
            PolyhedronSpec::factorized(&service)
        } else {
            let min_reach = (0..k_total)
                .map(|k| service.servers_of(k).map(|j| alpha[j]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            eps0 = rng.gen_range(0.0..0.5) * min_reach / k_total as f64;
            match PolyhedronSpec::factorized_eps(&service, eps0) {
                Ok(p) => p,
                Err(ProjectionError::EmptyPolyhedron { .. }) => {
                    eps0 = 0.0;
                    PolyhedronSpec::factorized(&service)
                }
                Err(e) => {
                    r.check(false, || format!("instance {i}: {e}"));
                    continue;
                }
            }
        };
        let x: Vec<f64> = (0..k_total).map(|_| rng.gen_range(0.0..2.0)).collect();
        let y: Vec<f64> = (0..k_total).map(|_| rng.gen_range(0.0..2.0)).collect();
        let (px, py) = match (poly.project(&x), poly.project(&y)) {
            (Ok(a), Ok(b)) => (a.point, b.point),
            (Err(e), _) | (_, Err(e)) => {
                r.check(false, || format!("instance {i}: {e}"));
                continue;
            }
        };
        let oracle = grid_projection(&x, &alpha, &caps, eps0, 1e-4);
        let d_impl = sq_dist(&px, &x).sqrt();
        let d_oracle = sq_dist(&oracle, &x).sqrt();
        r.check(hall_member(&px, &alpha, &caps, eps0, 1e-7), || format!("instance {i}: projection {px:?} infeasible"));
        r.check(d_impl <= d_oracle + 1e-9, || format!("instance {i}: distance {d_impl} exceeds oracle {d_oracle}"));
        r.check(sq_dist(&px, &oracle).sqrt() <= 2e-3, || {
            format!("instance {i}: projection {px:?} vs oracle {oracle:?}")
        });
        match poly.project(&px) {
            Ok(again) => {
                let d = crate::scalar::max_abs_diff(&again.point, &px);
                r.check(d <= 1e-7, || format!("instance {i}: not idempotent ({d})"));
            }
            Err(e) => r.check(false, || format!("instance {i}: {e}")),
        }
        let lhs = sq_dist(&px, &py).sqrt();
        let rhs = sq_dist(&x, &y).sqrt();
        r.check(lhs <= rhs + 1e-7, || format!("instance {i}: expansive ({lhs} > {rhs})"));
    }
    r
}

fn estimator_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut r = SuiteReport::new(Suite::Estimator);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xe57);
    let networks: [(&str, NetworkSpec<f64>); 2] = [("five-task network", dag5(0.23)), ("routed network", fig8())];
    for (name, spec) in networks {
        for t in 0..3 {
            let p = random_feasible_allocation(&mut rng, spec.service(), (0.3, 0.95));
            let seed = rng.gen();
            match frozen_estimator_harness(&spec, &p, opts.estimator_samples, seed) {
                Ok(stats) => {
                    let z = stats.max_z();
                    r.check(z <= 4.0, || format!("{name}, allocation {t}: max |z| = {z:.2}"));
                }
                Err(e) => r.check(false, || format!("{name}, allocation {t}: {e}")),
            }
        }
    }
    r
}

fn conservation_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut r = SuiteReport::new(Suite::Conservation);
    let runs: Vec<(String, Result<_, SimError>, i64)> = ["fig4a", "fig4c", "fig4d", "fig6", "fqn-demo"]
        .par_iter()
        .map(|&name| {
            let p = preset(name).expect("bundled preset");
            let mut cfg = SimConfig::new(opts.horizon.min(p.horizon), opts.seed);
            cfg.stride = cfg.horizon;
            let bound = p.arrivals.batch as i64 + if matches!(p.network, NetworkSpec::Fqn(_)) { 1 } else { 0 };
            (name.to_string(), run(&p.network, &p.policy, &p.arrivals, &cfg), bound)
        })
        .collect();
    for (name, res, bound) in runs {
        match res {
            Ok(out) => {
                let m = out.metrics;
                r.check(m.conservation_checks > 0 && m.conservation_violations == 0, || {
                    format!("{name}: {} of {} conservation checks failed", m.conservation_violations, m.conservation_checks)
                });
                r.check(m.max_abs_delta_q <= bound, || format!("{name}: queue changed by {} in one slot", m.max_abs_delta_q));
            }
            Err(e) => r.check(false, || format!("{name}: {e}")),
        }
    }
    r
}

fn convergence_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut r = SuiteReport::new(Suite::Convergence);

    // Noiseless skewed gradient on a single task: p -> nu / mu = 0.4.
    let service = ServiceModel::new(
        1,
        vec![ServerSpec {
            speed: 1.0,
            tasks: vec![0],
        }],
        ServiceRates::Factorized { mu: vec![0.5] },
    );
    let state = PolicyState::new(
        PolyhedronSpec::factorized(&service),
        UpdateRule::OracleGradient {
            nu: vec![0.2],
            mu: vec![0.5],
            premultiplied: false,
        },
        StepSizeSchedule::power(0.6).expect("valid exponent"),
        vec![0.0],
    );
    match state {
        Ok(mut s) => {
            if opts.invert_step {
                s = s.with_inverted_step();
            }
            let mut err = None;
            for _ in 0..100_000 {
                if let Err(e) = s.oracle_gradient_update() {
                    err = Some(e);
                    break;
                }
            }
            let p: f64 = s.allocation()[0];
            r.check(err.is_none() && (p - 0.4).abs() < 1e-3, || format!("oracle gradient ended at {p} ({err:?})"));
        }
        Err(e) => r.check(false, || format!("oracle gradient: {e}")),
    }

    // Robust update on the five-task network: p^N close to nu_k / mu_k.
    let spec = dag5(0.23);
    let mut pol = PolicyConfig::new(PolicyKind::RobustEps);
    pol.invert_step = opts.invert_step;
    let mut cfg = SimConfig::new(opts.horizon, opts.seed);
    cfg.stride = cfg.horizon;
    match run(&spec, &pol, &crate::sim::ArrivalProcess::bernoulli(vec![0.23]), &cfg) {
        Ok(out) => {
            let err = out
                .metrics
                .final_allocation
                .iter()
                .zip(DAG5_MU)
                .map(|(p, mu)| (p - 0.23 / mu).abs())
                .fold(0.0, f64::max);
            r.check(err <= 0.05, || format!("robust update ended {err:.3} from the target allocation"));
        }
        Err(e) => r.check(false, || format!("robust run: {e}")),
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("speed".parse::<Suite>().is_err());
    }

    #[test]
    fn lp_suite_passes() {
        let r = run_suite(Suite::Lp, &VerifyOptions::default());
        assert!(r.passed(), "{:?}", r.failures);
        assert!(r.checks >= 100);
    }
}

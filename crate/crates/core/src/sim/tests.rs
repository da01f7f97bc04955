use super::*;
use crate::model::QueueId;
use crate::policies::PolicyKind;
use crate::presets::{dag5, fig2a, fig8, xmodel};

fn fixed_state(spec: &NetworkSpec<f64>, p: Vec<f64>) -> PolicyState<f64> {
    PolicyState::new(
        PolyhedronSpec::factorized(spec.service()),
        UpdateRule::Static,
        StepSizeSchedule::power(1.0).unwrap(),
        p,
    )
    .unwrap()
}

#[test]
fn empty_network_without_arrivals_stays_empty() {
    let spec = dag5(0.1);
    let mut sim = Simulator::new(&spec, fixed_state(&spec, vec![0.2; 5]), ArrivalProcess::bernoulli(vec![0.0]), 1).unwrap();
    for _ in 0..100 {
        let obs = sim.step().unwrap();
        assert!(obs.delta_q.iter().all(|&d| d == 0));
    }
}

#[test]
fn join_serves_one_task_from_both_parents() {
    let spec = fig2a(0.1, vec![1.0, 1.0, 1.0, 1.0]);
    let state = fixed_state(&spec, vec![0.0, 0.0, 0.0, 1.0]);
    let mut sim = Simulator::new(&spec, state, ArrivalProcess::bernoulli(vec![0.0]), 7).unwrap();
    let topo = sim.topology().unwrap().clone();
    let q24 = topo.queue_index(QueueId::edge(1, 3)).unwrap();
    let q34 = topo.queue_index(QueueId::edge(2, 3)).unwrap();
    sim.preload(q24, [job_id(0, 0), job_id(0, 1)]);
    sim.preload(q34, [job_id(0, 0)]);
    let obs = sim.step().unwrap().clone();
    assert_eq!(obs.nonempty, vec![false, false, false, true]);
    assert_eq!(obs.delta_q[q24], -1);
    assert_eq!(obs.delta_q[q34], -1);
    assert_eq!(sim.queue(q24).front(), Some(&job_id(0, 1)));
    assert_eq!(sim.departures(), &[0, 0, 0, 1]);
    assert!(sim.check_conservation());
}

#[test]
fn mismatched_heads_are_detected() {
    let spec = fig2a(0.1, vec![1.0, 1.0, 1.0, 1.0]);
    let state = fixed_state(&spec, vec![0.0, 0.0, 0.0, 1.0]);
    let mut sim = Simulator::new(&spec, state, ArrivalProcess::bernoulli(vec![0.0]), 7).unwrap();
    sim.preload(3, [job_id(0, 0)]);
    sim.preload(4, [job_id(0, 1)]);
    assert!(matches!(
        sim.step(),
        Err(SimError::IdentityMismatch { task: 4, .. })
    ));
}

#[test]
fn fqn_routing_frequencies() {
    let spec = fig8();
    let state = fixed_state(&spec, vec![0.0, 1.0, 0.0]);
    let mut sim = Simulator::new(&spec, state, ArrivalProcess::bernoulli(vec![0.0; 3]), 3).unwrap();
    sim.freeze();
    sim.preload(1, (0..20_000).map(|c| job_id(1, c)));
    for _ in 0..20_000 {
        sim.step().unwrap();
    }
    let served = sim.departed[1] as f64;
    let to3 = sim.routed[1][2] as f64 / served;
    let to1 = sim.routed[1][0] as f64 / served;
    // Binomial standard deviation is about 0.0056 at this sample size.
    assert!((to3 - 0.5).abs() < 0.03, "{to3}");
    assert!((to1 + to3 - 1.0).abs() < 1e-12);
    assert!(sim.check_conservation());
}

#[test]
fn runs_are_deterministic_per_seed() {
    let spec = dag5(0.23);
    let pol = PolicyConfig::new(PolicyKind::Robust);
    let arr = ArrivalProcess::bernoulli(vec![0.23]);
    let mut cfg = SimConfig::new(20_000, 42);
    cfg.stride = 100;
    let a = run(&spec, &pol, &arr, &cfg).unwrap().metrics;
    let b = run(&spec, &pol, &arr, &cfg).unwrap().metrics;
    assert_eq!(a, b);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.slots.len(), 201);
    cfg.seed = 43;
    let c = run(&spec, &pol, &arr, &cfg).unwrap().metrics;
    assert_ne!(a.final_queue_lengths, c.final_queue_lengths);
}

#[test]
fn arrival_path_independent_of_policy() {
    let spec = dag5(0.23);
    let arr = ArrivalProcess::bernoulli(vec![0.23]);
    let cfg = SimConfig::new(5_000, 9);
    let a = run(&spec, &PolicyConfig::new(PolicyKind::Robust), &arr, &cfg).unwrap();
    let b = run(&spec, &PolicyConfig::new(PolicyKind::StaticLp), &arr, &cfg).unwrap();
    assert_eq!(a.metrics.arrivals, b.metrics.arrivals);
}

#[test]
fn per_slot_change_bounds_and_conservation() {
    let spec = dag5(0.23);
    let pol = PolicyConfig::new(PolicyKind::Robust);
    let cfg = SimConfig::new(20_000, 5);
    let m = run(&spec, &pol, &ArrivalProcess::bernoulli(vec![0.23]), &cfg)
        .unwrap()
        .metrics;
    assert!(m.max_abs_delta_q <= 1);
    assert_eq!(m.conservation_violations, 0);
    assert_eq!(m.conservation_checks, 20);

    let m = run(&spec, &pol, &ArrivalProcess::batch(vec![0.2], 5), &cfg)
        .unwrap()
        .metrics;
    assert!(m.max_abs_delta_q <= 5);
    assert_eq!(m.conservation_violations, 0);
}

#[test]
fn memory_guard_stops_unstable_runs() {
    let spec = xmodel(0.3);
    let mut pol = PolicyConfig::new(PolicyKind::GenericLifted);
    pol.p0 = Some(vec![0.1; 4]);
    let mut cfg = SimConfig::new(200_000, 1);
    cfg.memory_cap = 500;
    let err = run(&spec, &pol, &ArrivalProcess::bernoulli(vec![0.3, 0.3]), &cfg).unwrap_err();
    assert!(matches!(err, SimError::MemoryGuard { cap: 500, .. }));
}

#[test]
fn overflowing_mode_rates_are_rejected_at_runtime() {
    let spec = dag5(0.1);
    let mut mu = crate::presets::DAG5_MU.to_vec();
    mu[0] = 3.0;
    let arr = ArrivalProcess::mode_switch(
        10,
        vec![ArrivalMode {
            lambda: vec![0.1],
            mu: Some(mu),
        }],
        1,
    );
    let state = fixed_state(&spec, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    let mut sim = Simulator::new(&spec, state, arr, 1).unwrap();
    sim.preload_uniform(1);
    assert!(matches!(
        sim.step(),
        Err(SimError::ProbabilityOverflow { task: 1, .. })
    ));
}

#[test]
fn estimator_is_centered_at_the_fixed_point() {
    let spec = dag5(0.23);
    let p: Vec<f64> = crate::presets::DAG5_MU
        .iter()
        .map(|&mu| 0.23 / mu)
        .collect();
    let stats = frozen_estimator_harness(&spec, &p, 20_000, 11).unwrap();
    assert!(stats.expected.iter().all(|e| e.abs() < 1e-12));
    assert!(stats.max_z() < 4.0, "{stats:?}");
}

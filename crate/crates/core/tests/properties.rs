use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flexnet::model::{build_topology, DagJobClass, DagNetworkSpec, NetworkSpec, NominalRates, ServerSpec, ServiceModel, ServiceRates};
use flexnet::oracles::random_service;
use flexnet::planner::{capacity_boundary, solve_static_plan};
use flexnet::policies::{build_policy, PolicyConfig, PolicyKind};
use flexnet::presets::{dag5, preset, DAG5_MU};
use flexnet::projection::PolyhedronSpec;
use flexnet::sim::{run, ArrivalProcess, SimConfig, Simulator};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn service_from(seed: u64) -> ServiceModel<f64> {
    random_service(&mut ChaCha8Rng::seed_from_u64(seed), 4, 3)
}

fn point(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_inside_and_is_idempotent(seed in any::<u64>(), raw in point(4)) {
        let service = service_from(seed);
        let poly = PolyhedronSpec::factorized(&service);
        let x = &raw[..service.num_tasks()];
        let once = poly.project(x).unwrap().point;
        prop_assert!(poly.membership(&once).unwrap().member);
        let twice = poly.project(&once).unwrap().point;
        prop_assert!(dist(&once, &twice) <= 1e-7);
    }

    #[test]
    fn projection_is_non_expansive(seed in any::<u64>(), a in point(4), b in point(4)) {
        let service = service_from(seed);
        let poly = PolyhedronSpec::factorized(&service);
        let k = service.num_tasks();
        let pa = poly.project(&a[..k]).unwrap().point;
        let pb = poly.project(&b[..k]).unwrap().point;
        prop_assert!(dist(&pa, &pb) <= dist(&a[..k], &b[..k]) + 1e-7);
    }

    #[test]
    fn lifted_projection_is_idempotent(raw in point(4)) {
        let spec = preset("fig6").unwrap().network;
        let poly = PolyhedronSpec::lifted(spec.service());
        let once = poly.project(&raw).unwrap().point;
        prop_assert!(poly.membership(&once).unwrap().member);
        let twice = poly.project(&once).unwrap().point;
        prop_assert!(dist(&once, &twice) <= 1e-9);
    }

    #[test]
    fn static_plan_is_homogeneous(seed in any::<u64>(), scale in 0.1f64..5.0) {
        let service = service_from(seed);
        let nu: Vec<f64> = (0..service.num_tasks()).map(|k| 0.05 + 0.03 * k as f64).collect();
        let base = solve_static_plan(&service, &NominalRates { nu: nu.clone() }).unwrap().rho_star;
        let scaled_nu = nu.iter().map(|v| v * scale).collect();
        let scaled = solve_static_plan(&service, &NominalRates { nu: scaled_nu }).unwrap().rho_star;
        prop_assert!((scaled - scale * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn policy_updates_stay_feasible(seed in any::<u64>(), kind in prop::sample::select(vec![
        PolicyKind::Robust, PolicyKind::RobustEps, PolicyKind::RobustDelta,
    ])) {
        let spec = dag5(0.23);
        let NetworkSpec::Dag(dag) = &spec else { unreachable!() };
        let topology = build_topology(dag);
        let mut cfg = PolicyConfig::new(kind);
        if kind == PolicyKind::RobustDelta {
            cfg.delta = 0.02;
        }
        let (policy, _) = build_policy(&spec, Some(&topology), &cfg).unwrap();
        let mut sim = Simulator::new(&spec, policy, ArrivalProcess::bernoulli(vec![0.23]), seed).unwrap();
        for _ in 0..2000 {
            sim.step().unwrap();
            let p = sim.policy().allocation().to_vec();
            prop_assert!(sim.policy().polyhedron().membership(&p).unwrap().member);
        }
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>()) {
        let p = preset("fqn-demo").unwrap();
        let cfg = SimConfig::new(5000, seed);
        let a = run(&p.network, &p.policy, &p.arrivals, &cfg).unwrap().metrics;
        let b = run(&p.network, &p.policy, &p.arrivals, &cfg).unwrap().metrics;
        prop_assert_eq!(a, b);
    }
}

#[test]
fn single_precision_projection_agrees() {
    let servers32 = vec![
        ServerSpec { speed: 1.0f32, tasks: vec![0, 1] },
        ServerSpec { speed: 0.5f32, tasks: vec![1, 2] },
    ];
    let servers64: Vec<ServerSpec<f64>> = servers32
        .iter()
        .map(|s| ServerSpec { speed: s.speed as f64, tasks: s.tasks.clone() })
        .collect();
    let s32 = ServiceModel::new(3, servers32, ServiceRates::Factorized { mu: vec![0.5f32, 0.8, 0.6] });
    let s64 = ServiceModel::new(3, servers64, ServiceRates::Factorized { mu: vec![0.5, 0.8, 0.6] });
    let x = [0.9, 0.7, 0.6];
    let p32 = PolyhedronSpec::factorized(&s32).project(&x.map(|v| v as f32)).unwrap().point;
    let p64 = PolyhedronSpec::factorized(&s64).project(&x).unwrap().point;
    for (a, b) in p32.iter().zip(&p64) {
        assert!((*a as f64 - b).abs() < 1e-4, "{p32:?} vs {p64:?}");
    }
}

#[test]
fn single_precision_network_plans_and_simulates() {
    let mu: Vec<f32> = DAG5_MU.iter().map(|&m| m as f32).collect();
    let spec = NetworkSpec::Dag(DagNetworkSpec {
        classes: vec![DagJobClass {
            nodes: vec![0, 1, 2, 3, 4],
            edges: vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)],
            arrival_rate: 0.2f32,
        }],
        service: ServiceModel::new(
            5,
            vec![
                ServerSpec { speed: 1.0, tasks: vec![0, 3, 4] },
                ServerSpec { speed: 0.5, tasks: vec![1, 2, 3] },
            ],
            ServiceRates::Factorized { mu },
        ),
    });
    let b = capacity_boundary(&spec, &[1.0f32]).unwrap();
    assert!((b - 6.0 / 23.0).abs() < 1e-4, "{b}");
    let cfg = PolicyConfig::new(PolicyKind::RobustEps);
    let out = run(&spec, &cfg, &ArrivalProcess::bernoulli(vec![0.2f32]), &SimConfig::new(20_000, 3)).unwrap();
    assert_eq!(out.metrics.conservation_violations, 0);
}

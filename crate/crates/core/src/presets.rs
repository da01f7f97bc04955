//! Bundled networks and experiment presets.

use crate::model::{
    DagJobClass, DagNetworkSpec, FqnNetworkSpec, NetworkSpec, ServerSpec, ServiceModel,
    ServiceRates,
};
use crate::policies::{PolicyConfig, PolicyKind};
use crate::sim::{ArrivalMode, ArrivalProcess};

/// Base task rates of the five-task network.
pub const DAG5_MU: [f64; 5] = [1.0, 4.0 / 3.0, 2.0, 0.5, 2.0 / 3.0];
/// Second-mode task rates of the five-task network.
pub const DAG5_MU_MODE2: [f64; 5] = [0.5, 2.0, 1.0, 0.4, 1.0];

/// Five-task fork-join job `1 -> {2, 3} -> 4 -> 5` on two servers with speeds 1 and 1/2;
/// server 1 handles tasks {1, 4, 5} and server 2 tasks {2, 3, 4}.
pub fn dag5(lambda: f64) -> NetworkSpec<f64> {
    dag5_with_rates(lambda, DAG5_MU.to_vec())
}

pub fn dag5_with_rates(lambda: f64, mu: Vec<f64>) -> NetworkSpec<f64> {
    NetworkSpec::Dag(DagNetworkSpec {
        classes: vec![DagJobClass {
            nodes: vec![0, 1, 2, 3, 4],
            edges: vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)],
            arrival_rate: lambda,
        }],
        service: ServiceModel::new(
            5,
            vec![
                ServerSpec {
                    speed: 1.0,
                    tasks: vec![0, 3, 4],
                },
                ServerSpec {
                    speed: 0.5,
                    tasks: vec![1, 2, 3],
                },
            ],
            ServiceRates::Factorized { mu },
        ),
    })
}

/// Four-task job `1 -> {2, 3} -> 4` on one unit-speed server.
pub fn fig2a(lambda: f64, mu: Vec<f64>) -> NetworkSpec<f64> {
    NetworkSpec::Dag(DagNetworkSpec {
        classes: vec![DagJobClass {
            nodes: vec![0, 1, 2, 3],
            edges: vec![(0, 1), (0, 2), (1, 3), (2, 3)],
            arrival_rate: lambda,
        }],
        service: ServiceModel::new(
            4,
            vec![ServerSpec {
                speed: 1.0,
                tasks: vec![0, 1, 2, 3],
            }],
            ServiceRates::Factorized { mu },
        ),
    })
}

/// X model: two single-task classes, two servers that can both serve either task, with
/// generic rates `mu_11 = mu_22 = 1/8` and `mu_12 = mu_21 = 3/8`.
pub fn xmodel(lambda: f64) -> NetworkSpec<f64> {
    let both = vec![0, 1];
    NetworkSpec::Dag(DagNetworkSpec {
        classes: (0..2)
            .map(|k| DagJobClass {
                nodes: vec![k],
                edges: Vec::new(),
                arrival_rate: lambda,
            })
            .collect(),
        service: ServiceModel::new(
            2,
            vec![
                ServerSpec {
                    speed: 1.0,
                    tasks: both.clone(),
                },
                ServerSpec {
                    speed: 1.0,
                    tasks: both,
                },
            ],
            ServiceRates::Generic {
                mu_kj: vec![vec![0.125, 0.375], vec![0.375, 0.125]],
            },
        ),
    })
}

/// Three-queue flexible queueing network: queue 1 feeds queue 2, which routes to queues
/// 1 and 3 with probability 1/2 each; queue 3 exits.
pub fn fig8() -> NetworkSpec<f64> {
    fig8_with(vec![0.1, 0.0, 0.0], 0.5)
}

/// The same network with a chosen arrival vector and routing probability `r_23`
/// (`r_21 = 1 - r_23`).
pub fn fig8_with(lambda: Vec<f64>, r23: f64) -> NetworkSpec<f64> {
    NetworkSpec::Fqn(FqnNetworkSpec {
        arrival_rates: lambda,
        routing: vec![
            vec![0.0, 1.0, 0.0],
            vec![1.0 - r23, 0.0, r23],
            vec![0.0, 0.0, 0.0],
        ],
        service: ServiceModel::new(
            3,
            vec![
                ServerSpec {
                    speed: 1.0,
                    tasks: vec![0, 1],
                },
                ServerSpec {
                    speed: 1.0,
                    tasks: vec![1, 2],
                },
            ],
            ServiceRates::Factorized {
                mu: vec![0.6, 0.4, 0.5],
            },
        ),
    })
}

/// A fully specified experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub network: NetworkSpec<f64>,
    pub policy: PolicyConfig<f64>,
    pub arrivals: ArrivalProcess<f64>,
    pub horizon: u64,
    /// Parameters not fixed by the source scenario, with the values chosen for them.
    pub assumed: Vec<String>,
}

pub const PRESET_NAMES: [&str; 7] = [
    "fig4a", "fig4b", "fig4c", "fig4d", "fig6", "fqn-demo", "xmodel-static",
];

const DAG5_ASSUMED: &str =
    "network: edges 1->2, 1->3, 2->4, 3->4, 4->5; T1 = {1,4,5}, T2 = {2,3,4}; alpha = (1, 1/2)";

fn dag5_preset(
    name: &'static str,
    description: &'static str,
    policy: PolicyConfig<f64>,
    arrivals: ArrivalProcess<f64>,
    network: NetworkSpec<f64>,
) -> Preset {
    Preset {
        name,
        description,
        network,
        policy,
        arrivals,
        horizon: 1_000_000,
        assumed: vec![
            DAG5_ASSUMED.into(),
            "initial queues: all empty".into(),
            "p0: projection of the zero vector".into(),
        ],
    }
}

/// Looks up a compiled-in preset by name.
pub fn preset(name: &str) -> Option<Preset> {
    let lambda = 0.23;
    let base = |kind| {
        let mut p = PolicyConfig::new(kind);
        p.exponent = 0.6;
        p
    };
    Some(match name {
        "fig4a" => dag5_preset(
            "fig4a",
            "five-task network at lambda = 0.23, robust update onto C",
            base(PolicyKind::Robust),
            ArrivalProcess::bernoulli(vec![lambda]),
            dag5(lambda),
        ),
        "fig4b" => {
            let mut p = dag5_preset(
                "fig4b",
                "five-task network at lambda = 0.23, robust update onto C_eps0",
                base(PolicyKind::RobustEps),
                ArrivalProcess::bernoulli(vec![lambda]),
                dag5(lambda),
            );
            p.assumed.push("eps0: half the smallest nu_k / mu_k".into());
            p
        }
        "fig4c" => {
            let mut pol = base(PolicyKind::RobustDelta);
            pol.delta = 0.02;
            dag5_preset(
                "fig4c",
                "five-task network at lambda = 0.23, robust update with delta = 0.02",
                pol,
                ArrivalProcess::bernoulli(vec![lambda]),
                dag5(lambda),
            )
        }
        "fig4d" => {
            let mut pol = base(PolicyKind::RobustDelta);
            pol.delta = 0.02;
            let modes = vec![
                ArrivalMode {
                    lambda: vec![0.2],
                    mu: Some(DAG5_MU.to_vec()),
                },
                ArrivalMode {
                    lambda: vec![1.0 / 6.0],
                    mu: Some(DAG5_MU_MODE2.to_vec()),
                },
            ];
            let mut p = dag5_preset(
                "fig4d",
                "five-task network, batches of 5, two modes switching every 1000 slots, delta = 0.02",
                pol,
                ArrivalProcess::mode_switch(1000, modes, 5),
                dag5(0.2),
            );
            p.assumed.push("first mode is active from slot 0".into());
            p
        }
        "fig6" => {
            let mut pol = base(PolicyKind::GenericLifted);
            pol.p0 = Some(vec![0.1; 4]);
            Preset {
                name: "fig6",
                description: "X model at lambda = 0.3 per class, lifted robust update",
                network: xmodel(0.3),
                policy: pol,
                arrivals: ArrivalProcess::bernoulli(vec![0.3, 0.3]),
                horizon: 1_000_000,
                assumed: vec![
                    "network: mu_11 = mu_22 = 1/8, mu_12 = mu_21 = 3/8, both servers serve both tasks"
                        .into(),
                    "initial queues: all empty".into(),
                ],
            }
        }
        "xmodel-static" => Preset {
            name: "xmodel-static",
            description: "X model at lambda = 0.3 per class under the static LP allocation",
            network: xmodel(0.3),
            policy: base(PolicyKind::StaticLp),
            arrivals: ArrivalProcess::bernoulli(vec![0.3, 0.3]),
            horizon: 1_000_000,
            assumed: vec!["initial queues: all empty".into()],
        },
        "fqn-demo" => Preset {
            name: "fqn-demo",
            description: "three-queue routed network, lambda = (0.1, 0, 0), r23 = 1/2, robust update onto C_eps0",
            network: fig8(),
            policy: base(PolicyKind::RobustEps),
            arrivals: ArrivalProcess::bernoulli(vec![0.1, 0.0, 0.0]),
            horizon: 1_000_000,
            assumed: vec![
                "network: mu = (0.6, 0.4, 0.5), alpha = (1, 1), T1 = {1,2}, T2 = {2,3}, r12 = 1, r21 = 1/2"
                    .into(),
                "lambda = (0.1, 0, 0), r23 = 1/2".into(),
                "eps0: half the smallest nu_k / mu_k".into(),
                "p0: projection of the zero vector".into(),
                "initial queues: all empty".into(),
            ],
        },
        _ => return None,
    })
}

//! Network specifications for flexible fork-join (DAG) networks and flexible queueing
//! networks, their validation, virtual-queue topology and nominal traffic rates.
//!
//! Task, queue and server ids are 1-based in JSON, in error messages and in `Display`
//! output; every in-memory index is 0-based.

mod dag;
mod fqn;
pub mod json;

use std::fmt;

use thiserror::Error;

use crate::scalar::Real;

pub use dag::{build_topology, DagJobClass, DagNetworkSpec, QueueId, VirtualQueueTopology};
pub use fqn::FqnNetworkSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("job class {class} contains a directed cycle")]
    CyclicGraph { class: usize },
    #[error("job class {class} is not connected")]
    DisconnectedClass { class: usize },
    #[error("task {task} has no capable server")]
    UnservableTask { task: usize },
    #[error("task {task}: aggregate service probability {load} exceeds 1 (rescale the clock)")]
    RateScalingViolation { task: usize, load: f64 },
    #[error("arrival rate {rate} for {subject} is outside its allowed range")]
    ArrivalRateOutOfRange { subject: String, rate: f64 },
    #[error("server {server} is not capable of any task")]
    IdleServer { server: usize },
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("invalid structure: {0}")]
    InvalidStructure(String),
    #[error("routing row {row} sums to {sum} (> 1)")]
    RoutingRowSum { row: usize, sum: f64 },
    #[error("I - R^T is numerically singular; the network is not open")]
    SingularRouting,
    #[error("nominal rate of queue {queue} is negative ({value})")]
    NegativeNominalRate { queue: usize, value: f64 },
    #[error("spec parse error: {0}")]
    Parse(String),
}

/// All invariant violations found in a spec, not just the first one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<ModelError>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, err: ModelError) {
        self.violations.push(err);
    }

    pub fn into_result(self) -> Result<(), ValidationReport> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(self)
        }
    }

    pub fn contains(&self, pred: impl Fn(&ModelError) -> bool) -> bool {
        self.violations.iter().any(pred)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "- {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

/// A server: speed `alpha_j` and the task types it can work on (0-based, sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct ServerSpec<T> {
    pub speed: T,
    pub tasks: Vec<usize>,
}

/// Service rates, either factorized as `mu_kj = mu_k * alpha_j` or given per pair.
#[derive(Debug, Clone, PartialEq)]
pub enum ServiceRates<T> {
    Factorized { mu: Vec<T> },
    /// K x J matrix; entries for incapable pairs are ignored.
    Generic { mu_kj: Vec<Vec<T>> },
}

/// Servers, capabilities and service rates; shared by both network classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceModel<T> {
    num_tasks: usize,
    servers: Vec<ServerSpec<T>>,
    rates: ServiceRates<T>,
    capable: Vec<Vec<bool>>,
}

impl<T: Real> ServiceModel<T> {
    /// Builds the capability table. Task indices outside `0..num_tasks` are reported by
    /// `validate`, not here.
    pub fn new(num_tasks: usize, mut servers: Vec<ServerSpec<T>>, rates: ServiceRates<T>) -> Self {
        let mut capable = vec![vec![false; servers.len()]; num_tasks];
        for (j, s) in servers.iter_mut().enumerate() {
            s.tasks.sort_unstable();
            s.tasks.dedup();
            for &k in &s.tasks {
                if k < num_tasks {
                    capable[k][j] = true;
                }
            }
        }
        Self {
            num_tasks,
            servers,
            rates,
            capable,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn servers(&self) -> &[ServerSpec<T>] {
        &self.servers
    }

    pub fn rates(&self) -> &ServiceRates<T> {
        &self.rates
    }

    pub fn can_serve(&self, task: usize, server: usize) -> bool {
        self.capable[task][server]
    }

    /// `S_k`: servers capable of task `k`.
    pub fn servers_of(&self, task: usize) -> impl Iterator<Item = usize> + '_ {
        self.capable[task]
            .iter()
            .enumerate()
            .filter_map(|(j, &c)| c.then_some(j))
    }

    /// `T_j`: tasks server `j` can serve.
    pub fn tasks_of(&self, server: usize) -> &[usize] {
        &self.servers[server].tasks
    }

    pub fn alpha(&self, server: usize) -> T {
        self.servers[server].speed
    }

    pub fn alphas(&self) -> Vec<T> {
        self.servers.iter().map(|s| s.speed).collect()
    }

    pub fn capability_sets(&self) -> Vec<Vec<usize>> {
        self.servers.iter().map(|s| s.tasks.clone()).collect()
    }

    pub fn is_factorized(&self) -> bool {
        matches!(self.rates, ServiceRates::Factorized { .. })
    }

    /// `mu_k` under the factorization; `None` for generic rates.
    pub fn task_rate(&self, task: usize) -> Option<T> {
        match &self.rates {
            ServiceRates::Factorized { mu } => Some(mu[task]),
            ServiceRates::Generic { .. } => None,
        }
    }

    pub fn task_rates(&self) -> Option<&[T]> {
        match &self.rates {
            ServiceRates::Factorized { mu } => Some(mu),
            ServiceRates::Generic { .. } => None,
        }
    }

    /// `mu_kj`, zero when server `j` cannot serve task `k`.
    pub fn rate(&self, task: usize, server: usize) -> T {
        if !self.capable[task][server] {
            return T::zero();
        }
        match &self.rates {
            ServiceRates::Factorized { mu } => mu[task] * self.servers[server].speed,
            ServiceRates::Generic { mu_kj } => mu_kj[task][server],
        }
    }

    /// Service probability of task `k` when every capable server devotes all its effort to it.
    pub fn max_service_probability(&self, task: usize) -> T {
        self.servers_of(task).map(|j| self.rate(task, j)).sum()
    }

    /// Same servers and capabilities with the factorized task rates replaced.
    pub fn with_task_rates(&self, mu: Vec<T>) -> Self {
        Self {
            rates: ServiceRates::Factorized { mu },
            ..self.clone()
        }
    }

    pub(crate) fn validate_into(&self, report: &mut ValidationReport) {
        for (j, s) in self.servers.iter().enumerate() {
            if s.tasks.is_empty() {
                report.push(ModelError::IdleServer { server: j + 1 });
            }
            if let Some(&k) = s.tasks.iter().find(|&&k| k >= self.num_tasks) {
                report.push(ModelError::InvalidStructure(format!(
                    "server {} lists unknown task {}",
                    j + 1,
                    k + 1
                )));
            }
            if !(s.speed > T::zero()) || !s.speed.is_finite() {
                report.push(ModelError::InvalidRate(format!(
                    "server {} speed {}",
                    j + 1,
                    s.speed
                )));
            }
        }
        match &self.rates {
            ServiceRates::Factorized { mu } => {
                if mu.len() != self.num_tasks {
                    report.push(ModelError::InvalidStructure(format!(
                        "{} task rates given for {} tasks",
                        mu.len(),
                        self.num_tasks
                    )));
                    return;
                }
                for (k, &m) in mu.iter().enumerate() {
                    if !(m > T::zero()) || !m.is_finite() {
                        report.push(ModelError::InvalidRate(format!("mu_{} = {}", k + 1, m)));
                    }
                }
            }
            ServiceRates::Generic { mu_kj } => {
                if mu_kj.len() != self.num_tasks
                    || mu_kj.iter().any(|row| row.len() != self.servers.len())
                {
                    report.push(ModelError::InvalidStructure(
                        "mu_kj must be a K x J matrix".into(),
                    ));
                    return;
                }
                for k in 0..self.num_tasks {
                    for j in self.servers_of(k) {
                        let m = mu_kj[k][j];
                        if !(m > T::zero()) || !m.is_finite() {
                            report.push(ModelError::InvalidRate(format!(
                                "mu_{}{} = {}",
                                k + 1,
                                j + 1,
                                m
                            )));
                        }
                    }
                }
            }
        }
        for k in 0..self.num_tasks {
            if self.servers_of(k).next().is_none() {
                report.push(ModelError::UnservableTask { task: k + 1 });
                continue;
            }
            let load = self.max_service_probability(k);
            // Probability exactly 1 is a valid Bernoulli parameter.
            if load > T::one() + T::lit(1e-12) {
                report.push(ModelError::RateScalingViolation {
                    task: k + 1,
                    load: load.as_f64(),
                });
            }
        }
    }
}

/// Long-run arrival rate into each task type (DAG) or queue (FQN).
#[derive(Debug, Clone, PartialEq)]
pub struct NominalRates<T> {
    pub nu: Vec<T>,
}

/// Either network class.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkSpec<T> {
    Dag(DagNetworkSpec<T>),
    Fqn(FqnNetworkSpec<T>),
}

impl<T: Real> NetworkSpec<T> {
    pub fn service(&self) -> &ServiceModel<T> {
        match self {
            NetworkSpec::Dag(d) => &d.service,
            NetworkSpec::Fqn(f) => &f.service,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.service().num_tasks()
    }

    pub fn validate(&self) -> ValidationReport {
        match self {
            NetworkSpec::Dag(d) => d.validate(),
            NetworkSpec::Fqn(f) => f.validate(),
        }
    }

    pub fn nominal_rates(&self) -> Result<NominalRates<T>, ModelError> {
        match self {
            NetworkSpec::Dag(d) => Ok(d.nominal_rates()),
            NetworkSpec::Fqn(f) => f.nominal_rates(),
        }
    }

    /// Exogenous arrival rates: one per job class (DAG) or per queue (FQN).
    pub fn arrival_rates(&self) -> Vec<T> {
        match self {
            NetworkSpec::Dag(d) => d.classes.iter().map(|c| c.arrival_rate).collect(),
            NetworkSpec::Fqn(f) => f.arrival_rates.clone(),
        }
    }

    /// Copy with the exogenous arrival vector replaced (no validation).
    pub fn with_arrival_rates(&self, lambda: &[T]) -> Result<Self, ModelError> {
        let expected = self.arrival_rates().len();
        if lambda.len() != expected {
            return Err(ModelError::InvalidStructure(format!(
                "expected {expected} arrival rates, got {}",
                lambda.len()
            )));
        }
        Ok(match self {
            NetworkSpec::Dag(d) => {
                let mut d = d.clone();
                for (c, &l) in d.classes.iter_mut().zip(lambda) {
                    c.arrival_rate = l;
                }
                NetworkSpec::Dag(d)
            }
            NetworkSpec::Fqn(f) => {
                let mut f = f.clone();
                f.arrival_rates = lambda.to_vec();
                NetworkSpec::Fqn(f)
            }
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NetworkSpec::Dag(_) => "dag",
            NetworkSpec::Fqn(_) => "fqn",
        }
    }
}

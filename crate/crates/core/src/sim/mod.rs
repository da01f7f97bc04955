//! Slotted-time simulation: arrivals, cooperative FIFO service with job identities, queue
//! dynamics, policy updates and metrics.

mod arrivals;
mod metrics;

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{mat_vec, Matrix};
use crate::model::{
    build_topology, ModelError, NetworkSpec, ServiceModel, ValidationReport, VirtualQueueTopology,
};
use crate::policies::{
    build_policy, PolicyConfig, PolicyError, PolicyState, ResolvedPolicy, SlotObservation,
    StepSizeSchedule, UpdateRule,
};
use crate::projection::PolyhedronSpec;
use crate::scalar::Real;

pub use arrivals::{ArrivalMode, ArrivalProcess};
pub use metrics::MetricsSeries;
use metrics::MetricsRecorder;

/// Aggregate queue-length cap used when none is configured.
pub const DEFAULT_MEMORY_CAP: u64 = 100_000_000;
/// Slots between conservation checks.
pub const DEFAULT_CHECK_EVERY: u64 = 1000;

const CLASS_SHIFT: u32 = 48;
const PRELOAD_TAG: u64 = 0xFFFF;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("head-of-line job ids differ across the parent queues of task {task} at slot {slot}")]
    IdentityMismatch { slot: u64, task: usize },
    #[error("service probability {prob} of task {task} exceeds 1")]
    ProbabilityOverflow { task: usize, prob: f64 },
    #[error("memory guard: {total} queued tasks exceed the cap of {cap} at slot {slot}")]
    MemoryGuard { slot: u64, total: u64, cap: u64 },
    #[error("invalid network: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: u64,
    pub seed: u64,
    /// Sampling stride of the stored trajectory.
    pub stride: u64,
    pub memory_cap: u64,
    pub check_every: u64,
}

impl SimConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            stride: (horizon / 1000).max(1),
            memory_cap: DEFAULT_MEMORY_CAP,
            check_every: DEFAULT_CHECK_EVERY,
        }
    }
}

/// Builds the 64-bit job id `class << 48 | counter`.
pub fn job_id(class: usize, counter: u64) -> u64 {
    ((class as u64) << CLASS_SHIFT) | counter
}

pub fn job_class(id: u64) -> u64 {
    id >> CLASS_SHIFT
}

#[derive(Debug, Clone)]
enum Topology<T> {
    Dag(VirtualQueueTopology),
    Fqn {
        /// Cumulative routing rows.
        cumulative: Matrix<T>,
        routing_inverse: Matrix<T>,
    },
}

/// One simulation run: owned queues, RNG streams, counters and policy.
#[derive(Debug, Clone)]
pub struct Simulator<T: Real> {
    topology: Topology<T>,
    services: Vec<ServiceModel<T>>,
    arrivals: ArrivalProcess<T>,
    policy: PolicyState<T>,
    queues: Vec<VecDeque<u64>>,
    initial: Vec<u64>,
    slot: u64,
    rng_arrivals: ChaCha8Rng,
    rng_service: ChaCha8Rng,
    rng_routing: ChaCha8Rng,
    next_id: Vec<u64>,
    arrived: Vec<u64>,
    departed: Vec<u64>,
    routed: Vec<Vec<u64>>,
    total: u64,
    frozen: bool,
    memory_cap: u64,
    check_every: u64,
    conservation_checks: u64,
    conservation_violations: u64,
    obs: SlotObservation,
    start_len: Vec<u64>,
    served: Vec<bool>,
}

impl<T: Real> Simulator<T> {
    pub fn new(
        spec: &NetworkSpec<T>,
        policy: PolicyState<T>,
        arrivals: ArrivalProcess<T>,
        seed: u64,
    ) -> Result<Self, SimError> {
        spec.validate().into_result().map_err(SimError::Invalid)?;
        let service = spec.service();
        let k_total = service.num_tasks();
        let topology = match spec {
            NetworkSpec::Dag(d) => Topology::Dag(build_topology(d)),
            NetworkSpec::Fqn(f) => {
                let cumulative = f
                    .routing
                    .iter()
                    .map(|row| {
                        let mut acc = T::zero();
                        row.iter()
                            .map(|&r| {
                                acc = acc + r;
                                acc
                            })
                            .collect()
                    })
                    .collect();
                Topology::Fqn {
                    cumulative,
                    routing_inverse: f.routing_inverse()?,
                }
            }
        };
        let sources = spec.arrival_rates().len();
        arrivals.validate(sources, k_total)?;
        let mut services = Vec::with_capacity(arrivals.modes.len());
        for m in &arrivals.modes {
            services.push(match &m.mu {
                Some(mu) => {
                    if !service.is_factorized() {
                        return Err(SimError::Config(
                            "mode service rates require factorized rates".into(),
                        ));
                    }
                    service.with_task_rates(mu.clone())
                }
                None => service.clone(),
            });
        }
        let num_queues = match &topology {
            Topology::Dag(t) => t.num_queues(),
            Topology::Fqn { .. } => k_total,
        };
        if policy.allocation().len() != policy.polyhedron().dim()
            || policy.polyhedron().num_tasks() != k_total
        {
            return Err(SimError::Config("policy does not match the network".into()));
        }
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        let routed = match &topology {
            Topology::Fqn { .. } => vec![vec![0; k_total]; k_total],
            Topology::Dag(_) => Vec::new(),
        };
        Ok(Self {
            topology,
            services,
            arrivals,
            policy,
            queues: vec![VecDeque::new(); num_queues],
            initial: vec![0; num_queues],
            slot: 0,
            rng_arrivals: stream(1),
            rng_service: stream(2),
            rng_routing: stream(3),
            next_id: vec![0; sources],
            arrived: vec![0; sources],
            departed: vec![0; k_total],
            routed,
            total: 0,
            frozen: false,
            memory_cap: DEFAULT_MEMORY_CAP,
            check_every: DEFAULT_CHECK_EVERY,
            conservation_checks: 0,
            conservation_violations: 0,
            obs: SlotObservation {
                delta_q: vec![0; num_queues],
                nonempty: vec![false; k_total],
            },
            start_len: vec![0; num_queues],
            served: vec![false; k_total],
        })
    }

    pub fn with_memory_cap(mut self, cap: u64) -> Self {
        self.memory_cap = cap;
        self
    }

    pub fn with_check_every(mut self, every: u64) -> Self {
        self.check_every = every.max(1);
        self
    }

    /// Stops policy updates; the allocation stays fixed.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn num_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn policy(&self) -> &PolicyState<T> {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut PolicyState<T> {
        &mut self.policy
    }

    pub fn topology(&self) -> Option<&VirtualQueueTopology> {
        match &self.topology {
            Topology::Dag(t) => Some(t),
            Topology::Fqn { .. } => None,
        }
    }

    pub fn queue_lengths(&self) -> Vec<u64> {
        self.queues.iter().map(|q| q.len() as u64).collect()
    }

    pub fn queue(&self, q: usize) -> &VecDeque<u64> {
        &self.queues[q]
    }

    pub fn departures(&self) -> &[u64] {
        &self.departed
    }

    pub fn arrivals(&self) -> &[u64] {
        &self.arrived
    }

    pub fn conservation_counts(&self) -> (u64, u64) {
        (self.conservation_checks, self.conservation_violations)
    }

    pub fn queue_labels(&self) -> Vec<String> {
        match &self.topology {
            Topology::Dag(t) => t.queues.iter().map(|q| q.label()).collect(),
            Topology::Fqn { .. } => (1..=self.queues.len()).map(|k| format!("q{k}")).collect(),
        }
    }

    /// Places jobs in a queue before the run starts; they count as initial content.
    pub fn preload(&mut self, queue: usize, ids: impl IntoIterator<Item = u64>) {
        for id in ids {
            self.queues[queue].push_back(id);
            self.initial[queue] += 1;
            self.total += 1;
        }
    }

    /// Preloads every queue with the same `depth` ids, which keeps head-of-line identities
    /// aligned across the parents of every task.
    pub fn preload_uniform(&mut self, depth: u64) {
        for q in 0..self.queues.len() {
            self.preload(q, (0..depth).map(|c| job_id(PRELOAD_TAG as usize, c)));
        }
    }

    fn service_probability(&self, mode: usize, k: usize) -> Result<f64, SimError> {
        let prob = self
            .policy
            .service_probability(&self.services[mode], k)
            .as_f64();
        if prob > 1.0 + 1e-12 || prob.is_nan() {
            return Err(SimError::ProbabilityOverflow {
                task: k + 1,
                prob,
            });
        }
        Ok(prob)
    }

    fn admit(&mut self, source: usize, batch: u32) -> impl Iterator<Item = u64> {
        let start = self.next_id[source];
        self.next_id[source] += batch as u64;
        self.arrived[source] += batch as u64;
        (start..start + batch as u64).map(move |c| job_id(source, c))
    }

    /// Simulates one slot and applies the policy update (unless frozen).
    pub fn step(&mut self) -> Result<&SlotObservation, SimError> {
        let mode = self.arrivals.mode_at(self.slot);
        for (s, q) in self.start_len.iter_mut().zip(&self.queues) {
            *s = q.len() as u64;
        }
        match &self.topology {
            Topology::Dag(_) => self.serve_dag(mode)?,
            Topology::Fqn { .. } => self.serve_fqn(mode)?,
        }
        self.arrive(mode);

        for (q, d) in self.obs.delta_q.iter_mut().enumerate() {
            *d = self.queues[q].len() as i64 - self.start_len[q] as i64;
        }
        self.total = self.queues.iter().map(|q| q.len() as u64).sum();
        self.slot += 1;
        if self.total > self.memory_cap {
            return Err(SimError::MemoryGuard {
                slot: self.slot,
                total: self.total,
                cap: self.memory_cap,
            });
        }
        if self.slot.is_multiple_of(self.check_every) {
            self.check_conservation();
        }
        if !self.frozen {
            self.policy.update(&self.obs)?;
        }
        Ok(&self.obs)
    }

    fn serve_dag(&mut self, mode: usize) -> Result<(), SimError> {
        let Topology::Dag(topo) = &self.topology else {
            unreachable!()
        };
        let k_total = self.departed.len();
        for k in 0..k_total {
            let u: f64 = self.rng_service.gen();
            let e = topo.input_queues[k]
                .iter()
                .all(|&q| !self.queues[q].is_empty());
            self.obs.nonempty[k] = e;
            self.served[k] = e && u < self.service_probability(mode, k)?;
        }
        let Topology::Dag(topo) = &self.topology else {
            unreachable!()
        };
        for k in 0..k_total {
            if !self.served[k] {
                continue;
            }
            let inputs = &topo.input_queues[k];
            let id = self.queues[inputs[0]].pop_front().expect("task was available");
            for &q in &inputs[1..] {
                let other = self.queues[q].pop_front().expect("task was available");
                if other != id {
                    return Err(SimError::IdentityMismatch {
                        slot: self.slot,
                        task: k + 1,
                    });
                }
            }
            for &q in &topo.output_queues[k] {
                self.queues[q].push_back(id);
            }
            self.departed[k] += 1;
        }
        Ok(())
    }

    fn serve_fqn(&mut self, mode: usize) -> Result<(), SimError> {
        let k_total = self.departed.len();
        for k in 0..k_total {
            let u: f64 = self.rng_service.gen();
            let e = !self.queues[k].is_empty();
            self.obs.nonempty[k] = e;
            self.served[k] = e && u < self.service_probability(mode, k)?;
        }
        let Topology::Fqn { cumulative, .. } = &self.topology else {
            unreachable!()
        };
        for k in 0..k_total {
            if !self.served[k] {
                continue;
            }
            // The head is a start-of-slot job: routed jobs only ever join the back.
            let id = self.queues[k].pop_front().expect("queue was nonempty");
            self.departed[k] += 1;
            let u: f64 = self.rng_routing.gen();
            if let Some(dest) = cumulative[k].iter().position(|&c| u < c.as_f64()) {
                self.queues[dest].push_back(id);
                self.routed[k][dest] += 1;
            }
        }
        Ok(())
    }

    fn arrive(&mut self, mode: usize) {
        let batch = self.arrivals.batch;
        let b = batch as f64;
        for source in 0..self.next_id.len() {
            let u: f64 = self.rng_arrivals.gen();
            let rate = self.arrivals.modes[mode].lambda[source].as_f64() / b;
            if u >= rate {
                continue;
            }
            let ids: Vec<u64> = self.admit(source, batch).collect();
            match &self.topology {
                Topology::Dag(topo) => {
                    for &q in &topo.root_queues_of_class[source] {
                        self.queues[q].extend(ids.iter().copied());
                    }
                }
                Topology::Fqn { .. } => self.queues[source].extend(ids),
            }
        }
    }

    /// Checks the queue-dynamics identities against the cumulative counters.
    pub fn check_conservation(&mut self) -> bool {
        let ok = match &self.topology {
            Topology::Dag(topo) => topo.queues.iter().enumerate().all(|(q, id)| {
                let inflow = match id.parent {
                    None => self.arrived[topo.class_of_task[id.child]],
                    Some(parent) => self.departed[parent],
                };
                self.queues[q].len() as i128
                    == self.initial[q] as i128 + inflow as i128 - self.departed[id.child] as i128
            }),
            Topology::Fqn { .. } => (0..self.queues.len()).all(|k| {
                let routed_in: u64 = self.routed.iter().map(|row| row[k]).sum();
                self.queues[k].len() as i128
                    == self.initial[k] as i128 + self.arrived[k] as i128 + routed_in as i128
                        - self.departed[k] as i128
            }),
        };
        self.conservation_checks += 1;
        if !ok {
            self.conservation_violations += 1;
        }
        ok
    }

    /// The per-coordinate update statistic of the slot just simulated: the path sums
    /// `sum_{H_k} dQ` (DAG) or `(I - R^T)^{-1} dQ` (FQN).
    pub fn estimator_statistic(&self) -> Vec<f64> {
        match &self.topology {
            Topology::Dag(topo) => topo
                .estimator_paths
                .iter()
                .map(|path| path.iter().map(|&q| self.obs.delta_q[q]).sum::<i64>() as f64)
                .collect(),
            Topology::Fqn {
                routing_inverse, ..
            } => {
                let dq: Vec<T> = self
                    .obs
                    .delta_q
                    .iter()
                    .map(|&d| T::from_i64(d).unwrap())
                    .collect();
                mat_vec(routing_inverse, &dq).iter().map(|v| v.as_f64()).collect()
            }
        }
    }

    fn allocation_f64(&self) -> Vec<f64> {
        self.policy.allocation().iter().map(|v| v.as_f64()).collect()
    }
}

/// Output of [`run`]: the metrics plus the policy defaults that were filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput<T> {
    pub metrics: MetricsSeries,
    pub resolved: ResolvedPolicy<T>,
}

/// Simulates `cfg.horizon` slots from empty queues. Deterministic in `cfg.seed`.
pub fn run<T: Real>(
    spec: &NetworkSpec<T>,
    policy: &PolicyConfig<T>,
    arrivals: &ArrivalProcess<T>,
    cfg: &SimConfig,
) -> Result<RunOutput<T>, SimError> {
    if cfg.horizon == 0 {
        return Err(SimError::Config("horizon must be at least 1".into()));
    }
    spec.validate().into_result().map_err(SimError::Invalid)?;
    let topology = match spec {
        NetworkSpec::Dag(d) => Some(build_topology(d)),
        NetworkSpec::Fqn(_) => None,
    };
    let (state, resolved) = build_policy(spec, topology.as_ref(), policy)?;
    let sim = Simulator::new(spec, state, arrivals.clone(), cfg.seed)?
        .with_memory_cap(cfg.memory_cap)
        .with_check_every(cfg.check_every);
    let metrics = drive(sim, cfg)?;
    Ok(RunOutput { metrics, resolved })
}

/// Runs an already-built simulator for `cfg.horizon` slots and collects metrics.
pub fn drive<T: Real>(mut sim: Simulator<T>, cfg: &SimConfig) -> Result<MetricsSeries, SimError> {
    let mut rec = MetricsRecorder::new(sim.queue_labels(), cfg.horizon, cfg.stride);
    rec.sample(0, sim.queue_lengths(), sim.allocation_f64());
    for n in 0..cfg.horizon {
        let start: Vec<u64> = sim.queue_lengths();
        let obs = sim.step()?;
        rec.record_slot(n, &start, &obs.delta_q);
        if rec.wants_sample(n + 1) {
            rec.sample(n + 1, sim.queue_lengths(), sim.allocation_f64());
        }
    }
    if !sim.slot.is_multiple_of(sim.check_every) {
        sim.check_conservation();
    }
    let (checks, violations) = sim.conservation_counts();
    rec.conservation(checks, violations);
    Ok(rec.finish(
        cfg.horizon,
        sim.queue_lengths(),
        sim.allocation_f64(),
        sim.arrived.clone(),
        sim.departed.clone(),
    ))
}

/// Empirical mean and standard error of the update statistic at a fixed allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorStats {
    pub samples: u64,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `nu_k - mu_k p_k`.
    pub expected: Vec<f64>,
}

impl EstimatorStats {
    /// Largest `|mean - expected| / stderr` over coordinates.
    pub fn max_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.expected)
            .zip(&self.stderr)
            .map(|((&m, &e), &s)| {
                if s > 0.0 {
                    (m - e).abs() / s
                } else if (m - e).abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Simulates `samples` slots with the allocation frozen at `p` and every queue preloaded
/// deep enough that every task stays available throughout.
pub fn frozen_estimator_harness<T: Real>(
    spec: &NetworkSpec<T>,
    p: &[T],
    samples: u64,
    seed: u64,
) -> Result<EstimatorStats, SimError> {
    let service = spec.service();
    let mu = service
        .task_rates()
        .ok_or_else(|| SimError::Config("estimator harness needs factorized rates".into()))?
        .to_vec();
    let nu = spec.nominal_rates()?.nu;
    let poly = PolyhedronSpec::factorized(service);
    let schedule = StepSizeSchedule::power(T::one())?;
    let state = PolicyState::new(poly, UpdateRule::Static, schedule, p.to_vec())?;
    let mut sim = Simulator::new(
        spec,
        state,
        ArrivalProcess::bernoulli(spec.arrival_rates()),
        seed,
    )?;
    sim.freeze();
    sim.preload_uniform(samples + 1);

    let dim = nu.len();
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    for n in 1..=samples {
        sim.step()?;
        if sim.obs.nonempty.iter().any(|&e| !e) {
            return Err(SimError::Config("preloaded queues ran dry".into()));
        }
        let x = sim.estimator_statistic();
        for k in 0..dim {
            let d = x[k] - mean[k];
            mean[k] += d / n as f64;
            m2[k] += d * (x[k] - mean[k]);
        }
    }
    let s = samples as f64;
    let stderr = m2
        .iter()
        .map(|&v| if samples > 1 { (v / (s - 1.0) / s).sqrt() } else { f64::INFINITY })
        .collect();
    let expected = (0..dim)
        .map(|k| nu[k].as_f64() - mu[k].as_f64() * p[k].as_f64())
        .collect();
    Ok(EstimatorStats {
        samples,
        mean,
        stderr,
        expected,
    })
}

#[cfg(test)]
mod tests;

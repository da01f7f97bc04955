//! Allocation-update rules: the robust queue-change-driven updates for DAG and flexible
//! queueing networks, the lifted update for generic rates, the noiseless gradient oracle
//! and the constant static-LP allocation.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{mat_vec, Matrix};
use crate::model::{ModelError, NetworkSpec, ServiceModel, VirtualQueueTopology};
use crate::planner::{plan_network, PlanError, StaticPlan};
use crate::projection::{PolyhedronSpec, ProjectionError};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("step-size exponent {0} must lie in (0.5, 1]")]
    StepExponent(f64),
    #[error("explicit step sizes must be positive, finite and non-increasing")]
    StepSequence,
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("static plan is infeasible (rho* = {0} > 1)")]
    InfeasiblePlan(f64),
    #[error("initial allocation is not in the feasible polyhedron")]
    InfeasibleInitial,
    #[error("policy {policy} is not applicable: {reason}")]
    NotApplicable { policy: String, reason: String },
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
}

/// Step sizes `beta^n`, indexed from `n = 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSizeSchedule<T> {
    /// `beta^n = n^{-a}`.
    Power { exponent: T },
    /// Explicit prefix; the last value is held beyond its end.
    Explicit(Vec<T>),
}

impl<T: Real> StepSizeSchedule<T> {
    /// `n^{-a}` satisfies `sum beta = inf`, `sum beta^2 < inf` and
    /// `limsup 1/(n beta^n) < inf` exactly when `a` is in `(0.5, 1]`.
    pub fn power(exponent: T) -> Result<Self, PolicyError> {
        if exponent > T::lit(0.5) && exponent <= T::one() {
            Ok(Self::Power { exponent })
        } else {
            Err(PolicyError::StepExponent(exponent.as_f64()))
        }
    }

    pub fn explicit(seq: Vec<T>) -> Result<Self, PolicyError> {
        let ok = !seq.is_empty()
            && seq.iter().all(|&b| b > T::zero() && b.is_finite())
            && seq.windows(2).all(|w| w[1] <= w[0]);
        if ok {
            Ok(Self::Explicit(seq))
        } else {
            Err(PolicyError::StepSequence)
        }
    }

    pub fn beta(&self, n: u64) -> T {
        let n = n.max(1);
        match self {
            Self::Power { exponent } => T::from_u64(n).unwrap().powf(-*exponent),
            Self::Explicit(seq) => seq[((n - 1) as usize).min(seq.len() - 1)],
        }
    }
}

/// Policy names accepted in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Robust,
    RobustEps,
    RobustDelta,
    GenericLifted,
    OracleGradient,
    StaticLp,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Robust,
        PolicyKind::RobustEps,
        PolicyKind::RobustDelta,
        PolicyKind::GenericLifted,
        PolicyKind::OracleGradient,
        PolicyKind::StaticLp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Robust => "robust",
            PolicyKind::RobustEps => "robust-eps",
            PolicyKind::RobustDelta => "robust-delta",
            PolicyKind::GenericLifted => "generic-lifted",
            PolicyKind::OracleGradient => "oracle-gradient",
            PolicyKind::StaticLp => "static-lp",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PolicyError::UnknownPolicy(s.to_string()))
    }
}

/// What happened during one slot, as seen by the update rules.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotObservation {
    /// `Q^{n+1} - Q^n` per queue.
    pub delta_q: Vec<i64>,
    /// `1_{E^n_k}` per task (DAG) or `1{Q^n_k > 0}` per queue (FQN).
    pub nonempty: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateRule<T> {
    /// `p_k <- [p_k + beta 1_{E_k} sum_{H_k} dQ + delta]`.
    RobustDag { paths: Vec<Vec<usize>>, delta: T },
    /// `p <- [p + beta E (I - R^T)^{-1} dQ]`.
    RobustFqn { routing_inverse: Matrix<T> },
    /// Same additive term for every server of task `k`, in lifted coordinates.
    GenericLifted {
        paths: Vec<Vec<usize>>,
        servers_of: Vec<Vec<usize>>,
    },
    /// Deterministic `p_k <- [p_k + beta (nu_k - mu_k p_k)]`, or the `mu_k`-premultiplied
    /// gradient step when `premultiplied`.
    OracleGradient {
        nu: Vec<T>,
        mu: Vec<T>,
        premultiplied: bool,
    },
    /// Constant allocation.
    Static,
}

/// Current allocation plus everything needed to update it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState<T> {
    p: Vec<T>,
    witness: Matrix<T>,
    schedule: StepSizeSchedule<T>,
    poly: PolyhedronSpec<T>,
    rule: UpdateRule<T>,
    updates: u64,
    sign: T,
    scratch: Vec<T>,
}

impl<T: Real> PolicyState<T> {
    /// Starts from `p0`, which must already lie in `poly`.
    pub fn new(
        poly: PolyhedronSpec<T>,
        rule: UpdateRule<T>,
        schedule: StepSizeSchedule<T>,
        p0: Vec<T>,
    ) -> Result<Self, PolicyError> {
        let m = poly.membership(&p0)?;
        if !m.member {
            return Err(PolicyError::InfeasibleInitial);
        }
        let witness = m.witness.expect("members carry a witness");
        Ok(Self {
            p: p0,
            witness,
            schedule,
            poly,
            rule,
            updates: 0,
            sign: T::one(),
            scratch: Vec::new(),
        })
    }

    /// Flips the sign of the stochastic step; used only to check that the verification
    /// suites catch a broken update.
    pub fn with_inverted_step(mut self) -> Self {
        self.sign = -self.sign;
        self
    }

    pub fn allocation(&self) -> &[T] {
        &self.p
    }

    pub fn lifted_witness(&self) -> &Matrix<T> {
        &self.witness
    }

    pub fn polyhedron(&self) -> &PolyhedronSpec<T> {
        &self.poly
    }

    pub fn rule(&self) -> &UpdateRule<T> {
        &self.rule
    }

    pub fn schedule(&self) -> &StepSizeSchedule<T> {
        &self.schedule
    }

    /// Number of updates applied so far; the next step uses `beta^{updates+1}`.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn current_beta(&self) -> T {
        self.schedule.beta(self.updates + 1)
    }

    /// Applies whichever update the rule prescribes.
    pub fn update(&mut self, obs: &SlotObservation) -> Result<(), PolicyError> {
        match self.rule {
            UpdateRule::RobustDag { .. } => self.robust_dag_update(obs),
            UpdateRule::RobustFqn { .. } => self.robust_fqn_update(obs),
            UpdateRule::GenericLifted { .. } => self.generic_lifted_update(obs),
            UpdateRule::OracleGradient { .. } => self.oracle_gradient_update(),
            UpdateRule::Static => {
                self.updates += 1;
                Ok(())
            }
        }
    }

    fn commit(&mut self) -> Result<(), PolicyError> {
        let res = self.poly.project_warm(&self.scratch, Some(&self.witness))?;
        self.p = res.point;
        self.witness = res.lifted_witness;
        self.updates += 1;
        Ok(())
    }

    pub fn robust_dag_update(&mut self, obs: &SlotObservation) -> Result<(), PolicyError> {
        let UpdateRule::RobustDag { paths, delta } = &self.rule else {
            return Err(self.mismatch("robust DAG update"));
        };
        let beta = self.schedule.beta(self.updates + 1) * self.sign;
        let delta = *delta;
        let mut x = std::mem::take(&mut self.scratch);
        x.clear();
        let mut moved = delta != T::zero();
        for (k, path) in paths.iter().enumerate() {
            let mut xk = self.p[k] + delta;
            if obs.nonempty[k] {
                let g: i64 = path.iter().map(|&q| obs.delta_q[q]).sum();
                if g != 0 {
                    xk = xk + beta * T::from_i64(g).unwrap();
                    moved = true;
                }
            }
            x.push(xk);
        }
        self.scratch = x;
        if !moved {
            // p^n is already feasible, so it is its own projection.
            self.updates += 1;
            return Ok(());
        }
        self.commit()
    }

    pub fn robust_fqn_update(&mut self, obs: &SlotObservation) -> Result<(), PolicyError> {
        let UpdateRule::RobustFqn { routing_inverse } = &self.rule else {
            return Err(self.mismatch("robust FQN update"));
        };
        let beta = self.schedule.beta(self.updates + 1) * self.sign;
        if obs.delta_q.iter().all(|&d| d == 0) {
            self.updates += 1;
            return Ok(());
        }
        let dq: Vec<T> = obs.delta_q.iter().map(|&d| T::from_i64(d).unwrap()).collect();
        let g = mat_vec(routing_inverse, &dq);
        let x: Vec<T> = self
            .p
            .iter()
            .zip(&g)
            .zip(&obs.nonempty)
            .map(|((&p, &gk), &e)| if e { p + beta * gk } else { p })
            .collect();
        self.scratch = x;
        self.commit()
    }

    pub fn generic_lifted_update(&mut self, obs: &SlotObservation) -> Result<(), PolicyError> {
        let UpdateRule::GenericLifted { paths, servers_of } = &self.rule else {
            return Err(self.mismatch("generic lifted update"));
        };
        let beta = self.schedule.beta(self.updates + 1) * self.sign;
        let j_total = self.poly.num_servers();
        let mut x = self.p.clone();
        let mut moved = false;
        for (k, path) in paths.iter().enumerate() {
            if !obs.nonempty[k] {
                continue;
            }
            let g: i64 = path.iter().map(|&q| obs.delta_q[q]).sum();
            if g == 0 {
                continue;
            }
            moved = true;
            let step = beta * T::from_i64(g).unwrap();
            for &j in &servers_of[k] {
                x[k * j_total + j] = x[k * j_total + j] + step;
            }
        }
        if !moved {
            self.updates += 1;
            return Ok(());
        }
        self.scratch = x;
        self.commit()
    }

    /// Noiseless update with the true rates; not robust, used as a reference.
    pub fn oracle_gradient_update(&mut self) -> Result<(), PolicyError> {
        let UpdateRule::OracleGradient {
            nu,
            mu,
            premultiplied,
        } = &self.rule
        else {
            return Err(self.mismatch("oracle gradient update"));
        };
        let beta = self.schedule.beta(self.updates + 1) * self.sign;
        let x: Vec<T> = (0..self.p.len())
            .map(|k| {
                let drift = nu[k] - mu[k] * self.p[k];
                let scale = if *premultiplied { mu[k] } else { T::one() };
                self.p[k] + beta * scale * drift
            })
            .collect();
        self.scratch = x;
        self.commit()
    }

    fn mismatch(&self, what: &str) -> PolicyError {
        PolicyError::NotApplicable {
            policy: what.to_string(),
            reason: format!("state holds rule {:?}", std::mem::discriminant(&self.rule)),
        }
    }

    /// Per-slot service probability of task `k` under the current allocation.
    pub fn service_probability(&self, service: &ServiceModel<T>, k: usize) -> T {
        if self.poly.is_lifted() {
            let j_total = self.poly.num_servers();
            service
                .servers_of(k)
                .map(|j| service.rate(k, j) * self.p[k * j_total + j])
                .sum()
        } else {
            match service.task_rate(k) {
                Some(mu) => mu * self.p[k],
                None => service
                    .servers_of(k)
                    .map(|j| service.rate(k, j) * self.witness[k][j])
                    .sum(),
            }
        }
    }

    /// Overwrites the allocation (used by frozen estimator runs); `p` must be feasible.
    pub fn set_allocation(&mut self, p: Vec<T>) -> Result<(), PolicyError> {
        let m = self.poly.membership(&p)?;
        if !m.member {
            return Err(PolicyError::InfeasibleInitial);
        }
        self.witness = m.witness.expect("members carry a witness");
        self.p = p;
        Ok(())
    }
}

/// Constant allocation `p_k = sum_j alpha_j p*_kj` from an optimal static plan.
pub fn static_oracle_allocation<T: Real>(
    plan: &StaticPlan<T>,
    service: &ServiceModel<T>,
) -> Result<Vec<T>, PolicyError> {
    if !plan.feasible {
        return Err(PolicyError::InfeasiblePlan(plan.rho_star.as_f64()));
    }
    Ok(plan.effective_allocation(service))
}

/// Run-level policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig<T> {
    pub kind: PolicyKind,
    /// Step-size exponent `a` in `beta^n = n^{-a}`.
    pub exponent: T,
    pub delta: T,
    /// Lower bound for `robust-eps`; defaults to half the smallest `nu_k / mu_k`.
    pub eps0: Option<T>,
    /// Initial allocation; defaults to the projection of the origin.
    pub p0: Option<Vec<T>>,
    /// Oracle-gradient only: use the `mu_k`-premultiplied gradient.
    pub premultiplied: bool,
    pub invert_step: bool,
}

impl<T: Real> PolicyConfig<T> {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            exponent: T::lit(0.6),
            delta: T::zero(),
            eps0: None,
            p0: None,
            premultiplied: false,
            invert_step: false,
        }
    }
}

/// Defaults actually used when building a policy, echoed into run outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPolicy<T> {
    pub eps0: Option<T>,
    pub p0: Vec<T>,
    pub eps0_assumed: bool,
    pub p0_assumed: bool,
}

/// `0.5 * min_k nu_k / mu_k`.
pub fn default_eps0<T: Real>(spec: &NetworkSpec<T>) -> Result<T, PolicyError> {
    let nu = spec.nominal_rates()?;
    let mu = spec.service().task_rates().ok_or_else(|| PolicyError::NotApplicable {
        policy: "robust-eps".into(),
        reason: "requires factorized service rates".into(),
    })?;
    Ok(nu
        .nu
        .iter()
        .zip(mu)
        .map(|(&n, &m)| n / m)
        .fold(T::infinity(), T::min)
        * T::lit(0.5))
}

/// Builds the policy state for a network. DAG networks need their topology.
pub fn build_policy<T: Real>(
    spec: &NetworkSpec<T>,
    topology: Option<&VirtualQueueTopology>,
    cfg: &PolicyConfig<T>,
) -> Result<(PolicyState<T>, ResolvedPolicy<T>), PolicyError> {
    let service = spec.service();
    let schedule = StepSizeSchedule::power(cfg.exponent)?;
    let not_applicable = |reason: &str| PolicyError::NotApplicable {
        policy: cfg.kind.name().into(),
        reason: reason.into(),
    };
    let dag_paths = || -> Result<Vec<Vec<usize>>, PolicyError> {
        match (spec, topology) {
            (NetworkSpec::Dag(_), Some(t)) => Ok(t.estimator_paths.clone()),
            (NetworkSpec::Dag(_), None) => Err(not_applicable("DAG policy needs the topology")),
            (NetworkSpec::Fqn(_), _) => Err(not_applicable("requires a DAG network")),
        }
    };
    let robust_rule = |delta: T| -> Result<UpdateRule<T>, PolicyError> {
        match spec {
            NetworkSpec::Dag(_) => Ok(UpdateRule::RobustDag {
                paths: dag_paths()?,
                delta,
            }),
            NetworkSpec::Fqn(f) => {
                if delta != T::zero() {
                    return Err(not_applicable("delta slack is defined for DAG networks"));
                }
                Ok(UpdateRule::RobustFqn {
                    routing_inverse: f.routing_inverse()?,
                })
            }
        }
    };

    let mut eps0_used = None;
    let mut eps0_assumed = false;
    let (poly, rule) = match cfg.kind {
        PolicyKind::Robust | PolicyKind::RobustDelta | PolicyKind::RobustEps => {
            if !service.is_factorized() {
                return Err(not_applicable("requires factorized service rates"));
            }
            let delta = if cfg.kind == PolicyKind::RobustDelta {
                cfg.delta
            } else {
                T::zero()
            };
            let poly = if cfg.kind == PolicyKind::RobustEps {
                let eps0 = match cfg.eps0 {
                    Some(e) => e,
                    None => {
                        eps0_assumed = true;
                        default_eps0(spec)?
                    }
                };
                eps0_used = Some(eps0);
                PolyhedronSpec::factorized_eps(service, eps0)?
            } else {
                PolyhedronSpec::factorized(service)
            };
            (poly, robust_rule(delta)?)
        }
        PolicyKind::GenericLifted => {
            let servers_of = (0..service.num_tasks())
                .map(|k| service.servers_of(k).collect())
                .collect();
            (
                PolyhedronSpec::lifted(service),
                UpdateRule::GenericLifted {
                    paths: dag_paths()?,
                    servers_of,
                },
            )
        }
        PolicyKind::OracleGradient => {
            let mu = service
                .task_rates()
                .ok_or_else(|| not_applicable("requires factorized service rates"))?
                .to_vec();
            (
                PolyhedronSpec::factorized(service),
                UpdateRule::OracleGradient {
                    nu: spec.nominal_rates()?.nu,
                    mu,
                    premultiplied: cfg.premultiplied,
                },
            )
        }
        PolicyKind::StaticLp => {
            let plan = plan_network(spec)?;
            if service.is_factorized() {
                let p = static_oracle_allocation(&plan, service)?;
                let poly = PolyhedronSpec::factorized(service);
                let mut state = PolicyState::new(poly, UpdateRule::Static, schedule, p.clone())?;
                state.witness = plan.allocation;
                return Ok((
                    state,
                    ResolvedPolicy {
                        eps0: None,
                        p0: p,
                        eps0_assumed: false,
                        p0_assumed: false,
                    },
                ));
            }
            if !plan.feasible {
                return Err(PolicyError::InfeasiblePlan(plan.rho_star.as_f64()));
            }
            let p: Vec<T> = plan.allocation.iter().flatten().copied().collect();
            let poly = PolyhedronSpec::lifted(service);
            let state = PolicyState::new(poly, UpdateRule::Static, schedule, p.clone())?;
            return Ok((
                state,
                ResolvedPolicy {
                    eps0: None,
                    p0: p,
                    eps0_assumed: false,
                    p0_assumed: false,
                },
            ));
        }
    };

    let (p0, p0_assumed) = match &cfg.p0 {
        Some(p) => (p.clone(), false),
        None => (poly.project(&vec![T::zero(); poly.dim()])?.point, true),
    };
    if p0.len() != poly.dim() {
        return Err(ProjectionError::Dimension {
            expected: poly.dim(),
            got: p0.len(),
        }
        .into());
    }
    let mut state = PolicyState::new(poly, rule, schedule, p0.clone())?;
    if cfg.invert_step {
        state = state.with_inverted_step();
    }
    Ok((
        state,
        ResolvedPolicy {
            eps0: eps0_used,
            p0,
            eps0_assumed,
            p0_assumed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ServerSpec, ServiceRates};

    fn scalar_state(p0: f64, rule: UpdateRule<f64>) -> PolicyState<f64> {
        let poly = PolyhedronSpec::new(1, vec![1.0], vec![vec![0]], crate::projection::PolyMode::FactorizedC).unwrap();
        PolicyState::new(poly, rule, StepSizeSchedule::explicit(vec![0.1]).unwrap(), vec![p0]).unwrap()
    }

    fn root_only(delta: f64) -> UpdateRule<f64> {
        UpdateRule::RobustDag {
            paths: vec![vec![0]],
            delta,
        }
    }

    #[test]
    fn step_exponent_validation() {
        assert!(StepSizeSchedule::<f64>::power(0.6).is_ok());
        assert!(StepSizeSchedule::<f64>::power(1.0).is_ok());
        assert!(StepSizeSchedule::<f64>::power(0.4).is_err());
        assert!(StepSizeSchedule::<f64>::power(0.5).is_err());
        assert!(StepSizeSchedule::<f64>::power(1.5).is_err());
        let s = StepSizeSchedule::<f64>::power(0.6).unwrap();
        assert_eq!(s.beta(1), 1.0);
        assert!((s.beta(32) - 32f64.powf(-0.6)).abs() < 1e-15);
        assert!(StepSizeSchedule::<f64>::explicit(vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn zero_change_keeps_interior_point() {
        let mut st = scalar_state(0.5, root_only(0.0));
        st.update(&SlotObservation {
            delta_q: vec![0],
            nonempty: vec![true],
        })
        .unwrap();
        assert_eq!(st.allocation(), &[0.5]);
    }

    #[test]
    fn scalar_robust_step() {
        let mut st = scalar_state(0.5, root_only(0.0));
        st.update(&SlotObservation {
            delta_q: vec![1],
            nonempty: vec![true],
        })
        .unwrap();
        assert!((st.allocation()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn gating_leaves_only_delta() {
        let mut st = scalar_state(0.5, root_only(0.02));
        st.update(&SlotObservation {
            delta_q: vec![1],
            nonempty: vec![false],
        })
        .unwrap();
        assert!((st.allocation()[0] - 0.52).abs() < 1e-12);

        let mut st = scalar_state(0.5, root_only(0.0));
        st.update(&SlotObservation {
            delta_q: vec![-1],
            nonempty: vec![false],
        })
        .unwrap();
        assert_eq!(st.allocation(), &[0.5]);
    }

    #[test]
    fn projection_binds_at_capacity() {
        let mut st = scalar_state(0.95, root_only(0.0));
        st.update(&SlotObservation {
            delta_q: vec![1],
            nonempty: vec![true],
        })
        .unwrap();
        assert!((st.allocation()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("maxweight".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn infeasible_static_plan_rejected() {
        let service = ServiceModel::new(
            1,
            vec![ServerSpec {
                speed: 1.0,
                tasks: vec![0],
            }],
            ServiceRates::Factorized { mu: vec![0.5] },
        );
        let plan = crate::planner::solve_static_plan(
            &service,
            &crate::model::NominalRates { nu: vec![0.75] },
        )
        .unwrap();
        assert!(matches!(
            static_oracle_allocation(&plan, &service),
            Err(PolicyError::InfeasiblePlan(_))
        ));
        let plan = crate::planner::solve_static_plan(
            &service,
            &crate::model::NominalRates { nu: vec![0.5] },
        )
        .unwrap();
        let p: Vec<f64> = static_oracle_allocation(&plan, &service).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
    }
}

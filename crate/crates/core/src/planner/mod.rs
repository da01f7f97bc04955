//! Static planning LP: minimum maximal server load `rho*` needed to carry the nominal
//! rates, and the capacity-region boundary along a direction.

pub mod simplex;

use thiserror::Error;

use crate::linalg::Matrix;
use crate::model::{ModelError, NetworkSpec, NominalRates, ServiceModel};
use crate::scalar::Real;

use simplex::{ConstraintKind, LinearProgram, LpError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("simplex failure: {0}")]
    NumericalFailure(#[from] LpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("direction must be nonnegative and nonzero")]
    BadDirection,
    #[error("capacity is unbounded along this direction")]
    UnboundedCapacity,
    #[error("nominal rate vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Optimal solution of the static planning problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticPlan<T> {
    pub rho_star: T,
    /// Lifted allocation `p_kj` (K x J), zero for incapable pairs.
    pub allocation: Matrix<T>,
    pub feasible: bool,
}

impl<T: Real> StaticPlan<T> {
    /// `p_k = sum_j alpha_j p_kj`.
    pub fn effective_allocation(&self, service: &ServiceModel<T>) -> Vec<T> {
        self.allocation
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, &p)| service.alpha(j) * p)
                    .sum()
            })
            .collect()
    }
}

/// Solves `min rho` s.t. `nu_k <= sum_j mu_kj p_kj`, `sum_{k in T_j} p_kj <= rho`, `p >= 0`.
pub fn solve_static_plan<T: Real>(
    service: &ServiceModel<T>,
    nu: &NominalRates<T>,
) -> Result<StaticPlan<T>, PlanError> {
    let k_total = service.num_tasks();
    let j_total = service.num_servers();
    if nu.nu.len() != k_total {
        return Err(PlanError::Dimension {
            expected: k_total,
            got: nu.nu.len(),
        });
    }
    let mut pairs = Vec::new();
    for k in 0..k_total {
        for j in service.servers_of(k) {
            pairs.push((k, j));
        }
    }
    let rho = pairs.len();
    let n = rho + 1;
    let mut objective = vec![T::zero(); n];
    objective[rho] = T::one();
    let mut lp = LinearProgram::new(objective);
    for k in 0..k_total {
        let mut row = vec![T::zero(); n];
        for (v, &(kk, j)) in pairs.iter().enumerate() {
            if kk == k {
                row[v] = service.rate(k, j);
            }
        }
        lp.push(row, ConstraintKind::Ge, nu.nu[k]);
    }
    for j in 0..j_total {
        let mut row = vec![T::zero(); n];
        for (v, &(_, jj)) in pairs.iter().enumerate() {
            if jj == j {
                row[v] = T::one();
            }
        }
        row[rho] = -T::one();
        lp.push(row, ConstraintKind::Le, T::zero());
    }
    let sol = lp.solve()?;
    let mut allocation = vec![vec![T::zero(); j_total]; k_total];
    for (v, &(k, j)) in pairs.iter().enumerate() {
        allocation[k][j] = sol.x[v];
    }
    let rho_star = sol.x[rho];
    Ok(StaticPlan {
        rho_star,
        allocation,
        feasible: rho_star <= T::one() + T::lp_tol(),
    })
}

/// `rho*` for the spec's own arrival rates.
pub fn plan_network<T: Real>(spec: &NetworkSpec<T>) -> Result<StaticPlan<T>, PlanError> {
    let nu = spec.nominal_rates()?;
    solve_static_plan(spec.service(), &nu)
}

/// `sup { t : t * direction in capacity region }` by bisection on `rho*(t * direction) = 1`.
///
/// `direction` indexes job classes for DAG networks and queues for FQNs.
pub fn capacity_boundary<T: Real>(spec: &NetworkSpec<T>, direction: &[T]) -> Result<T, PlanError> {
    capacity_boundary_with_tol(spec, direction, T::lit(1e-10).max(T::epsilon() * T::lit(4.0)))
}

pub fn capacity_boundary_with_tol<T: Real>(
    spec: &NetworkSpec<T>,
    direction: &[T],
    tol: T,
) -> Result<T, PlanError> {
    if direction.iter().any(|&d| d < T::zero() || !d.is_finite())
        || direction.iter().all(|&d| d == T::zero())
    {
        return Err(PlanError::BadDirection);
    }
    let rho_at = |t: T| -> Result<T, PlanError> {
        let lambda: Vec<T> = direction.iter().map(|&d| d * t).collect();
        let scaled = spec.with_arrival_rates(&lambda)?;
        Ok(plan_network(&scaled)?.rho_star)
    };
    let one = T::one();
    let two = T::lit(2.0);
    let (mut lo, mut hi) = (T::zero(), one);
    let mut doublings = 0;
    while rho_at(hi)? <= one {
        lo = hi;
        hi = hi * two;
        doublings += 1;
        if doublings > 200 {
            return Err(PlanError::UnboundedCapacity);
        }
    }
    while hi - lo > tol * hi.max(one) {
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        if rho_at(mid)? <= one {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / two)
}

//! Feasible-allocation polyhedra and Euclidean projection onto them.
//!
//! In the factorized modes a point is the per-task effort `p_k = sum_j alpha_j p_kj`; the
//! set is the image of the per-server capacity simplices under that map. Projection solves
//! the lifted problem `min_{p_kj} sum_k (x_k - sum_j alpha_j p_kj)^2` over the simplices by
//! accelerated projected gradient (FISTA with gradient restarts). The lower bound
//! `p_k >= eps0` is handled by Dykstra alternation between that projection and the box.
//!
//! Internally the lifted variables are scaled, `q_kj = alpha_j p_kj`, so the linear map is
//! a 0/1 matrix and server `j`'s block is the capped simplex `{q >= 0, sum q <= alpha_j}`.

use thiserror::Error;

use crate::linalg::Matrix;
use crate::model::ServiceModel;
use crate::planner::simplex::{ConstraintKind, LinearProgram};
use crate::scalar::{max_abs_diff, Real};

pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;
const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("the polyhedron is empty for eps0 = {eps0}")]
    EmptyPolyhedron { eps0: f64 },
    #[error("projection did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("input vector is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolyMode<T> {
    /// `C`: factorized efforts reachable within server capacities.
    FactorizedC,
    /// `C_eps0`: `C` intersected with `p_k >= eps0`.
    FactorizedCEps(T),
    /// Per-server simplices in the lifted `p_kj` coordinates (generic rates).
    LiftedGeneric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedronSpec<T> {
    mode: PolyMode<T>,
    num_tasks: usize,
    alpha: Vec<T>,
    /// `T_j` per server, sorted.
    capability: Vec<Vec<usize>>,
    /// `S_k` per task.
    servers_of: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult<T> {
    /// Length K (factorized) or K*J row-major (lifted).
    pub point: Vec<T>,
    /// `p_kj` (K x J) certifying membership.
    pub lifted_witness: Matrix<T>,
    pub iterations: usize,
    /// Frank-Wolfe duality gap of the lifted problem at the returned witness (factorized
    /// modes); an upper bound on the objective suboptimality.
    pub residual: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership<T> {
    pub member: bool,
    pub witness: Option<Matrix<T>>,
}

impl<T: Real> PolyhedronSpec<T> {
    pub fn new(
        num_tasks: usize,
        alpha: Vec<T>,
        mut capability: Vec<Vec<usize>>,
        mode: PolyMode<T>,
    ) -> Result<Self, ProjectionError> {
        let mut servers_of = vec![Vec::new(); num_tasks];
        for (j, tasks) in capability.iter_mut().enumerate() {
            tasks.sort_unstable();
            tasks.dedup();
            for &k in tasks.iter() {
                if k >= num_tasks {
                    return Err(ProjectionError::Dimension {
                        expected: num_tasks,
                        got: k + 1,
                    });
                }
                servers_of[k].push(j);
            }
        }
        let poly = Self {
            mode,
            num_tasks,
            alpha,
            capability,
            servers_of,
        };
        if let PolyMode::FactorizedCEps(eps0) = mode {
            if !(eps0 >= T::zero()) || !poly.eps_set_nonempty(eps0) {
                return Err(ProjectionError::EmptyPolyhedron { eps0: eps0.as_f64() });
            }
        }
        Ok(poly)
    }

    /// `C` for the spec's servers.
    pub fn factorized(service: &ServiceModel<T>) -> Self {
        Self::new(
            service.num_tasks(),
            service.alphas(),
            service.capability_sets(),
            PolyMode::FactorizedC,
        )
        .expect("service model indices are in range")
    }

    /// `C_eps0`; fails with `EmptyPolyhedron` when no allocation gives every task `eps0`.
    pub fn factorized_eps(service: &ServiceModel<T>, eps0: T) -> Result<Self, ProjectionError> {
        Self::new(
            service.num_tasks(),
            service.alphas(),
            service.capability_sets(),
            PolyMode::FactorizedCEps(eps0),
        )
    }

    /// Lifted `p_kj` simplices; `alpha` is irrelevant here and stored as ones.
    pub fn lifted(service: &ServiceModel<T>) -> Self {
        Self::new(
            service.num_tasks(),
            vec![T::one(); service.num_servers()],
            service.capability_sets(),
            PolyMode::LiftedGeneric,
        )
        .expect("service model indices are in range")
    }

    pub fn mode(&self) -> PolyMode<T> {
        self.mode
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn num_servers(&self) -> usize {
        self.alpha.len()
    }

    pub fn epsilon0(&self) -> Option<T> {
        match self.mode {
            PolyMode::FactorizedCEps(e) => Some(e),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            PolyMode::LiftedGeneric => self.num_tasks * self.num_servers(),
            _ => self.num_tasks,
        }
    }

    pub fn is_lifted(&self) -> bool {
        matches!(self.mode, PolyMode::LiftedGeneric)
    }

    /// `p_k = sum_j alpha_j p_kj` for a lifted witness.
    pub fn effective(&self, lifted: &Matrix<T>) -> Vec<T> {
        lifted
            .iter()
            .map(|row| row.iter().zip(&self.alpha).map(|(&p, &a)| p * a).sum())
            .collect()
    }

    fn eps_set_nonempty(&self, eps0: T) -> bool {
        if eps0 == T::zero() {
            return true;
        }
        match self.min_load_lp(&vec![eps0; self.num_tasks], ConstraintKind::Ge) {
            Some((rho, _)) => rho <= T::one() + T::lit(MEMBERSHIP_TOL),
            None => false,
        }
    }

    /// `min rho` s.t. `sum_j alpha_j p_kj (kind) target_k`, `sum_{k in T_j} p_kj <= rho`.
    fn min_load_lp(&self, target: &[T], kind: ConstraintKind) -> Option<(T, Matrix<T>)> {
        let mut pairs = Vec::new();
        for (j, tasks) in self.capability.iter().enumerate() {
            for &k in tasks {
                pairs.push((k, j));
            }
        }
        let rho = pairs.len();
        let n = rho + 1;
        let mut obj = vec![T::zero(); n];
        obj[rho] = T::one();
        let mut lp = LinearProgram::new(obj);
        for (k, &t) in target.iter().enumerate() {
            let mut row = vec![T::zero(); n];
            for (v, &(kk, j)) in pairs.iter().enumerate() {
                if kk == k {
                    row[v] = self.alpha[j];
                }
            }
            lp.push(row, kind, t);
        }
        for j in 0..self.num_servers() {
            let mut row = vec![T::zero(); n];
            for (v, &(_, jj)) in pairs.iter().enumerate() {
                if jj == j {
                    row[v] = T::one();
                }
            }
            row[rho] = -T::one();
            lp.push(row, ConstraintKind::Le, T::zero());
        }
        let sol = lp.solve().ok()?;
        let mut w = vec![vec![T::zero(); self.num_servers()]; self.num_tasks];
        for (v, &(k, j)) in pairs.iter().enumerate() {
            w[k][j] = sol.x[v];
        }
        Some((sol.x[rho], w))
    }

    /// Membership test, solved as a feasibility LP in the factorized modes.
    pub fn membership(&self, p: &[T]) -> Result<Membership<T>, ProjectionError> {
        self.check_dim(p)?;
        let tol = T::lit(MEMBERSHIP_TOL);
        let no = Membership {
            member: false,
            witness: None,
        };
        if p.iter().any(|&v| !v.is_finite() || v < -tol) {
            return Ok(no);
        }
        match self.mode {
            PolyMode::LiftedGeneric => {
                let j_total = self.num_servers();
                let w: Matrix<T> = (0..self.num_tasks)
                    .map(|k| p[k * j_total..(k + 1) * j_total].to_vec())
                    .collect();
                for (j, tasks) in self.capability.iter().enumerate() {
                    let load: T = tasks.iter().map(|&k| w[k][j]).sum();
                    if load > T::one() + tol {
                        return Ok(no);
                    }
                }
                for (k, row) in w.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        if !self.servers_of[k].contains(&j) && v.abs() > tol {
                            return Ok(no);
                        }
                    }
                }
                Ok(Membership {
                    member: true,
                    witness: Some(w),
                })
            }
            PolyMode::FactorizedC | PolyMode::FactorizedCEps(_) => {
                if let PolyMode::FactorizedCEps(eps0) = self.mode {
                    if p.iter().any(|&v| v < eps0 - tol) {
                        return Ok(no);
                    }
                }
                let target: Vec<T> = p.iter().map(|&v| v.max(T::zero())).collect();
                match self.min_load_lp(&target, ConstraintKind::Eq) {
                    Some((rho, w)) if rho <= T::one() + tol => Ok(Membership {
                        member: true,
                        witness: Some(w),
                    }),
                    _ => Ok(no),
                }
            }
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<(), ProjectionError> {
        if x.len() != self.dim() {
            return Err(ProjectionError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ProjectionError::NonFinite);
        }
        Ok(())
    }

    /// Euclidean projection of `x`, cold start.
    pub fn project(&self, x: &[T]) -> Result<ProjectionResult<T>, ProjectionError> {
        self.project_warm(x, None)
    }

    /// Projection warm-started from a previous lifted witness. The returned point agrees
    /// with the cold-start one to the solver tolerance; the witness may differ.
    pub fn project_warm(
        &self,
        x: &[T],
        warm: Option<&Matrix<T>>,
    ) -> Result<ProjectionResult<T>, ProjectionError> {
        self.check_dim(x)?;
        match self.mode {
            PolyMode::LiftedGeneric => Ok(self.project_lifted(x)),
            PolyMode::FactorizedC => {
                let mut solver = FactorizedSolver::new(self, warm);
                let iterations = solver.solve(x, DEFAULT_MAX_ITERATIONS)?;
                Ok(solver.finish(x, iterations))
            }
            PolyMode::FactorizedCEps(eps0) => self.project_eps(x, eps0, warm),
        }
    }

    fn project_lifted(&self, x: &[T]) -> ProjectionResult<T> {
        let j_total = self.num_servers();
        let mut w = vec![vec![T::zero(); j_total]; self.num_tasks];
        let mut block = Vec::new();
        for (j, tasks) in self.capability.iter().enumerate() {
            block.clear();
            block.extend(tasks.iter().map(|&k| x[k * j_total + j]));
            project_capped_simplex(&mut block, T::one());
            for (&k, &v) in tasks.iter().zip(&block) {
                w[k][j] = v;
            }
        }
        let point = w.iter().flat_map(|r| r.iter().copied()).collect();
        ProjectionResult {
            point,
            lifted_witness: w,
            iterations: 1,
            residual: T::zero(),
        }
    }

    fn project_eps(
        &self,
        x: &[T],
        eps0: T,
        warm: Option<&Matrix<T>>,
    ) -> Result<ProjectionResult<T>, ProjectionError> {
        let mut solver = FactorizedSolver::new(self, warm);
        let mut total = solver.solve(x, DEFAULT_MAX_ITERATIONS)?;
        let first = solver.point();
        if first.iter().all(|&v| v >= eps0) {
            // Projection onto the larger set already satisfies the bound.
            return Ok(solver.finish(x, total));
        }

        // Dykstra: alternate P_C and the box {p >= eps0} with correction terms.
        let k_total = self.num_tasks;
        let tol = T::lit(1e-11);
        let mut z = x.to_vec();
        let mut inc_c = vec![T::zero(); k_total];
        let mut inc_box = vec![T::zero(); k_total];
        let mut y = first;
        let mut shifted = vec![T::zero(); k_total];
        let mut outer = 0usize;
        loop {
            if outer > 0 {
                for k in 0..k_total {
                    shifted[k] = z[k] + inc_c[k];
                }
                total += solver.solve(&shifted, DEFAULT_MAX_ITERATIONS)?;
                y = solver.point();
            }
            for k in 0..k_total {
                inc_c[k] = z[k] + inc_c[k] - y[k];
            }
            let z_new: Vec<T> = (0..k_total).map(|k| (y[k] + inc_box[k]).max(eps0)).collect();
            for k in 0..k_total {
                inc_box[k] = y[k] + inc_box[k] - z_new[k];
            }
            let moved = max_abs_diff(&z_new, &z);
            let gap = max_abs_diff(&y, &z_new);
            z = z_new;
            outer += 1;
            if outer > 1 && moved < tol && gap < tol {
                break;
            }
            if total > DEFAULT_MAX_ITERATIONS {
                return Err(ProjectionError::NoConvergence { iterations: total });
            }
        }
        Ok(solver.finish(x, total))
    }
}

/// Lifted FISTA state for `min 1/2 ||x - A q||^2` over the product of capped simplices.
struct FactorizedSolver<'a, T> {
    poly: &'a PolyhedronSpec<T>,
    /// Per server, values aligned with `poly.capability[j]`.
    q: Vec<Vec<T>>,
    lipschitz: T,
}

impl<'a, T: Real> FactorizedSolver<'a, T> {
    fn new(poly: &'a PolyhedronSpec<T>, warm: Option<&Matrix<T>>) -> Self {
        let lipschitz = T::from_count(poly.servers_of.iter().map(Vec::len).max().unwrap_or(1).max(1));
        let q = poly
            .capability
            .iter()
            .enumerate()
            .map(|(j, tasks)| {
                let mut block: Vec<T> = match warm {
                    Some(w) => tasks.iter().map(|&k| w[k][j] * poly.alpha[j]).collect(),
                    None => vec![T::zero(); tasks.len()],
                };
                project_capped_simplex(&mut block, poly.alpha[j]);
                block
            })
            .collect();
        Self { poly, q, lipschitz }
    }

    fn image_into(&self, q: &[Vec<T>], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        for (tasks, block) in self.poly.capability.iter().zip(q) {
            for (&k, &v) in tasks.iter().zip(block) {
                out[k] = out[k] + v;
            }
        }
    }

    fn point(&self) -> Vec<T> {
        let mut p = vec![T::zero(); self.poly.num_tasks];
        self.image_into(&self.q, &mut p);
        p
    }

    /// Runs FISTA from the current `q`; returns the iteration count.
    fn solve(&mut self, x: &[T], max_iter: usize) -> Result<usize, ProjectionError> {
        let k_total = self.poly.num_tasks;
        let step = T::one() / self.lipschitz;
        let tol = T::proj_tol() * x.iter().fold(T::one(), |m, v| m.max(v.abs()));
        let mut resid = vec![T::zero(); k_total];

        self.image_into(&self.q, &mut resid);
        if max_abs_diff(&resid, x) == T::zero() {
            return Ok(0);
        }

        let mut y = self.q.clone();
        let mut next = self.q.clone();
        let mut t = T::one();
        for it in 1..=max_iter {
            self.image_into(&y, &mut resid);
            for (r, &xv) in resid.iter_mut().zip(x) {
                *r = *r - xv;
            }
            let mut moved = T::zero();
            let mut restart_dot = T::zero();
            for (j, tasks) in self.poly.capability.iter().enumerate() {
                let block = &mut next[j];
                for (i, &k) in tasks.iter().enumerate() {
                    block[i] = y[j][i] - step * resid[k];
                }
                project_capped_simplex(block, self.poly.alpha[j]);
                for i in 0..tasks.len() {
                    moved = moved.max((block[i] - y[j][i]).abs());
                    restart_dot = restart_dot + (y[j][i] - block[i]) * (block[i] - self.q[j][i]);
                }
            }
            if moved <= tol {
                std::mem::swap(&mut self.q, &mut next);
                return Ok(it);
            }
            if restart_dot > T::zero() {
                t = T::one();
                for (yb, nb) in y.iter_mut().zip(&next) {
                    yb.copy_from_slice(nb);
                }
            } else {
                let t_next = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) / T::lit(2.0);
                let beta = (t - T::one()) / t_next;
                for j in 0..y.len() {
                    for i in 0..y[j].len() {
                        y[j][i] = next[j][i] + beta * (next[j][i] - self.q[j][i]);
                    }
                }
                t = t_next;
            }
            std::mem::swap(&mut self.q, &mut next);
        }
        Err(ProjectionError::NoConvergence {
            iterations: max_iter,
        })
    }

    fn finish(&self, x: &[T], iterations: usize) -> ProjectionResult<T> {
        let point = self.point();
        let j_total = self.poly.num_servers();
        let mut witness = vec![vec![T::zero(); j_total]; self.poly.num_tasks];
        let mut gap = T::zero();
        for (j, tasks) in self.poly.capability.iter().enumerate() {
            let mut lin = T::zero();
            let mut best = T::zero();
            for (i, &k) in tasks.iter().enumerate() {
                witness[k][j] = self.q[j][i] / self.poly.alpha[j];
                let g = point[k] - x[k];
                lin = lin + g * self.q[j][i];
                best = best.min(g);
            }
            gap = gap + lin - best * self.poly.alpha[j];
        }
        ProjectionResult {
            point,
            lifted_witness: witness,
            iterations,
            residual: gap.max(T::zero()),
        }
    }
}

/// In-place projection onto `{v >= 0, sum v <= cap}`.
pub fn project_capped_simplex<T: Real>(v: &mut [T], cap: T) {
    let clipped: T = v.iter().map(|&a| a.max(T::zero())).sum();
    if clipped <= cap {
        v.iter_mut().for_each(|a| *a = a.max(T::zero()));
        return;
    }
    let mut sorted: Vec<T> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (i, &u) in sorted.iter().enumerate() {
        cumsum = cumsum + u;
        let candidate = (cumsum - cap) / T::from_count(i + 1);
        if u - candidate > T::zero() {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter_mut().for_each(|a| *a = (*a - theta).max(T::zero()));
}

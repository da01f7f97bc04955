//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Solves `min c^T x` subject to rows `a_i^T x (<=|>=|=) b_i` and `x >= 0`. Sized for the
//! static planning and membership problems here (tens of variables), not for general use.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint<T> {
    pub coeffs: Vec<T>,
    pub kind: ConstraintKind,
    pub rhs: T,
}

impl<T: Real> Constraint<T> {
    pub fn new(coeffs: Vec<T>, kind: ConstraintKind, rhs: T) -> Self {
        Self { coeffs, kind, rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram<T> {
    pub objective: Vec<T>,
    pub constraints: Vec<Constraint<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub x: Vec<T>,
    pub objective: T,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex stalled after {0} pivots")]
    IterationLimit(usize),
    #[error("constraint row has the wrong number of coefficients")]
    Dimension,
}

struct Tableau<T> {
    rows: Vec<Vec<T>>,
    rhs: Vec<T>,
    basis: Vec<usize>,
    cost: Vec<T>,
    value: T,
    pivots: usize,
}

impl<T: Real> Tableau<T> {
    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v = *v / p;
        }
        self.rhs[row] = self.rhs[row] / p;
        let pivot_row = self.rows[row].clone();
        let pivot_rhs = self.rhs[row];
        for (i, r) in self.rows.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != T::zero() {
                for (v, &pv) in r.iter_mut().zip(&pivot_row) {
                    *v = *v - f * pv;
                }
                self.rhs[i] = self.rhs[i] - f * pivot_rhs;
            }
        }
        let d = self.cost[col];
        if d != T::zero() {
            for (c, &pv) in self.cost.iter_mut().zip(&pivot_row) {
                *c = *c - d * pv;
            }
            self.value = self.value + d * pivot_rhs;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Runs Bland's rule over columns `< allowed` until optimal.
    fn optimize(&mut self, allowed: usize, limit: usize) -> Result<(), LpError> {
        let tol = T::lp_tol();
        let ptol = T::pivot_tol();
        loop {
            if self.pivots >= limit {
                return Err(LpError::IterationLimit(self.pivots));
            }
            let Some(enter) = (0..allowed).find(|&j| self.cost[j] < -tol) else {
                return Ok(());
            };
            let mut leave: Option<(usize, T)> = None;
            for (i, r) in self.rows.iter().enumerate() {
                let a = r[enter];
                if a > ptol {
                    let ratio = self.rhs[i] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - ptol
                                || ((ratio - br).abs() <= ptol && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Err(LpError::Unbounded),
                Some((row, _)) => self.pivot(row, enter),
            }
        }
    }
}

impl<T: Real> LinearProgram<T> {
    pub fn new(objective: Vec<T>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn push(&mut self, coeffs: Vec<T>, kind: ConstraintKind, rhs: T) {
        self.constraints.push(Constraint::new(coeffs, kind, rhs));
    }

    pub fn solve(&self) -> Result<LpSolution<T>, LpError> {
        let n = self.num_vars();
        let m = self.constraints.len();
        if self.constraints.iter().any(|c| c.coeffs.len() != n) {
            return Err(LpError::Dimension);
        }

        // Normalize to nonnegative right-hand sides.
        let mut norm: Vec<(Vec<T>, ConstraintKind, T)> = self
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < T::zero() {
                    let kind = match c.kind {
                        ConstraintKind::Le => ConstraintKind::Ge,
                        ConstraintKind::Ge => ConstraintKind::Le,
                        ConstraintKind::Eq => ConstraintKind::Eq,
                    };
                    (c.coeffs.iter().map(|&a| -a).collect(), kind, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.kind, c.rhs)
                }
            })
            .collect();

        let n_slack = norm
            .iter()
            .filter(|(_, k, _)| *k != ConstraintKind::Eq)
            .count();
        let n_art = norm
            .iter()
            .filter(|(_, k, _)| *k != ConstraintKind::Le)
            .count();
        let art_start = n + n_slack;
        let width = art_start + n_art;

        let mut rows = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut slack = n;
        let mut art = art_start;
        for (coeffs, kind, b) in norm.drain(..) {
            let mut row = coeffs;
            row.resize(width, T::zero());
            match kind {
                ConstraintKind::Le => {
                    row[slack] = T::one();
                    basis.push(slack);
                    slack += 1;
                }
                ConstraintKind::Ge => {
                    row[slack] = -T::one();
                    slack += 1;
                    row[art] = T::one();
                    basis.push(art);
                    art += 1;
                }
                ConstraintKind::Eq => {
                    row[art] = T::one();
                    basis.push(art);
                    art += 1;
                }
            }
            rows.push(row);
            rhs.push(b);
        }

        let limit = 50 * (m + width) + 1000;
        let tol = T::lp_tol();

        // Phase 1: minimize the sum of artificials.
        let mut cost = vec![T::zero(); width];
        let mut value = T::zero();
        for c in cost.iter_mut().skip(art_start) {
            *c = T::one();
        }
        for (i, &b) in basis.iter().enumerate() {
            if b >= art_start {
                for (c, &a) in cost.iter_mut().zip(&rows[i]) {
                    *c = *c - a;
                }
                value = value + rhs[i];
            }
        }
        let mut tab = Tableau {
            rows,
            rhs,
            basis,
            cost,
            value,
            pivots: 0,
        };
        if n_art > 0 {
            tab.optimize(width, limit)?;
            let scale = self
                .constraints
                .iter()
                .fold(T::one(), |s, c| s.max(c.rhs.abs()));
            if tab.value > tol * scale {
                return Err(LpError::Infeasible);
            }
            // Drive artificials out of the basis; rows where that is impossible are redundant.
            let mut i = 0;
            while i < tab.rows.len() {
                if tab.basis[i] >= art_start {
                    let col = (0..art_start).find(|&j| tab.rows[i][j].abs() > T::pivot_tol() * T::lit(1e3));
                    match col {
                        Some(j) => tab.pivot(i, j),
                        None => {
                            tab.rows.remove(i);
                            tab.rhs.remove(i);
                            tab.basis.remove(i);
                            continue;
                        }
                    }
                }
                i += 1;
            }
        }

        // Phase 2.
        let mut cost = vec![T::zero(); width];
        cost[..n].copy_from_slice(&self.objective);
        let mut value = T::zero();
        for (i, &b) in tab.basis.iter().enumerate() {
            let cb = if b < n { self.objective[b] } else { T::zero() };
            if cb != T::zero() {
                for (c, &a) in cost.iter_mut().zip(&tab.rows[i]) {
                    *c = *c - cb * a;
                }
                value = value + cb * tab.rhs[i];
            }
        }
        tab.cost = cost;
        tab.value = value;
        tab.optimize(art_start, limit)?;

        let mut x = vec![T::zero(); n];
        for (i, &b) in tab.basis.iter().enumerate() {
            if b < n {
                x[b] = tab.rhs[i].max(T::zero());
            }
        }
        let objective = x.iter().zip(&self.objective).map(|(&a, &c)| a * c).sum();
        Ok(LpSolution {
            x,
            objective,
            pivots: tab.pivots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ConstraintKind::*;

    #[test]
    fn textbook_max_problem() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  => (2, 6), 36
        let mut lp = LinearProgram::<f64>::new(vec![-3.0, -5.0]);
        lp.push(vec![1.0, 0.0], Le, 4.0);
        lp.push(vec![0.0, 2.0], Le, 12.0);
        lp.push(vec![3.0, 2.0], Le, 18.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective + 36.0).abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn ge_and_eq_rows() {
        // min x + y s.t. x + 2y >= 4, x - y = 1  => y = 1, x = 2
        let mut lp = LinearProgram::<f64>::new(vec![1.0, 1.0]);
        lp.push(vec![1.0, 2.0], Ge, 4.0);
        lp.push(vec![1.0, -1.0], Eq, 1.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_is_normalized() {
        // min x s.t. -x <= -2
        let mut lp = LinearProgram::<f64>::new(vec![1.0]);
        lp.push(vec![-1.0], Le, -2.0);
        assert!((lp.solve().unwrap().objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::<f64>::new(vec![1.0]);
        lp.push(vec![1.0], Le, 1.0);
        lp.push(vec![1.0], Ge, 2.0);
        assert_eq!(lp.solve(), Err(LpError::Infeasible));

        let mut lp = LinearProgram::<f64>::new(vec![-1.0, 0.0]);
        lp.push(vec![1.0, -1.0], Le, 1.0);
        assert_eq!(lp.solve(), Err(LpError::Unbounded));
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::<f64>::new(vec![1.0, 2.0]);
        lp.push(vec![1.0, 1.0], Eq, 1.0);
        lp.push(vec![2.0, 2.0], Eq, 2.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's classic cycling instance; Bland's rule must terminate.
        let mut lp = LinearProgram::<f64>::new(vec![-0.75, 150.0, -0.02, 6.0]);
        lp.push(vec![0.25, -60.0, -0.04, 9.0], Le, 0.0);
        lp.push(vec![0.5, -90.0, -0.02, 3.0], Le, 0.0);
        lp.push(vec![0.0, 0.0, 1.0, 0.0], Le, 1.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective + 0.05).abs() < 1e-9);
    }
}

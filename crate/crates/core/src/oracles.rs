//! Brute-force reference solutions for small instances, used by the verification suites.

use rand::Rng;

use crate::linalg::Matrix;
use crate::model::{ServerSpec, ServiceModel, ServiceRates};
use crate::scalar::sq_dist;

/// Hall-type membership for factorized efforts: `p >= eps0` and, for every task subset
/// `U`, `sum_{k in U} p_k <= sum_{j serving some k in U} alpha_j`.
pub fn hall_member(p: &[f64], alpha: &[f64], capability: &[Vec<usize>], eps0: f64, tol: f64) -> bool {
    let k_total = p.len();
    if p.iter().any(|&v| v < eps0 - tol) {
        return false;
    }
    let masks: Vec<u32> = capability
        .iter()
        .map(|tasks| tasks.iter().fold(0u32, |m, &k| m | (1 << k)))
        .collect();
    (1u32..(1 << k_total)).all(|u| {
        let demand: f64 = (0..k_total).filter(|k| u & (1 << k) != 0).map(|k| p[k]).sum();
        let supply: f64 = masks
            .iter()
            .zip(alpha)
            .filter(|(&m, _)| m & u != 0)
            .map(|(_, &a)| a)
            .sum();
        demand <= supply + tol
    })
}

/// Euclidean projection onto `{p : hall_member(p)}` by coarse-to-fine grid search.
/// Each level searches a `(2w+1)^K` grid around the incumbent, then shrinks the step.
pub fn grid_projection(
    x: &[f64],
    alpha: &[f64],
    capability: &[Vec<usize>],
    eps0: f64,
    final_step: f64,
) -> Vec<f64> {
    let k_total = x.len();
    let reach: Vec<f64> = (0..k_total)
        .map(|k| {
            capability
                .iter()
                .zip(alpha)
                .filter(|(t, _)| t.contains(&k))
                .map(|(_, &a)| a)
                .sum()
        })
        .collect();
    let top = reach.iter().copied().fold(0.0, f64::max);
    let w = 12i64;
    let mut step = top / w as f64;
    let mut center: Vec<f64> = vec![top / 2.0; k_total];
    let mut radius = w;
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        let side = (2 * radius + 1) as usize;
        let total = side.pow(k_total as u32);
        let mut p = vec![0.0; k_total];
        for idx in 0..total {
            let mut rem = idx;
            let mut inside = true;
            for k in 0..k_total {
                let offset = (rem % side) as i64 - radius;
                rem /= side;
                p[k] = center[k] + offset as f64 * step;
                if p[k] < eps0 - 1e-12 || p[k] > reach[k] + 1e-12 {
                    inside = false;
                    break;
                }
            }
            if !inside || !hall_member(&p, alpha, capability, eps0, 1e-12) {
                continue;
            }
            let d = sq_dist(&p, x);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, p.clone()));
            }
        }
        let incumbent = best.as_ref().expect("grid meets the polyhedron").1.clone();
        if step <= final_step {
            return incumbent;
        }
        center = incumbent;
        step /= 4.0;
        radius = 10;
    }
}

/// `rho*` by enumerating, on a grid of the given resolution, how each task's demand is
/// split between its servers. Returns the best load found and the grid error bound.
pub fn grid_static_plan(service: &ServiceModel<f64>, nu: &[f64], resolution: f64) -> (f64, f64) {
    let k_total = service.num_tasks();
    let servers: Vec<Vec<usize>> = (0..k_total).map(|k| service.servers_of(k).collect()).collect();
    let cost: Matrix<f64> = (0..k_total)
        .map(|k| {
            (0..service.num_servers())
                .map(|j| if service.can_serve(k, j) { nu[k] / service.rate(k, j) } else { 0.0 })
                .collect()
        })
        .collect();
    let steps = (1.0 / resolution).round() as usize;
    let mut options: Vec<Vec<Vec<f64>>> = Vec::with_capacity(k_total);
    for s in &servers {
        options.push(simplex_grid(s.len(), steps));
    }
    let mut best = f64::INFINITY;
    let mut choice = vec![0usize; k_total];
    let mut load = vec![0.0; service.num_servers()];
    loop {
        load.iter_mut().for_each(|l| *l = 0.0);
        for k in 0..k_total {
            for (i, &j) in servers[k].iter().enumerate() {
                load[j] += options[k][choice[k]][i] * cost[k][j];
            }
        }
        best = best.min(load.iter().copied().fold(0.0, f64::max));
        let mut k = 0;
        loop {
            if k == k_total {
                let bound = resolution / 2.0
                    * (0..k_total)
                        .map(|k| cost[k].iter().copied().fold(0.0, f64::max))
                        .sum::<f64>();
                return (best, bound);
            }
            choice[k] += 1;
            if choice[k] < options[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Points of the probability simplex in `n` coordinates with denominators `steps`.
fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![1.0]];
    }
    let mut out = Vec::new();
    for i in 0..=steps {
        for mut rest in simplex_grid(n - 1, steps - i) {
            let scale = (steps - i) as f64 / steps as f64;
            rest.iter_mut().for_each(|v| *v *= scale);
            let mut pt = vec![i as f64 / steps as f64];
            pt.extend(rest);
            out.push(pt);
        }
    }
    out
}

/// Random factorized service model with at most `max_k` tasks and `max_j` servers, every
/// task servable and every server busy. Rates keep `sum_j mu_k alpha_j <= 1`.
pub fn random_service<R: Rng>(rng: &mut R, max_k: usize, max_j: usize) -> ServiceModel<f64> {
    let k_total = rng.gen_range(1..=max_k);
    let j_total = rng.gen_range(1..=max_j);
    let mut caps: Vec<Vec<usize>> = vec![Vec::new(); j_total];
    for k in 0..k_total {
        caps[rng.gen_range(0..j_total)].push(k);
        for cap in caps.iter_mut() {
            if rng.gen_bool(0.4) {
                cap.push(k);
            }
        }
    }
    for (j, cap) in caps.iter_mut().enumerate() {
        if cap.is_empty() {
            cap.push(j % k_total);
        }
    }
    let alpha: Vec<f64> = (0..j_total).map(|_| rng.gen_range(0.3..1.0)).collect();
    let servers: Vec<ServerSpec<f64>> = caps
        .into_iter()
        .zip(&alpha)
        .map(|(tasks, &speed)| ServerSpec { speed, tasks })
        .collect();
    let mu: Vec<f64> = (0..k_total)
        .map(|k| {
            let reach: f64 = servers
                .iter()
                .filter(|s| s.tasks.contains(&k))
                .map(|s| s.speed)
                .sum();
            rng.gen_range(0.2..1.0) / reach
        })
        .collect();
    ServiceModel::new(k_total, servers, ServiceRates::Factorized { mu })
}

/// Random point of `C`: each server spreads a random fraction of its time over its tasks.
pub fn random_feasible_allocation<R: Rng>(rng: &mut R, service: &ServiceModel<f64>, fill: (f64, f64)) -> Vec<f64> {
    let mut p = vec![0.0; service.num_tasks()];
    for (j, s) in service.servers().iter().enumerate() {
        let weights: Vec<f64> = s.tasks.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let busy = rng.gen_range(fill.0..fill.1);
        for (&k, w) in s.tasks.iter().zip(weights) {
            p[k] += service.alpha(j) * busy * w / total;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hall_condition_on_two_tasks() {
        let cap = vec![vec![0, 1]];
        assert!(hall_member(&[0.5, 0.5], &[1.0], &cap, 0.0, 1e-12));
        assert!(!hall_member(&[0.6, 0.5], &[1.0], &cap, 0.0, 1e-12));
        assert!(!hall_member(&[0.05, 0.5], &[1.0], &cap, 0.1, 1e-12));
    }

    #[test]
    fn grid_projection_simple_simplex() {
        let p = grid_projection(&[0.8, 0.8], &[1.0], &[vec![0, 1]], 0.0, 1e-4);
        assert!((p[0] - 0.5).abs() < 1e-3 && (p[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_grid(2, 100).len(), 101);
        assert_eq!(simplex_grid(3, 4).len(), 15);
    }
}

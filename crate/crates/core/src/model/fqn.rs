use crate::linalg::{LuFactors, Matrix};
use crate::scalar::Real;

use super::{ModelError, NominalRates, ServiceModel, ValidationReport};

/// Flexible queueing network: K queues with Bernoulli exogenous arrivals and
/// probabilistic routing `R = [r_{k'k}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FqnNetworkSpec<T> {
    pub arrival_rates: Vec<T>,
    /// Row `k'` gives the probabilities that a task leaving queue `k'` joins each queue;
    /// the residual mass leaves the system.
    pub routing: Matrix<T>,
    pub service: ServiceModel<T>,
}

impl<T: Real> FqnNetworkSpec<T> {
    pub fn num_queues(&self) -> usize {
        self.service.num_tasks()
    }

    /// `I - R^T`.
    pub fn transfer_matrix(&self) -> Matrix<T> {
        let k = self.num_queues();
        (0..k)
            .map(|r| {
                (0..k)
                    .map(|c| {
                        let id = if r == c { T::one() } else { T::zero() };
                        id - self.routing[c][r]
                    })
                    .collect()
            })
            .collect()
    }

    /// `(I - R^T)^{-1}`.
    pub fn routing_inverse(&self) -> Result<Matrix<T>, ModelError> {
        LuFactors::factorize(&self.transfer_matrix())
            .map(|lu| lu.inverse())
            .ok_or(ModelError::SingularRouting)
    }

    /// Solves `(I - R^T) nu = lambda`.
    pub fn nominal_rates(&self) -> Result<NominalRates<T>, ModelError> {
        let lu = LuFactors::factorize(&self.transfer_matrix()).ok_or(ModelError::SingularRouting)?;
        let nu = lu.solve(&self.arrival_rates);
        if let Some((k, &v)) = nu
            .iter()
            .enumerate()
            .find(|(_, &v)| v < -T::lit(1e-12) || !v.is_finite())
        {
            return Err(ModelError::NegativeNominalRate {
                queue: k + 1,
                value: v.as_f64(),
            });
        }
        Ok(NominalRates {
            nu: nu.into_iter().map(|v| v.max(T::zero())).collect(),
        })
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let k = self.num_queues();
        if k == 0 {
            report.push(ModelError::InvalidStructure("no queues".into()));
        }
        if self.arrival_rates.len() != k {
            report.push(ModelError::InvalidStructure(format!(
                "{} arrival rates for {k} queues",
                self.arrival_rates.len()
            )));
        }
        for (q, &l) in self.arrival_rates.iter().enumerate() {
            if !(l >= T::zero() && l <= T::one()) {
                report.push(ModelError::ArrivalRateOutOfRange {
                    subject: format!("queue {}", q + 1),
                    rate: l.as_f64(),
                });
            }
        }
        let shape_ok = self.routing.len() == k && self.routing.iter().all(|r| r.len() == k);
        if !shape_ok {
            report.push(ModelError::InvalidStructure(
                "routing must be a K x K matrix".into(),
            ));
        } else {
            for (r, row) in self.routing.iter().enumerate() {
                if row.iter().any(|&x| !(x >= T::zero() && x <= T::one())) {
                    report.push(ModelError::InvalidRate(format!(
                        "routing row {} has an entry outside [0,1]",
                        r + 1
                    )));
                }
                let sum: T = row.iter().copied().sum();
                if sum > T::one() + T::lit(1e-12) {
                    report.push(ModelError::RoutingRowSum {
                        row: r + 1,
                        sum: sum.as_f64(),
                    });
                }
            }
            if self.arrival_rates.len() == k {
                if let Err(e) = self.nominal_rates() {
                    report.push(e);
                }
            }
        }
        self.service.validate_into(&mut report);
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ServerSpec, ServiceRates};

    fn fig8(lambda: Vec<f64>, r23: f64) -> FqnNetworkSpec<f64> {
        FqnNetworkSpec {
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
        }
    }

    /// nu <- lambda + R^T nu, iterated; independent of the LU path.
    fn fixed_point(spec: &FqnNetworkSpec<f64>, iters: usize) -> Vec<f64> {
        let k = spec.num_queues();
        let mut nu = spec.arrival_rates.clone();
        for _ in 0..iters {
            nu = (0..k)
                .map(|i| spec.arrival_rates[i] + (0..k).map(|c| spec.routing[c][i] * nu[c]).sum::<f64>())
                .collect();
        }
        nu
    }

    #[test]
    fn fig8_nominal_rates_match_fixed_point() {
        let spec = fig8(vec![0.1, 0.0, 0.0], 0.5);
        assert!(spec.validate().is_ok(), "{}", spec.validate());
        let nu = spec.nominal_rates().unwrap().nu;
        let oracle = fixed_point(&spec, 10_000);
        for (a, b) in nu.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
        for (a, b) in nu.iter().zip([0.2, 0.2, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
        let residual: Vec<f64> = crate::linalg::mat_vec(&spec.transfer_matrix(), &nu);
        for (r, l) in residual.iter().zip(&spec.arrival_rates) {
            assert!((r - l).abs() <= 1e-10);
        }
    }

    #[test]
    fn no_routing_is_identity() {
        let mut spec = fig8(vec![0.1, 0.2, 0.3], 0.5);
        spec.routing = vec![vec![0.0; 3]; 3];
        assert_eq!(spec.nominal_rates().unwrap().nu, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn closed_network_is_singular() {
        let mut spec = fig8(vec![0.1, 0.0, 0.0], 0.5);
        spec.routing = vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ];
        assert_eq!(spec.nominal_rates(), Err(ModelError::SingularRouting));
        assert!(spec
            .validate()
            .contains(|e| matches!(e, ModelError::SingularRouting)));
    }

    #[test]
    fn row_sum_above_one() {
        let mut spec = fig8(vec![0.1, 0.0, 0.0], 0.5);
        spec.routing[1] = vec![0.6, 0.0, 0.6];
        assert!(spec
            .validate()
            .contains(|e| matches!(e, ModelError::RoutingRowSum { row: 2, .. })));
    }
}

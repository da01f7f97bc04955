use serde::Serialize;

use crate::scalar::Real;

use super::SimError;

/// One operating mode: exogenous rates and, optionally, replacement task rates `mu_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrivalMode<T> {
    pub lambda: Vec<T>,
    pub mu: Option<Vec<T>>,
}

/// Exogenous arrival process. Every slot a batch of `batch` jobs arrives with probability
/// `lambda / batch`, independently per class (DAG) or per queue (FQN); the active mode
/// changes every `period` slots, cycling through `modes`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrivalProcess<T> {
    pub batch: u32,
    pub period: u64,
    pub modes: Vec<ArrivalMode<T>>,
}

impl<T: Real> ArrivalProcess<T> {
    pub fn bernoulli(lambda: Vec<T>) -> Self {
        Self::batch(lambda, 1)
    }

    pub fn batch(lambda: Vec<T>, batch: u32) -> Self {
        Self {
            batch,
            period: u64::MAX,
            modes: vec![ArrivalMode { lambda, mu: None }],
        }
    }

    pub fn mode_switch(period: u64, modes: Vec<ArrivalMode<T>>, batch: u32) -> Self {
        Self {
            batch,
            period,
            modes,
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.modes.len() == 1
    }

    pub fn mode_at(&self, slot: u64) -> usize {
        if self.modes.len() == 1 {
            0
        } else {
            ((slot / self.period) % self.modes.len() as u64) as usize
        }
    }

    pub fn validate(&self, num_sources: usize, num_tasks: usize) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.batch == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.period == 0 {
            return bad("mode period must be at least 1".into());
        }
        if self.modes.is_empty() {
            return bad("at least one arrival mode is required".into());
        }
        let b = T::from_u32(self.batch).unwrap();
        for (i, m) in self.modes.iter().enumerate() {
            if m.lambda.len() != num_sources {
                return bad(format!(
                    "mode {} has {} arrival rates, expected {num_sources}",
                    i + 1,
                    m.lambda.len()
                ));
            }
            for &l in &m.lambda {
                if !(l >= T::zero()) || l / b > T::one() {
                    return bad(format!(
                        "mode {}: arrival rate {l} needs 0 <= lambda/B <= 1",
                        i + 1
                    ));
                }
            }
            if let Some(mu) = &m.mu {
                if mu.len() != num_tasks || mu.iter().any(|&v| !(v > T::zero())) {
                    return bad(format!("mode {}: service rates must be {num_tasks} positive values", i + 1));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_cycle() {
        let m = |l: f64| ArrivalMode {
            lambda: vec![l],
            mu: None,
        };
        let a = ArrivalProcess::mode_switch(10, vec![m(0.1), m(0.2)], 1);
        assert_eq!(a.mode_at(0), 0);
        assert_eq!(a.mode_at(9), 0);
        assert_eq!(a.mode_at(10), 1);
        assert_eq!(a.mode_at(25), 0);
        assert!(a.validate(1, 1).is_ok());
    }

    #[test]
    fn batch_rate_bound() {
        assert!(ArrivalProcess::batch(vec![4.0f64], 5).validate(1, 1).is_ok());
        assert!(ArrivalProcess::batch(vec![6.0f64], 5).validate(1, 1).is_err());
        assert!(ArrivalProcess::bernoulli(vec![-0.1f64]).validate(1, 1).is_err());
        assert!(ArrivalProcess::bernoulli(vec![0.1f64]).validate(2, 1).is_err());
    }
}

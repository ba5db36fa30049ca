//! Bursty packet arrivals, the finite-buffer queue recursion and delay costs.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-user backlogs in bits, each kept in `[0, capacity]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueState {
    pub q: Vec<f64>,
    pub capacity: f64,
}

impl QueueState {
    pub fn empty(users: usize, capacity: f64) -> Self {
        Self {
            q: vec![0.0; users],
            capacity,
        }
    }

    /// Serves `goodput` and admits `arrivals`, returning the post-decision
    /// backlog of every user.
    pub fn step(&mut self, goodput: &[f64], arrivals: &[f64]) -> Vec<f64> {
        self.q
            .iter_mut()
            .zip(goodput)
            .zip(arrivals)
            .map(|((q, &u), &a)| {
                let s = step_queue(*q, u, a, self.capacity);
                *q = s.next;
                s.post_decision
            })
            .collect()
    }
}

/// Compound Poisson source: Poisson packet counts per frame with
/// exponentially distributed packet sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalModel {
    /// Mean packet rate per user (packets/s).
    pub lambda: Vec<f64>,
    /// Mean packet size (bits).
    pub mean_size: f64,
    /// Frame duration (s).
    pub tau: f64,
}

impl ArrivalModel {
    pub fn new(lambda: Vec<f64>, mean_size: f64, tau: f64) -> Result<Self> {
        if lambda.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(
                "arrival rates must be finite and >= 0".into(),
            ));
        }
        if !(mean_size > 0.0 && tau > 0.0) {
            return Err(Error::InvalidArgument(
                "packet size and frame duration must be positive".into(),
            ));
        }
        Ok(Self {
            lambda,
            mean_size,
            tau,
        })
    }

    /// Mean bits per frame of `user`.
    pub fn mean_bits(&self, user: usize) -> f64 {
        self.lambda[user] * self.tau * self.mean_size
    }

    /// Variance of the bits per frame of `user` (`λτ · 2 · mean²`).
    pub fn variance_bits(&self, user: usize) -> f64 {
        self.lambda[user] * self.tau * 2.0 * self.mean_size * self.mean_size
    }
}

/// Draws the bits arriving at every user in one frame.
pub fn sample_arrivals<R: Rng + ?Sized>(model: &ArrivalModel, rng: &mut R) -> Vec<f64> {
    let size = Exp::new(1.0 / model.mean_size).expect("mean size is positive");
    model
        .lambda
        .iter()
        .map(|&l| {
            let mean = l * model.tau;
            if mean <= 0.0 {
                return 0.0;
            }
            let count = Poisson::new(mean).expect("mean is positive").sample(rng) as u64;
            (0..count).map(|_| size.sample(rng)).sum()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueueStep {
    /// Backlog right after service, before arrivals.
    pub post_decision: f64,
    pub next: f64,
}

/// `q' = min(max(q - U, 0) + A, capacity)`.
pub fn step_queue(q: f64, goodput: f64, arrivals: f64, capacity: f64) -> QueueStep {
    let post_decision = (q - goodput).max(0.0);
    QueueStep {
        post_decision,
        next: (post_decision + arrivals).min(capacity),
    }
}

/// Monotone queue-length cost.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayCostKind {
    /// `Q / λ`, the delay by Little's law.
    LinearOverLambda,
    #[default]
    Linear,
    /// `1(Q >= threshold)`, a buffer-overflow style cost.
    Threshold,
}

impl FromStr for DelayCostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_over_lambda" => Ok(Self::LinearOverLambda),
            "linear" => Ok(Self::Linear),
            "threshold" => Ok(Self::Threshold),
            other => Err(Error::InvalidArgument(format!(
                "unknown delay cost kind {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayCost {
    pub kind: DelayCostKind,
    /// Arrival rate used by [`DelayCostKind::LinearOverLambda`].
    pub lambda: f64,
    /// Threshold used by [`DelayCostKind::Threshold`].
    pub threshold: f64,
}

impl DelayCost {
    pub fn linear() -> Self {
        Self {
            kind: DelayCostKind::Linear,
            lambda: 1.0,
            threshold: 0.0,
        }
    }

    pub fn eval(&self, q: f64) -> f64 {
        delay_cost(q, self.kind, self.lambda, self.threshold)
    }

    /// Derivative in `q`; zero almost everywhere for the threshold cost.
    pub fn slope(&self) -> f64 {
        match self.kind {
            DelayCostKind::Linear => 1.0,
            DelayCostKind::LinearOverLambda => 1.0 / self.lambda,
            DelayCostKind::Threshold => 0.0,
        }
    }
}

pub fn delay_cost(q: f64, kind: DelayCostKind, lambda: f64, threshold: f64) -> f64 {
    match kind {
        DelayCostKind::Linear => q,
        DelayCostKind::LinearOverLambda => q / lambda,
        DelayCostKind::Threshold => {
            if q >= threshold {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn queue_examples() {
        assert_eq!(
            step_queue(10.0, 4.0, 2.0, 54.0),
            QueueStep {
                post_decision: 6.0,
                next: 8.0
            }
        );
        assert_eq!(
            step_queue(3.0, 5.0, 60.0, 54.0),
            QueueStep {
                post_decision: 0.0,
                next: 54.0
            }
        );
        assert_eq!(step_queue(0.0, 0.0, 0.0, 54.0).next, 0.0);
    }

    #[test]
    fn state_step_updates_every_user() {
        let mut s = QueueState {
            q: vec![10.0, 3.0],
            capacity: 54.0,
        };
        let post = s.step(&[4.0, 5.0], &[2.0, 60.0]);
        assert_eq!(post, vec![6.0, 0.0]);
        assert_eq!(s.q, vec![8.0, 54.0]);
    }

    #[test]
    fn no_traffic_means_no_arrivals() {
        let m = ArrivalModel::new(vec![0.0, 0.0], 5e6, 5e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_arrivals(&m, &mut rng), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn compound_poisson_moments() {
        let m = ArrivalModel::new(vec![6.0], 5e6, 5e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let a = sample_arrivals(&m, &mut rng)[0];
            s1 += a;
            s2 += a * a;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean / 0.15e6 - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var / m.variance_bits(0) - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn invalid_models() {
        assert!(ArrivalModel::new(vec![-1.0], 1.0, 1.0).is_err());
        assert!(ArrivalModel::new(vec![1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn delay_cost_examples() {
        assert_eq!(delay_cost(7.0, DelayCostKind::Linear, 1.0, 0.0), 7.0);
        assert_eq!(delay_cost(4.0, DelayCostKind::Threshold, 1.0, 5.0), 0.0);
        assert_eq!(delay_cost(5.0, DelayCostKind::Threshold, 1.0, 5.0), 1.0);
        assert_eq!(
            delay_cost(6.0, DelayCostKind::LinearOverLambda, 3.0, 0.0),
            2.0
        );
        assert!("quadratic".parse::<DelayCostKind>().is_err());
        assert_eq!(
            "threshold".parse::<DelayCostKind>().unwrap(),
            DelayCostKind::Threshold
        );
    }

    proptest! {
        #[test]
        fn recursion_is_monotone(q in 0.0..60.0f64, u in 0.0..60.0f64, a in 0.0..60.0f64, d in 0.0..5.0f64) {
            let cap = 54.0;
            let base = step_queue(q, u, a, cap);
            prop_assert!(step_queue(q + d, u, a, cap).next >= base.next);
            prop_assert!(step_queue(q, u, a + d, cap).next >= base.next);
            prop_assert!(step_queue(q, u + d, a, cap).next <= base.next);
            prop_assert!((0.0..=cap).contains(&base.next));
            prop_assert_eq!(base.next, (base.post_decision + a).min(cap));
        }
    }
}

//! Well-specified linear-Gaussian toy with a conjugate posterior.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Prior, Simulator, Task};
use crate::data::{ParamVector, SummaryVector};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `theta ~ N(0, 1)`, `s = theta + N(0, noise^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearGaussianTask {
    pub noise: f64,
    pub true_theta: f64,
}

impl Default for LinearGaussianTask {
    fn default() -> Self {
        Self { noise: 0.1, true_theta: 0.5 }
    }
}

impl LinearGaussianTask {
    pub fn validate(&self) -> Result<()> {
        if self.noise > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid("toy.noise must be positive"))
        }
    }

    /// Exact posterior mean and variance of theta given `s`.
    pub fn posterior(&self, s: f64) -> (f64, f64) {
        let v = self.noise * self.noise;
        (s / (1.0 + v), v / (1.0 + v))
    }
}

impl Simulator for LinearGaussianTask {
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SummaryVector> {
        let e: f64 = StandardNormal.sample(rng);
        Ok(SummaryVector(vec![theta[0] + self.noise * e]))
    }
}

impl Task for LinearGaussianTask {
    fn name(&self) -> &'static str {
        "linear-gaussian-toy"
    }

    fn prior(&self) -> Prior {
        Prior::Normal { mean: 0.0, sd: 1.0 }
    }

    fn summary_dim(&self) -> usize {
        1
    }

    fn observe(&self, rng: &mut Rng) -> Result<SummaryVector> {
        self.simulate(&[self.true_theta], rng)
    }

    fn pseudo_truth(&self) -> ParamVector {
        ParamVector(vec![self.true_theta])
    }

    fn compatible_summaries(&self) -> Vec<usize> {
        vec![0]
    }

    fn focus_parameter(&self) -> usize {
        0
    }
}

//! Contaminated Weibull benchmark.
//!
//! The assumed model draws `n` i.i.d. `Weibull(k, 1)` values; the observation
//! process replaces each value with `N(-1, 0.2^2)` noise with probability 0.05,
//! which makes the minimum summary unreachable for the model.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::{Prior, PseudoTruth, Simulator, Task};
use crate::data::{ParamVector, SummaryVector};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeibullTask {
    /// Observations per dataset.
    pub n: usize,
    /// Scale, fixed.
    pub scale: f64,
    pub contamination: f64,
    pub contaminant_mean: f64,
    pub contaminant_sd: f64,
    /// Shape used to generate the observed data.
    pub true_shape: f64,
    pub prior_mu: f64,
    pub prior_sigma: f64,
    /// Pseudo-truth search grid.
    pub grid_low: f64,
    pub grid_high: f64,
    pub grid_step: f64,
}

impl Default for WeibullTask {
    fn default() -> Self {
        Self {
            n: 200,
            scale: 1.0,
            contamination: 0.05,
            contaminant_mean: -1.0,
            contaminant_sd: 0.2,
            true_shape: 0.8,
            prior_mu: 1.0,
            prior_sigma: 1.0,
            grid_low: 0.1,
            grid_high: 5.0,
            grid_step: 1e-4,
        }
    }
}

impl WeibullTask {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("weibull.n must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.contamination) {
            return Err(Error::invalid("weibull.contamination must lie in [0, 1)"));
        }
        if !(self.true_shape > 0.0) || !(self.scale > 0.0) || !(self.contaminant_sd > 0.0) {
            return Err(Error::invalid("weibull shape, scale and contaminant sd must be positive"));
        }
        if !(self.grid_low > 0.0 && self.grid_low < self.grid_high && self.grid_step > 0.0) {
            return Err(Error::invalid("weibull grid must satisfy 0 < low < high and step > 0"));
        }
        Ok(())
    }

    pub fn prior_dist(&self) -> Prior {
        Prior::LogNormal { mu: self.prior_mu, sigma: self.prior_sigma }
    }
}

fn check_shape(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("weibull shape must be positive, got {k}")))
    }
}

/// Inverse-CDF draw `scale * (-log u)^(1/k)`.
fn weibull_draw(k: f64, scale: f64, rng: &mut Rng) -> f64 {
    // u in (0, 1]: -ln(u) is finite
    let u: f64 = 1.0 - rng.random::<f64>();
    scale * (-u.ln()).powf(1.0 / k)
}

pub fn weibull_simulate(k: f64, task: &WeibullTask, rng: &mut Rng) -> Result<Vec<f64>> {
    check_shape(k)?;
    Ok((0..task.n).map(|_| weibull_draw(k, task.scale, rng)).collect())
}

/// Weibull draws with each point independently replaced by contaminant noise.
pub fn weibull_true_dgp(k: f64, task: &WeibullTask, rng: &mut Rng) -> Result<Vec<f64>> {
    check_shape(k)?;
    let noise = Normal::new(task.contaminant_mean, task.contaminant_sd)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok((0..task.n)
        .map(|_| {
            if rng.random::<f64>() < task.contamination {
                noise.sample(rng)
            } else {
                weibull_draw(k, task.scale, rng)
            }
        })
        .collect())
}

/// `(mean, unbiased variance, minimum)`.
pub fn weibull_summaries(data: &[f64]) -> Result<SummaryVector> {
    if data.is_empty() {
        return Err(Error::invalid("weibull summaries need at least one observation"));
    }
    let (mean, var) = crate::stats::mean_var(data);
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SummaryVector(vec![mean, var, min]))
}

/// Population mean and variance of `Weibull(k, 1)`.
pub fn weibull_moments(k: f64) -> (f64, f64) {
    let m = gamma(1.0 + 1.0 / k);
    (m, gamma(1.0 + 2.0 / k) - m * m)
}

/// Population mean and variance of the contaminated mixture.
fn mixture_moments(task: &WeibullTask) -> (f64, f64) {
    let (m, v) = weibull_moments(task.true_shape);
    let (m, v) = (task.scale * m, task.scale * task.scale * v);
    let w = task.contamination;
    let (cm, cv) = (task.contaminant_mean, task.contaminant_sd * task.contaminant_sd);
    let mean = (1.0 - w) * m + w * cm;
    let second = (1.0 - w) * (v + m * m) + w * (cv + cm * cm);
    (mean, second - mean * mean)
}

/// Grid search for the shape whose `(mean, variance)` is closest to the
/// contaminated process in Euclidean distance.
pub fn weibull_pseudo_true(task: &WeibullTask) -> PseudoTruth {
    weibull_pseudo_true_on_grid(task, task.grid_low, task.grid_high, task.grid_step)
}

pub fn weibull_pseudo_true_on_grid(task: &WeibullTask, low: f64, high: f64, step: f64) -> PseudoTruth {
    let (target_m, target_v) = mixture_moments(task);
    let n = ((high - low) / step).round() as usize;
    let mut best = (f64::INFINITY, low, 0usize);
    for i in 0..=n {
        let k = low + i as f64 * step;
        let (m, v) = weibull_moments(k);
        let (m, v) = (task.scale * m, task.scale * task.scale * v);
        let d = (m - target_m).hypot(v - target_v);
        if d < best.0 {
            best = (d, k, i);
        }
    }
    let at_boundary = best.2 == 0 || best.2 == n;
    if at_boundary {
        log::warn!("weibull pseudo-truth search hit the grid boundary at k = {}", best.1);
    }
    PseudoTruth { theta_star: ParamVector(vec![best.1]), objective: best.0, at_boundary }
}

impl Simulator for WeibullTask {
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SummaryVector> {
        weibull_summaries(&weibull_simulate(theta[0], self, rng)?)
    }
}

impl Task for WeibullTask {
    fn name(&self) -> &'static str {
        "weibull"
    }

    fn prior(&self) -> Prior {
        self.prior_dist()
    }

    fn summary_dim(&self) -> usize {
        3
    }

    fn observe(&self, rng: &mut Rng) -> Result<SummaryVector> {
        weibull_summaries(&weibull_true_dgp(self.true_shape, self, rng)?)
    }

    fn pseudo_truth(&self) -> ParamVector {
        weibull_pseudo_true(self).theta_star
    }

    fn compatible_summaries(&self) -> Vec<usize> {
        vec![0, 1]
    }

    fn focus_parameter(&self) -> usize {
        0
    }
}

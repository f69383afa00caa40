//! Sparse vector autoregression benchmark.
//!
//! `y_t = A y_{t-1} + mu + xi_t` with `A` fixed at `-0.1` on the diagonal and
//! three free off-diagonal pairs. The assumed model has `mu = 0`; the observed
//! series carries a small constant drift that only the global-mean summary
//! can detect.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Prior, Simulator, Task};
use crate::data::{ParamVector, SummaryVector};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvarTask {
    pub dim: usize,
    /// Series length `T`.
    pub length: usize,
    pub diagonal: f64,
    /// Active off-diagonal pairs (0-based); both `(i, j)` and `(j, i)` are free.
    pub pairs: Vec<(usize, usize)>,
    /// Drift of the observed process.
    pub drift: f64,
    /// Data-generating parameters: off-diagonals in pair order, then sigma.
    pub theta_star: Vec<f64>,
}

impl Default for SvarTask {
    fn default() -> Self {
        Self {
            dim: 6,
            length: 1000,
            diagonal: -0.1,
            pairs: vec![(0, 1), (2, 3), (4, 5)],
            drift: 0.05,
            theta_star: vec![0.579, -0.143, 0.836, 0.745, -0.660, -0.254, 0.1],
        }
    }
}

impl SvarTask {
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.dim];
        for &(i, j) in &self.pairs {
            if i >= self.dim || j >= self.dim || i == j {
                return Err(Error::invalid(format!("svar pair ({i}, {j}) is out of range")));
            }
            if seen[i] || seen[j] {
                return Err(Error::invalid("svar off-diagonal pairs must be disjoint"));
            }
            seen[i] = true;
            seen[j] = true;
        }
        if self.length < 2 {
            return Err(Error::invalid("svar.length must be at least 2"));
        }
        if self.theta_star.len() != self.theta_dim() {
            return Err(Error::Dimension { expected: self.theta_dim(), got: self.theta_star.len() });
        }
        Ok(())
    }

    pub fn theta_dim(&self) -> usize {
        2 * self.pairs.len() + 1
    }

    /// Ordered `(row, col)` positions of the free entries, matching theta.
    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect()
    }

    fn transition(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = self.diagonal;
        }
        for (&(i, j), &v) in self.ordered_pairs().iter().zip(theta) {
            a[i * d + j] = v;
        }
        a
    }
}

/// Simulate a `T x d` series (row-major), starting from `y_0 = 0` with no burn-in.
pub fn svar_simulate(theta: &[f64], task: &SvarTask, drift: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let p = task.theta_dim();
    if theta.len() != p {
        return Err(Error::Dimension { expected: p, got: theta.len() });
    }
    let sigma = theta[p - 1];
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("svar noise scale must be positive, got {sigma}")));
    }
    let d = task.dim;
    let a = task.transition(theta);
    let mut series = vec![0.0; task.length * d];
    let mut prev = vec![0.0; d];
    for t in 0..task.length {
        let row = &mut series[t * d..(t + 1) * d];
        for i in 0..d {
            let ar: f64 = (0..d).map(|j| a[i * d + j] * prev[j]).sum();
            let xi: f64 = StandardNormal.sample(rng);
            row[i] = ar + drift + sigma * xi;
        }
        prev.copy_from_slice(row);
    }
    Ok(series)
}

/// Lag-1 cross-covariances for the ordered active pairs, the pooled standard
/// deviation of all entries, and the global mean.
pub fn svar_summaries(series: &[f64], task: &SvarTask) -> Result<SummaryVector> {
    let d = task.dim;
    let t_len = series.len() / d;
    if t_len < 2 || !series.len().is_multiple_of(d) {
        return Err(Error::invalid("svar summaries need a T x d series with T >= 2"));
    }
    let mut means = vec![0.0; d];
    for row in series.chunks_exact(d) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= t_len as f64);
    let mut out = Vec::with_capacity(2 * task.pairs.len() + 2);
    for (i, j) in task.ordered_pairs() {
        let mut acc = 0.0;
        for t in 1..t_len {
            acc += (series[t * d + i] - means[i]) * (series[(t - 1) * d + j] - means[j]);
        }
        out.push(acc / t_len as f64);
    }
    let n = series.len() as f64;
    let global = series.iter().sum::<f64>() / n;
    let pooled = (series.iter().map(|v| (v - global).powi(2)).sum::<f64>() / n).sqrt();
    out.push(pooled);
    out.push(global);
    Ok(SummaryVector(out))
}

impl Simulator for SvarTask {
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SummaryVector> {
        svar_summaries(&svar_simulate(theta, self, 0.0, rng)?, self)
    }
}

impl Task for SvarTask {
    fn name(&self) -> &'static str {
        "svar"
    }

    fn prior(&self) -> Prior {
        let mut components = vec![Prior::Uniform { low: -1.0, high: 1.0 }; 2 * self.pairs.len()];
        components.push(Prior::Uniform { low: 0.0, high: 1.0 });
        Prior::Product { components }
    }

    fn summary_dim(&self) -> usize {
        2 * self.pairs.len() + 2
    }

    fn observe(&self, rng: &mut Rng) -> Result<SummaryVector> {
        svar_summaries(&svar_simulate(&self.theta_star, self, self.drift, rng)?, self)
    }

    fn pseudo_truth(&self) -> ParamVector {
        ParamVector(self.theta_star.clone())
    }

    fn compatible_summaries(&self) -> Vec<usize> {
        (0..self.summary_dim() - 1).collect()
    }

    fn focus_parameter(&self) -> usize {
        self.theta_dim() - 1
    }
}

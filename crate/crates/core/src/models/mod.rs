//! Benchmark tasks: priors, simulators, true data-generating processes and
//! pseudo-truth oracles.

mod prior;
mod svar;
mod toy;
mod weibull;

pub use prior::{Prior, Support};
pub use svar::{svar_simulate, svar_summaries, SvarTask};
pub use toy::LinearGaussianTask;
pub use weibull::{
    weibull_moments, weibull_pseudo_true, weibull_pseudo_true_on_grid, weibull_simulate,
    weibull_summaries, weibull_true_dgp, WeibullTask,
};

use serde::{Deserialize, Serialize};

use crate::data::{ParamVector, SummaryVector};
use crate::error::Result;
use crate::rng::Rng;

/// Draws summaries at a parameter value under the assumed model.
///
/// Numerically failed simulations are returned as non-finite summaries, not
/// errors; errors are reserved for parameters the simulator cannot accept.
pub trait Simulator: Sync {
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SummaryVector>;
}

impl<F> Simulator for F
where
    F: Fn(&[f64], &mut Rng) -> Result<SummaryVector> + Sync,
{
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<SummaryVector> {
        self(theta, rng)
    }
}

/// A complete inference benchmark.
pub trait Task: Simulator + Send {
    fn name(&self) -> &'static str;
    fn prior(&self) -> Prior;
    fn summary_dim(&self) -> usize;
    /// Observed summaries drawn from the (possibly misspecified) true process.
    fn observe(&self, rng: &mut Rng) -> Result<SummaryVector>;
    fn pseudo_truth(&self) -> ParamVector;
    /// Summary coordinates the assumed model can reproduce.
    fn compatible_summaries(&self) -> Vec<usize>;
    /// Parameter component reported in the marginal metrics.
    fn focus_parameter(&self) -> usize;

    fn theta_dim(&self) -> usize {
        self.prior().dim()
    }
}

/// Minimiser of the compatible-summary discrepancy between model and truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTruth {
    pub theta_star: ParamVector,
    /// Discrepancy achieved at `theta_star`.
    pub objective: f64,
    /// Set when the minimiser sits on the edge of the search grid.
    pub at_boundary: bool,
}

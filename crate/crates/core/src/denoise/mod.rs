//! Denoising of observed summaries under a spike-and-slab error model.
//!
//! Latent summaries are drawn from `p(s_y | s) h(s)`, where `h` is a flow fit
//! to the (preconditioned, standardised) simulated summaries.

mod error_model;
mod nuts;

pub use error_model::{error_logpdf, error_logpdf_and_grad, error_logpdf_grad, slab_responsibility, ErrorModel, SlabFamily};
pub use nuts::{nuts_sample, FnDensity, LogDensity, NutsConfig, NutsDiagnostics, NutsOutput};

use serde::{Deserialize, Serialize};

use crate::data::SummaryVector;
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::rng::RngState;

/// `log p(s_y | s) + log h(s)` in standardised summary space.
pub struct DenoiseTarget<'a> {
    pub error_model: &'a ErrorModel,
    pub marginal: &'a FlowParams,
    pub s_y: &'a [f64],
}

impl LogDensity for DenoiseTarget<'_> {
    fn dim(&self) -> usize {
        self.s_y.len()
    }

    fn log_density_and_grad(&self, s: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (le, ge) = error_logpdf_and_grad(self.error_model, self.s_y, s)?;
        let (lh, gh) = self.marginal.grad_target(s, &[])?;
        Ok((le + lh, ge.iter().zip(&gh).map(|(a, b)| a + b).collect()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Denoised {
    pub draws: Vec<SummaryVector>,
    /// Mean of `s_tilde - s_y` per coordinate.
    pub shift: Vec<f64>,
    /// Slab responsibility per coordinate, averaged over draws.
    pub slab_responsibility: Vec<f64>,
    pub nuts: NutsDiagnostics,
}

/// Draw latent summaries given the standardised observation `s_y`, starting
/// at `s_y` clipped into the spline box.
pub fn denoise(
    error_model: &ErrorModel,
    marginal: &FlowParams,
    s_y: &[f64],
    config: &NutsConfig,
    rng: &RngState,
) -> Result<Denoised> {
    error_model.validate()?;
    if marginal.cond_dim != 0 {
        return Err(Error::invalid("denoising needs an unconditional summary flow"));
    }
    if marginal.dim != s_y.len() {
        return Err(Error::Dimension { expected: marginal.dim, got: s_y.len() });
    }
    let b = marginal.config.spline.bound;
    let init: Vec<f64> = s_y.iter().map(|v| v.clamp(-b, b)).collect();
    let target = DenoiseTarget { error_model, marginal, s_y };
    let out = nuts_sample(&target, &init, config, rng)?;
    let d = s_y.len();
    let n = out.draws.len() as f64;
    let mut shift = vec![0.0; d];
    let mut resp = vec![0.0; d];
    for s in &out.draws {
        for (k, r) in slab_responsibility(error_model, s_y, s)?.into_iter().enumerate() {
            shift[k] += (s[k] - s_y[k]) / n;
            resp[k] += r / n;
        }
    }
    log::debug!(
        "denoising: step size {:.3e}, accept {:.3}, {} divergences",
        out.diagnostics.step_size,
        out.diagnostics.mean_accept,
        out.diagnostics.divergences
    );
    Ok(Denoised {
        draws: out.draws.into_iter().map(SummaryVector).collect(),
        shift,
        slab_responsibility: resp,
        nuts: out.diagnostics,
    })
}

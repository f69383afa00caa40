//! Spike-and-slab observation error `p(s_y | s)`, marginalised over the
//! per-coordinate indicator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabFamily {
    Cauchy,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModel {
    pub sigma_spike: f64,
    pub sigma_slab: f64,
    /// Prior probability that a coordinate is misspecified.
    pub gamma: f64,
    pub slab: SlabFamily,
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self { sigma_spike: 0.01, sigma_slab: 0.25, gamma: 0.5, slab: SlabFamily::Cauchy }
    }
}

/// Per-coordinate pieces: component log terms and their offset derivatives.
struct Terms {
    spike: f64,
    slab: f64,
    d_spike: f64,
    d_slab: f64,
}

impl ErrorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_spike > 0.0 && self.sigma_slab > 0.0) {
            return Err(Error::invalid("error_model.sigma_spike and error_model.sigma_slab must be positive"));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("error_model.gamma must lie in [0, 1)"));
        }
        Ok(())
    }

    fn terms(&self, delta: f64) -> Terms {
        let z = delta / self.sigma_spike;
        let spike = (1.0 - self.gamma).ln() - self.sigma_spike.ln() - LN_SQRT_2PI - 0.5 * z * z;
        let d_spike = -delta / (self.sigma_spike * self.sigma_spike);
        let (slab, d_slab) = match self.slab {
            SlabFamily::Cauchy => {
                let s2 = self.sigma_slab * self.sigma_slab;
                (
                    -(std::f64::consts::PI * self.sigma_slab).ln() - (delta * delta / s2).ln_1p(),
                    -2.0 * delta / (s2 + delta * delta),
                )
            }
            SlabFamily::Gaussian => {
                let z = delta / self.sigma_slab;
                (-self.sigma_slab.ln() - LN_SQRT_2PI - 0.5 * z * z, -delta / (self.sigma_slab * self.sigma_slab))
            }
        };
        Terms { spike, slab: self.gamma.ln() + slab, d_spike, d_slab }
    }

    /// `(log mixture, slab responsibility, d log mixture / d delta)`.
    fn coordinate(&self, delta: f64) -> (f64, f64, f64) {
        let t = self.terms(delta);
        let m = t.spike.max(t.slab);
        let (a, b) = ((t.spike - m).exp(), (t.slab - m).exp());
        let total = a + b;
        let r = b / total;
        (m + total.ln(), r, (1.0 - r) * t.d_spike + r * t.d_slab)
    }
}

fn check(s_y: &[f64], s: &[f64]) -> Result<()> {
    if s_y.len() != s.len() {
        return Err(Error::Dimension { expected: s_y.len(), got: s.len() });
    }
    Ok(())
}

/// `log p(s_y | s)`.
pub fn error_logpdf(em: &ErrorModel, s_y: &[f64], s: &[f64]) -> Result<f64> {
    check(s_y, s)?;
    Ok(s_y.iter().zip(s).map(|(y, x)| em.coordinate(y - x).0).sum())
}

/// Gradient of `log p(s_y | s)` with respect to `s`.
pub fn error_logpdf_grad(em: &ErrorModel, s_y: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check(s_y, s)?;
    Ok(s_y.iter().zip(s).map(|(y, x)| -em.coordinate(y - x).2).collect())
}

/// Value and gradient together.
pub fn error_logpdf_and_grad(em: &ErrorModel, s_y: &[f64], s: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(s_y, s)?;
    let mut total = 0.0;
    let grad = s_y
        .iter()
        .zip(s)
        .map(|(y, x)| {
            let (v, _, d) = em.coordinate(y - x);
            total += v;
            -d
        })
        .collect();
    Ok((total, grad))
}

/// Posterior probability, per coordinate, that the slab generated `s_y`.
pub fn slab_responsibility(em: &ErrorModel, s_y: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    check(s_y, s)?;
    Ok(s_y.iter().zip(s).map(|(y, x)| em.coordinate(y - x).1).collect())
}

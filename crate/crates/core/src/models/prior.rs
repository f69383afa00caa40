use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::ParamVector;
use crate::error::{Error, Result};
use crate::rng::Rng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Independent prior over a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    LogNormal { mu: f64, sigma: f64 },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    Product { components: Vec<Prior> },
}

/// Support of a scalar component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub low: f64,
    pub high: f64,
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::Product { components } => components.iter().map(Prior::dim).sum(),
            _ => 1,
        }
    }

    pub fn supports(&self) -> Vec<Support> {
        match self {
            Prior::LogNormal { .. } => vec![Support { low: 0.0, high: f64::INFINITY }],
            Prior::Uniform { low, high } => vec![Support { low: *low, high: *high }],
            Prior::Normal { .. } => vec![Support { low: f64::NEG_INFINITY, high: f64::INFINITY }],
            Prior::Product { components } => components.iter().flat_map(Prior::supports).collect(),
        }
    }

    fn scalar_logpdf(&self, x: f64) -> f64 {
        match *self {
            Prior::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = (x.ln() - mu) / sigma;
                -x.ln() - sigma.ln() - LN_SQRT_2PI - 0.5 * z * z
            }
            Prior::Uniform { low, high } => {
                if x > low && x < high {
                    -(high - low).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -sd.ln() - LN_SQRT_2PI - 0.5 * z * z
            }
            Prior::Product { .. } => unreachable!("product priors are not scalar"),
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn logpdf(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: theta.len() });
        }
        Ok(self.logpdf_unchecked(theta))
    }

    fn logpdf_unchecked(&self, theta: &[f64]) -> f64 {
        match self {
            Prior::Product { components } => {
                let mut offset = 0;
                let mut total = 0.0;
                for c in components {
                    let d = c.dim();
                    total += c.logpdf_unchecked(&theta[offset..offset + d]);
                    offset += d;
                }
                total
            }
            _ => self.scalar_logpdf(theta[0]),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> ParamVector {
        let mut out = Vec::with_capacity(self.dim());
        self.sample_into(rng, &mut out);
        ParamVector(out)
    }

    fn sample_into(&self, rng: &mut Rng, out: &mut Vec<f64>) {
        match self {
            Prior::LogNormal { mu, sigma } => {
                out.push(LogNormal::new(*mu, *sigma).expect("valid lognormal").sample(rng))
            }
            Prior::Uniform { low, high } => {
                // open interval: resample the (measure-zero) endpoint
                let dist = Uniform::new(*low, *high).expect("valid uniform");
                let mut x = dist.sample(rng);
                while x <= *low {
                    x = dist.sample(rng);
                }
                out.push(x)
            }
            Prior::Normal { mean, sd } => {
                out.push(Normal::new(*mean, *sd).expect("valid normal").sample(rng))
            }
            Prior::Product { components } => {
                for c in components {
                    c.sample_into(rng, out);
                }
            }
        }
    }

    /// Draw `n` parameter vectors.
    pub fn sample_n(&self, n: usize, rng: &mut Rng) -> Vec<ParamVector> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Prior::LogNormal { sigma, .. } if !(*sigma > 0.0) => {
                Err(Error::invalid("lognormal sigma must be positive"))
            }
            Prior::Normal { sd, .. } if !(*sd > 0.0) => Err(Error::invalid("normal sd must be positive")),
            Prior::Uniform { low, high } if !(low < high) => {
                Err(Error::invalid("uniform bounds must satisfy low < high"))
            }
            Prior::Product { components } => components.iter().try_for_each(Prior::validate),
            _ => Ok(()),
        }
    }
}

//! Maps between a parameter's support and the real line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Support;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    Unbounded,
    /// Logit of the position in `(low, high)`.
    Interval { low: f64, high: f64 },
    /// Log of the distance above `low`.
    LowerBounded { low: f64 },
}

impl Bound {
    pub fn from_support(s: &Support) -> Self {
        match (s.low.is_finite(), s.high.is_finite()) {
            (true, true) => Bound::Interval { low: s.low, high: s.high },
            (true, false) => Bound::LowerBounded { low: s.low },
            _ => Bound::Unbounded,
        }
    }

    /// `(z, log |dz/dtheta|)`.
    pub fn apply(&self, theta: f64) -> Result<(f64, f64)> {
        match *self {
            Bound::Unbounded => Ok((theta, 0.0)),
            Bound::Interval { low, high } => {
                if !(theta > low && theta < high) {
                    return Err(Error::invalid(format!("{theta} is outside the open interval ({low}, {high})")));
                }
                let (a, b) = (theta - low, high - theta);
                Ok(((a / b).ln(), (high - low).ln() - a.ln() - b.ln()))
            }
            Bound::LowerBounded { low } => {
                if !(theta > low) {
                    return Err(Error::invalid(format!("{theta} is not above the lower bound {low}")));
                }
                let a = theta - low;
                Ok((a.ln(), -a.ln()))
            }
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        match *self {
            Bound::Unbounded => z,
            Bound::Interval { low, high } => {
                let p = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
                low + (high - low) * p
            }
            Bound::LowerBounded { low } => low + z.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTransform {
    pub bounds: Vec<Bound>,
}

impl BoundTransform {
    pub fn unbounded(dim: usize) -> Self {
        Self { bounds: vec![Bound::Unbounded; dim] }
    }

    pub fn from_supports(supports: &[Support]) -> Self {
        Self { bounds: supports.iter().map(Bound::from_support).collect() }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Unconstrained vector and the total log-Jacobian `log |dz/dtheta|`.
    pub fn apply(&self, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: theta.len() });
        }
        let mut z = Vec::with_capacity(theta.len());
        let mut lj = 0.0;
        for (b, &t) in self.bounds.iter().zip(theta) {
            let (v, l) = b.apply(t)?;
            z.push(v);
            lj += l;
        }
        Ok((z, lj))
    }

    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: z.len() });
        }
        Ok(self.bounds.iter().zip(z).map(|(b, &v)| b.invert(v)).collect())
    }
}

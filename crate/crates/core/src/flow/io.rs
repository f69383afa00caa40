//! Trained flows with their standardisers, stored as versioned JSON.

use std::path::Path;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bound::BoundTransform;
use super::model::FlowParams;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::stats::Standardiser;

pub const FORMAT_VERSION: u32 = 2;

/// A flow together with everything needed to evaluate it on the original
/// scale: targets are bound-transformed, then standardised; conditions are
/// standardised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowBundle {
    pub version: u32,
    pub params: FlowParams,
    pub target_standardiser: Standardiser,
    pub condition_standardiser: Option<Standardiser>,
    pub bound: BoundTransform,
}

impl FlowBundle {
    pub fn new(
        params: FlowParams,
        target_standardiser: Standardiser,
        condition_standardiser: Option<Standardiser>,
        bound: BoundTransform,
    ) -> Result<Self> {
        if target_standardiser.dim() != params.dim || bound.dim() != params.dim {
            return Err(Error::Dimension { expected: params.dim, got: target_standardiser.dim() });
        }
        let cd = condition_standardiser.as_ref().map_or(0, Standardiser::dim);
        if cd != params.cond_dim {
            return Err(Error::Dimension { expected: params.cond_dim, got: cd });
        }
        Ok(Self { version: FORMAT_VERSION, params, target_standardiser, condition_standardiser, bound })
    }

    fn condition(&self, s: Option<&[f64]>) -> Result<Vec<f64>> {
        match (&self.condition_standardiser, s) {
            (Some(st), Some(s)) => {
                if s.len() != st.dim() {
                    return Err(Error::Dimension { expected: st.dim(), got: s.len() });
                }
                Ok(st.transform(s))
            }
            (None, None) => Ok(Vec::new()),
            (Some(_), None) => Err(Error::invalid("conditional flow needs a condition")),
            (None, Some(_)) => Err(Error::invalid("unconditional flow takes no condition")),
        }
    }

    /// Log density of `theta` on its original scale.
    pub fn log_prob(&self, theta: &[f64], s: Option<&[f64]>) -> Result<f64> {
        let c = self.condition(s)?;
        let (z, log_jac) = self.bound.apply(theta)?;
        let u = self.target_standardiser.transform(&z);
        Ok(self.params.log_prob(&u, &c)? - self.target_standardiser.log_scale() + log_jac)
    }

    /// Draws on the original scale.
    pub fn sample(&self, s: Option<&[f64]>, m: usize, rng: &RngState) -> Result<Vec<Vec<f64>>> {
        let c = self.condition(s)?;
        let u: Array2<f64> = self.params.sample(&c, m, rng)?;
        u.rows()
            .into_iter()
            .map(|row| self.bound.invert(&self.target_standardiser.inverse(row.as_slice().expect("row-major"))))
            .collect()
    }

    /// One draw per condition row, on the original scale.
    pub fn sample_each<R: AsRef<[f64]>>(&self, conditions: &[R], rng: &RngState) -> Result<Vec<Vec<f64>>> {
        let st = self
            .condition_standardiser
            .as_ref()
            .ok_or_else(|| Error::invalid("unconditional flow takes no condition"))?;
        let m = conditions.len();
        let mut c = Array2::zeros((m, st.dim()));
        for (i, row) in conditions.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != st.dim() {
                return Err(Error::Dimension { expected: st.dim(), got: row.len() });
            }
            c.row_mut(i).assign(&ndarray::ArrayView1::from(&st.transform(row)));
        }
        let mut gen = rng.rng();
        let z = Array2::from_shape_fn((m, self.params.dim), |_| StandardNormal.sample(&mut gen));
        let (u, _) = self.params.from_base(&z, &c)?;
        u.rows()
            .into_iter()
            .map(|row| self.bound.invert(&self.target_standardiser.inverse(&row.to_vec())))
            .collect()
    }

    /// `log q(theta | s_m)` for every condition row; `-inf` outside the
    /// target's support.
    pub fn log_prob_each<R: AsRef<[f64]>>(&self, theta: &[f64], conditions: &[R]) -> Result<Vec<f64>> {
        let st = self
            .condition_standardiser
            .as_ref()
            .ok_or_else(|| Error::invalid("unconditional flow takes no condition"))?;
        let Ok((z, log_jac)) = self.bound.apply(theta) else {
            return Ok(vec![f64::NEG_INFINITY; conditions.len()]);
        };
        let u = self.target_standardiser.transform(&z);
        let m = conditions.len();
        let x = Array2::from_shape_fn((m, self.params.dim), |(_, j)| u[j]);
        let mut c = Array2::zeros((m, st.dim()));
        for (i, row) in conditions.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != st.dim() {
                return Err(Error::Dimension { expected: st.dim(), got: row.len() });
            }
            c.row_mut(i).assign(&ndarray::ArrayView1::from(&st.transform(row)));
        }
        let offset = log_jac - self.target_standardiser.log_scale();
        Ok(self.params.log_prob_batch(&x, &c)?.iter().map(|l| l + offset).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text)?;
        if b.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported flow format version {}", b.version)));
        }
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

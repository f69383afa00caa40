//! Parameter/summary vectors and paired simulation datasets.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }

        impl From<&[f64]> for $name {
            fn from(values: &[f64]) -> Self {
                Self(values.to_vec())
            }
        }
    };
}

real_vector!(
    /// A point in parameter space.
    ParamVector
);
real_vector!(
    /// A vector of summary statistics.
    SummaryVector
);

/// Paired `(theta, summary)` rows with optional unnormalised weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimDataset {
    pub thetas: Vec<ParamVector>,
    pub summaries: Vec<SummaryVector>,
    /// Raw weights, normalised at point of use.
    pub weights: Option<Vec<f64>>,
}

impl SimDataset {
    pub fn new(
        thetas: Vec<ParamVector>,
        summaries: Vec<SummaryVector>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if thetas.len() != summaries.len() {
            return Err(Error::Dimension { expected: thetas.len(), got: summaries.len() });
        }
        if let Some(w) = &weights {
            if w.len() != thetas.len() {
                return Err(Error::Dimension { expected: thetas.len(), got: w.len() });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::ZeroWeights);
            }
        }
        Ok(Self { thetas, summaries, weights })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn theta_dim(&self) -> usize {
        self.thetas.first().map_or(0, |t| t.len())
    }

    pub fn summary_dim(&self) -> usize {
        self.summaries.first().map_or(0, |s| s.len())
    }

    /// Weights normalised to sum to one; uniform when no weights are stored.
    pub fn normalised_weights(&self) -> Result<Vec<f64>> {
        match &self.weights {
            None if self.is_empty() => Err(Error::ZeroWeights),
            None => Ok(vec![1.0 / self.len() as f64; self.len()]),
            Some(w) => crate::stats::normalise(w),
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: weights.len() });
        }
        self.weights = Some(weights);
        Ok(self)
    }

    /// Rows at `indices` (repeats allowed); the result carries no weights.
    pub fn select(&self, indices: &[usize]) -> SimDataset {
        SimDataset {
            thetas: indices.iter().map(|&i| self.thetas[i].clone()).collect(),
            summaries: indices.iter().map(|&i| self.summaries[i].clone()).collect(),
            weights: None,
        }
    }

    /// Same rows with the theta column permuted; used to check that weights
    /// depend on summaries alone.
    pub fn permute_thetas(&self, perm: &[usize]) -> SimDataset {
        SimDataset {
            thetas: perm.iter().map(|&i| self.thetas[i].clone()).collect(),
            summaries: self.summaries.clone(),
            weights: self.weights.clone(),
        }
    }
}

/// Drop rows whose summary contains NaN or an infinity. Returns the kept rows
/// (in order) and the number removed.
pub fn filter_invalid(dataset: &SimDataset) -> Result<(SimDataset, usize)> {
    let keep: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.summaries[i].is_finite())
        .collect();
    if keep.is_empty() {
        return Err(Error::AllInvalid(dataset.len()));
    }
    let removed = dataset.len() - keep.len();
    let mut out = dataset.select(&keep);
    out.weights = dataset.weights.as_ref().map(|w| keep.iter().map(|&i| w[i]).collect());
    Ok((out, removed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[(f64, [f64; 2])]) -> SimDataset {
        SimDataset::new(
            rows.iter().map(|r| ParamVector(vec![r.0])).collect(),
            rows.iter().map(|r| SummaryVector(r.1.to_vec())).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn nan_row_is_dropped() {
        let d = ds(&[(1.0, [1.0, 2.0]), (2.0, [f64::NAN, 0.0])]);
        let (kept, removed) = filter_invalid(&d).unwrap();
        assert_eq!(removed, 1);
        assert_eq!(kept.thetas, vec![ParamVector(vec![1.0])]);
    }

    #[test]
    fn clean_dataset_is_unchanged() {
        let d = ds(&[(1.0, [1.0, 2.0]), (2.0, [3.0, 0.0])]);
        let (kept, removed) = filter_invalid(&d).unwrap();
        assert_eq!(removed, 0);
        assert_eq!(kept, d);
    }

    #[test]
    fn all_invalid_is_an_error() {
        let d = ds(&[(1.0, [f64::INFINITY, 2.0]), (2.0, [f64::NAN, 0.0])]);
        assert!(matches!(filter_invalid(&d), Err(Error::AllInvalid(2))));
    }

    #[test]
    fn weights_follow_kept_rows() {
        let d = ds(&[(1.0, [1.0, 2.0]), (2.0, [f64::NEG_INFINITY, 0.0]), (3.0, [0.0, 0.0])])
            .with_weights(vec![1.0, 2.0, 3.0])
            .unwrap();
        let (kept, _) = filter_invalid(&d).unwrap();
        assert_eq!(kept.weights, Some(vec![1.0, 3.0]));
    }
}

//! Weighted moments, standardisation, effective sample size and resampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Normalise nonnegative weights to a probability vector.
pub fn normalise(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::ZeroWeights);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroWeights);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Effective sample size `1 / sum(w~^2)` of the normalised weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let w = normalise(weights)?;
    Ok(1.0 / w.iter().map(|v| v * v).sum::<f64>())
}

/// `m` i.i.d. draws from `Categorical(w~)`.
pub fn categorical_resample(weights: &[f64], m: usize, rng: &RngState) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::invalid("resample size must be at least 1"));
    }
    let w = normalise(weights)?;
    let mut cumulative = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for v in &w {
        acc += v;
        cumulative.push(acc);
    }
    let total = acc;
    let last_positive = w.iter().rposition(|v| *v > 0.0).unwrap_or(0);
    let mut gen = rng.rng();
    Ok((0..m)
        .map(|_| {
            let u: f64 = gen.random::<f64>() * total;
            cumulative.partition_point(|c| *c <= u).min(last_positive)
        })
        .collect())
}

/// Per-coordinate affine standardisation `(s - mean) / sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardiser {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardiser {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], sd: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    /// `sum(log sd)`, the log-Jacobian of the inverse map.
    pub fn log_scale(&self) -> f64 {
        self.sd.iter().map(|s| s.ln()).sum()
    }
}

/// Weighted mean and population standard deviation per coordinate.
///
/// The deviation is rescaled by its largest magnitude before squaring, so
/// summaries spanning hundreds of orders of magnitude still give a finite sd.
pub fn fit_standardiser<R: AsRef<[f64]>>(rows: &[R], weights: &[f64]) -> Result<Standardiser> {
    if rows.len() != weights.len() {
        return Err(Error::Dimension { expected: rows.len(), got: weights.len() });
    }
    let w = normalise(weights)?;
    if w.iter().filter(|v| **v > 0.0).count() < 2 {
        return Err(Error::invalid("standardisation needs at least two rows with positive weight"));
    }
    let dim = rows[0].as_ref().len();
    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for k in 0..dim {
        let m: f64 = rows.iter().zip(&w).map(|(r, wi)| wi * r.as_ref()[k]).sum();
        let scale = rows
            .iter()
            .zip(&w)
            .filter(|(_, wi)| **wi > 0.0)
            .map(|(r, _)| (r.as_ref()[k] - m).abs())
            .fold(0.0, f64::max);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::DegenerateCoordinate(k));
        }
        let scaled: f64 = rows
            .iter()
            .zip(&w)
            .map(|(r, wi)| {
                let d = (r.as_ref()[k] - m) / scale;
                wi * d * d
            })
            .sum();
        let s = scale * scaled.sqrt();
        if !(s > 1e-150) || !s.is_finite() {
            return Err(Error::DegenerateCoordinate(k));
        }
        mean[k] = m;
        sd[k] = s;
    }
    Ok(Standardiser { mean, sd })
}

/// Weighted mean of a scalar sample.
pub fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Empirical quantile by linear interpolation on sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Weighted moments by direct enumeration, no rescaling tricks.
    fn brute_moments(x: &[f64], w: &[f64]) -> (f64, f64) {
        let total: f64 = w.iter().sum();
        let mut m = 0.0;
        for i in 0..x.len() {
            m += w[i] / total * x[i];
        }
        let mut v = 0.0;
        for i in 0..x.len() {
            v += w[i] / total * (x[i] - m).powi(2);
        }
        (m, v.sqrt())
    }

    #[test]
    fn symmetric_two_points() {
        let s = fit_standardiser(&[vec![0.0], vec![2.0]], &[0.5, 0.5]).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.sd, vec![1.0]);
    }

    #[test]
    fn constant_coordinate_is_degenerate() {
        let err = fit_standardiser(&[vec![1.0, 0.0], vec![2.0, 0.0]], &[0.3, 0.7]).unwrap_err();
        assert!(matches!(err, Error::DegenerateCoordinate(1)));
    }

    #[test]
    fn weighted_three_points_match_brute_force() {
        let x = [1.0, 2.0, 4.0];
        let w = [0.5, 0.25, 0.25];
        let (m, sd) = brute_moments(&x, &w);
        let s = fit_standardiser(&[vec![1.0], vec![2.0], vec![4.0]], &w).unwrap();
        assert!((s.mean[0] - 2.0).abs() < 1e-15);
        assert!((s.mean[0] - m).abs() < 1e-14);
        assert!((s.sd[0] - sd).abs() < 1e-14);
        // sqrt(1.5) from hand arithmetic
        assert!((s.sd[0] - 1.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn huge_dynamic_range_stays_finite() {
        let rows = vec![vec![1.0], vec![2.0], vec![1e200]];
        let s = fit_standardiser(&rows, &[1.0, 1.0, 1.0]).unwrap();
        assert!(s.sd[0].is_finite() && s.sd[0] > 1e199);
    }

    #[test]
    fn single_positive_weight_rejected() {
        assert!(fit_standardiser(&[vec![0.0], vec![1.0]], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn ess_examples() {
        assert!((ess(&[1.0, 1.0, 1.0, 1.0]).unwrap() - 4.0).abs() < 1e-12);
        assert!((ess(&[1.0, 0.0, 0.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        let expected = 1.0 / (0.5f64.powi(2) + 0.25f64.powi(2) + 0.25f64.powi(2));
        assert!((ess(&[2.0, 1.0, 1.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 8.0 / 3.0).abs() < 1e-12);
        assert!(ess(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn resample_point_mass() {
        let idx = categorical_resample(&[1.0, 0.0], 5, &RngState::new(0, 0)).unwrap();
        assert_eq!(idx, vec![0; 5]);
        assert!(categorical_resample(&[0.0, 0.0], 5, &RngState::new(0, 0)).is_err());
    }

    #[test]
    fn resample_fair_coin() {
        let idx = categorical_resample(&[1.0, 1.0], 100_000, &RngState::new(11, 2)).unwrap();
        let f0 = idx.iter().filter(|&&i| i == 0).count() as f64 / 1e5;
        assert!((0.49..=0.51).contains(&f0), "{f0}");
    }

    #[test]
    fn resample_chi_square() {
        let w = [0.1, 0.4, 0.2, 0.3];
        let m = 100_000;
        let idx = categorical_resample(&w, m, &RngState::new(5, 5)).unwrap();
        let mut counts = [0usize; 4];
        idx.iter().for_each(|&i| counts[i] += 1);
        let chi2: f64 = counts
            .iter()
            .zip(&w)
            .map(|(&c, &p)| {
                let e = p * m as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // chi-square(3) upper 1% point
        assert!(chi2 < 11.345, "chi2 = {chi2}");
    }

    #[test]
    fn resample_is_reproducible() {
        let w = [0.3, 0.3, 0.4];
        let a = categorical_resample(&w, 50, &RngState::new(9, 1)).unwrap();
        let b = categorical_resample(&w, 50, &RngState::new(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn standardiser_round_trip(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 3..20),
            probe in prop::collection::vec(-1e3f64..1e3, 3),
        ) {
            let w = vec![1.0; rows.len()];
            if let Ok(s) = fit_standardiser(&rows, &w) {
                let back = s.inverse(&s.transform(&probe));
                for (a, b) in back.iter().zip(&probe) {
                    prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
                }
            }
        }

        #[test]
        fn standardised_rows_have_unit_moments(
            rows in prop::collection::vec(prop::collection::vec(-50f64..50.0, 2), 4..30),
            w in prop::collection::vec(0.01f64..5.0, 30),
        ) {
            let w = &w[..rows.len()];
            if let Ok(s) = fit_standardiser(&rows, w) {
                let z: Vec<Vec<f64>> = rows.iter().map(|r| s.transform(r)).collect();
                let wn = normalise(w).unwrap();
                for k in 0..2 {
                    let m: f64 = z.iter().zip(&wn).map(|(r, wi)| wi * r[k]).sum();
                    let v: f64 = z.iter().zip(&wn).map(|(r, wi)| wi * (r[k] - m).powi(2)).sum();
                    prop_assert!(m.abs() < 1e-8);
                    prop_assert!((v.sqrt() - 1.0).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn ess_bounds_and_scale_invariance(
            w in prop::collection::vec(0.0f64..10.0, 1..40),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(w.iter().any(|v| *v > 0.0));
            let e = ess(&w).unwrap();
            prop_assert!(e >= 1.0 - 1e-9 && e <= w.len() as f64 + 1e-9);
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            prop_assert!((ess(&scaled).unwrap() - e).abs() < 1e-9 * e);
        }

        #[test]
        fn filter_invalid_is_idempotent(vals in prop::collection::vec(
            prop_oneof![Just(f64::NAN), Just(f64::INFINITY), -10f64..10.0], 2..30)) {
            let ds = crate::data::SimDataset::new(
                (0..vals.len()).map(|i| crate::ParamVector(vec![i as f64])).collect(),
                vals.iter().map(|v| crate::SummaryVector(vec![*v, 1.0])).collect(),
                None,
            ).unwrap();
            if let Ok((once, _)) = crate::filter_invalid(&ds) {
                let (twice, removed) = crate::filter_invalid(&once).unwrap();
                prop_assert_eq!(removed, 0);
                prop_assert_eq!(twice, once);
            }
        }
    }
}

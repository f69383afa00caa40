//! Interval estimates, replicate-level accuracy metrics and weighted-moment
//! diagnostics of the training design around an observation.

use serde::{Deserialize, Serialize};

use crate::data::SimDataset;
use crate::error::{Error, Result};
use crate::stats::normalise;

/// Smallest distance reported before taking a logarithm.
pub const DISTANCE_FLOOR: f64 = 1e-12;

/// Shortest interval holding `ceil(level * n)` sorted draws; ties go to the
/// leftmost window.
pub fn hpdi(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if samples.len() < 100 {
        return Err(Error::TooFewSamples { need: 100, got: samples.len() });
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::invalid("interval level must lie in (0, 1]"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("interval samples contain NaN"));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let k = ((level * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (f64::INFINITY, 0);
    for i in 0..=n - k {
        let w = x[i + k - 1] - x[i];
        if w < best.0 {
            best = (w, i);
        }
    }
    Ok((x[best.1], x[best.1 + k - 1]))
}

/// What one replicate contributes to a method's table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub posterior_mean: Vec<f64>,
    /// 95% interval for each parameter component.
    pub hpdi: Vec<(f64, f64)>,
    /// Log of the median predictive distance; `None` when not computed.
    pub log_ppd: Option<f64>,
}

impl ReplicateMetrics {
    pub fn from_draws<R: AsRef<[f64]>>(draws: &[R], level: f64, log_ppd: Option<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::TooFewSamples { need: 100, got: 0 });
        }
        let d = draws[0].as_ref().len();
        let mut posterior_mean = vec![0.0; d];
        let mut hpdis = Vec::with_capacity(d);
        for k in 0..d {
            let col: Vec<f64> = draws.iter().map(|r| r.as_ref()[k]).collect();
            posterior_mean[k] = col.iter().sum::<f64>() / col.len() as f64;
            hpdis.push(hpdi(&col, level)?);
        }
        Ok(Self { posterior_mean, hpdi: hpdis, log_ppd })
    }
}

/// Aggregate over replicates, one entry per parameter component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub replicates: usize,
    pub bias: Vec<f64>,
    pub rmse: Vec<f64>,
    pub coverage: Vec<f64>,
    pub log_ppd_mean: Option<f64>,
    pub log_ppd_sd: Option<f64>,
}

pub fn aggregate(replicates: &[ReplicateMetrics], truth: &[f64]) -> Result<MethodMetrics> {
    if replicates.is_empty() {
        return Err(Error::invalid("no replicates to aggregate"));
    }
    let n = replicates.len() as f64;
    let d = truth.len();
    let mut bias = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut cover = vec![0.0; d];
    for r in replicates {
        if r.posterior_mean.len() != d || r.hpdi.len() != d {
            return Err(Error::Dimension { expected: d, got: r.posterior_mean.len() });
        }
        for k in 0..d {
            let e = r.posterior_mean[k] - truth[k];
            bias[k] += e / n;
            sq[k] += e * e / n;
            let (lo, hi) = r.hpdi[k];
            if lo <= truth[k] && truth[k] <= hi {
                cover[k] += 1.0 / n;
            }
        }
    }
    let ppd: Vec<f64> = replicates.iter().filter_map(|r| r.log_ppd).collect();
    let (log_ppd_mean, log_ppd_sd) = if ppd.is_empty() {
        (None, None)
    } else {
        let (m, v) = crate::stats::mean_var(&ppd);
        (Some(m), Some(if ppd.len() > 1 { v.sqrt() } else { 0.0 }))
    };
    Ok(MethodMetrics {
        replicates: replicates.len(),
        bias,
        rmse: sq.iter().map(|v| v.sqrt()).collect(),
        coverage: cover,
        log_ppd_mean,
        log_ppd_sd,
    })
}

/// Euclidean distance between `a` and `b` over the listed coordinates,
/// scaled so that very large summaries do not overflow.
pub fn subset_distance(a: &[f64], b: &[f64], coords: &[usize]) -> f64 {
    let scale = coords.iter().map(|&k| (a[k] - b[k]).abs()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * coords.iter().map(|&k| ((a[k] - b[k]) / scale).powi(2)).sum::<f64>().sqrt()
}

/// `log(max(median distance, floor))`.
pub fn log_median_distance(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::invalid("no predictive distances"));
    }
    let mut d = distances.to_vec();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    Ok(med.max(DISTANCE_FLOOR).ln())
}

/// Weighted moments of `||s - s_y||` under a training design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapDiagnostics {
    pub first: f64,
    /// Square root of the second moment.
    pub second_root: f64,
    pub kappa: f64,
    pub kappa_moment: f64,
}

/// Moments of the distance to `s_y` over `dataset` under `weights`.
///
/// Weights are normalised to a probability vector, which equals the
/// `E[w] = 1` average over the dataset after multiplying by its size.
pub fn gap_diagnostics(dataset: &SimDataset, weights: &[f64], s_y: &[f64], kappa: f64) -> Result<GapDiagnostics> {
    if weights.len() != dataset.len() {
        return Err(Error::Dimension { expected: dataset.len(), got: weights.len() });
    }
    if dataset.summary_dim() != s_y.len() {
        return Err(Error::Dimension { expected: dataset.summary_dim(), got: s_y.len() });
    }
    if !(kappa > 1.0) {
        return Err(Error::invalid("gap kappa must exceed 1"));
    }
    let w = normalise(weights)?;
    let all: Vec<usize> = (0..s_y.len()).collect();
    let (mut m1, mut m2, mut mk) = (0.0, 0.0, 0.0);
    for (s, wi) in dataset.summaries.iter().zip(&w) {
        if *wi == 0.0 {
            continue;
        }
        let d = subset_distance(s, s_y, &all);
        m1 += wi * d;
        m2 += wi * d * d;
        mk += wi * d.powf(kappa);
    }
    Ok(GapDiagnostics { first: m1, second_root: m2.sqrt(), kappa, kappa_moment: mk })
}

/// Normalised indicator weights of the ball of radius `eps` around `s_y`.
pub fn ball_weights(dataset: &SimDataset, s_y: &[f64], eps: f64) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..s_y.len()).collect();
    let w: Vec<f64> = dataset
        .summaries
        .iter()
        .map(|s| if subset_distance(s, s_y, &all) <= eps { 1.0 } else { 0.0 })
        .collect();
    normalise(&w)
}

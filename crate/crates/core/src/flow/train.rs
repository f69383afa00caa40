//! Weighted maximum-likelihood training with Adam and early stopping.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{FlowConfig, FlowParams};
use crate::data::SimDataset;
use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 512,
            patience: 10,
            max_epochs: 500,
            validation_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("train.learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::invalid("train.batch_size and train.patience must be at least 1"));
        }
        if !(self.validation_fraction >= 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("train.validation_fraction must lie in [0, 1)"));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0 && self.beta2 >= 0.0 && self.beta2 < 1.0 && self.adam_eps > 0.0) {
            return Err(Error::invalid("train.beta1 and train.beta2 must lie in [0, 1) and train.adam_eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedFlow {
    pub params: FlowParams,
    /// Weighted training NLL of the initial parameters.
    pub initial_train_loss: f64,
    /// Weighted training NLL of the returned parameters.
    pub final_train_loss: f64,
    /// Mean weighted batch NLL per epoch.
    pub train_history: Vec<f64>,
    pub validation_history: Vec<f64>,
    pub best_epoch: usize,
    pub best_validation: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps);
        }
    }
}

fn gather(rows: &[&[f64]], idx: &[usize], dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), dim), |(r, j)| rows[idx[r]][j])
}

/// `sum_i w_i nll_i / sum_i w_i` over the given rows.
pub fn batch_loss(params: &FlowParams, x: &Array2<f64>, c: &Array2<f64>, w: &[f64]) -> Result<f64> {
    let lp = params.log_prob_batch(x, c)?;
    let total: f64 = w.iter().sum();
    Ok(-lp.iter().zip(w).map(|(l, w)| l * w).sum::<f64>() / total)
}

struct Rows<'a> {
    x: Vec<&'a [f64]>,
    c: Vec<&'a [f64]>,
    w: Vec<f64>,
    dim: usize,
    cond_dim: usize,
}

impl Rows<'_> {
    fn batch(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
        (gather(&self.x, idx, self.dim), gather(&self.c, idx, self.cond_dim), idx.iter().map(|&i| self.w[i]).collect())
    }

    /// Weighted NLL over `idx`, evaluated in fixed-size chunks.
    fn loss(&self, params: &FlowParams, idx: &[usize]) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for chunk in idx.chunks(4096) {
            let (x, c, w) = self.batch(chunk);
            let lp = params.log_prob_batch(&x, &c)?;
            num -= lp.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>();
            den += w.iter().sum::<f64>();
        }
        Ok(num / den)
    }
}

/// Train on explicit targets, conditions (possibly zero-width) and weights.
///
/// Rows with zero weight are dropped. A uniformly chosen fraction of the
/// remaining rows is held out; the returned parameters are those with the
/// lowest held-out weighted NLL.
pub fn train_flow_on(
    targets: &[&[f64]],
    conditions: &[&[f64]],
    weights: &[f64],
    flow: &FlowConfig,
    config: &TrainConfig,
    rng: &RngState,
) -> Result<TrainedFlow> {
    let groups: Vec<usize> = (0..targets.len()).collect();
    train_flow_grouped(targets, conditions, weights, &groups, flow, config, rng)
}

/// As [`train_flow_on`], but rows sharing a group id always fall on the same
/// side of the validation split. Used when the rows are a resample with
/// repeats.
pub fn train_flow_grouped(
    targets: &[&[f64]],
    conditions: &[&[f64]],
    weights: &[f64],
    groups: &[usize],
    flow: &FlowConfig,
    config: &TrainConfig,
    rng: &RngState,
) -> Result<TrainedFlow> {
    config.validate()?;
    let n = targets.len();
    if n == 0 || conditions.len() != n || weights.len() != n || groups.len() != n {
        return Err(Error::invalid("training needs equally many targets, conditions, weights and groups"));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid("training weights must be finite and nonnegative"));
    }
    let keep: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::ZeroWeights);
    }
    let rows = Rows {
        x: keep.iter().map(|&i| targets[i]).collect(),
        c: keep.iter().map(|&i| conditions[i]).collect(),
        w: keep.iter().map(|&i| weights[i]).collect(),
        dim: targets[0].len(),
        cond_dim: conditions[0].len(),
    };
    let mut params = FlowParams::new(flow.clone(), rows.dim, rows.cond_dim, &rng.child("init"))?;

    let mut ids: Vec<usize> = keep.iter().map(|&i| groups[i]).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut rng.child("split").rng());
    let n_val = if ids.len() >= 2 {
        ((config.validation_fraction * ids.len() as f64).round() as usize).min(ids.len() - 1)
    } else {
        0
    };
    let mut in_val = vec![false; ids.len()];
    order[..n_val].iter().for_each(|&g| in_val[g] = true);
    let (mut val, mut train_eval) = (Vec::new(), Vec::new());
    for (r, &i) in keep.iter().enumerate() {
        let g = ids.binary_search(&groups[i]).expect("collected above");
        if in_val[g] {
            val.push(r);
        } else {
            train_eval.push(r);
        }
    }
    if val.is_empty() {
        val = train_eval.clone();
    }
    let mut train = train_eval.clone();

    let initial_train_loss = rows.loss(&params, &train_eval)?;
    if !initial_train_loss.is_finite() {
        return Err(Error::NonFiniteInit);
    }
    let mut best = (rows.loss(&params, &val)?, 0, params.values.clone());
    let mut adam = Adam { m: vec![0.0; params.n_params()], v: vec![0.0; params.n_params()], t: 0 };
    let mut shuffle = rng.child("shuffle").rng();
    let mut train_history = Vec::new();
    let mut validation_history = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        train.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for (b, idx) in train.chunks(config.batch_size).enumerate() {
            let (x, c, w) = rows.batch(idx);
            let total: f64 = w.iter().sum();
            let coeffs: Vec<f64> = w.iter().map(|w| -w / total).collect();
            let g = params.gradients(&x, &c, &coeffs)?;
            let loss: f64 = g.log_prob.iter().zip(&coeffs).map(|(l, a)| l * a).sum();
            if !loss.is_finite() || g.params.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut params.values, &g.params, config);
            epoch_loss += loss;
            n_batches += 1;
        }
        train_history.push(epoch_loss / n_batches as f64);
        let v = rows.loss(&params, &val)?;
        validation_history.push(v);
        if v < best.0 {
            best = (v, epoch, params.values.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    log::debug!(
        "flow training: {} epochs, best epoch {} with validation NLL {:.4}",
        train_history.len(),
        best.1,
        best.0
    );
    params.values = best.2;
    let final_train_loss = rows.loss(&params, &train_eval)?;
    Ok(TrainedFlow {
        params,
        initial_train_loss,
        final_train_loss,
        train_history,
        validation_history,
        best_epoch: best.1,
        best_validation: best.0,
    })
}

/// Train `q(theta | s)` when `conditional`, otherwise `h(s)`, on a dataset that
/// is already standardised. Missing weights mean uniform weights.
pub fn train_flow(
    dataset: &SimDataset,
    conditional: bool,
    flow: &FlowConfig,
    config: &TrainConfig,
    rng: &RngState,
) -> Result<TrainedFlow> {
    let weights = dataset.normalised_weights()?;
    let empty: Vec<&[f64]> = vec![&[]; dataset.len()];
    let thetas: Vec<&[f64]> = dataset.thetas.iter().map(|t| &t[..]).collect();
    let summaries: Vec<&[f64]> = dataset.summaries.iter().map(|s| &s[..]).collect();
    if conditional {
        train_flow_on(&thetas, &summaries, &weights, flow, config, rng)
    } else {
        train_flow_on(&summaries, &empty, &weights, flow, config, rng)
    }
}

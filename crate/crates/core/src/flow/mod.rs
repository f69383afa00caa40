//! Conditional and unconditional spline coupling flows.

mod bound;
mod io;
mod model;
mod spline;
mod train;

pub use bound::{Bound, BoundTransform};
pub use io::{FlowBundle, FORMAT_VERSION};
pub use model::{Activation, FlowConfig, FlowParams, Gradients};
pub use spline::{rqs_forward, rqs_forward_grad, rqs_forward_raw, rqs_inverse, rqs_inverse_raw, RqsKnots, SplineShape};
pub use train::{batch_loss, train_flow, train_flow_grouped, train_flow_on, TrainConfig, TrainedFlow};

use crate::data::ParamVector;
use crate::error::Result;
use crate::rng::RngState;

/// Log density of `target` given `condition` (empty for unconditional flows).
pub fn flow_logpdf(params: &FlowParams, target: &[f64], condition: Option<&[f64]>) -> Result<f64> {
    params.log_prob(target, condition.unwrap_or(&[]))
}

pub fn flow_sample(params: &FlowParams, condition: Option<&[f64]>, m: usize, rng: &RngState) -> Result<Vec<ParamVector>> {
    let x = params.sample(condition.unwrap_or(&[]), m, rng)?;
    Ok(x.rows().into_iter().map(|r| ParamVector(r.to_vec())).collect())
}

/// Gradient of the log density with respect to the condition.
pub fn flow_logpdf_grad_condition(params: &FlowParams, target: &[f64], condition: &[f64]) -> Result<Vec<f64>> {
    params.grad_condition(target, condition)
}

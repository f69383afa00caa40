//! Monotone rational-quadratic splines on `[-B, B]` with identity tails.
//!
//! Raw parameters for one coordinate are laid out as `K` width logits, `K`
//! height logits and `K - 1` interior derivative pre-activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape constants shared by every spline in a flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineShape {
    pub bins: usize,
    pub bound: f64,
    pub min_width: f64,
    pub min_height: f64,
    pub min_derivative: f64,
}

impl Default for SplineShape {
    fn default() -> Self {
        Self { bins: 10, bound: 8.0, min_width: 1e-3, min_height: 1e-3, min_derivative: 1e-3 }
    }
}

impl SplineShape {
    pub fn raw_len(&self) -> usize {
        3 * self.bins - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 1 || self.bins > 64 || !(self.bound > 0.0) {
            return Err(Error::invalid("flow.spline.bins must lie in 1..=64 and flow.spline.bound must be positive"));
        }
        let k = self.bins as f64;
        if !(self.min_width >= 0.0 && self.min_width * k < 1.0 && self.min_height >= 0.0 && self.min_height * k < 1.0)
        {
            return Err(Error::invalid("flow.spline.min_width and min_height times bins must be below 1"));
        }
        if !(self.min_derivative >= 0.0) {
            return Err(Error::invalid("flow.spline.min_derivative must be nonnegative"));
        }
        Ok(())
    }

    /// Raw values that make the spline the identity.
    pub fn identity_raw(&self) -> Vec<f64> {
        let mut raw = vec![0.0; self.raw_len()];
        let r = inverse_softplus(1.0 - self.min_derivative);
        raw[2 * self.bins..].iter_mut().for_each(|v| *v = r);
        raw
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Bin widths, heights and derivatives at all `K + 1` knots.
#[derive(Debug, Clone, PartialEq)]
pub struct RqsKnots {
    pub widths: Vec<f64>,
    pub heights: Vec<f64>,
    /// Includes the two boundary derivatives, which are 1.
    pub derivatives: Vec<f64>,
    pub bound: f64,
}

impl RqsKnots {
    /// Validated knots from explicit bin sizes and interior derivatives.
    pub fn new(widths: Vec<f64>, heights: Vec<f64>, interior: Vec<f64>, bound: f64) -> Result<Self> {
        let k = widths.len();
        if k == 0 || heights.len() != k || interior.len() + 1 != k {
            return Err(Error::invalid("spline needs K widths, K heights and K - 1 derivatives"));
        }
        if widths.iter().chain(&heights).chain(&interior).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("spline knot parameters must be positive"));
        }
        for v in [&widths, &heights] {
            let total: f64 = v.iter().sum();
            if (total - 2.0 * bound).abs() > 1e-9 * bound.max(1.0) {
                return Err(Error::invalid("spline bin sizes must sum to the interval length"));
            }
        }
        let mut derivatives = Vec::with_capacity(k + 1);
        derivatives.push(1.0);
        derivatives.extend(interior);
        derivatives.push(1.0);
        Ok(Self { widths, heights, derivatives, bound })
    }

    pub fn from_raw(raw: &[f64], shape: &SplineShape) -> Self {
        let k = shape.bins;
        let mut widths = vec![0.0; k];
        let mut heights = vec![0.0; k];
        softmax_into(&raw[..k], &mut widths);
        softmax_into(&raw[k..2 * k], &mut heights);
        let span = 2.0 * shape.bound;
        widths.iter_mut().for_each(|w| *w = span * (shape.min_width + (1.0 - k as f64 * shape.min_width) * *w));
        heights.iter_mut().for_each(|h| *h = span * (shape.min_height + (1.0 - k as f64 * shape.min_height) * *h));
        let mut derivatives = Vec::with_capacity(k + 1);
        derivatives.push(1.0);
        derivatives.extend(raw[2 * k..].iter().map(|&r| shape.min_derivative + softplus(r)));
        derivatives.push(1.0);
        Self { widths, heights, derivatives, bound: shape.bound }
    }

    fn bins(&self) -> usize {
        self.widths.len()
    }

    /// Left knot positions `x_0..x_{K-1}` (or heights).
    fn cumulative(v: &[f64], bound: f64) -> impl Iterator<Item = f64> + '_ {
        v.iter().scan(-bound, |acc, w| {
            let left = *acc;
            *acc += w;
            Some(left)
        })
    }

    /// Bin index and left knot for `x` along `sizes`.
    fn locate(sizes: &[f64], bound: f64, x: f64) -> (usize, f64) {
        let mut left = -bound;
        for (k, w) in sizes.iter().enumerate() {
            if k + 1 == sizes.len() || x < left + w {
                return (k, left);
            }
            left += w;
        }
        unreachable!()
    }

    pub fn knot_positions(&self) -> Vec<f64> {
        Self::cumulative(&self.widths, self.bound).collect()
    }
}

/// Local spline quantities in bin coordinates.
struct Local {
    s: f64,
    d0: f64,
    d1: f64,
    alpha: f64,
    den: f64,
    p: f64,
    q: f64,
}

impl Local {
    fn new(xi: f64, s: f64, d0: f64, d1: f64) -> Self {
        let alpha = xi * (1.0 - xi);
        let den = s + (d0 + d1 - 2.0 * s) * alpha;
        let p = s * xi * xi + d0 * alpha;
        let q = d1 * xi * xi + 2.0 * s * alpha + d0 * (1.0 - xi) * (1.0 - xi);
        Self { s, d0, d1, alpha, den, p, q }
    }

    fn logdet(&self) -> f64 {
        2.0 * self.s.ln() + self.q.ln() - 2.0 * self.den.ln()
    }
}

/// `(y, log dy/dx)`.
pub fn rqs_forward(x: f64, knots: &RqsKnots) -> (f64, f64) {
    let b = knots.bound;
    if !(x >= -b && x <= b) {
        return (x, 0.0);
    }
    let (k, xk) = RqsKnots::locate(&knots.widths, b, x);
    let yk: f64 = -b + knots.heights[..k].iter().sum::<f64>();
    let (w, h) = (knots.widths[k], knots.heights[k]);
    let xi = ((x - xk) / w).clamp(0.0, 1.0);
    let l = Local::new(xi, h / w, knots.derivatives[k], knots.derivatives[k + 1]);
    (yk + h * l.p / l.den, l.logdet())
}

/// `(x, log dx/dy)`.
pub fn rqs_inverse(y: f64, knots: &RqsKnots) -> (f64, f64) {
    let b = knots.bound;
    if !(y >= -b && y <= b) {
        return (y, 0.0);
    }
    let (k, yk) = RqsKnots::locate(&knots.heights, b, y);
    let xk: f64 = -b + knots.widths[..k].iter().sum::<f64>();
    let (w, h) = (knots.widths[k], knots.heights[k]);
    let s = h / w;
    let (d0, d1) = (knots.derivatives[k], knots.derivatives[k + 1]);
    let dy = y - yk;
    let a = h * (s - d0) + dy * (d0 + d1 - 2.0 * s);
    let bq = h * d0 - dy * (d0 + d1 - 2.0 * s);
    let c = -s * dy;
    let disc = (bq * bq - 4.0 * a * c).max(0.0);
    let xi = (2.0 * c / (-bq - disc.sqrt())).clamp(0.0, 1.0);
    let xi = if xi.is_finite() { xi } else { 0.0 };
    let l = Local::new(xi, s, d0, d1);
    (xk + xi * w, -l.logdet())
}

/// Forward pass of one coordinate with reverse-mode gradients.
///
/// Returns `(y, logdet, g_x)` where `g_x = g_y dy/dx + g_l dlogdet/dx`, and
/// accumulates `g_y dy/draw + g_l dlogdet/draw` into `raw_grad`.
pub fn rqs_forward_grad(
    x: f64,
    raw: &[f64],
    shape: &SplineShape,
    g_y: f64,
    g_l: f64,
    raw_grad: &mut [f64],
) -> (f64, f64, f64) {
    let bnd = shape.bound;
    if !(x >= -bnd && x <= bnd) {
        return (x, 0.0, g_y);
    }
    let knots = RqsKnots::from_raw(raw, shape);
    let kb = knots.bins();
    let (k, xk) = RqsKnots::locate(&knots.widths, bnd, x);
    let yk: f64 = -bnd + knots.heights[..k].iter().sum::<f64>();
    let (w, h) = (knots.widths[k], knots.heights[k]);
    let xi_raw = (x - xk) / w;
    let xi = xi_raw.clamp(0.0, 1.0);
    let l = Local::new(xi, h / w, knots.derivatives[k], knots.derivatives[k + 1]);
    let Local { s, d0, d1, alpha, den, p, q, .. } = l;
    let y = yk + h * p / den;
    let logdet = l.logdet();

    let one_m = 1.0 - xi;
    let dalpha = 1.0 - 2.0 * xi;
    let c = d0 + d1 - 2.0 * s;
    // partials of R = P / den
    let dp_xi = 2.0 * s * xi + d0 * dalpha;
    let dden_xi = c * dalpha;
    let den2 = den * den;
    let r_xi = (dp_xi * den - p * dden_xi) / den2;
    let r_s = (xi * xi * den - p * (1.0 - 2.0 * alpha)) / den2;
    let r_d0 = (alpha * den - p * alpha) / den2;
    let r_d1 = -p * alpha / den2;
    // partials of the log-derivative
    let dq_xi = 2.0 * d1 * xi + 2.0 * s * dalpha - 2.0 * d0 * one_m;
    let l_xi = dq_xi / q - 2.0 * dden_xi / den;
    let l_s = 2.0 / s + 2.0 * alpha / q - 2.0 * (1.0 - 2.0 * alpha) / den;
    let l_d0 = one_m * one_m / q - 2.0 * alpha / den;
    let l_d1 = xi * xi / q - 2.0 * alpha / den;

    let inside = xi_raw == xi;
    let f_xi = if inside { g_y * h * r_xi + g_l * l_xi } else { 0.0 };
    let f_s = g_y * h * r_s + g_l * l_s;
    let f_d0 = g_y * h * r_d0 + g_l * l_d0;
    let f_d1 = g_y * h * r_d1 + g_l * l_d1;
    let f_h = g_y * p / den;

    let g_x = f_xi / w;
    let g_xk = -f_xi / w;
    let g_w = -f_xi * xi / w - f_s * s / w;
    let g_h = f_h + f_s / w;
    let g_yk = g_y;

    // widths and heights: bin sizes left of k move the left knot
    let span = 2.0 * bnd;
    let mut gw = [0.0; 64];
    let mut gh = [0.0; 64];
    let (gw, gh) = if kb <= 64 { (&mut gw[..kb], &mut gh[..kb]) } else { unreachable!("at most 64 bins") };
    gw[..k].iter_mut().for_each(|v| *v = g_xk);
    gw[k] = g_w;
    gh[..k].iter_mut().for_each(|v| *v = g_yk);
    gh[k] = g_h;
    softmax_backward(&raw[..kb], gw, span * (1.0 - kb as f64 * shape.min_width), &mut raw_grad[..kb]);
    softmax_backward(&raw[kb..2 * kb], gh, span * (1.0 - kb as f64 * shape.min_height), &mut raw_grad[kb..2 * kb]);
    if k >= 1 {
        raw_grad[2 * kb + k - 1] += f_d0 * sigmoid(raw[2 * kb + k - 1]);
    }
    if k + 1 < kb {
        raw_grad[2 * kb + k] += f_d1 * sigmoid(raw[2 * kb + k]);
    }
    (y, logdet, g_x)
}

/// Accumulate `scale * J_softmax^T g` into `out`.
fn softmax_backward(logits: &[f64], g: &[f64], scale: f64, out: &mut [f64]) {
    let mut sm = [0.0; 64];
    let sm = &mut sm[..logits.len()];
    softmax_into(logits, sm);
    let dot: f64 = sm.iter().zip(g).map(|(a, b)| a * b).sum();
    for j in 0..logits.len() {
        out[j] += scale * sm[j] * (g[j] - dot);
    }
}

/// Forward transform straight from raw parameters.
pub fn rqs_forward_raw(x: f64, raw: &[f64], shape: &SplineShape) -> (f64, f64) {
    if !(x >= -shape.bound && x <= shape.bound) {
        return (x, 0.0);
    }
    rqs_forward(x, &RqsKnots::from_raw(raw, shape))
}

pub fn rqs_inverse_raw(y: f64, raw: &[f64], shape: &SplineShape) -> (f64, f64) {
    if !(y >= -shape.bound && y <= shape.bound) {
        return (y, 0.0);
    }
    rqs_inverse(y, &RqsKnots::from_raw(raw, shape))
}

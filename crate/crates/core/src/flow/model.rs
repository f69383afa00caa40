//! Coupling flows built from spline transformers and one-hidden-layer
//! conditioners.
//!
//! Layer `l` looks at the coordinates in natural order when `l` is even and in
//! reversed order when odd. In that order the first `floor(d / 2)` coordinates
//! are passed through and feed the conditioner together with the condition;
//! the rest are transformed. The data-to-base direction is the one with
//! analytic gradients; sampling runs it backwards.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::spline::{rqs_forward_grad, rqs_forward_raw, rqs_inverse_raw, SplineShape};
use crate::error::{Error, Result};
use crate::rng::RngState;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Hidden-layer nonlinearity of the conditioners.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative written in terms of the activation's output.
    fn slope(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub layers: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub spline: SplineShape,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { layers: 8, hidden: 128, activation: Activation::Relu, spline: SplineShape::default() }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::invalid("flow.layers and flow.hidden must be at least 1"));
        }
        self.spline.validate()
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    in_dim: usize,
    out_dim: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

/// All learnable values of a coupling flow, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub config: FlowConfig,
    pub dim: usize,
    pub cond_dim: usize,
    pub values: Vec<f64>,
}

/// Per-layer batch state kept for the backward pass.
struct Cache {
    x_in: Array2<f64>,
    input: Array2<f64>,
    hidden: Array2<f64>,
    raw: Array2<f64>,
}

/// Log densities and gradients of `sum_r a_r log q(x_r | c_r)`.
pub struct Gradients {
    pub log_prob: Vec<f64>,
    pub params: Vec<f64>,
    pub target: Array2<f64>,
    pub condition: Array2<f64>,
}

impl FlowParams {
    /// Identity-initialised flow: first-layer weights and biases are random,
    /// the output layer is zero with biases that make every spline the
    /// identity.
    pub fn new(config: FlowConfig, dim: usize, cond_dim: usize, rng: &RngState) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::invalid("flow target dimension must be positive"));
        }
        let mut p = Self { config, dim, cond_dim, values: Vec::new() };
        let total = p.layout(p.config.layers - 1).end;
        p.values = vec![0.0; total];
        let mut gen = rng.rng();
        let identity = p.config.spline.identity_raw();
        for l in 0..p.config.layers {
            let lay = p.layout(l);
            if lay.in_dim > 0 {
                let a = 1.0 / (lay.in_dim as f64).sqrt();
                let u = Uniform::new(-a, a).map_err(|e| Error::Internal(e.to_string()))?;
                for v in &mut p.values[lay.w1..lay.w2] {
                    *v = u.sample(&mut gen);
                }
            }
            for (j, v) in p.values[lay.b2..lay.end].iter_mut().enumerate() {
                *v = identity[j % identity.len()];
            }
        }
        Ok(p)
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn n_passive(&self) -> usize {
        self.dim / 2
    }

    fn layout(&self, l: usize) -> Layout {
        let p = self.n_passive();
        let in_dim = p + self.cond_dim;
        let out_dim = (self.dim - p) * self.config.spline.raw_len();
        let h = self.config.hidden;
        let per = in_dim * h + h + h * out_dim + out_dim;
        let w1 = l * per;
        let b1 = w1 + in_dim * h;
        let w2 = b1 + h;
        let b2 = w2 + h * out_dim;
        Layout { in_dim, out_dim, w1, b1, w2, b2, end: b2 + out_dim }
    }

    /// `(passive, transformed)` coordinate indices of layer `l`.
    pub fn masks(&self, l: usize) -> (Vec<usize>, Vec<usize>) {
        let order: Vec<usize> = if l.is_multiple_of(2) { (0..self.dim).collect() } else { (0..self.dim).rev().collect() };
        let p = self.n_passive();
        (order[..p].to_vec(), order[p..].to_vec())
    }

    fn view2(&self, start: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.values[start..start + rows * cols]).expect("layout")
    }

    fn view1(&self, start: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[start..start + len])
    }

    /// Exposes the raw spline parameters of layer `l` for a batch.
    fn conditioner(&self, l: usize, x: &Array2<f64>, c: &Array2<f64>, passive: &[usize]) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let lay = self.layout(l);
        let n = x.nrows();
        let h = self.config.hidden;
        let mut input = Array2::zeros((n, lay.in_dim));
        for (j, &pi) in passive.iter().enumerate() {
            input.column_mut(j).assign(&x.column(pi));
        }
        if self.cond_dim > 0 {
            input.slice_mut(s![.., passive.len()..]).assign(c);
        }
        let mut hidden = input.dot(&self.view2(lay.w1, lay.in_dim, h));
        hidden += &self.view1(lay.b1, h);
        let act = self.config.activation;
        hidden.mapv_inplace(|v| act.apply(v));
        let mut raw = hidden.dot(&self.view2(lay.w2, h, lay.out_dim));
        raw += &self.view1(lay.b2, lay.out_dim);
        (input, hidden, raw)
    }

    fn check_batch(&self, x: &Array2<f64>, c: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.ncols() });
        }
        if c.ncols() != self.cond_dim {
            return Err(Error::Dimension { expected: self.cond_dim, got: c.ncols() });
        }
        if c.nrows() != x.nrows() {
            return Err(Error::invalid("target and condition batches differ in length"));
        }
        Ok(())
    }

    /// Map data to the base space: `(z, log |dz/dx|)` per row.
    pub fn to_base(&self, x: &Array2<f64>, c: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_batch(x, c)?;
        let (z, logdet, _) = self.run_forward(x, c, false);
        Ok((z, logdet))
    }

    fn run_forward(&self, x: &Array2<f64>, c: &Array2<f64>, keep: bool) -> (Array2<f64>, Array1<f64>, Vec<Cache>) {
        let shape = self.config.spline;
        let rl = shape.raw_len();
        let mut cur = x.clone();
        let mut logdet = Array1::zeros(x.nrows());
        let mut caches = Vec::new();
        for l in 0..self.config.layers {
            let (passive, trans) = self.masks(l);
            let (input, hidden, raw) = self.conditioner(l, &cur, c, &passive);
            let x_in = if keep { Some(cur.clone()) } else { None };
            for r in 0..cur.nrows() {
                let raw_r = raw.row(r);
                let raw_r = raw_r.as_slice().expect("row-major");
                for (t, &j) in trans.iter().enumerate() {
                    let (y, ld) = rqs_forward_raw(cur[[r, j]], &raw_r[t * rl..(t + 1) * rl], &shape);
                    cur[[r, j]] = y;
                    logdet[r] += ld;
                }
            }
            if let Some(x_in) = x_in {
                caches.push(Cache { x_in, input, hidden, raw });
            }
        }
        (cur, logdet, caches)
    }

    /// Map base draws back to data space: `(x, log |dx/dz|)` per row.
    pub fn from_base(&self, z: &Array2<f64>, c: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_batch(z, c)?;
        let shape = self.config.spline;
        let rl = shape.raw_len();
        let mut cur = z.clone();
        let mut logdet = Array1::zeros(z.nrows());
        for l in (0..self.config.layers).rev() {
            let (passive, trans) = self.masks(l);
            let (_, _, raw) = self.conditioner(l, &cur, c, &passive);
            for r in 0..cur.nrows() {
                let raw_r = raw.row(r);
                let raw_r = raw_r.as_slice().expect("row-major");
                for (t, &j) in trans.iter().enumerate() {
                    let (x, ld) = rqs_inverse_raw(cur[[r, j]], &raw_r[t * rl..(t + 1) * rl], &shape);
                    cur[[r, j]] = x;
                    logdet[r] += ld;
                }
            }
        }
        Ok((cur, logdet))
    }

    pub fn log_prob_batch(&self, x: &Array2<f64>, c: &Array2<f64>) -> Result<Array1<f64>> {
        let (z, logdet) = self.to_base(x, c)?;
        Ok(base_log_prob(&z) + logdet)
    }

    pub fn log_prob(&self, x: &[f64], c: &[f64]) -> Result<f64> {
        let (xb, cb) = self.single(x, c)?;
        Ok(self.log_prob_batch(&xb, &cb)?[0])
    }

    fn single(&self, x: &[f64], c: &[f64]) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        if c.len() != self.cond_dim {
            return Err(Error::Dimension { expected: self.cond_dim, got: c.len() });
        }
        Ok((
            Array2::from_shape_vec((1, self.dim), x.to_vec()).expect("shape"),
            Array2::from_shape_vec((1, self.cond_dim), c.to_vec()).expect("shape"),
        ))
    }

    /// Reverse-mode gradients of `sum_r coeffs[r] * log q(x_r | c_r)`.
    pub fn gradients(&self, x: &Array2<f64>, c: &Array2<f64>, coeffs: &[f64]) -> Result<Gradients> {
        self.check_batch(x, c)?;
        if coeffs.len() != x.nrows() {
            return Err(Error::Dimension { expected: x.nrows(), got: coeffs.len() });
        }
        let shape = self.config.spline;
        let rl = shape.raw_len();
        let h = self.config.hidden;
        let (z, logdet, caches) = self.run_forward(x, c, true);
        let log_prob = (base_log_prob(&z) + &logdet).to_vec();

        let a = Array1::from(coeffs.to_vec());
        // d log N(z) / dz = -z
        let mut g = &z * &a.view().insert_axis(Axis(1)) * -1.0;
        let mut gc = Array2::<f64>::zeros(c.raw_dim());
        let mut grads = vec![0.0; self.values.len()];

        for (l, cache) in caches.iter().enumerate().rev() {
            let lay = self.layout(l);
            let (passive, trans) = self.masks(l);
            let mut d_raw = Array2::<f64>::zeros((x.nrows(), lay.out_dim));
            for r in 0..x.nrows() {
                let raw_r = cache.raw.row(r);
                let raw_r = raw_r.as_slice().expect("row-major");
                let mut d_raw_r = d_raw.row_mut(r);
                let d_raw_r = d_raw_r.as_slice_mut().expect("row-major");
                for (t, &j) in trans.iter().enumerate() {
                    let (_, _, gx) = rqs_forward_grad(
                        cache.x_in[[r, j]],
                        &raw_r[t * rl..(t + 1) * rl],
                        &shape,
                        g[[r, j]],
                        a[r],
                        &mut d_raw_r[t * rl..(t + 1) * rl],
                    );
                    g[[r, j]] = gx;
                }
            }
            // output layer
            let d_w2 = cache.hidden.t().dot(&d_raw);
            add_into(&mut grads[lay.w2..lay.b2], d_w2.as_slice().expect("standard layout"));
            add_into(&mut grads[lay.b2..lay.end], d_raw.sum_axis(Axis(0)).as_slice().expect("contiguous"));
            let mut d_pre = d_raw.dot(&self.view2(lay.w2, h, lay.out_dim).t());
            let act = self.config.activation;
            d_pre.zip_mut_with(&cache.hidden, |d, &hv| *d *= act.slope(hv));
            if lay.in_dim > 0 {
                let d_w1 = cache.input.t().dot(&d_pre);
                add_into(&mut grads[lay.w1..lay.b1], d_w1.as_slice().expect("standard layout"));
            }
            add_into(&mut grads[lay.b1..lay.w2], d_pre.sum_axis(Axis(0)).as_slice().expect("contiguous"));
            if lay.in_dim > 0 {
                let d_input = d_pre.dot(&self.view2(lay.w1, lay.in_dim, h).t());
                for (k, &pi) in passive.iter().enumerate() {
                    let mut col = g.column_mut(pi);
                    col += &d_input.column(k);
                }
                if self.cond_dim > 0 {
                    gc += &d_input.slice(s![.., passive.len()..]);
                }
            }
        }
        Ok(Gradients { log_prob, params: grads, target: g, condition: gc })
    }

    /// Gradient of `log q(x | c)` with respect to `c`.
    pub fn grad_condition(&self, x: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        self.single(x, c)?;
        Ok(self.input_grads(x, c).2)
    }

    /// `log q(x | c)` and its gradient with respect to `x`.
    pub fn grad_target(&self, x: &[f64], c: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.single(x, c)?;
        let (lp, gx, _) = self.input_grads(x, c);
        Ok((lp, gx))
    }

    /// Single-row log density with gradients in `x` and `c`, skipping the
    /// parameter gradients. Hot path of the sampler.
    fn input_grads(&self, x: &[f64], c: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let shape = self.config.spline;
        let rl = shape.raw_len();
        let h = self.config.hidden;
        let layers = self.config.layers;
        let act = self.config.activation;
        let mut cur = x.to_vec();
        let mut logdet = 0.0;
        let mut xs = Vec::with_capacity(layers);
        let mut hiddens = Vec::with_capacity(layers);
        let mut raws = Vec::with_capacity(layers);
        for l in 0..layers {
            let lay = self.layout(l);
            let (passive, trans) = self.masks(l);
            let input: Vec<f64> = passive.iter().map(|&i| cur[i]).chain(c.iter().copied()).collect();
            let mut hid = self.values[lay.b1..lay.w2].to_vec();
            let w1 = &self.values[lay.w1..lay.b1];
            for (i, &v) in input.iter().enumerate() {
                if v != 0.0 {
                    for (hj, &w) in hid.iter_mut().zip(&w1[i * h..(i + 1) * h]) {
                        *hj += v * w;
                    }
                }
            }
            hid.iter_mut().for_each(|v| *v = act.apply(*v));
            let mut raw = self.values[lay.b2..lay.end].to_vec();
            let w2 = &self.values[lay.w2..lay.b2];
            for (j, &v) in hid.iter().enumerate() {
                for (r, &w) in raw.iter_mut().zip(&w2[j * lay.out_dim..(j + 1) * lay.out_dim]) {
                    *r += v * w;
                }
            }
            xs.push(cur.clone());
            for (t, &j) in trans.iter().enumerate() {
                let (y, ld) = rqs_forward_raw(cur[j], &raw[t * rl..(t + 1) * rl], &shape);
                cur[j] = y;
                logdet += ld;
            }
            hiddens.push(hid);
            raws.push(raw);
        }
        let d = self.dim as f64;
        let lp = -0.5 * d * LN_2PI - 0.5 * cur.iter().map(|z| z * z).sum::<f64>() + logdet;

        let mut g: Vec<f64> = cur.iter().map(|z| -z).collect();
        let mut gc = vec![0.0; self.cond_dim];
        for l in (0..layers).rev() {
            let lay = self.layout(l);
            let (passive, trans) = self.masks(l);
            let raw = &raws[l];
            let mut d_raw = vec![0.0; lay.out_dim];
            for (t, &j) in trans.iter().enumerate() {
                let (_, _, gx) =
                    rqs_forward_grad(xs[l][j], &raw[t * rl..(t + 1) * rl], &shape, g[j], 1.0, &mut d_raw[t * rl..(t + 1) * rl]);
                g[j] = gx;
            }
            if lay.in_dim == 0 {
                continue;
            }
            let w2 = &self.values[lay.w2..lay.b2];
            let hid = &hiddens[l];
            let d_pre: Vec<f64> = (0..h)
                .map(|j| {
                    let row = &w2[j * lay.out_dim..(j + 1) * lay.out_dim];
                    let s: f64 = row.iter().zip(&d_raw).map(|(a, b)| a * b).sum();
                    s * act.slope(hid[j])
                })
                .collect();
            let w1 = &self.values[lay.w1..lay.b1];
            for i in 0..lay.in_dim {
                let s: f64 = w1[i * h..(i + 1) * h].iter().zip(&d_pre).map(|(a, b)| a * b).sum();
                if i < passive.len() {
                    g[passive[i]] += s;
                } else {
                    gc[i - passive.len()] += s;
                }
            }
        }
        (lp, g, gc)
    }

    /// `m` draws given one condition vector.
    pub fn sample(&self, c: &[f64], m: usize, rng: &RngState) -> Result<Array2<f64>> {
        if c.len() != self.cond_dim {
            return Err(Error::Dimension { expected: self.cond_dim, got: c.len() });
        }
        let mut gen = rng.rng();
        let z = Array2::from_shape_fn((m, self.dim), |_| StandardNormal.sample(&mut gen));
        let cb = Array2::from_shape_fn((m, self.cond_dim), |(_, j)| c[j]);
        Ok(self.from_base(&z, &cb)?.0)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn base_log_prob(z: &Array2<f64>) -> Array1<f64> {
    let d = z.ncols() as f64;
    z.map_axis(Axis(1), |row| -0.5 * d * LN_2PI - 0.5 * row.dot(&row))
}

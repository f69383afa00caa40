//! No-U-Turn sampler with multinomial trajectory sampling, dual-averaging
//! step-size adaptation and windowed diagonal mass-matrix adaptation.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Rng, RngState};

/// A differentiable log density on `R^d`.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// A closure-backed density.
pub struct FnDensity<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NutsConfig {
    pub target_accept: f64,
    pub warmup: usize,
    pub samples: usize,
    pub max_depth: usize,
    /// Adapt a diagonal inverse metric in doubling windows during warmup.
    pub adapt_metric: bool,
    pub initial_step_size: f64,
    pub max_delta_h: f64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            target_accept: 0.9,
            warmup: 1000,
            samples: 2000,
            max_depth: 10,
            adapt_metric: true,
            initial_step_size: 1.0,
            max_delta_h: 1000.0,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("nuts.target_accept must lie in (0, 1)"));
        }
        if self.samples == 0 || self.max_depth == 0 {
            return Err(Error::invalid("nuts.samples and nuts.max_depth must be positive"));
        }
        if !(self.initial_step_size > 0.0) {
            return Err(Error::invalid("nuts.initial_step_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutsDiagnostics {
    /// Step size used after warmup.
    pub step_size: f64,
    /// Step size before each warmup iteration.
    pub warmup_step_sizes: Vec<f64>,
    /// Mean acceptance statistic over post-warmup iterations.
    pub mean_accept: f64,
    /// Post-warmup divergent transitions.
    pub divergences: usize,
    pub mean_tree_depth: f64,
    pub leapfrog_steps: usize,
    pub inv_metric: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NutsOutput {
    pub draws: Vec<Vec<f64>>,
    pub diagnostics: NutsDiagnostics,
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

struct Sampler<'a, D: LogDensity + ?Sized> {
    target: &'a D,
    inv_metric: Vec<f64>,
    eps: f64,
    max_depth: usize,
    max_delta_h: f64,
    rng: Rng,
    divergent: bool,
}

struct Transition {
    accept: f64,
    depth: usize,
    n_leapfrog: usize,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Per-subtree outputs threaded through the recursion.
struct Ends {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
}

impl<D: LogDensity + ?Sized> Sampler<'_, D> {
    fn hamiltonian(&self, z: &Point) -> f64 {
        let k: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>() * 0.5;
        let h = k - z.logp;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, z: &Point) -> Vec<f64> {
        z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum(&mut self, z: &mut Point) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            *p = n / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) -> Result<()> {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        match self.target.log_density_and_grad(&z.q) {
            Ok((lp, g)) if lp.is_finite() && g.iter().all(|v| v.is_finite()) => {
                z.logp = lp;
                z.grad = g;
            }
            Ok(_) => {
                z.logp = f64::NEG_INFINITY;
                z.grad.iter_mut().for_each(|g| *g = 0.0);
            }
            Err(e) => return Err(e),
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        z: &mut Point,
        depth: usize,
        z_propose: &mut Point,
        rho: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        n_leapfrog: &mut usize,
        log_sum_weight: &mut f64,
        sum_metro: &mut f64,
    ) -> Result<(bool, Ends)> {
        if depth == 0 {
            self.leapfrog(z, sign * self.eps)?;
            *n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > self.max_delta_h {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            *sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            *z_propose = z.clone();
            let ps = self.p_sharp(z);
            *rho = add(rho, &z.p);
            let ends = Ends { p_sharp_beg: ps.clone(), p_sharp_end: ps, p_beg: z.p.clone(), p_end: z.p.clone() };
            return Ok((!self.divergent, ends));
        }
        let d = z.q.len();
        let mut lsw_init = f64::NEG_INFINITY;
        let mut rho_init = vec![0.0; d];
        let (ok, init) =
            self.build_tree(z, depth - 1, z_propose, &mut rho_init, h0, sign, n_leapfrog, &mut lsw_init, sum_metro)?;
        if !ok {
            return Ok((false, init));
        }
        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut rho_final = vec![0.0; d];
        let (ok, fin) = self.build_tree(
            z,
            depth - 1,
            &mut z_propose_final,
            &mut rho_final,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_final,
            sum_metro,
        )?;
        let ends = Ends {
            p_sharp_beg: init.p_sharp_beg.clone(),
            p_sharp_end: fin.p_sharp_end.clone(),
            p_beg: init.p_beg.clone(),
            p_end: fin.p_end.clone(),
        };
        if !ok {
            return Ok((false, ends));
        }
        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }
        let rho_subtree = add(&rho_init, &rho_final);
        *rho = add(rho, &rho_subtree);
        let mut persist = criterion(&ends.p_sharp_beg, &ends.p_sharp_end, &rho_subtree);
        persist &= criterion(&ends.p_sharp_beg, &fin.p_sharp_beg, &add(&rho_init, &fin.p_beg));
        persist &= criterion(&init.p_sharp_end, &ends.p_sharp_end, &add(&rho_final, &init.p_end));
        Ok((persist, ends))
    }

    fn transition(&mut self, current: &Point) -> Result<(Point, Transition)> {
        let mut z = current.clone();
        self.sample_momentum(&mut z);
        self.divergent = false;
        let h0 = self.hamiltonian(&z);
        let ps0 = self.p_sharp(&z);
        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();
        let mut p_sharp_fwd_fwd = ps0.clone();
        let (mut p_fwd_bck, mut p_sharp_fwd_bck) = (z.p.clone(), ps0.clone());
        let (mut p_bck_fwd, mut p_sharp_bck_fwd) = (z.p.clone(), ps0.clone());
        let mut p_sharp_bck_bck = ps0;
        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut n_leapfrog = 0;
        let mut sum_metro = 0.0;
        let mut depth = 0;
        let d = z.q.len();

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; d];
            let mut rho_bck = vec![0.0; d];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if self.rng.random::<f64>() > 0.5 {
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                let mut zz = z_fwd.clone();
                let (ok, e) = self.build_tree(
                    &mut zz,
                    depth,
                    &mut z_propose,
                    &mut rho_fwd,
                    h0,
                    1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                )?;
                z_fwd = zz;
                p_sharp_fwd_bck = e.p_sharp_beg;
                p_sharp_fwd_fwd = e.p_sharp_end;
                p_fwd_bck = e.p_beg;
                ok
            } else {
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                let mut zz = z_bck.clone();
                let (ok, e) = self.build_tree(
                    &mut zz,
                    depth,
                    &mut z_propose,
                    &mut rho_bck,
                    h0,
                    -1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                )?;
                z_bck = zz;
                p_sharp_bck_fwd = e.p_sharp_beg;
                p_sharp_bck_bck = e.p_sharp_end;
                p_bck_fwd = e.p_beg;
                ok
            };
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight || self.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample = z_propose.clone();
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &add(&rho_bck, &p_fwd_bck));
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }
        let accept = if n_leapfrog > 0 { sum_metro / n_leapfrog as f64 } else { 0.0 };
        Ok((z_sample, Transition { accept, depth, n_leapfrog, divergent: self.divergent }))
    }

    /// Double or halve the step size until a single leapfrog step's
    /// acceptance crosses 0.8.
    fn init_step_size(&mut self, current: &Point) -> Result<()> {
        let mut z = current.clone();
        self.sample_momentum(&mut z);
        let h0 = self.hamiltonian(&z);
        self.leapfrog(&mut z, self.eps)?;
        let delta = h0 - self.hamiltonian(&z);
        let up = delta > 0.8f64.ln();
        for _ in 0..100 {
            let mut z = current.clone();
            self.sample_momentum(&mut z);
            let h0 = self.hamiltonian(&z);
            self.leapfrog(&mut z, self.eps)?;
            let delta = h0 - self.hamiltonian(&z);
            if (up && !(delta > 0.8f64.ln())) || (!up && !(delta < 0.8f64.ln())) {
                break;
            }
            self.eps = if up { 2.0 * self.eps } else { 0.5 * self.eps };
            if !(self.eps < 1e7 && self.eps > 1e-300) {
                return Err(Error::invalid("NUTS step-size search diverged; the target may be improper"));
            }
        }
        Ok(())
    }
}

/// Dual averaging of the log step size.
struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    delta: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, delta: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0, delta }
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let x_eta = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }
}

/// Doubling variance-estimation windows between an initial fast phase and a
/// final step-size-only phase.
struct Windows {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_end: usize,
    counter: usize,
    sum_sq: Vec<f64>,
    n: usize,
    mean: Vec<f64>,
}

impl Windows {
    fn new(warmup: usize, dim: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if warmup < 20 {
            (init, term, base) = (warmup, 0, 0);
        } else if init + term + base > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup - init - term;
        }
        Self {
            warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            next_end: (init + base).saturating_sub(1),
            counter: 0,
            sum_sq: vec![0.0; dim],
            n: 0,
            mean: vec![0.0; dim],
        }
    }

    fn in_window(&self) -> bool {
        self.window_size > 0
            && self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
            && self.counter != self.warmup
    }

    fn at_window_end(&self) -> bool {
        self.window_size > 0 && self.counter == self.next_end && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_end == last {
            return;
        }
        self.window_size *= 2;
        self.next_end = self.counter + self.window_size;
        if self.next_end != last && self.next_end + 2 * self.window_size >= self.warmup - self.term_buffer {
            self.next_end = last;
        }
    }

    /// Welford update; returns a new regularised inverse metric at window ends.
    fn learn(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if self.in_window() {
            self.n += 1;
            for i in 0..q.len() {
                let delta = q[i] - self.mean[i];
                self.mean[i] += delta / self.n as f64;
                self.sum_sq[i] += delta * (q[i] - self.mean[i]);
            }
        }
        if self.at_window_end() {
            self.compute_next_window();
            let n = self.n as f64;
            let var: Vec<f64> = self
                .sum_sq
                .iter()
                .map(|s| {
                    let v = if n > 1.0 { s / (n - 1.0) } else { 1.0 };
                    (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))
                })
                .collect();
            self.n = 0;
            self.mean.iter_mut().for_each(|m| *m = 0.0);
            self.sum_sq.iter_mut().for_each(|m| *m = 0.0);
            self.counter += 1;
            return Some(var);
        }
        self.counter += 1;
        None
    }
}

/// Run a single chain from `init`; returns post-warmup draws in order.
pub fn nuts_sample<D: LogDensity + ?Sized>(
    target: &D,
    init: &[f64],
    config: &NutsConfig,
    rng: &RngState,
) -> Result<NutsOutput> {
    config.validate()?;
    let d = target.dim();
    if init.len() != d {
        return Err(Error::Dimension { expected: d, got: init.len() });
    }
    let (logp, grad) = target.log_density_and_grad(init)?;
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteInit);
    }
    let mut sampler = Sampler {
        target,
        inv_metric: vec![1.0; d],
        eps: config.initial_step_size,
        max_depth: config.max_depth,
        max_delta_h: config.max_delta_h,
        rng: rng.rng(),
        divergent: false,
    };
    let mut current = Point { q: init.to_vec(), p: vec![0.0; d], logp, grad };
    sampler.init_step_size(&current)?;
    let mut adapt = DualAveraging::new(sampler.eps, config.target_accept);
    let mut windows = Windows::new(config.warmup, d);
    let mut warmup_step_sizes = Vec::with_capacity(config.warmup);
    for _ in 0..config.warmup {
        warmup_step_sizes.push(sampler.eps);
        let (next, t) = sampler.transition(&current)?;
        current = next;
        sampler.eps = adapt.learn(t.accept);
        if config.adapt_metric {
            if let Some(var) = windows.learn(&current.q) {
                sampler.inv_metric = var;
                sampler.init_step_size(&current)?;
                adapt = DualAveraging::new(sampler.eps, config.target_accept);
            }
        }
    }
    if config.warmup > 0 {
        sampler.eps = adapt.x_bar.exp();
    }
    let mut draws = Vec::with_capacity(config.samples);
    let (mut accept, mut divergences, mut depth, mut leapfrog) = (0.0, 0, 0, 0);
    for _ in 0..config.samples {
        let (next, t) = sampler.transition(&current)?;
        current = next;
        accept += t.accept;
        divergences += t.divergent as usize;
        depth += t.depth;
        leapfrog += t.n_leapfrog;
        draws.push(current.q.clone());
    }
    let n = config.samples as f64;
    Ok(NutsOutput {
        draws,
        diagnostics: NutsDiagnostics {
            step_size: sampler.eps,
            warmup_step_sizes,
            mean_accept: accept / n,
            divergences,
            mean_tree_depth: depth as f64 / n,
            leapfrog_steps: leapfrog,
            inv_metric: sampler.inv_metric,
        },
    })
}

//! Adaptive replenishment SMC-ABC.
//!
//! Each generation sorts the population by discrepancy, drops the worst
//! `floor(alpha N)` particles, tightens the tolerance to the worst kept
//! discrepancy and refills the population by resampling kept particles and
//! applying `R` ABC-MCMC moves to each copy. `R` adapts to the observed move
//! acceptance rate so that a copy stays a duplicate with probability `c`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ParamVector, SimDataset, SummaryVector};
use crate::error::{Error, Result};
use crate::models::{Prior, Simulator};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discrepancy {
    Euclidean,
}

impl Discrepancy {
    pub fn eval(&self, s: &[f64], s_y: &[f64]) -> f64 {
        match self {
            Discrepancy::Euclidean => s.iter().zip(s_y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    pub population: usize,
    /// Fraction of the population dropped each generation.
    pub alpha: f64,
    /// Reported as the tolerance before the first generation.
    pub eps0: f64,
    pub eps_min: f64,
    pub p_min: f64,
    /// Target probability that a resampled particle is still a duplicate.
    pub c: f64,
    pub max_generations: usize,
    /// Consecutive invalid prior-predictive draws tolerated per particle.
    pub max_retries: usize,
    pub discrepancy: Discrepancy,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            population: 4000,
            alpha: 0.5,
            eps0: 1e6,
            eps_min: 1e-3,
            p_min: 0.10,
            c: 0.01,
            max_generations: 3,
            max_retries: 100,
            discrepancy: Discrepancy::Euclidean,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("smc.alpha must lie in (0, 1)"));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::invalid("smc.c must lie in (0, 1)"));
        }
        if self.population < 2 {
            return Err(Error::invalid("smc.population must be at least 2"));
        }
        if self.drop_count() == 0 {
            return Err(Error::invalid("smc.alpha * smc.population must be at least 1"));
        }
        if !(self.eps_min >= 0.0) || !(self.p_min >= 0.0) {
            return Err(Error::invalid("smc.eps_min and smc.p_min must be nonnegative"));
        }
        Ok(())
    }

    pub fn drop_count(&self) -> usize {
        (self.alpha * self.population as f64).floor() as usize
    }
}

/// Particles, their summaries and discrepancies to the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticlePopulation {
    pub thetas: Vec<ParamVector>,
    pub summaries: Vec<SummaryVector>,
    pub discrepancies: Vec<f64>,
    pub epsilon: f64,
    pub generation: usize,
    pub acceptance_history: Vec<f64>,
    /// Tolerance after each completed generation.
    pub tolerance_history: Vec<f64>,
    /// Moves per resampled particle used in each generation.
    pub moves_history: Vec<usize>,
}

impl ParticlePopulation {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// Exact count of simulator work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimLedger {
    /// Prior-predictive simulations, including redraws of invalid ones.
    pub init_calls: usize,
    /// Simulations run for ABC-MCMC proposals.
    pub move_calls: usize,
    /// Proposals outside the prior support, rejected without simulating.
    pub prior_rejections: usize,
    /// Simulations that returned non-finite summaries.
    pub invalid: usize,
}

impl SimLedger {
    pub fn total(&self) -> usize {
        self.init_calls + self.move_calls
    }
}

/// `max(1, ceil(log c / log(1 - p)))` with `p` clamped away from 0 and 1.
pub fn next_move_count(p_hat: f64, c: f64) -> usize {
    let p = p_hat.clamp(1e-6, 1.0 - 1e-6);
    let r = (c.ln() / (1.0 - p).ln()).ceil();
    if r.is_finite() && r > 1.0 {
        r as usize
    } else {
        1
    }
}

/// Draw `N` particles from the prior predictive, redrawing invalid simulations.
pub fn smc_init<S: Simulator + ?Sized>(
    prior: &Prior,
    simulator: &S,
    s_y: &[f64],
    config: &SmcConfig,
    rng: &RngState,
    ledger: &mut SimLedger,
) -> Result<ParticlePopulation> {
    config.validate()?;
    let draws: Vec<Result<(ParamVector, SummaryVector, usize)>> = (0..config.population)
        .into_par_iter()
        .map(|i| {
            let mut gen = rng.split(i as u64).rng();
            for attempt in 1..=config.max_retries.max(1) {
                let theta = prior.sample(&mut gen);
                let s = simulator.simulate(&theta, &mut gen)?;
                if s.is_finite() {
                    return Ok((theta, s, attempt));
                }
            }
            Err(Error::RetryExhausted { invalid: config.max_retries.max(1), attempts: config.max_retries.max(1) })
        })
        .collect();
    let mut thetas = Vec::with_capacity(config.population);
    let mut summaries = Vec::with_capacity(config.population);
    let mut attempts = 0;
    for d in draws {
        match d {
            Ok((t, s, a)) => {
                attempts += a;
                thetas.push(t);
                summaries.push(s);
            }
            Err(Error::RetryExhausted { invalid, .. }) => {
                // report the population-level invalid rate
                let done = attempts + invalid;
                ledger.init_calls += done;
                ledger.invalid += done - thetas.len();
                return Err(Error::RetryExhausted { invalid: done - thetas.len(), attempts: done });
            }
            Err(e) => return Err(e),
        }
    }
    ledger.init_calls += attempts;
    ledger.invalid += attempts - thetas.len();
    let discrepancies: Vec<f64> = summaries.iter().map(|s| config.discrepancy.eval(s, s_y)).collect();
    let epsilon = discrepancies.iter().copied().fold(0.0, f64::max);
    Ok(ParticlePopulation {
        thetas,
        summaries,
        discrepancies,
        epsilon,
        generation: 0,
        acceptance_history: Vec::new(),
        tolerance_history: Vec::new(),
        moves_history: Vec::new(),
    })
}

/// Indices sorted by discrepancy; ties keep index order.
pub fn sorted_order(discrepancies: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..discrepancies.len()).collect();
    idx.sort_by(|&a, &b| discrepancies[a].total_cmp(&discrepancies[b]));
    idx
}

/// Sample covariance (n - 1 divisor) and its lower Cholesky factor, with a
/// `1e-10 I` jitter when the covariance is not positive definite.
fn proposal_factor(thetas: &[&ParamVector]) -> Vec<f64> {
    let d = thetas[0].len();
    let n = thetas.len() as f64;
    let mut mean = vec![0.0; d];
    for t in thetas {
        for k in 0..d {
            mean[k] += t[k] / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for t in thetas {
        for a in 0..d {
            for b in 0..=a {
                cov[a * d + b] += (t[a] - mean[a]) * (t[b] - mean[b]) / (n - 1.0).max(1.0);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[b * d + a] = cov[a * d + b];
        }
    }
    if let Some(l) = cholesky(&cov, d) {
        return l;
    }
    log::warn!("SMC proposal covariance is singular; adding 1e-10 jitter");
    let mut jittered = cov.clone();
    for a in 0..d {
        jittered[a * d + a] += 1e-10;
    }
    cholesky(&jittered, d).unwrap_or_else(|| {
        let mut l = vec![0.0; d * d];
        for a in 0..d {
            l[a * d + a] = 1e-5;
        }
        l
    })
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Result of one generation.
#[derive(Debug, Clone)]
pub struct Generation {
    pub population: ParticlePopulation,
    pub p_hat: f64,
    pub next_moves: usize,
}

struct MoveResult {
    theta: ParamVector,
    summary: SummaryVector,
    rho: f64,
    accepted: usize,
    simulated: usize,
    prior_rejections: usize,
    invalid: usize,
}

/// One replenishment generation with `moves` MCMC steps per resampled particle.
#[allow(clippy::too_many_arguments)]
pub fn smc_generation<S: Simulator + ?Sized>(
    pop: &ParticlePopulation,
    prior: &Prior,
    simulator: &S,
    s_y: &[f64],
    config: &SmcConfig,
    moves: usize,
    rng: &RngState,
    ledger: &mut SimLedger,
) -> Result<Generation> {
    if moves == 0 {
        return Err(Error::invalid("SMC generation needs at least one move"));
    }
    let n = pop.len();
    let n_drop = config.drop_count();
    if n_drop >= n {
        return Err(Error::invalid("SMC drop count must be smaller than the population"));
    }
    let n_alive = n - n_drop;
    let order = sorted_order(&pop.discrepancies);
    let alive = &order[..n_alive];
    let epsilon = pop.discrepancies[alive[n_alive - 1]];
    let alive_thetas: Vec<&ParamVector> = alive.iter().map(|&i| &pop.thetas[i]).collect();
    let chol = proposal_factor(&alive_thetas);
    let d = pop.thetas[0].len();

    let mut pick = rng.child("resample").rng();
    let starts: Vec<usize> = (0..n_drop).map(|_| alive[pick.random_range(0..n_alive)]).collect();

    let moved: Vec<Result<MoveResult>> = starts
        .par_iter()
        .enumerate()
        .map(|(j, &start)| {
            let mut gen = rng.child("move").split(j as u64).rng();
            let mut theta = pop.thetas[start].clone();
            let mut summary = pop.summaries[start].clone();
            let mut rho = pop.discrepancies[start];
            let mut log_prior = prior.logpdf(&theta)?;
            let mut out = MoveResult {
                theta: ParamVector::default(),
                summary: SummaryVector::default(),
                rho: 0.0,
                accepted: 0,
                simulated: 0,
                prior_rejections: 0,
                invalid: 0,
            };
            for _ in 0..moves {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut gen)).collect();
                let proposal: Vec<f64> = (0..d)
                    .map(|a| theta[a] + (0..=a).map(|b| chol[a * d + b] * z[b]).sum::<f64>())
                    .collect();
                let u: f64 = gen.random();
                let lp = prior.logpdf(&proposal)?;
                if lp == f64::NEG_INFINITY {
                    out.prior_rejections += 1;
                    continue;
                }
                let s = simulator.simulate(&proposal, &mut gen)?;
                out.simulated += 1;
                if !s.is_finite() {
                    out.invalid += 1;
                    continue;
                }
                let r = config.discrepancy.eval(&s, s_y);
                if r <= epsilon && u.ln() < (lp - log_prior).min(0.0) {
                    theta = ParamVector(proposal);
                    summary = s;
                    rho = r;
                    log_prior = lp;
                    out.accepted += 1;
                }
            }
            out.theta = theta;
            out.summary = summary;
            out.rho = rho;
            Ok(out)
        })
        .collect();

    let mut thetas: Vec<ParamVector> = alive.iter().map(|&i| pop.thetas[i].clone()).collect();
    let mut summaries: Vec<SummaryVector> = alive.iter().map(|&i| pop.summaries[i].clone()).collect();
    let mut discrepancies: Vec<f64> = alive.iter().map(|&i| pop.discrepancies[i]).collect();
    let mut accepted = 0;
    for m in moved {
        let m = m?;
        accepted += m.accepted;
        ledger.move_calls += m.simulated;
        ledger.prior_rejections += m.prior_rejections;
        ledger.invalid += m.invalid;
        thetas.push(m.theta);
        summaries.push(m.summary);
        discrepancies.push(m.rho);
    }
    let p_hat = accepted as f64 / (n_drop * moves) as f64;
    let next_moves = next_move_count(p_hat, config.c);
    let mut acceptance_history = pop.acceptance_history.clone();
    acceptance_history.push(p_hat);
    let mut tolerance_history = pop.tolerance_history.clone();
    tolerance_history.push(epsilon);
    let mut moves_history = pop.moves_history.clone();
    moves_history.push(moves);
    Ok(Generation {
        population: ParticlePopulation {
            thetas,
            summaries,
            discrepancies,
            epsilon,
            generation: pop.generation + 1,
            acceptance_history,
            tolerance_history,
            moves_history,
        },
        p_hat,
        next_moves,
    })
}

/// Why the SMC loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxGenerations,
    MinTolerance,
    LowAcceptance,
    Budget,
}

#[derive(Debug, Clone)]
pub struct SmcRun {
    pub population: ParticlePopulation,
    pub ledger: SimLedger,
    pub stop: StopReason,
}

impl SmcRun {
    pub fn total_simulations(&self) -> usize {
        self.ledger.total()
    }
}

/// Run generations until the tolerance floor, the acceptance floor, the
/// generation cap, or the simulation budget stops the loop.
///
/// With a budget, a generation's move count is reduced so that its worst-case
/// cost `floor(alpha N) * R` fits in what remains; if not even one move per
/// particle fits, the loop stops.
pub fn run_smc_abc<S: Simulator + ?Sized>(
    prior: &Prior,
    simulator: &S,
    s_y: &[f64],
    config: &SmcConfig,
    rng: &RngState,
    budget: Option<usize>,
) -> Result<SmcRun> {
    config.validate()?;
    if let Some(b) = budget {
        if config.population > b {
            return Err(Error::Budget { needed: config.population, budget: b });
        }
    }
    let mut ledger = SimLedger::default();
    let mut pop = smc_init(prior, simulator, s_y, config, &rng.child("init"), &mut ledger)?;
    if let Some(b) = budget {
        if ledger.total() > b {
            return Err(Error::Budget { needed: ledger.total(), budget: b });
        }
    }
    let n_drop = config.drop_count();
    let mut moves = 1;
    let mut stop = StopReason::MaxGenerations;
    for t in 0..config.max_generations {
        if let Some(b) = budget {
            let remaining = b.saturating_sub(ledger.total());
            let affordable = remaining / n_drop;
            if affordable == 0 {
                stop = StopReason::Budget;
                break;
            }
            if affordable < moves {
                log::info!("SMC generation {} limited to {affordable} moves by the budget", t + 1);
                moves = affordable;
            }
        }
        let generation = smc_generation(
            &pop,
            prior,
            simulator,
            s_y,
            config,
            moves,
            &rng.split(t as u64 + 1),
            &mut ledger,
        )?;
        pop = generation.population;
        moves = generation.next_moves;
        log::debug!(
            "SMC generation {}: eps = {:.4e}, p_hat = {:.3}, next R = {}",
            pop.generation,
            pop.epsilon,
            generation.p_hat,
            moves
        );
        if pop.epsilon <= config.eps_min {
            stop = StopReason::MinTolerance;
            break;
        }
        if generation.p_hat < config.p_min {
            stop = StopReason::LowAcceptance;
            break;
        }
    }
    Ok(SmcRun { population: pop, ledger, stop })
}

/// The final particle set as a uniformly weighted training set.
pub fn smc_to_weights(pop: &ParticlePopulation) -> Result<SimDataset> {
    if pop.is_empty() {
        return Err(Error::invalid("empty particle population"));
    }
    let n = pop.len();
    SimDataset::new(pop.thetas.clone(), pop.summaries.clone(), Some(vec![1.0 / n as f64; n]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn move_count_formula() {
        assert_eq!(next_move_count(0.5, 0.01), 7);
        assert_eq!(next_move_count(1.0, 0.01), 1);
        assert_eq!(next_move_count(0.999_999_9, 0.01), 1);
        // ceil(log 0.01 / log 0.9) = ceil(43.7)
        assert_eq!(next_move_count(0.1, 0.01), 44);
    }

    #[test]
    fn cholesky_of_known_matrix() {
        let l = cholesky(&[4.0, 2.0, 2.0, 3.0], 2).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-15);
        assert!((l[2] - 1.0).abs() < 1e-15);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-15);
        assert!(cholesky(&[1.0, 1.0, 1.0, 1.0], 2).is_none());
    }

    #[test]
    fn ties_sort_by_index() {
        assert_eq!(sorted_order(&[1.0, 0.5, 1.0, 0.5]), vec![1, 3, 0, 2]);
    }
}

//! End-to-end inference methods on a benchmark task.
//!
//! Every method is assembled from labelled stages (observation, prior
//! predictive set, forest weights, SMC run, flow fits). Each stage draws from
//! its own child stream of the replicate seed, so a method gives the same
//! result whether it runs alone or alongside the others, and methods that
//! share a stage share its output.

mod metrics;

pub use metrics::{
    aggregate, ball_weights, gap_diagnostics, hpdi, log_median_distance, subset_distance, GapDiagnostics,
    MethodMetrics, ReplicateMetrics, DISTANCE_FLOOR,
};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{filter_invalid, ParamVector, SimDataset, SummaryVector};
use crate::denoise::{denoise, ErrorModel, NutsConfig, NutsDiagnostics};
use crate::error::{Error, Result};
use crate::flow::{train_flow_grouped, BoundTransform, FlowBundle, FlowConfig, FlowParams, TrainConfig, TrainedFlow};
use crate::forest::{forest_weights, TreeConfig};
use crate::models::Task;
use crate::rng::RngState;
use crate::smc::{run_smc_abc, SmcConfig, SmcRun, StopReason};
use crate::stats::{categorical_resample, ess, fit_standardiser, normalise, Standardiser};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    PrnpeSmc,
    PrnpeRf,
    Npe,
    Rnpe,
    PnpeSmc,
    PnpeRf,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Npe,
        MethodKind::Rnpe,
        MethodKind::PnpeSmc,
        MethodKind::PnpeRf,
        MethodKind::PrnpeSmc,
        MethodKind::PrnpeRf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::PrnpeSmc => "prnpe-smc",
            MethodKind::PrnpeRf => "prnpe-rf",
            MethodKind::Npe => "npe",
            MethodKind::Rnpe => "rnpe",
            MethodKind::PnpeSmc => "pnpe-smc",
            MethodKind::PnpeRf => "pnpe-rf",
        }
    }

    /// Whether observed summaries are denoised before conditioning.
    pub fn robust(self) -> bool {
        matches!(self, MethodKind::PrnpeSmc | MethodKind::PrnpeRf | MethodKind::Rnpe)
    }

    pub fn preconditioner(self) -> Preconditioner {
        match self {
            MethodKind::Npe | MethodKind::Rnpe => Preconditioner::Uniform,
            MethodKind::PrnpeSmc | MethodKind::PnpeSmc => Preconditioner::Smc,
            MethodKind::PrnpeRf | MethodKind::PnpeRf => Preconditioner::Forest,
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// How the training design is concentrated around the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    Uniform,
    Smc,
    Forest,
}

impl Preconditioner {
    pub const ALL: [Preconditioner; 3] = [Preconditioner::Uniform, Preconditioner::Smc, Preconditioner::Forest];

    pub fn label(self) -> &'static str {
        match self {
            Preconditioner::Uniform => "uniform",
            Preconditioner::Smc => "smc",
            Preconditioner::Forest => "forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Simulator calls available to each method for inference.
    pub budget: usize,
    /// Posterior draws `M`.
    pub posterior_samples: usize,
    /// Posterior draws re-simulated for the predictive distance.
    pub ppd_draws: usize,
    pub hpdi_level: f64,
    pub gap_kappa: f64,
    /// Train on a weighted resample of the design instead of weighted rows.
    /// Uniform designs are never resampled.
    pub train_on_resample: bool,
    pub smc: SmcConfig,
    pub forest: TreeConfig,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub error_model: ErrorModel,
    pub nuts: NutsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            budget: 20_000,
            posterior_samples: 2000,
            ppd_draws: 500,
            hpdi_level: 0.95,
            gap_kappa: 2.0,
            train_on_resample: true,
            smc: SmcConfig::default(),
            forest: TreeConfig::default(),
            flow: FlowConfig::default(),
            train: TrainConfig::default(),
            error_model: ErrorModel::default(),
            nuts: NutsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Budget { needed: 1, budget: 0 });
        }
        if self.posterior_samples == 0 {
            return Err(Error::invalid("posterior_samples must be positive"));
        }
        if !(self.hpdi_level > 0.0 && self.hpdi_level <= 1.0) {
            return Err(Error::invalid("hpdi_level must lie in (0, 1]"));
        }
        if !(self.gap_kappa > 1.0) {
            return Err(Error::invalid("gap_kappa must exceed 1"));
        }
        self.smc.validate()?;
        self.forest.validate()?;
        self.flow.validate()?;
        self.train.validate()?;
        self.error_model.validate()?;
        self.nuts.validate()
    }
}

/// Simulator calls made for one method on one replicate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub budget: usize,
    pub prior_predictive: usize,
    pub smc_init: usize,
    pub smc_moves: usize,
    /// Calls (already counted above) that returned non-finite summaries.
    pub invalid: usize,
    /// Evaluation-time calls for the predictive distance, outside the budget.
    pub ppd: usize,
}

impl BudgetLedger {
    pub fn inference(&self) -> usize {
        self.prior_predictive + self.smc_init + self.smc_moves
    }

    pub fn total(&self) -> usize {
        self.inference() + self.ppd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcSummary {
    pub generations: usize,
    pub tolerances: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub moves: Vec<usize>,
    pub stop: StopReason,
}

/// The weighted design a method's flows were fit to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub preconditioner: Preconditioner,
    pub rows: usize,
    pub ess: f64,
    /// Distance moments to the observation on the raw summary scale.
    pub gap: GapDiagnostics,
    pub smc: Option<SmcSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub best_validation: f64,
}

impl From<&TrainedFlow> for FitSummary {
    fn from(t: &TrainedFlow) -> Self {
        Self {
            epochs: t.train_history.len(),
            best_epoch: t.best_epoch,
            initial_train_loss: t.initial_train_loss,
            final_train_loss: t.final_train_loss,
            best_validation: t.best_validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseSummary {
    /// Mean `s_tilde - s_y` per coordinate, in standardised units.
    pub shift: Vec<f64>,
    pub slab_responsibility: Vec<f64>,
    pub nuts: NutsDiagnostics,
}

#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub method: MethodKind,
    pub seed: u64,
    pub observation: SummaryVector,
    pub draws: Vec<ParamVector>,
    /// Denoised summaries on the raw scale (robust methods only).
    pub latent: Option<Vec<SummaryVector>>,
    pub conditional: FlowBundle,
    pub ledger: BudgetLedger,
    pub training: TrainingSummary,
    pub conditional_fit: FitSummary,
    pub marginal_fit: Option<FitSummary>,
    pub denoising: Option<DenoiseSummary>,
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (values.iter().map(|v| (v - m).exp()).sum::<f64>() / values.len() as f64).ln()
}

/// `log (1/M) sum_m q(theta | s_m)` over the latent summaries, or
/// `log q(theta | s_y)` for non-robust methods; `-inf` outside the support.
pub fn ensemble_logpdf(result: &PosteriorResult, theta: &[f64]) -> Result<f64> {
    let lps = match &result.latent {
        Some(latent) => result.conditional.log_prob_each(theta, latent)?,
        None => result.conditional.log_prob_each(theta, std::slice::from_ref(&result.observation))?,
    };
    Ok(log_mean_exp(&lps))
}

struct Fitted {
    conditional: FlowBundle,
    conditional_fit: FitSummary,
    summary_std: Standardiser,
    /// Standardised training summaries, weights and resample groups, kept for
    /// the marginal fit.
    design: (Vec<Vec<f64>>, Vec<f64>, Vec<usize>),
    marginal: Option<(FlowParams, FitSummary)>,
    training: TrainingSummary,
    ledger: BudgetLedger,
}

/// Lazily computed stages of one replicate.
struct Stages<'a> {
    task: &'a dyn Task,
    cfg: &'a PipelineConfig,
    root: RngState,
    observation: SummaryVector,
    prior_predictive: Option<(SimDataset, usize)>,
    forest: Option<Vec<f64>>,
    smc: Option<SmcRun>,
    fitted: HashMap<Preconditioner, Fitted>,
}

impl<'a> Stages<'a> {
    fn new(task: &'a dyn Task, cfg: &'a PipelineConfig, seed: u64) -> Result<Self> {
        let root = RngState::new(seed, 0);
        let observation = task.observe(&mut root.child("observe").rng())?;
        if !observation.is_finite() {
            return Err(Error::invalid("observed summaries are not finite"));
        }
        Ok(Self {
            task,
            cfg,
            root,
            observation,
            prior_predictive: None,
            forest: None,
            smc: None,
            fitted: HashMap::new(),
        })
    }

    fn prior_predictive(&mut self) -> Result<&(SimDataset, usize)> {
        if self.prior_predictive.is_none() {
            let rng = self.root.child("prior-predictive");
            let prior = self.task.prior();
            let task = self.task;
            let rows: Vec<(ParamVector, SummaryVector)> = (0..self.cfg.budget)
                .into_par_iter()
                .map(|i| {
                    let mut r = rng.split(i as u64).rng();
                    let theta = prior.sample(&mut r);
                    let s = task.simulate(&theta, &mut r)?;
                    Ok((theta, s))
                })
                .collect::<Result<_>>()?;
            let (thetas, summaries) = rows.into_iter().unzip();
            let (ds, invalid) = filter_invalid(&SimDataset::new(thetas, summaries, None)?)?;
            if invalid > 0 {
                log::info!("{invalid} prior-predictive simulations were non-finite and dropped");
            }
            self.prior_predictive = Some((ds, invalid));
        }
        Ok(self.prior_predictive.as_ref().expect("set above"))
    }

    fn forest(&mut self) -> Result<Vec<f64>> {
        if self.forest.is_none() {
            let rng = self.root.child("forest");
            self.prior_predictive()?;
            let (ds, _) = self.prior_predictive.as_ref().expect("set above");
            let w = forest_weights(ds, &self.observation, &self.cfg.forest, &rng)?;
            self.forest = Some(w);
        }
        Ok(self.forest.clone().expect("set above"))
    }

    fn smc(&mut self) -> Result<&SmcRun> {
        if self.smc.is_none() {
            let run = run_smc_abc(
                &self.task.prior(),
                self.task,
                &self.observation,
                &self.cfg.smc,
                &self.root.child("smc"),
                Some(self.cfg.budget),
            )?;
            self.smc = Some(run);
        }
        Ok(self.smc.as_ref().expect("set above"))
    }

    /// Training design, ledger and summary for a preconditioner.
    fn design(&mut self, p: Preconditioner) -> Result<(SimDataset, Vec<f64>, BudgetLedger, Option<SmcSummary>)> {
        let budget = self.cfg.budget;
        Ok(match p {
            Preconditioner::Uniform | Preconditioner::Forest => {
                let weights = match p {
                    Preconditioner::Forest => self.forest()?,
                    _ => vec![1.0; self.prior_predictive()?.0.len()],
                };
                let (ds, invalid) = self.prior_predictive()?;
                let ledger = BudgetLedger { budget, prior_predictive: budget, invalid: *invalid, ..Default::default() };
                (ds.clone(), normalise(&weights)?, ledger, None)
            }
            Preconditioner::Smc => {
                let run = self.smc()?;
                let pop = &run.population;
                let ds = SimDataset::new(pop.thetas.clone(), pop.summaries.clone(), None)?;
                let ledger = BudgetLedger {
                    budget,
                    smc_init: run.ledger.init_calls,
                    smc_moves: run.ledger.move_calls,
                    invalid: run.ledger.invalid,
                    ..Default::default()
                };
                let summary = SmcSummary {
                    generations: pop.generation,
                    tolerances: pop.tolerance_history.clone(),
                    acceptance: pop.acceptance_history.clone(),
                    moves: pop.moves_history.clone(),
                    stop: run.stop,
                };
                let n = ds.len();
                (ds, vec![1.0 / n as f64; n], ledger, Some(summary))
            }
        })
    }

    fn fitted(&mut self, p: Preconditioner, marginal: bool) -> Result<&Fitted> {
        if !self.fitted.contains_key(&p) {
            let fitted = self.fit_conditional(p)?;
            self.fitted.insert(p, fitted);
        }
        if marginal && self.fitted[&p].marginal.is_none() {
            let rng = self.root.child("train").child(p.label()).child("marginal");
            let f = self.fitted.get_mut(&p).expect("inserted above");
            let rows: Vec<&[f64]> = f.design.0.iter().map(|r| &r[..]).collect();
            let empty: Vec<&[f64]> = vec![&[]; rows.len()];
            let trained =
                train_flow_grouped(&rows, &empty, &f.design.1, &f.design.2, &self.cfg.flow, &self.cfg.train, &rng)?;
            log::info!("{} marginal flow: {} epochs", p.label(), trained.train_history.len());
            let fit = FitSummary::from(&trained);
            f.marginal = Some((trained.params, fit));
        }
        Ok(&self.fitted[&p])
    }

    fn fit_conditional(&mut self, p: Preconditioner) -> Result<Fitted> {
        let (ds, weights, ledger, smc) = self.design(p)?;
        if ledger.inference() > self.cfg.budget {
            return Err(Error::Budget { needed: ledger.inference(), budget: self.cfg.budget });
        }
        let gap = gap_diagnostics(&ds, &weights, &self.observation, self.cfg.gap_kappa)?;
        let training = TrainingSummary { preconditioner: p, rows: ds.len(), ess: ess(&weights)?, gap, smc };
        let rng = self.root.child("train").child(p.label());
        let uniform = weights.iter().all(|&w| (w - weights[0]).abs() <= 1e-12 * weights[0]);
        let (ds, weights, groups) = if self.cfg.train_on_resample && !uniform {
            let idx = categorical_resample(&weights, ds.len(), &rng.child("resample"))?;
            (ds.select(&idx), vec![1.0 / ds.len() as f64; ds.len()], idx)
        } else {
            let n = ds.len();
            (ds, weights, (0..n).collect())
        };

        let bound = BoundTransform::from_supports(&self.task.prior().supports());
        let z: Vec<Vec<f64>> = ds.thetas.iter().map(|t| Ok(bound.apply(t)?.0)).collect::<Result<_>>()?;
        let theta_std = fit_standardiser(&z, &weights)?;
        let summary_std = fit_standardiser(&ds.summaries, &weights)?;
        let targets: Vec<Vec<f64>> = z.iter().map(|r| theta_std.transform(r)).collect();
        let conds: Vec<Vec<f64>> = ds.summaries.iter().map(|s| summary_std.transform(s)).collect();
        let t_rows: Vec<&[f64]> = targets.iter().map(|r| &r[..]).collect();
        let c_rows: Vec<&[f64]> = conds.iter().map(|r| &r[..]).collect();
        let trained = train_flow_grouped(
            &t_rows,
            &c_rows,
            &weights,
            &groups,
            &self.cfg.flow,
            &self.cfg.train,
            &rng.child("conditional"),
        )?;
        log::info!("{} conditional flow: {} epochs", p.label(), trained.train_history.len());
        let conditional_fit = FitSummary::from(&trained);
        let conditional = FlowBundle::new(trained.params, theta_std, Some(summary_std.clone()), bound)?;
        Ok(Fitted {
            conditional,
            conditional_fit,
            summary_std,
            design: (conds, weights, groups),
            marginal: None,
            training,
            ledger,
        })
    }

    fn run(&mut self, method: MethodKind, seed: u64) -> Result<PosteriorResult> {
        let p = method.preconditioner();
        let cfg = self.cfg;
        let observation = self.observation.clone();
        let rng = self.root.child(method.name());
        let f = self.fitted(p, method.robust())?;
        let m = cfg.posterior_samples;
        let (draws, latent, denoising) = if method.robust() {
            let (marginal, _) = f.marginal.as_ref().expect("fitted with marginal");
            let s_y = f.summary_std.transform(&observation);
            let out = denoise(&cfg.error_model, marginal, &s_y, &cfg.nuts, &rng.child("denoise"))?;
            let latent: Vec<SummaryVector> =
                out.draws.iter().map(|s| SummaryVector(f.summary_std.inverse(s))).collect();
            // One posterior draw per latent, cycling when M exceeds the chain.
            let conds: Vec<&SummaryVector> = (0..m).map(|i| &latent[i % latent.len()]).collect();
            let draws = f.conditional.sample_each(&conds, &rng.child("posterior"))?;
            let summary =
                DenoiseSummary { shift: out.shift, slab_responsibility: out.slab_responsibility, nuts: out.nuts };
            (draws, Some(latent), Some(summary))
        } else {
            (f.conditional.sample(Some(&observation), m, &rng.child("posterior"))?, None, None)
        };
        Ok(PosteriorResult {
            method,
            seed,
            observation,
            draws: draws.into_iter().map(ParamVector).collect(),
            latent,
            conditional: f.conditional.clone(),
            ledger: f.ledger.clone(),
            training: f.training.clone(),
            conditional_fit: f.conditional_fit.clone(),
            marginal_fit: f.marginal.as_ref().filter(|_| method.robust()).map(|(_, s)| s.clone()),
            denoising,
        })
    }
}

/// Posterior draws re-simulated and compared with the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictive {
    pub summaries: Vec<SummaryVector>,
    /// Distances over the task's compatible summaries.
    pub distances: Vec<f64>,
    pub log_median_distance: f64,
}

/// Simulate at up to `n` posterior draws (a fixed-seed subsample when there
/// are more) and record the calls in the result's ledger.
pub fn posterior_predictive(
    task: &dyn Task,
    result: &mut PosteriorResult,
    n: usize,
    rng: &RngState,
) -> Result<Predictive> {
    let total = result.draws.len();
    let mut idx: Vec<usize> = if n >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(&mut rng.child("subsample").rng(), total, n).into_vec()
    };
    idx.sort_unstable();
    let coords = task.compatible_summaries();
    let sims: Vec<SummaryVector> = idx
        .par_iter()
        .enumerate()
        .map(|(j, &i)| task.simulate(&result.draws[i], &mut rng.split(j as u64).rng()))
        .collect::<Result<_>>()?;
    result.ledger.ppd += sims.len();
    let distances: Vec<f64> = sims
        .iter()
        .map(|s| {
            let d = subset_distance(s, &result.observation, &coords);
            if d.is_nan() {
                f64::INFINITY
            } else {
                d
            }
        })
        .collect();
    let log_median_distance = log_median_distance(&distances)?;
    Ok(Predictive { summaries: sims, distances, log_median_distance })
}

/// A method's posterior on one replicate with its evaluation.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub result: PosteriorResult,
    pub metrics: ReplicateMetrics,
    pub predictive: Option<Predictive>,
}

/// Everything written to a per-replicate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub task: String,
    pub method: MethodKind,
    pub seed: u64,
    pub observation: SummaryVector,
    pub pseudo_truth: ParamVector,
    pub metrics: ReplicateMetrics,
    /// Ensemble log density at the pseudo-truth.
    pub log_density_at_truth: f64,
    pub ledger: BudgetLedger,
    pub training: TrainingSummary,
    pub conditional_fit: FitSummary,
    pub marginal_fit: Option<FitSummary>,
    pub denoising: Option<DenoiseSummary>,
    pub draws: Vec<ParamVector>,
    pub predictive: Option<Predictive>,
}

impl MethodRun {
    pub fn report(&self, task: &dyn Task) -> Result<ReplicateReport> {
        let truth = task.pseudo_truth();
        let r = &self.result;
        Ok(ReplicateReport {
            task: task.name().to_string(),
            method: r.method,
            seed: r.seed,
            observation: r.observation.clone(),
            log_density_at_truth: ensemble_logpdf(r, &truth)?,
            pseudo_truth: truth,
            metrics: self.metrics.clone(),
            ledger: r.ledger.clone(),
            training: r.training.clone(),
            conditional_fit: r.conditional_fit.clone(),
            marginal_fit: r.marginal_fit.clone(),
            denoising: r.denoising.clone(),
            draws: r.draws.clone(),
            predictive: self.predictive.clone(),
        })
    }
}

fn evaluate(task: &dyn Task, mut result: PosteriorResult, cfg: &PipelineConfig) -> Result<MethodRun> {
    let predictive = if cfg.ppd_draws > 0 {
        let rng = RngState::new(result.seed, 0).child(result.method.name()).child("ppd");
        Some(posterior_predictive(task, &mut result, cfg.ppd_draws, &rng)?)
    } else {
        None
    };
    let metrics =
        ReplicateMetrics::from_draws(&result.draws, cfg.hpdi_level, predictive.as_ref().map(|p| p.log_median_distance))?;
    Ok(MethodRun { result, metrics, predictive })
}

/// Run several methods on the replicate with the given seed, sharing stages.
///
/// The outer error covers failures before any method runs (invalid config,
/// observation); each method then succeeds or fails on its own.
pub fn run_replicate(
    task: &dyn Task,
    methods: &[MethodKind],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<(MethodKind, Result<MethodRun>)>> {
    cfg.validate()?;
    let mut stages = Stages::new(task, cfg, seed)?;
    Ok(methods
        .iter()
        .map(|&m| {
            let out = stages.run(m, seed).and_then(|r| evaluate(task, r, cfg));
            if let Err(e) = &out {
                log::warn!("{} seed {seed}: {m} failed: {e}", task.name());
            }
            (m, out)
        })
        .collect())
}

/// Posterior for a single method, without predictive evaluation.
pub fn run_method(task: &dyn Task, method: MethodKind, cfg: &PipelineConfig, seed: u64) -> Result<PosteriorResult> {
    cfg.validate()?;
    Stages::new(task, cfg, seed)?.run(method, seed)
}

/// A preconditioned training design before any flow is fitted.
#[derive(Debug, Clone)]
pub struct Design {
    pub summary: TrainingSummary,
    pub dataset: SimDataset,
    /// Normalised weights.
    pub weights: Vec<f64>,
    /// Distances to the observation, SMC designs only.
    pub discrepancies: Option<Vec<f64>>,
}

/// Each preconditioner's design for one observation with its weighted-moment
/// diagnostics, without fitting any flows.
pub fn design_diagnostics(
    task: &dyn Task,
    preconditioners: &[Preconditioner],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<Design>> {
    cfg.validate()?;
    let mut stages = Stages::new(task, cfg, seed)?;
    preconditioners
        .iter()
        .map(|&p| {
            let (dataset, weights, _, smc) = stages.design(p)?;
            let gap = gap_diagnostics(&dataset, &weights, &stages.observation, cfg.gap_kappa)?;
            let summary = TrainingSummary { preconditioner: p, rows: dataset.len(), ess: ess(&weights)?, gap, smc };
            let discrepancies = match p {
                Preconditioner::Smc => Some(stages.smc()?.population.discrepancies.clone()),
                _ => None,
            };
            Ok(Design { summary, dataset, weights, discrepancies })
        })
        .collect()
}

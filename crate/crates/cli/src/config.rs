//! Run configuration: defaults, TOML/JSON files and dotted overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use prnpe_core::denoise::{ErrorModel, NutsConfig};
use prnpe_core::flow::{FlowConfig, TrainConfig};
use prnpe_core::forest::TreeConfig;
use prnpe_core::models::{LinearGaussianTask, SvarTask, Task, WeibullTask};
use prnpe_core::pipeline::{MethodKind, PipelineConfig};
use prnpe_core::smc::SmcConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Environment variable naming the default output directory.
pub const OUTDIR_ENV: &str = "PRNPE_OUTDIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Weibull,
    Svar,
    LinearGaussianToy,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Weibull => "weibull",
            TaskKind::Svar => "svar",
            TaskKind::LinearGaussianToy => "linear-gaussian-toy",
        })
    }
}

/// Fully resolved experiment configuration.
///
/// Replicate `i` uses seed `seed + i`. Every section falls back to its
/// defaults, and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub methods: Vec<MethodKind>,
    pub seed: u64,
    pub replicates: usize,
    /// Replicates run concurrently.
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
    /// Simulator calls available to each method's inference.
    pub budget: usize,
    pub posterior_samples: usize,
    /// Posterior draws re-simulated for the predictive distance.
    pub ppd_draws: usize,
    pub hpdi_level: f64,
    pub gap_kappa: f64,
    pub train_on_resample: bool,
    pub smc: SmcConfig,
    pub forest: TreeConfig,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub error_model: ErrorModel,
    pub nuts: NutsConfig,
    pub weibull: WeibullTask,
    pub svar: SvarTask,
    pub toy: LinearGaussianTask,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            task: TaskKind::Weibull,
            methods: MethodKind::ALL.to_vec(),
            seed: 0,
            replicates: 1,
            workers: 1,
            output_dir: None,
            budget: p.budget,
            posterior_samples: p.posterior_samples,
            ppd_draws: p.ppd_draws,
            hpdi_level: p.hpdi_level,
            gap_kappa: p.gap_kappa,
            train_on_resample: p.train_on_resample,
            smc: p.smc,
            forest: p.forest,
            flow: p.flow,
            train: p.train,
            error_model: p.error_model,
            nuts: p.nuts,
            weibull: WeibullTask::default(),
            svar: SvarTask::default(),
            toy: LinearGaussianTask::default(),
        }
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            budget: self.budget,
            posterior_samples: self.posterior_samples,
            ppd_draws: self.ppd_draws,
            hpdi_level: self.hpdi_level,
            gap_kappa: self.gap_kappa,
            train_on_resample: self.train_on_resample,
            smc: self.smc.clone(),
            forest: self.forest.clone(),
            flow: self.flow.clone(),
            train: self.train.clone(),
            error_model: self.error_model.clone(),
            nuts: self.nuts.clone(),
        }
    }

    pub fn build_task(&self) -> Box<dyn Task> {
        match self.task {
            TaskKind::Weibull => Box::new(self.weibull.clone()),
            TaskKind::Svar => Box::new(self.svar.clone()),
            TaskKind::LinearGaussianToy => Box::new(self.toy.clone()),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|i| self.seed + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!("methods: at least one method is required");
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            bail!("methods: duplicate entries");
        }
        if self.replicates == 0 {
            bail!("replicates must be at least 1");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        self.seed.checked_add(self.replicates as u64).ok_or_else(|| anyhow!("seed: range overflows"))?;
        self.pipeline().validate()?;
        match self.task {
            TaskKind::Weibull => self.weibull.validate()?,
            TaskKind::Svar => self.svar.validate()?,
            TaskKind::LinearGaussianToy => self.toy.validate()?,
        }
        Ok(())
    }

    /// Output directory: the config value, then `PRNPE_OUTDIR`, then `results`.
    pub fn resolve_output_dir(&mut self, flag: Option<PathBuf>) {
        if let Some(dir) = flag {
            self.output_dir = Some(dir);
        } else if self.output_dir.is_none() {
            let env = std::env::var_os(OUTDIR_ENV).filter(|v| !v.is_empty());
            self.output_dir = Some(env.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results")));
        }
    }
}

/// Parse `key=value` where `value` is a TOML literal, falling back to a bare
/// string.
fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| anyhow!("override '{spec}' is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override '{spec}' has an empty key");
    }
    let raw = raw.trim();
    let value = match toml::from_str::<Map<String, Value>>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn set_path(root: &mut Map<String, Value>, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = root;
    for (i, k) in parents.iter().enumerate() {
        let entry = cur.entry(k.clone()).or_insert_with(|| Value::Object(Map::new()));
        cur = entry.as_object_mut().ok_or_else(|| anyhow!("{}: not a section", path[..=i].join(".")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn read_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let value: Value = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => bail!("{}: top level must be a table", path.display()),
    }
}

/// Defaults, then the file (TOML, or JSON by extension), then overrides.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut root = match path {
        Some(p) => read_file(p)?,
        None => Map::new(),
    };
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        set_path(&mut root, &key, value)?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(Value::Object(root)).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            anyhow!("{}", e.into_inner())
        } else {
            anyhow!("{path}: {}", e.into_inner())
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

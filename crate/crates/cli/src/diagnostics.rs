//! Pseudo-truth and preconditioning diagnostics.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use prnpe_core::models::{weibull_pseudo_true, PseudoTruth};
use prnpe_core::pipeline::Design;
use prnpe_core::ParamVector;

use crate::config::{RunConfig, TaskKind};

/// The configured task's pseudo-true parameter. Weibull runs its grid
/// search; the other tasks report their data-generating parameter.
pub fn pseudo_truth(cfg: &RunConfig) -> PseudoTruth {
    match cfg.task {
        TaskKind::Weibull => weibull_pseudo_true(&cfg.weibull),
        TaskKind::Svar => PseudoTruth { theta_star: ParamVector(cfg.svar.theta_star.clone()), objective: 0.0, at_boundary: false },
        TaskKind::LinearGaussianToy => {
            PseudoTruth { theta_star: ParamVector(vec![cfg.toy.true_theta]), objective: 0.0, at_boundary: false }
        }
    }
}

/// Write each design as `<dir>/<preconditioner>.csv` with columns
/// `theta_*`, `s_*`, `weight` and, for SMC, `discrepancy`.
pub fn dump_designs(designs: &[Design], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for d in designs {
        let path = dir.join(format!("{}.csv", d.summary.preconditioner.label()));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        let (dt, ds) = (d.dataset.thetas[0].len(), d.dataset.summaries[0].len());
        let mut head: Vec<String> = (0..dt).map(|j| format!("theta_{j}")).collect();
        head.extend((0..ds).map(|j| format!("s_{j}")));
        head.push("weight".into());
        if d.discrepancies.is_some() {
            head.push("discrepancy".into());
        }
        w.write_record(&head)?;
        for i in 0..d.dataset.len() {
            let mut rec: Vec<String> = d.dataset.thetas[i].iter().map(|v| v.to_string()).collect();
            rec.extend(d.dataset.summaries[i].iter().map(|v| v.to_string()));
            rec.push(d.weights[i].to_string());
            if let Some(disc) = &d.discrepancies {
                rec.push(disc[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

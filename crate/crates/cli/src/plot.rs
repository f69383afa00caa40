//! Minimal SVG output: posterior densities and predictive scatter plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::Value;

use crate::config::RunConfig;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
pub const MARGIN: f64 = 50.0;
const GRID: usize = 200;

/// Linear map from data coordinates to the plot area.
#[derive(Debug, Clone, Copy)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub start: f64,
    pub len: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, start: f64, len: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, start, len }
    }

    pub fn to_px(&self, v: f64) -> f64 {
        self.start + (v - self.lo) / (self.hi - self.lo) * self.len
    }
}

fn x_axis(lo: f64, hi: f64) -> Axis {
    Axis::new(lo, hi, MARGIN, WIDTH - 2.0 * MARGIN)
}

/// Vertical axes grow upwards.
fn y_axis(lo: f64, hi: f64) -> Axis {
    Axis::new(lo, hi, HEIGHT - MARGIN, -(HEIGHT - 2.0 * MARGIN))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Gaussian kernel density on a grid, Silverman bandwidth.
pub fn kde(samples: &[f64], lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * (m - 1.0)).round() as usize).min(sorted.len() - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = (0.9 * spread * m.powf(-0.2)).max(1e-9 * (1.0 + mean.abs()));
    let norm = 1.0 / (m * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..n)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let d: f64 = samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum();
            (x, d * norm)
        })
        .collect()
}

fn header(title: &str, x: &Axis, y: &Axis) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="25" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    writeln!(
        s,
        r#"<g id="frame" data-x-lo="{}" data-x-hi="{}" data-y-lo="{}" data-y-hi="{}">"#,
        x.lo, x.hi, y.lo, y.hi
    )
    .unwrap();
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t).unwrap();
    for (v, anchor, px, py) in [
        (x.lo, "start", l, b + 18.0),
        (x.hi, "end", r, b + 18.0),
    ] {
        writeln!(s, r#"<text x="{px}" y="{py}" text-anchor="{anchor}" font-size="11">{v:.4}</text>"#).unwrap();
    }
    s.push_str("</g>\n");
    s
}

fn finite_range(v: &[f64]) -> Option<(f64, f64)> {
    let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if f.is_empty() {
        return None;
    }
    Some((f.iter().copied().fold(f64::INFINITY, f64::min), f.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
}

/// Density of one parameter's draws with a vertical line at `truth`.
pub fn density_svg(title: &str, samples: &[f64], truth: f64) -> Result<String> {
    let draws: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if draws.is_empty() {
        bail!("no posterior draws to plot");
    }
    let (mut lo, mut hi) = finite_range(&draws).expect("nonempty");
    if truth.is_finite() {
        lo = lo.min(truth);
        hi = hi.max(truth);
    }
    let pad = 0.05 * (hi - lo).max(1e-6);
    let (lo, hi) = (lo - pad, hi + pad);
    let curve = kde(&draws, lo, hi, GRID);
    let top = curve.iter().map(|p| p.1).fold(0.0, f64::max) * 1.05;
    let x = x_axis(lo, hi);
    let y = y_axis(0.0, if top > 0.0 { top } else { 1.0 });
    let mut s = header(title, &x, &y);
    let pts: Vec<String> = curve.iter().map(|&(a, d)| format!("{:.3},{:.3}", x.to_px(a), y.to_px(d))).collect();
    writeln!(s, r#"<polyline class="density" fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, pts.join(" "))
        .unwrap();
    if truth.is_finite() {
        let px = x.to_px(truth);
        writeln!(
            s,
            r#"<line class="truth" data-value="{truth}" x1="{px}" x2="{px}" y1="{}" y2="{}" stroke="firebrick" stroke-dasharray="4 3"/>"#,
            MARGIN,
            HEIGHT - MARGIN
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn quantile_range(v: &[f64]) -> Option<(f64, f64)> {
    let mut f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if f.is_empty() {
        return None;
    }
    f.sort_by(f64::total_cmp);
    let q = |p: f64| f[((p * (f.len() - 1) as f64).round() as usize).min(f.len() - 1)];
    Some((q(0.01), q(0.99)))
}

/// Scatter of simulated summaries `(a, b)` with the observed pair marked.
/// Points beyond the central 98% on either axis are left out.
pub fn predictive_svg(title: &str, points: &[(f64, f64)], observed: (f64, f64)) -> Result<String> {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (Some((mut x0, mut x1)), Some((mut y0, mut y1))) = (quantile_range(&xs), quantile_range(&ys)) else {
        bail!("no finite predictive summaries to plot");
    };
    x0 = x0.min(observed.0);
    x1 = x1.max(observed.0);
    y0 = y0.min(observed.1);
    y1 = y1.max(observed.1);
    let (px, py) = (0.05 * (x1 - x0).max(1e-6), 0.05 * (y1 - y0).max(1e-6));
    let x = x_axis(x0 - px, x1 + px);
    let y = y_axis(y0 - py, y1 + py);
    let mut s = header(title, &x, &y);
    s.push_str("<g class=\"predictive\" fill=\"steelblue\" fill-opacity=\"0.4\">\n");
    for &(a, b) in points {
        if a.is_finite() && b.is_finite() && (x.lo..=x.hi).contains(&a) && (y.lo..=y.hi).contains(&b) {
            writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="2"/>"#, x.to_px(a), y.to_px(b)).unwrap();
        }
    }
    s.push_str("</g>\n");
    writeln!(
        s,
        r#"<circle class="observed" data-value="{} {}" cx="{:.3}" cy="{:.3}" r="5" fill="firebrick"/>"#,
        observed.0,
        observed.1,
        x.to_px(observed.0),
        y.to_px(observed.1)
    )
    .unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().map(|a| a.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect()).unwrap_or_default()
}

fn rows(v: &Value) -> Vec<Vec<f64>> {
    v.as_array().map(|a| a.iter().map(floats).collect()).unwrap_or_default()
}

/// Write `<task>-<method>-<stem>.density.svg` and, when the report has
/// predictive simulations, the matching `.predictive.svg`. Returns the files
/// written.
///
/// Reports store non-finite floats as `null`; they are read back as NaN.
pub fn plot_report(path: &Path, out_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let config: RunConfig = serde_json::from_value(file["config"].clone())
        .with_context(|| format!("{}: missing or invalid config echo", path.display()))?;
    let report = &file["report"];
    if file["status"] != "ok" || report.is_null() {
        bail!("{}: replicate failed: {}", path.display(), file["error"].as_str().unwrap_or("no report"));
    }
    let task = config.build_task();
    let focus = task.focus_parameter();
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let method = report["method"].as_str().unwrap_or("unknown");
    let seed = report["seed"].as_u64().unwrap_or(0);
    let prefix = format!("{}-{method}-{stem}", task.name());
    let draws: Vec<f64> = rows(&report["draws"]).iter().filter_map(|t| t.get(focus).copied()).collect();
    let truth = floats(&report["pseudo_truth"]).get(focus).copied().unwrap_or(f64::NAN);
    let title = format!("{} {method} seed {seed}: posterior of parameter {focus}", task.name());
    let mut written = Vec::new();
    let density = dir.join(format!("{prefix}.density.svg"));
    fs::write(&density, density_svg(&title, &draws, truth)?)?;
    written.push(density);
    let coords = task.compatible_summaries();
    let sims = rows(&report["predictive"]["summaries"]);
    if !sims.is_empty() && coords.len() >= 2 {
        let (a, b) = (coords[0], coords[1]);
        let pts: Vec<(f64, f64)> = sims.iter().map(|s| (s[a], s[b])).collect();
        let obs = floats(&report["observation"]);
        let title = format!("{} {method} seed {seed}: predictive summaries {a} and {b}", task.name());
        let file = dir.join(format!("{prefix}.predictive.svg"));
        fs::write(&file, predictive_svg(&title, &pts, (obs[a], obs[b]))?)?;
        written.push(file);
    }
    Ok(written)
}

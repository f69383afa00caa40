mod common;

use common::{ks_critical, mean, var};
use prnpe_core::denoise::{
    denoise, error_logpdf, error_logpdf_grad, nuts_sample, slab_responsibility, DenoiseTarget, ErrorModel, FnDensity,
    LogDensity, NutsConfig, SlabFamily,
};
use prnpe_core::flow::{FlowConfig, FlowParams};
use prnpe_core::RngState;
use rand::Rng as _;
use statrs::distribution::{Cauchy, Continuous, ContinuousCDF, Normal};

fn standard_normal_flow(dim: usize) -> FlowParams {
    let config = FlowConfig { layers: 2, hidden: 16, ..FlowConfig::default() };
    FlowParams::new(config, dim, 0, &RngState::new(0, 0)).unwrap()
}

fn gaussian_em(sigma: f64) -> ErrorModel {
    ErrorModel { sigma_spike: sigma, gamma: 0.0, ..ErrorModel::default() }
}

fn normal_target(
    dim: usize,
    precision: Vec<Vec<f64>>,
) -> FnDensity<impl Fn(&[f64]) -> prnpe_core::Result<(f64, Vec<f64>)>> {
    FnDensity {
        dim,
        f: move |x: &[f64]| {
            let g: Vec<f64> = precision.iter().map(|row| -row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).collect();
            let lp = 0.5 * g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            Ok((lp, g))
        },
    }
}

fn one_sample_ks(x: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = x.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn column(draws: &[Vec<f64>], k: usize) -> Vec<f64> {
    draws.iter().map(|d| d[k]).collect()
}

#[test]
fn error_density_at_zero_offset() {
    let em = ErrorModel::default();
    let got = error_logpdf(&em, &[0.3], &[0.3]).unwrap();
    let want = (0.5 / ((2.0 * std::f64::consts::PI).sqrt() * 0.01) + 0.5 / (std::f64::consts::PI * 0.25)).ln();
    assert!((got - want).abs() < 1e-12);
    assert!(error_logpdf(&em, &[0.3, 1.0], &[0.3]).is_err());
    assert!(error_logpdf_grad(&em, &[0.3], &[0.3, 1.0]).is_err());
}

#[test]
fn error_density_degenerate_and_tail() {
    let em = gaussian_em(0.01);
    let s_y = [0.1, -0.2, 0.05];
    let s = [0.11, -0.19, 0.0];
    let n = Normal::new(0.0, 0.01).unwrap();
    let want: f64 = s_y.iter().zip(&s).map(|(a, b)| n.ln_pdf(a - b)).sum();
    assert!((error_logpdf(&em, &s_y, &s).unwrap() - want).abs() < 1e-9);
    let g = error_logpdf_grad(&em, &s_y, &s).unwrap();
    for k in 0..3 {
        assert!((g[k] - (s_y[k] - s[k]) / 1e-4).abs() < 1e-6 * (1.0 + g[k].abs()));
    }

    let em = ErrorModel::default();
    let tail = error_logpdf(&em, &[10.0], &[0.0]).unwrap();
    let c = Cauchy::new(0.0, 0.25).unwrap();
    assert!((tail - (0.5f64.ln() + c.ln_pdf(10.0))).abs() < 1e-10);
    assert!(error_logpdf(&em, &[1e6], &[0.0]).unwrap().is_finite());
}

#[test]
fn error_gradient_matches_finite_differences() {
    let mut rng = RngState::new(3, 0).rng();
    for slab in [SlabFamily::Cauchy, SlabFamily::Gaussian] {
        let em = ErrorModel { slab, ..ErrorModel::default() };
        assert_eq!(error_logpdf_grad(&em, &[0.4, -2.0], &[0.4, -2.0]).unwrap(), vec![0.0, 0.0]);
        for _ in 0..50 {
            let s_y: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let scale = [0.005, 0.03, 0.5, 3.0][rng.random_range(0..4)];
            let s: Vec<f64> = s_y.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
            let g = error_logpdf_grad(&em, &s_y, &s).unwrap();
            for k in 0..4 {
                let h = 1e-6 * scale;
                let (mut a, mut b) = (s.clone(), s.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (error_logpdf(&em, &s_y, &a).unwrap() - error_logpdf(&em, &s_y, &b).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "{slab:?} scale {scale}: {fd} vs {}", g[k]);
            }
        }
    }
}

#[test]
fn error_density_peaks_at_observation() {
    let em = ErrorModel::default();
    let at = error_logpdf(&em, &[1.0], &[1.0]).unwrap();
    let mut prev = at;
    for i in 1..200 {
        let off = i as f64 * 0.01;
        let v = error_logpdf(&em, &[1.0], &[1.0 + off]).unwrap();
        assert!(v < prev && (v - error_logpdf(&em, &[1.0], &[1.0 - off]).unwrap()).abs() < 1e-12);
        prev = v;
    }
    let r = slab_responsibility(&em, &[0.0, 0.0], &[0.0, 5.0]).unwrap();
    assert!(r[0] < 0.05 && r[1] > 1.0 - 1e-12);
}

#[test]
fn invalid_error_models_are_rejected() {
    assert!(ErrorModel { gamma: 1.0, ..ErrorModel::default() }.validate().is_err());
    assert!(ErrorModel { sigma_slab: 0.0, ..ErrorModel::default() }.validate().is_err());
    assert!(ErrorModel::default().validate().is_ok());
}

#[test]
fn nuts_standard_normal() {
    let t = normal_target(1, vec![vec![1.0]]);
    let cfg = NutsConfig::default();
    let out = nuts_sample(&t, &[0.5], &cfg, &RngState::new(11, 0)).unwrap();
    assert_eq!(out.draws.len(), 2000);
    let x = column(&out.draws, 0);
    assert!(mean(&x).abs() < 0.1, "mean {}", mean(&x));
    assert!((0.85..1.15).contains(&var(&x)), "var {}", var(&x));
    let d = &out.diagnostics;
    assert!((0.0..=1.0).contains(&d.mean_accept) && d.mean_accept > 0.8);
    assert_eq!(d.warmup_step_sizes.len(), 1000);

    let again = nuts_sample(&t, &[0.5], &cfg, &RngState::new(11, 0)).unwrap();
    assert_eq!(again.draws, out.draws);
}

#[test]
fn nuts_correlated_normal() {
    let rho: f64 = 0.8;
    let det = 1.0 - rho * rho;
    let t = normal_target(2, vec![vec![1.0 / det, -rho / det], vec![-rho / det, 1.0 / det]]);
    let out = nuts_sample(&t, &[0.0, 0.0], &NutsConfig::default(), &RngState::new(12, 0)).unwrap();
    let (x, y) = (column(&out.draws, 0), column(&out.draws, 1));
    let (mx, my) = (mean(&x), mean(&y));
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() - 1) as f64;
    let r = cov / (var(&x) * var(&y)).sqrt();
    assert!((r - rho).abs() < 0.07, "correlation {r}");
}

#[test]
fn nuts_scaled_normal_within_three_standard_errors() {
    // Scales differing by 100x exercise the metric adaptation.
    let scales = [0.01, 1.0, 3.0];
    let t = FnDensity {
        dim: 3,
        f: move |x: &[f64]| {
            let g: Vec<f64> = x.iter().zip(&scales).map(|(v, s)| -v / (s * s)).collect();
            Ok((0.5 * g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(), g))
        },
    };
    let out = nuts_sample(&t, &[0.0; 3], &NutsConfig::default(), &RngState::new(13, 0)).unwrap();
    for (k, s) in scales.iter().enumerate() {
        let x = column(&out.draws, k);
        // Generous effective sample size of 500 for the standard error.
        let se = s / 500f64.sqrt();
        assert!(mean(&x).abs() < 3.0 * se, "coordinate {k}: mean {}", mean(&x));
        assert!((var(&x) / (s * s) - 1.0).abs() < 3.0 * (2.0f64 / 500.0).sqrt());
    }
    assert!(out.diagnostics.inv_metric[0] < 1e-3 && out.diagnostics.inv_metric[2] > 4.0);
    assert!(out.diagnostics.mean_tree_depth < 4.0);
}

#[test]
fn nuts_flat_target_grows_step_size() {
    // Zero gradient on [-1, 1]^2 with steep quartic walls.
    let t = FnDensity {
        dim: 2,
        f: |x: &[f64]| {
            let mut lp = 0.0;
            let g = x
                .iter()
                .map(|&v| {
                    let e = (v.abs() - 1.0).max(0.0);
                    lp -= 100.0 * e.powi(4);
                    -400.0 * e.powi(3) * v.signum()
                })
                .collect();
            Ok((lp, g))
        },
    };
    let cfg = NutsConfig { initial_step_size: 1e-3, adapt_metric: false, ..NutsConfig::default() };
    let out = nuts_sample(&t, &[0.0, 0.0], &cfg, &RngState::new(14, 0)).unwrap();
    let tr = &out.diagnostics.warmup_step_sizes;
    let first = mean(&tr[..100].iter().map(|v| v.ln()).collect::<Vec<_>>());
    let last = mean(&tr[900..].iter().map(|v| v.ln()).collect::<Vec<_>>());
    assert!(last > first, "log step size {first} -> {last}");
    assert!(out.diagnostics.step_size > 1e-3);
    assert!(out.diagnostics.mean_accept > 0.85, "accept {}", out.diagnostics.mean_accept);
}

#[test]
fn nuts_rejects_non_finite_init() {
    let t = FnDensity { dim: 1, f: |_x: &[f64]| Ok((f64::NEG_INFINITY, vec![0.0])) };
    assert!(nuts_sample(&t, &[0.0], &NutsConfig::default(), &RngState::new(0, 0)).is_err());
    let t = normal_target(1, vec![vec![1.0]]);
    assert!(nuts_sample(&t, &[0.0, 1.0], &NutsConfig::default(), &RngState::new(0, 0)).is_err());
}

#[test]
fn denoise_with_uninformative_error_recovers_flow() {
    let flow = standard_normal_flow(2);
    let em = gaussian_em(1e3);
    let out = denoise(&em, &flow, &[0.5, -1.0], &NutsConfig::default(), &RngState::new(20, 0)).unwrap();
    let n = Normal::new(0.0, 1.0).unwrap();
    for k in 0..2 {
        let x: Vec<f64> = out.draws.iter().map(|s| s.0[k]).collect();
        let d = one_sample_ks(&x, |v| n.cdf(v));
        // Autocorrelated draws: compare at a reduced effective size.
        assert!(d < ks_critical(500, 1_000_000, 0.01), "coordinate {k}: D = {d}");
    }
}

#[test]
fn denoise_conjugate_gaussian() {
    let flow = standard_normal_flow(3);
    let em = gaussian_em(1.0);
    let s_y = [2.0, 2.0, -1.0];
    let out = denoise(&em, &flow, &s_y, &NutsConfig::default(), &RngState::new(21, 0)).unwrap();
    assert_eq!(out.draws.len(), 2000);
    let se = (0.5f64 / 500.0).sqrt();
    for k in 0..3 {
        let x: Vec<f64> = out.draws.iter().map(|s| s.0[k]).collect();
        assert!((mean(&x) - s_y[k] / 2.0).abs() < 3.0 * se, "coordinate {k}: mean {}", mean(&x));
        assert!((var(&x) - 0.5).abs() < 3.0 * 0.5 * (2.0f64 / 500.0).sqrt(), "coordinate {k}: var {}", var(&x));
        assert!((out.shift[k] - (mean(&x) - s_y[k])).abs() < 1e-9);
    }
}

#[test]
fn denoise_shrinks_incompatible_coordinate() {
    let flow = standard_normal_flow(2);
    let out = denoise(&ErrorModel::default(), &flow, &[0.0, 8.0], &NutsConfig::default(), &RngState::new(22, 0)).unwrap();
    assert!(out.shift[1] < -4.0, "shift {:?}", out.shift);
    assert!(out.shift[0].abs() < 0.2, "shift {:?}", out.shift);
    assert!(out.slab_responsibility[1] > 0.99);
    for s in &out.draws {
        assert!(flow.log_prob(&s.0, &[]).unwrap().is_finite());
    }
    let again = denoise(&ErrorModel::default(), &flow, &[0.0, 8.0], &NutsConfig::default(), &RngState::new(22, 0)).unwrap();
    assert_eq!(again.draws, out.draws);
}

#[test]
fn denoise_target_gradient_matches_finite_differences() {
    let config = FlowConfig { layers: 4, hidden: 16, ..FlowConfig::default() };
    let mut flow = FlowParams::new(config, 3, 0, &RngState::new(5, 0)).unwrap();
    let mut rng = RngState::new(5, 1).rng();
    for v in &mut flow.values {
        *v += 0.3 * rng.random_range(-1.0..1.0);
    }
    let em = ErrorModel::default();
    let s_y = [0.3, -1.2, 2.5];
    let target = DenoiseTarget { error_model: &em, marginal: &flow, s_y: &s_y };
    for _ in 0..20 {
        let s: Vec<f64> = s_y.iter().map(|v| v + rng.random_range(-1.5..1.5)).collect();
        let (_, g) = target.log_density_and_grad(&s).unwrap();
        for k in 0..3 {
            let h = 1e-6;
            let (mut a, mut b) = (s.clone(), s.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (target.log_density_and_grad(&a).unwrap().0 - target.log_density_and_grad(&b).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-4 * (1.0 + g[k].abs()), "{fd} vs {}", g[k]);
        }
    }
}

#[test]
fn denoise_rejects_conditional_flow() {
    let flow = FlowParams::new(FlowConfig { layers: 2, hidden: 8, ..FlowConfig::default() }, 2, 1, &RngState::new(0, 0)).unwrap();
    assert!(denoise(&ErrorModel::default(), &flow, &[0.0, 0.0], &NutsConfig::default(), &RngState::new(0, 0)).is_err());
}

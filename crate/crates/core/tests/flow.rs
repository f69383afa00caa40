mod common;

use ndarray::Array2;
use prnpe_core::flow::{
    flow_logpdf, flow_logpdf_grad_condition, flow_sample, rqs_forward, rqs_forward_grad, rqs_forward_raw, rqs_inverse,
    train_flow, train_flow_on, Bound, BoundTransform, FlowBundle, FlowConfig, FlowParams, RqsKnots, SplineShape,
    TrainConfig,
};
use prnpe_core::stats::Standardiser;
use prnpe_core::{ParamVector, RngState, SimDataset, SummaryVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as SNormal};

fn random_raw(shape: &SplineShape, seed: u64) -> Vec<f64> {
    let mut rng = RngState::new(seed, 0).rng();
    (0..shape.raw_len()).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn small(layers: usize, hidden: usize) -> FlowConfig {
    FlowConfig { layers, hidden, ..FlowConfig::default() }
}

/// Identity-initialised flow with every parameter then perturbed.
fn random_flow(config: FlowConfig, dim: usize, cond_dim: usize, seed: u64) -> FlowParams {
    let mut p = FlowParams::new(config, dim, cond_dim, &RngState::new(seed, 0)).unwrap();
    let mut rng = RngState::new(seed, 1).rng();
    for v in &mut p.values {
        *v += 0.3 * rng.random_range(-1.0..1.0);
    }
    p
}

#[test]
fn uniform_knots_are_the_identity() {
    let k = RqsKnots::new(vec![1.6; 10], vec![1.6; 10], vec![1.0; 9], 8.0).unwrap();
    for x in [-8.0, -5.5, 0.0, 0.37, 7.9, 8.0] {
        let (y, l) = rqs_forward(x, &k);
        assert!((y - x).abs() < 1e-12 && l.abs() < 1e-12);
    }
    assert_eq!(rqs_forward(9.0, &k), (9.0, 0.0));
    assert_eq!(rqs_inverse(-9.0, &k), (-9.0, 0.0));
    assert!(RqsKnots::new(vec![1.6; 10], vec![1.6; 10], vec![0.0; 9], 8.0).is_err());
    assert!(RqsKnots::new(vec![-1.6; 10], vec![1.6; 10], vec![1.0; 9], 8.0).is_err());
}

#[test]
fn spline_round_trip_and_derivative() {
    let shape = SplineShape::default();
    for seed in 0..20 {
        let knots = RqsKnots::from_raw(&random_raw(&shape, seed), &shape);
        for x in [0.37, -7.3, 3.9, -0.01, 7.99] {
            let (y, l) = rqs_forward(x, &knots);
            let (back, li) = rqs_inverse(y, &knots);
            assert!((back - x).abs() < 1e-10, "seed {seed}, x {x}: {back}");
            assert!((l + li).abs() < 1e-10);
            let h = 1e-5;
            let fd = (rqs_forward(x + h, &knots).0 - rqs_forward(x - h, &knots).0) / (2.0 * h);
            assert!((fd / l.exp() - 1.0).abs() < 1e-5, "seed {seed}, x {x}");
        }
    }
}

#[test]
fn spline_is_monotone() {
    let shape = SplineShape::default();
    let raw = random_raw(&shape, 99);
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=2000 {
        let x = -10.0 + i as f64 * 0.01;
        let y = rqs_forward_raw(x, &raw, &shape).0;
        assert!(y > prev);
        prev = y;
    }
}

#[test]
fn spline_gradients_match_finite_differences() {
    let shape = SplineShape::default();
    let (gy, gl) = (0.7, -1.3);
    let f = |x: f64, raw: &[f64]| {
        let (y, l) = rqs_forward_raw(x, raw, &shape);
        gy * y + gl * l
    };
    for seed in 0..10 {
        let raw = random_raw(&shape, seed);
        for x in [0.37, -4.2, 6.1] {
            let mut g_raw = vec![0.0; raw.len()];
            let (_, _, gx) = rqs_forward_grad(x, &raw, &shape, gy, gl, &mut g_raw);
            let h = 1e-6;
            let fd = (f(x + h, &raw) - f(x - h, &raw)) / (2.0 * h);
            assert!((gx - fd).abs() < 1e-6 * fd.abs().max(1.0));
            for j in 0..raw.len() {
                let mut up = raw.clone();
                let mut dn = raw.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (f(x, &up) - f(x, &dn)) / (2.0 * h);
                assert!((g_raw[j] - fd).abs() < 1e-6 * fd.abs().max(1.0), "seed {seed} x {x} j {j}: {} vs {fd}", g_raw[j]);
            }
        }
    }
}

#[test]
fn identity_flow_is_standard_normal() {
    let p = FlowParams::new(FlowConfig::default(), 3, 2, &RngState::new(1, 0)).unwrap();
    let z = [0.3, -1.2, 2.0];
    let expected = -1.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (0.09 + 1.44 + 4.0);
    assert!((flow_logpdf(&p, &z, Some(&[5.0, -3.0])).unwrap() - expected).abs() < 1e-10);
    let p2 = FlowParams::new(FlowConfig::default(), 2, 0, &RngState::new(1, 0)).unwrap();
    assert!((flow_logpdf(&p2, &[0.0, 0.0], None).unwrap() + 1.837_877_066).abs() < 1e-8);
    assert!(flow_logpdf(&p2, &[0.0], None).is_err());
    assert!(flow_logpdf(&p, &z, Some(&[1.0])).is_err());
}

#[test]
fn identity_flow_samples_are_normal() {
    let p = FlowParams::new(FlowConfig::default(), 2, 1, &RngState::new(2, 0)).unwrap();
    let draws = flow_sample(&p, Some(&[0.4]), 100_000, &RngState::new(2, 1)).unwrap();
    let n = SNormal::new(0.0, 1.0).unwrap();
    for j in 0..2 {
        let mut x: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        x.sort_by(f64::total_cmp);
        let m = x.len() as f64;
        let d = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = n.cdf(*v);
                (f - i as f64 / m).abs().max((f - (i + 1) as f64 / m).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / m.sqrt(), "KS = {d}");
    }
    let again = flow_sample(&p, Some(&[0.4]), 10, &RngState::new(2, 1)).unwrap();
    assert_eq!(&draws[..10], &again[..]);
}

#[test]
fn flow_round_trip_and_logdet_consistency() {
    for (dim, cond) in [(1, 3), (2, 0), (3, 2), (7, 8)] {
        let p = random_flow(small(4, 16), dim, cond, 3 + dim as u64);
        let mut rng = RngState::new(4, dim as u64).rng();
        let x = Array2::from_shape_fn((20, dim), |_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let c = Array2::from_shape_fn((20, cond), |_| StandardNormal.sample(&mut rng));
        let (z, fwd) = p.to_base(&x, &c).unwrap();
        let (back, inv) = p.from_base(&z, &c).unwrap();
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-8, "dim {dim}");
        }
        for (a, b) in fwd.iter().zip(inv.iter()) {
            assert!((a + b).abs() < 1e-8);
        }
        let draws = p.sample(c.row(0).as_slice().unwrap(), 50, &RngState::new(5, 0)).unwrap();
        let cb = Array2::from_shape_fn((50, cond), |(_, j)| c[[0, j]]);
        let (zz, _) = p.to_base(&draws, &cb).unwrap();
        let (re, _) = p.from_base(&zz, &cb).unwrap();
        for (a, b) in draws.iter().zip(re.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(p.log_prob_batch(&draws, &cb).unwrap().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn identity_tails_pass_through() {
    let p = random_flow(small(2, 8), 1, 0, 6);
    let (z, ld) = p.to_base(&Array2::from_elem((1, 1), 11.0), &Array2::zeros((1, 0))).unwrap();
    assert_eq!(z[[0, 0]], 11.0);
    assert_eq!(ld[0], 0.0);
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-2)
}

#[test]
fn gradients_match_finite_differences() {
    let p = random_flow(small(2, 8), 2, 3, 7);
    let x = Array2::from_shape_vec((3, 2), vec![0.3, -0.8, 1.5, 0.2, -2.0, 0.9]).unwrap();
    let c = Array2::from_shape_vec((3, 3), vec![0.1, 0.5, -0.4, 1.0, -1.0, 0.0, 0.3, 0.3, 2.0]).unwrap();
    let a = [0.5, -1.0, 2.0];
    let f = |p: &FlowParams, x: &Array2<f64>, c: &Array2<f64>| -> f64 {
        p.log_prob_batch(x, c).unwrap().iter().zip(&a).map(|(l, a)| l * a).sum()
    };
    let g = p.gradients(&x, &c, &a).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..p.n_params() {
        let mut up = p.clone();
        let mut dn = p.clone();
        up.values[i] += h;
        dn.values[i] -= h;
        let fd = (f(&up, &x, &c) - f(&dn, &x, &c)) / (2.0 * h);
        assert!(rel_close(g.params[i], fd, 1e-4), "param {i}: {} vs {fd}", g.params[i]);
        worst = worst.max((g.params[i] - fd).abs());
    }
    for r in 0..3 {
        for j in 0..2 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[[r, j]] += h;
            dn[[r, j]] -= h;
            let fd = (f(&p, &up, &c) - f(&p, &dn, &c)) / (2.0 * h);
            assert!(rel_close(g.target[[r, j]], fd, 1e-4));
        }
        for j in 0..3 {
            let mut up = c.clone();
            let mut dn = c.clone();
            up[[r, j]] += h;
            dn[[r, j]] -= h;
            let fd = (f(&p, &x, &up) - f(&p, &x, &dn)) / (2.0 * h);
            assert!(rel_close(g.condition[[r, j]], fd, 1e-4));
        }
    }
    let gc = flow_logpdf_grad_condition(&p, &[0.3, -0.8], &[0.1, 0.5, -0.4]).unwrap();
    for j in 0..3 {
        assert!((gc[j] - g.condition[[0, j]] / a[0]).abs() < 1e-12);
    }
}

#[test]
fn identity_marginal_gradient_is_minus_z() {
    let p = FlowParams::new(FlowConfig::default(), 3, 0, &RngState::new(8, 0)).unwrap();
    let (lp, g) = p.grad_target(&[0.5, -1.0, 2.0], &[]).unwrap();
    assert!((lp - flow_logpdf(&p, &[0.5, -1.0, 2.0], None).unwrap()).abs() < 1e-12);
    for (a, b) in g.iter().zip([-0.5, 1.0, -2.0]) {
        assert!((a - b).abs() < 1e-10);
    }
    let (_, g) = p.grad_target(&[0.0; 3], &[]).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-12));
    let pc = FlowParams::new(FlowConfig::default(), 1, 2, &RngState::new(8, 1)).unwrap();
    assert!(pc.grad_condition(&[0.0], &[0.0, 0.0]).unwrap().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn single_row_gradients_match_batch() {
    for (dim, cond, seed) in [(1, 3, 31), (3, 0, 32), (4, 2, 33)] {
        let p = random_flow(small(4, 16), dim, cond, seed);
        let mut rng = RngState::new(seed, 9).rng();
        for _ in 0..10 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let c: Vec<f64> = (0..cond).map(|_| rng.random_range(-3.0..3.0)).collect();
            let xb = Array2::from_shape_vec((1, dim), x.clone()).unwrap();
            let cb = Array2::from_shape_vec((1, cond), c.clone()).unwrap();
            let g = p.gradients(&xb, &cb, &[1.0]).unwrap();
            let (lp, gx) = p.grad_target(&x, &c).unwrap();
            assert!((lp - g.log_prob[0]).abs() < 1e-10);
            for j in 0..dim {
                assert!((gx[j] - g.target[[0, j]]).abs() < 1e-10);
            }
            if cond > 0 {
                let gc = p.grad_condition(&x, &c).unwrap();
                for j in 0..cond {
                    assert!((gc[j] - g.condition[[0, j]]).abs() < 1e-10);
                }
            }
        }
    }
}

fn rows(x: &[Vec<f64>]) -> Vec<&[f64]> {
    x.iter().map(|r| &r[..]).collect()
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0]).collect();
    let c: Vec<Vec<f64>> = vec![vec![]; 50];
    let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
    let t = train_flow_on(&rows(&x), &rows(&c), &[1.0; 50], &FlowConfig::default(), &cfg, &RngState::new(9, 0)).unwrap();
    let init = FlowParams::new(FlowConfig::default(), 1, 0, &RngState::new(9, 0).child("init")).unwrap();
    assert!(t.params == init);
    assert!(t.initial_train_loss.is_finite());
    assert!(t.train_history.is_empty());
}

#[test]
fn zero_weight_rows_do_not_change_training() {
    let mut rng = RngState::new(10, 0).rng();
    let x: Vec<Vec<f64>> = (0..40).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
    let c: Vec<Vec<f64>> = (0..40).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
    let mut w = vec![0.0; 40];
    w[0] = 0.5;
    w[1] = 0.5;
    let cfg = TrainConfig { max_epochs: 5, validation_fraction: 0.0, ..TrainConfig::default() };
    let flow = small(2, 8);
    let rng = RngState::new(10, 1);
    let a = train_flow_on(&rows(&x), &rows(&c), &w, &flow, &cfg, &rng).unwrap();
    let b = train_flow_on(&rows(&x[..2]), &rows(&c[..2]), &[1.0, 1.0], &flow, &cfg, &rng).unwrap();
    assert!(a.params == b.params);
    assert_eq!(a.train_history, b.train_history);
}

/// Midpoint quadrature over `[-12, 12]^d`.
fn integrate(p: &FlowParams, c: &[f64], step: f64) -> f64 {
    let n = (24.0 / step).round() as usize;
    let grid: Vec<f64> = (0..n).map(|i| -12.0 + (i as f64 + 0.5) * step).collect();
    let cb = |m: usize| Array2::from_shape_fn((m, c.len()), |(_, j)| c[j]);
    match p.dim {
        1 => {
            let x = Array2::from_shape_vec((n, 1), grid.clone()).unwrap();
            p.log_prob_batch(&x, &cb(n)).unwrap().mapv(f64::exp).sum() * step
        }
        2 => {
            let mut total = 0.0;
            for &a in &grid {
                let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { a } else { grid[i] });
                total += p.log_prob_batch(&x, &cb(n)).unwrap().mapv(f64::exp).sum();
            }
            total * step * step
        }
        _ => unreachable!(),
    }
}

#[test]
fn trained_two_dimensional_normal() {
    let mut rng = RngState::new(11, 0).rng();
    let x: Vec<ParamVector> = (0..10_000)
        .map(|_| ParamVector(vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]))
        .collect();
    let ds = SimDataset::new(x.clone(), x.iter().map(|v| SummaryVector(v.0.clone())).collect(), None).unwrap();
    let t = train_flow(&ds, false, &FlowConfig::default(), &TrainConfig::default(), &RngState::new(11, 1)).unwrap();
    let at_origin = flow_logpdf(&t.params, &[0.0, 0.0], None).unwrap();
    assert!((at_origin + (2.0 * std::f64::consts::PI).ln()).abs() < 0.05, "{at_origin}");
    assert!(t.final_train_loss <= t.initial_train_loss, "{} > {}", t.final_train_loss, t.initial_train_loss);
    let mass = integrate(&t.params, &[], 0.04);
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
}

#[test]
fn trained_conditional_flow_recovers_conjugate_posterior() {
    let mut rng = RngState::new(12, 0).rng();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let thetas: Vec<ParamVector> = (0..20_000).map(|_| ParamVector(vec![StandardNormal.sample(&mut rng)])).collect();
    let summaries: Vec<SummaryVector> = thetas.iter().map(|t| SummaryVector(vec![t[0] + noise.sample(&mut rng)])).collect();
    let ds = SimDataset::new(thetas, summaries, None).unwrap();
    let t = train_flow(&ds, true, &FlowConfig::default(), &TrainConfig::default(), &RngState::new(12, 1)).unwrap();
    assert!(t.final_train_loss < t.initial_train_loss);
    let step = 1e-3;
    for s in [-2.0, -1.0, -0.3, 0.0, 0.5, 1.2, 2.0] {
        let n = 24_000;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| -12.0 + (i as f64 + 0.5) * step);
        let dens = t.params.log_prob_batch(&x, &Array2::from_elem((n, 1), s)).unwrap().mapv(f64::exp);
        let mass = dens.sum() * step;
        let mean = dens.iter().zip(x.iter()).map(|(d, x)| d * x).sum::<f64>() * step / mass;
        assert!((mass - 1.0).abs() < 1e-3, "s = {s}: mass {mass}");
        assert!((mean - s / 1.01).abs() < 0.05, "s = {s}: mean {mean}");
    }
}

#[test]
fn bound_transform_examples() {
    let b = Bound::Interval { low: 0.0, high: 1.0 };
    assert_eq!(b.apply(0.5).unwrap().0, 0.0);
    assert!(b.apply(1.0).is_err() && b.apply(-0.1).is_err());
    assert_eq!(Bound::Unbounded.apply(3.3).unwrap(), (3.3, 0.0));
    let b = Bound::Interval { low: 2.0, high: 10.0 };
    let (z, _) = b.apply(4.0).unwrap();
    assert!((z - (1.0f64 / 3.0).ln()).abs() < 1e-15);
    assert!((b.invert(z) - 4.0).abs() < 1e-10);
    let lb = Bound::LowerBounded { low: 0.0 };
    assert!((lb.invert(lb.apply(0.789).unwrap().0) - 0.789).abs() < 1e-14);
    // log-Jacobian against a finite difference
    for (b, t) in [(Bound::Interval { low: -1.0, high: 1.0 }, 0.3), (Bound::LowerBounded { low: 0.0 }, 2.5)] {
        let (_, lj) = b.apply(t).unwrap();
        let h = 1e-6;
        let fd = (b.apply(t + h).unwrap().0 - b.apply(t - h).unwrap().0) / (2.0 * h);
        assert!((lj - fd.ln()).abs() < 1e-8);
    }
    let bt = BoundTransform { bounds: vec![Bound::Unbounded, Bound::Interval { low: 0.0, high: 1.0 }] };
    let (z, _) = bt.apply(&[1.5, 0.25]).unwrap();
    let back = bt.invert(&z).unwrap();
    assert!((back[0] - 1.5).abs() < 1e-12 && (back[1] - 0.25).abs() < 1e-12);
}

#[test]
fn bundle_round_trips_through_json() {
    let p = random_flow(small(2, 8), 1, 2, 13);
    let bundle = FlowBundle::new(
        p,
        Standardiser { mean: vec![0.3], sd: vec![2.0] },
        Some(Standardiser { mean: vec![1.0, -1.0], sd: vec![0.5, 3.0] }),
        BoundTransform { bounds: vec![Bound::LowerBounded { low: 0.0 }] },
    )
    .unwrap();
    let back = FlowBundle::from_json(&bundle.to_json().unwrap()).unwrap();
    assert!(back == bundle);
    let lp = bundle.log_prob(&[0.8], Some(&[0.5, 0.5])).unwrap();
    assert_eq!(lp, back.log_prob(&[0.8], Some(&[0.5, 0.5])).unwrap());
    // original-scale density integrates to one over (0, inf), on a log grid
    let step = 1e-3;
    let mass: f64 = (0..60_000)
        .map(|i| {
            let t = (-30.0 + (i as f64 + 0.5) * step).exp();
            bundle.log_prob(&[t], Some(&[0.5, 0.5])).unwrap().exp() * t
        })
        .sum::<f64>()
        * step;
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    let draws = bundle.sample(Some(&[0.5, 0.5]), 100, &RngState::new(13, 1)).unwrap();
    assert!(draws.iter().all(|d| d[0] > 0.0));
    let mut text = bundle.to_json().unwrap();
    text = text.replacen("\"version\":2", "\"version\":99", 1);
    assert!(FlowBundle::from_json(&text).is_err());
}

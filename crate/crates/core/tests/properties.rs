use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use vortexlab::cli::RunConfig;
use vortexlab::decay::{fit_rate, FitPolicy, Series};
use vortexlab::fields::{CylinderField, Grid};
use vortexlab::gauge::{act_on_loop, holonomy, LoopGauge, Sampling};
use vortexlab::lie::{group_distance, AlgebraElement};
use vortexlab::loops::{local_action, GaugedLoop};
use vortexlab::model::ModelSpec;

const N: usize = 64;

fn thetas() -> Vec<f64> {
    (0..N).map(|k| 2.0 * PI * k as f64 / N as f64).collect()
}

/// Based gauge `φ(θ) = Σ a_q sin qθ + b_q(cos qθ − 1) + wθ`.
fn gauge(coeffs: &[(f64, f64)], w: f64) -> LoopGauge {
    let periodic = thetas()
        .iter()
        .map(|t| {
            vec![coeffs
                .iter()
                .enumerate()
                .map(|(q, (a, b))| {
                    let q = (q + 1) as f64;
                    a * (q * t).sin() + b * ((q * t).cos() - 1.0)
                })
                .sum()]
        })
        .collect();
    LoopGauge::Torus { periodic, drift: vec![w] }
}

/// Small smooth perturbation of the constant critical loop `(1, 0)` of the `k = 1` model.
fn near_critical(du: &[(f64, f64)], de: &[(f64, f64)], mean: f64) -> GaugedLoop {
    let x = thetas()
        .iter()
        .map(|t| {
            let v: Complex64 = du.iter().enumerate().map(|(q, (a, b))| Complex64::new(*a, *b) * Complex64::cis(q as f64 * t)).sum();
            vec![Complex64::new(1.0, 0.0) + v]
        })
        .collect();
    let eta = thetas()
        .iter()
        .map(|t| vec![mean + de.iter().enumerate().map(|(q, (a, b))| a * ((q + 1) as f64 * t).cos() + b * ((q + 1) as f64 * t).sin()).sum::<f64>()])
        .collect();
    GaugedLoop::torus(x, eta)
}

fn pairs(n: usize, r: f64) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-r..r, -r..r), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn holonomy_is_based_gauge_invariant(g in pairs(3, 0.8), w in -2i32..=2, e in pairs(3, 0.5), mean in -1.0f64..1.0) {
        let spec = ModelSpec::circle(1, 0.5);
        let y = near_critical(&[], &e, mean);
        let moved = act_on_loop(&spec, &gauge(&g, w as f64), &y).unwrap();
        let h0 = holonomy(&y.eta, Sampling::Spectral).unwrap();
        let h1 = holonomy(&moved.eta, Sampling::Spectral).unwrap();
        prop_assert!(group_distance(&h0, &h1).unwrap() < 1e-10);
    }

    #[test]
    fn local_action_is_gauge_invariant(g in pairs(2, 0.5), du in pairs(3, 0.02), de in pairs(2, 0.02), mean in -0.02f64..0.02) {
        let spec = ModelSpec::circle(1, 0.5);
        let y = near_critical(&du, &de, mean);
        let moved = act_on_loop(&spec, &gauge(&g, 0.0), &y).unwrap();
        let a = local_action(&y, &spec, None).unwrap();
        let b = local_action(&moved, &spec, None).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{} vs {}", a, b);
    }

    #[test]
    fn fit_recovers_exact_exponentials(rate in 0.05f64..3.0, log_c in -5.0f64..5.0, n in 40usize..300) {
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 6.0 / n as f64).collect();
        let value = t.iter().map(|x| (log_c - rate * x).exp()).collect();
        let fit = fit_rate(&Series { name: "s".into(), t, value }, &FitPolicy::default()).unwrap();
        prop_assert!((fit.slope + rate).abs() < 1e-9);
        prop_assert!((fit.intercept - log_c).abs() < 1e-8);
    }

    #[test]
    fn field_csv_round_trips(seed in any::<u64>(), nt in 16usize..20, scale in 1e-300f64..1e300) {
        let grid = Grid::new(-1.0, 2.5, nt, 16).unwrap();
        let s = seed as f64 / u64::MAX as f64;
        let field = CylinderField::from_fn(
            grid, 2, 1,
            |t, th| vec![Complex64::new(scale * (t + s).sin(), th.cos() / 3.0), Complex64::new(-s, 1e-17 * t)],
            |t, th| vec![(t * th + s).tan()],
        );
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let back = CylinderField::read_csv(buf.as_slice()).unwrap();
        prop_assert!(back.u.iter().zip(&field.u).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
        prop_assert!(back.eta.iter().zip(&field.eta).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn config_hash_ignores_output_only(out in "[a-z]{1,12}", tau in 0.1f64..3.0) {
        let base = RunConfig::default();
        let mut moved = base.clone();
        moved.output = out.into();
        prop_assert_eq!(base.hash(), moved.hash());
        let mut other = base.clone();
        other.model.tau = vec![tau];
        prop_assert_eq!(tau == 0.5, other.hash() == base.hash());
    }
}

#[test]
fn constant_connection_holonomy() {
    let eta = vec![AlgebraElement::Torus(vec![0.25]); N];
    let h = holonomy(&eta, Sampling::Spectral).unwrap();
    let a = h.angles().unwrap()[0];
    assert!((a + PI / 2.0).rem_euclid(2.0 * PI) < 1e-12 || (a + PI / 2.0).rem_euclid(2.0 * PI) > 2.0 * PI - 1e-12, "{a}");
}

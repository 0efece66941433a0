mod common;

use hyqr_core::hyperbolic::{distance, exp0, log0, mobius_add, project_to_ball, BallPoint, Curvature, BALL_EPS};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use proptest::collection::vec;
use proptest::prelude::*;
use rand::Rng;

fn rat(x: f64) -> BigRational {
    BigRational::from_f64(x).expect("finite")
}

fn rdot(a: &[BigRational], b: &[BigRational]) -> BigRational {
    a.iter().zip(b).fold(BigRational::zero(), |acc, (x, y)| acc + x * y)
}

/// Möbius addition in exact rational arithmetic.
fn mobius_exact(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let one = BigRational::from_integer(BigInt::from(1));
    let two = BigRational::from_integer(BigInt::from(2));
    let c = rat(c);
    let x: Vec<_> = x.iter().map(|&v| rat(v)).collect();
    let y: Vec<_> = y.iter().map(|&v| rat(v)).collect();
    let xy = rdot(&x, &y);
    let xx = rdot(&x, &x);
    let yy = rdot(&y, &y);
    let a = &one + &two * &c * &xy + &c * &yy;
    let b = &one - &c * &xx;
    let den = &one + &two * &c * &xy + &c * &c * &xx * &yy;
    x.iter()
        .zip(&y)
        .map(|(xi, yi)| ((&a * xi + &b * yi) / &den).to_f64().unwrap())
        .collect()
}

fn ball_vec(dim: usize, max_norm: f64) -> impl Strategy<Value = Vec<f64>> {
    (vec(-1.0f64..1.0, dim), 0.0f64..1.0).prop_map(move |(v, r)| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.iter().map(|x| x / n * r * max_norm).collect()
    })
}

fn arccosh_distance(x: &[f64], y: &[f64]) -> f64 {
    let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum();
    let ny: f64 = y.iter().map(|a| a * a).sum();
    (1.0 + 2.0 * diff / ((1.0 - nx) * (1.0 - ny))).acosh()
}

proptest! {
    #[test]
    fn mobius_matches_rational_oracle(
        c in 0.05f64..3.0,
        x in ball_vec(4, 0.9),
        y in ball_vec(4, 0.9),
    ) {
        let curv = Curvature::new(c).unwrap();
        let r = curv.radius();
        let xs: Vec<f64> = x.iter().map(|v| v * r).collect();
        let ys: Vec<f64> = y.iter().map(|v| v * r).collect();
        let got = mobius_add(&BallPoint::new(xs.clone(), curv).unwrap(), &BallPoint::new(ys.clone(), curv).unwrap()).unwrap();
        let want = mobius_exact(&xs, &ys, c);
        let nw = want.iter().map(|v| v * v).sum::<f64>().sqrt() * c.sqrt();
        // Exact sums beyond the projection radius are rescaled by design.
        prop_assume!(nw < 1.0 - 2.0 * BALL_EPS);
        for (g, w) in got.coords().iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12 * r.max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn left_cancellation(c in 0.1f64..2.0, x in ball_vec(3, 0.8), y in ball_vec(3, 0.8)) {
        let curv = Curvature::new(c).unwrap();
        let r = curv.radius();
        let x = BallPoint::new(x.iter().map(|v| v * r).collect(), curv).unwrap();
        let y = BallPoint::new(y.iter().map(|v| v * r).collect(), curv).unwrap();
        let back = mobius_add(&x.neg(), &mobius_add(&x, &y).unwrap()).unwrap();
        for (a, b) in back.coords().iter().zip(y.coords()) {
            prop_assert!((a - b).abs() < 1e-8 * r.max(1.0));
        }
    }

    #[test]
    fn closure_and_roundtrip(c in 1e-3f64..2.0, v in ball_vec(5, 3.0)) {
        let curv = Curvature::new(c).unwrap();
        let y = exp0(&v, curv).unwrap();
        let norm = y.coords().iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(c.sqrt() * norm <= 1.0 - BALL_EPS + 1e-15);
        let back = log0(&y).unwrap();
        for (a, b) in back.iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn distance_is_a_metric_sample(x in ball_vec(3, 0.9), y in ball_vec(3, 0.9), z in ball_vec(3, 0.9)) {
        let c = Curvature::new(1.0).unwrap();
        let p = |v: &Vec<f64>| BallPoint::new(v.clone(), c).unwrap();
        let (x, y, z) = (p(&x), p(&y), p(&z));
        let dxy = distance(&x, &y).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!((dxy - distance(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!(dxy <= distance(&x, &z).unwrap() + distance(&z, &y).unwrap() + 1e-9);
    }
}

#[test]
fn unit_curvature_distance_matches_arccosh_form() {
    let mut rng = common::rng(21);
    let c = Curvature::new(1.0).unwrap();
    for _ in 0..1000 {
        let mut draw = || {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let r = rng.gen_range(0.0..0.95);
            v.iter().map(|a| a / n * r).collect::<Vec<f64>>()
        };
        let (x, y) = (draw(), draw());
        let d = distance(&BallPoint::new(x.clone(), c).unwrap(), &BallPoint::new(y.clone(), c).unwrap()).unwrap();
        let want = arccosh_distance(&x, &y);
        assert!((d - want).abs() <= 1e-9, "{d} vs {want}");
    }
}

#[test]
fn projection_caps_norm() {
    let c = Curvature::new(4.0).unwrap();
    let p = project_to_ball(&[10.0, 0.0], c).unwrap();
    assert!((p.coords()[0] - (1.0 - BALL_EPS) / 2.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn log_then_exp_is_identity(c in 1e-3f64..2.0, y in ball_vec(4, 0.999)) {
        let curv = Curvature::new(c).unwrap();
        let p = BallPoint::new(y.iter().map(|v| v * curv.radius()).collect(), curv).unwrap();
        let back = exp0(&log0(&p).unwrap(), curv).unwrap();
        for (a, b) in back.coords().iter().zip(p.coords()) {
            prop_assert!((a - b).abs() <= 1e-6 * curv.radius().max(1.0));
        }
    }

    #[test]
    fn origin_distance_is_twice_tangent_norm(c in 1e-2f64..2.0, v in ball_vec(3, 1.0), s in 0.0f64..3.0) {
        let curv = Curvature::new(c).unwrap();
        // Scale so that √c‖v‖ ≤ 3, well inside the projection radius.
        let v: Vec<f64> = v.iter().map(|x| x * s / c.sqrt()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let d = distance(&BallPoint::origin(3, curv), &exp0(&v, curv).unwrap()).unwrap();
        prop_assert!((d - 2.0 * norm).abs() <= 1e-8 * norm.max(1.0), "{d} vs {}", 2.0 * norm);
    }
}

#[test]
fn exp_map_approaches_identity_as_curvature_vanishes() {
    let v = [0.7, -1.2, 0.4];
    let err = |c: f64| {
        let y = exp0(&v, Curvature::new(c).unwrap()).unwrap();
        y.coords().iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (e1, e2, e3) = (err(1e-1), err(1e-2), err(1e-3));
    assert!(e1 > e2 && e2 > e3 && e3 < 1e-3, "{e1} {e2} {e3}");
}

//! Poincaré ball of curvature `-c`: Möbius addition, exp/log maps at the
//! origin, geodesic distance and projection back into the open ball.
//!
//! Row-batched variants operate on row-major `n × d` buffers with one shared
//! curvature. The scalar helpers at the bottom (`tanh_ratio` and friends) are
//! shared with the autodiff kernel so forward values agree bit for bit.

use crate::error::{Error, Result};

/// Points are kept at `√c‖x‖ ≤ 1 - BALL_EPS`.
pub const BALL_EPS: f64 = 1e-5;
/// Upper clamp on the `artanh` argument.
pub const ARTANH_MAX: f64 = 1.0 - 1e-7;
/// Norm floor used before dividing by a norm.
pub const MIN_NORM: f64 = 1e-15;

/// Below this `s`, ratio functions switch to their Taylor series.
const SERIES_CUTOFF: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Curvature(c))
        } else {
            Err(Error::Usage(format!("curvature must be positive and finite, got {c}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }

    /// Euclidean radius `1/√c` of the ball.
    pub fn radius(self) -> f64 {
        1.0 / self.sqrt()
    }
}

/// A point strictly inside the ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl BallPoint {
    /// Accepts `coords` only if already within the projection radius.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        check_finite("ball point", &coords)?;
        if curvature.sqrt() * norm(&coords) > 1.0 - BALL_EPS {
            return Err(Error::Usage("point lies outside the ball".into()));
        }
        Ok(BallPoint { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        BallPoint {
            coords: vec![0.0; dim],
            curvature,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn neg(&self) -> BallPoint {
        BallPoint {
            coords: self.coords.iter().map(|x| -x).collect(),
            curvature: self.curvature,
        }
    }
}

fn check_finite(op: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(op))
    }
}

fn check_compatible(op: &'static str, x: &BallPoint, y: &BallPoint) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::dim(op, format!("{} vs {}", x.dim(), y.dim())));
    }
    if x.curvature != y.curvature {
        return Err(Error::dim(
            op,
            format!("curvature {} vs {}", x.curvature.0, y.curvature.0),
        ));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Rescales `x` onto the radius `(1 - BALL_EPS)/√c` if it reaches past it.
pub fn project_to_ball(x: &[f64], c: Curvature) -> Result<BallPoint> {
    check_finite("project_to_ball", x)?;
    let mut coords = x.to_vec();
    project_row_in_place(&mut coords, c.sqrt());
    Ok(BallPoint {
        coords,
        curvature: c,
    })
}

/// Projection scale for a row with Euclidean norm `n`: 1 inside the
/// admissible radius, `max_norm / n` outside.
pub(crate) fn projection_scale(n: f64, sqrt_c: f64) -> f64 {
    let max_norm = (1.0 - BALL_EPS) / sqrt_c;
    if n > max_norm {
        max_norm / n
    } else {
        1.0
    }
}

fn project_row_in_place(row: &mut [f64], sqrt_c: f64) {
    let scale = projection_scale(norm(row), sqrt_c);
    if scale != 1.0 {
        row.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Möbius addition `x ⊕_c y`, projected into the ball.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    check_compatible("mobius_add", x, y)?;
    let c = x.curvature.0;
    let xy = dot(&x.coords, &y.coords);
    let x2 = dot(&x.coords, &x.coords);
    let y2 = dot(&y.coords, &y.coords);
    let a = 1.0 + 2.0 * c * xy + c * y2;
    let b = 1.0 - c * x2;
    let den = (1.0 + 2.0 * c * xy + c * c * x2 * y2).max(MIN_NORM);
    let coords: Vec<f64> = x
        .coords
        .iter()
        .zip(&y.coords)
        .map(|(xi, yi)| (a * xi + b * yi) / den)
        .collect();
    project_to_ball(&coords, x.curvature)
}

/// Exponential map at the origin: `tanh(√c‖v‖) v / (√c‖v‖)`.
pub fn exp0(v: &[f64], c: Curvature) -> Result<BallPoint> {
    check_finite("exp0", v)?;
    let s = c.sqrt() * norm(v);
    let g = tanh_ratio(s);
    project_to_ball(&v.iter().map(|x| g * x).collect::<Vec<_>>(), c)
}

/// Logarithmic map at the origin: `artanh(√c‖y‖) y / (√c‖y‖)`.
pub fn log0(y: &BallPoint) -> Result<Vec<f64>> {
    let s = y.curvature.sqrt() * norm(&y.coords);
    if !s.is_finite() || s >= 1.0 {
        return Err(Error::numeric("log0"));
    }
    let k = artanh_ratio(s.min(ARTANH_MAX));
    Ok(y.coords.iter().map(|x| k * x).collect())
}

/// Geodesic distance `(2/√c) artanh(√c ‖(-x) ⊕_c y‖)`.
pub fn distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    check_compatible("distance", x, y)?;
    if x.coords == y.coords {
        return Ok(0.0);
    }
    let sqrt_c = x.curvature.sqrt();
    let c = x.curvature.0;
    // ‖(-x) ⊕_c y‖ = ‖x - y‖ / sqrt(1 - 2c⟨x,y⟩ + c²‖x‖²‖y‖²), written so
    // that swapping x and y yields the same floating-point operations.
    let diff2: f64 = x
        .coords
        .iter()
        .zip(&y.coords)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let xy = dot(&x.coords, &y.coords);
    let x2 = dot(&x.coords, &x.coords);
    let y2 = dot(&y.coords, &y.coords);
    let den = (1.0 - 2.0 * c * xy + c * c * (x2 * y2)).max(MIN_NORM);
    let arg = (sqrt_c * (diff2 / den).sqrt()).min(ARTANH_MAX);
    Ok(2.0 / sqrt_c * arg.atanh())
}

/// Applies [`exp0`] to each row of a row-major `rows × cols` buffer.
pub fn exp0_rows(data: &[f64], cols: usize, c: Curvature) -> Result<Vec<f64>> {
    check_finite("exp0", data)?;
    let sqrt_c = c.sqrt();
    let mut out = data.to_vec();
    for row in out.chunks_mut(cols.max(1)) {
        let g = tanh_ratio(sqrt_c * norm(row));
        row.iter_mut().for_each(|x| *x *= g);
        project_row_in_place(row, sqrt_c);
    }
    Ok(out)
}

/// Applies [`log0`] to each row of a row-major `rows × cols` buffer.
pub fn log0_rows(data: &[f64], cols: usize, c: Curvature) -> Result<Vec<f64>> {
    check_finite("log0", data)?;
    let sqrt_c = c.sqrt();
    let mut out = data.to_vec();
    for row in out.chunks_mut(cols.max(1)) {
        let k = artanh_ratio((sqrt_c * norm(row)).min(ARTANH_MAX));
        row.iter_mut().for_each(|x| *x *= k);
    }
    Ok(out)
}

/// `tanh(s)/s`, equal to 1 at `s = 0`.
pub fn tanh_ratio(s: f64) -> f64 {
    if s < SERIES_CUTOFF {
        let s2 = s * s;
        1.0 - s2 / 3.0 + 2.0 * s2 * s2 / 15.0
    } else {
        s.tanh() / s
    }
}

/// `(d/ds tanh_ratio(s)) / s`, finite at `s = 0`.
pub fn tanh_ratio_slope(s: f64) -> f64 {
    if s < SERIES_CUTOFF {
        let s2 = s * s;
        -2.0 / 3.0 + 8.0 * s2 / 15.0 - 34.0 * s2 * s2 / 105.0
    } else {
        let t = s.tanh();
        (s * (1.0 - t * t) - t) / (s * s * s)
    }
}

/// `artanh(s)/s`, equal to 1 at `s = 0`. Expects `s < 1`.
pub fn artanh_ratio(s: f64) -> f64 {
    if s < SERIES_CUTOFF {
        let s2 = s * s;
        1.0 + s2 / 3.0 + s2 * s2 / 5.0
    } else {
        s.atanh() / s
    }
}

/// `(d/ds artanh_ratio(s)) / s`, finite at `s = 0`.
pub fn artanh_ratio_slope(s: f64) -> f64 {
    if s < SERIES_CUTOFF {
        let s2 = s * s;
        2.0 / 3.0 + 4.0 * s2 / 5.0 + 6.0 * s2 * s2 / 7.0
    } else {
        (s / (1.0 - s * s) - s.atanh()) / (s * s * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Curvature {
        Curvature::new(v).unwrap()
    }

    fn pt(v: &[f64], k: f64) -> BallPoint {
        BallPoint::new(v.to_vec(), c(k)).unwrap()
    }

    #[test]
    fn curvature_must_be_positive() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(-1.0).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
        assert!((c(4.0).radius() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mobius_identity_and_inverse() {
        let x = pt(&[0.3, -0.2, 0.1], 1.5);
        let o = BallPoint::origin(3, c(1.5));
        assert_eq!(mobius_add(&x, &o).unwrap(), x);
        assert_eq!(mobius_add(&o, &x).unwrap(), x);
        let z = mobius_add(&x.neg(), &x).unwrap();
        assert!(norm(z.coords()) < 1e-10);
    }

    #[test]
    fn mobius_rejects_mismatch() {
        assert!(mobius_add(&pt(&[0.1], 1.0), &pt(&[0.1, 0.0], 1.0)).is_err());
        assert!(mobius_add(&pt(&[0.1], 1.0), &pt(&[0.1], 2.0)).is_err());
    }

    #[test]
    fn exp0_origin_and_radius() {
        assert_eq!(exp0(&[0.0, 0.0], c(1.0)).unwrap().coords(), &[0.0, 0.0]);
        for k in [1e-3, 0.5, 1.0, 2.0] {
            let p = exp0(&[100.0, -50.0, 3.0], c(k)).unwrap();
            assert!(norm(p.coords()) < c(k).radius());
        }
        assert!(exp0(&[f64::INFINITY], c(1.0)).is_err());
    }

    #[test]
    fn exp0_euclidean_limit() {
        // ‖exp0(v) - v‖ = (1 - tanh(s)/s)‖v‖ ≤ (s²/3)‖v‖ = c‖v‖³/3.
        let v = [0.7, -1.1, 0.4];
        let bound = norm(&v).powi(3) / 3.0;
        for k in [1e-2, 1e-4, 1e-6] {
            let p = exp0(&v, c(k)).unwrap();
            let err: f64 = norm(&p.coords().iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(err <= bound * k * (1.0 + 1e-6), "c={k}: {err} > {}", bound * k);
        }
    }

    #[test]
    fn log0_origin_and_inverse() {
        assert_eq!(log0(&BallPoint::origin(2, c(1.0))).unwrap(), vec![0.0, 0.0]);
        let v = [1.2, -0.4, 2.0];
        let back = log0(&exp0(&v, c(0.7)).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projection() {
        let k = c(2.0);
        let inside = project_to_ball(&[0.1, 0.2], k).unwrap();
        assert_eq!(inside.coords(), &[0.1, 0.2]);
        let far = project_to_ball(&[2.0 / k.sqrt(), 0.0], k).unwrap();
        assert!((norm(far.coords()) - (1.0 - 1e-5) / k.sqrt()).abs() < 1e-15);
        let again = project_to_ball(far.coords(), k).unwrap();
        assert_eq!(again, far);
        assert!(project_to_ball(&[f64::NAN], k).is_err());
    }

    #[test]
    fn distance_basics() {
        let x = pt(&[0.2, 0.1], 1.3);
        let y = pt(&[-0.3, 0.4], 1.3);
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
        assert_eq!(distance(&x, &y).unwrap(), distance(&y, &x).unwrap());
        assert!(distance(&x, &y).unwrap() > 0.0);
    }

    #[test]
    fn series_branches_are_continuous() {
        for f in [tanh_ratio, tanh_ratio_slope, artanh_ratio, artanh_ratio_slope] {
            let below = f(SERIES_CUTOFF * (1.0 - 1e-9));
            let above = f(SERIES_CUTOFF);
            assert!((below - above).abs() < 1e-9, "{below} vs {above}");
        }
    }
}

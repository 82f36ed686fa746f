//! The Kolmogorov group on `R^m x R^m x R`: group law, anisotropic dilations,
//! homogeneous norm, symmetric quasi-distance, balls and reference points.
//!
//! Coordinates are `(X, Y, t)` with `X, Y in R^m`. The group law is
//! `(X~, Y~, t~) o (X, Y, t) = (X~ + X, Y~ + Y - t X~, t~ + t)` and the
//! dilations are `delta_r (X, Y, t) = (r X, r^3 Y, r^2 t)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// A point `(X, Y, t)` of the group. Components are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    x: Vec<f64>,
    y: Vec<f64>,
    t: f64,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>, t: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(invalid("phase points need m >= 1"));
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        if !t.is_finite() || x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phase point"));
        }
        Ok(Self { x, y, t })
    }

    pub fn origin(m: usize) -> Self {
        assert!(m >= 1, "m must be positive");
        Self {
            x: vec![0.0; m],
            y: vec![0.0; m],
            t: 0.0,
        }
    }

    /// Builds a point without validation; callers guarantee finiteness.
    pub(crate) fn from_parts(x: Vec<f64>, y: Vec<f64>, t: f64) -> Self {
        debug_assert_eq!(x.len(), y.len());
        Self { x, y, t }
    }

    pub fn m(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Last spatial coordinate `x_m`.
    pub fn xm(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// The first `m - 1` spatial coordinates.
    pub fn x_tangential(&self) -> &[f64] {
        &self.x[..self.x.len() - 1]
    }

    fn check_same_m(&self, other: &Self) -> Result<()> {
        if self.m() != other.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                found: other.m(),
            });
        }
        Ok(())
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        compose(self, other)
    }

    pub fn inverse(&self) -> Self {
        inverse(self)
    }

    pub fn norm(&self) -> f64 {
        group_norm(self)
    }
}

/// Structural constants of the group for a given `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConstants {
    pub m: usize,
    /// Homogeneous dimension, `4m + 2`.
    pub q: usize,
}

impl GroupConstants {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        Ok(Self { m, q: 4 * m + 2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

/// Scale `rho`, aperture `lambda` and time orientation of a reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceParams {
    pub rho: f64,
    pub lambda: f64,
    pub sign: Sign,
}

impl ReferenceParams {
    pub fn new(rho: f64, lambda: f64, sign: Sign) -> Result<Self> {
        let params = Self { rho, lambda, sign };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(invalid(format!("reference scale rho must be > 0, got {}", self.rho)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 1.0) {
            return Err(invalid(format!(
                "reference aperture lambda must be >= 1, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `p o q = (p.X + q.X, p.Y + q.Y - q.t p.X, p.t + q.t)`.
pub fn compose(p: &PhasePoint, q: &PhasePoint) -> Result<PhasePoint> {
    p.check_same_m(q)?;
    let x = p.x.iter().zip(&q.x).map(|(a, b)| a + b).collect();
    let y =
        p.y.iter()
            .zip(&q.y)
            .zip(&p.x)
            .map(|((py, qy), px)| py + qy - q.t * px)
            .collect();
    Ok(PhasePoint::from_parts(x, y, p.t + q.t))
}

/// `(X, Y, t)^{-1} = (-X, -Y - t X, -t)`.
pub fn inverse(p: &PhasePoint) -> PhasePoint {
    let x = p.x.iter().map(|v| -v).collect();
    let y = p.y.iter().zip(&p.x).map(|(y, x)| -y - p.t * x).collect();
    PhasePoint::from_parts(x, y, -p.t)
}

/// Closed form of `p~^{-1} o p`, i.e. `(X - X~, Y - Y~ + (t - t~) X~, t - t~)`.
pub fn relative(p_tilde: &PhasePoint, p: &PhasePoint) -> Result<PhasePoint> {
    p.check_same_m(p_tilde)?;
    let dt = p.t - p_tilde.t;
    let x = p.x.iter().zip(&p_tilde.x).map(|(a, b)| a - b).collect();
    let y =
        p.y.iter()
            .zip(&p_tilde.y)
            .zip(&p_tilde.x)
            .map(|((y, yt), xt)| y - yt + dt * xt)
            .collect();
    Ok(PhasePoint::from_parts(x, y, dt))
}

pub fn dilate(r: f64, p: &PhasePoint) -> Result<PhasePoint> {
    if !(r.is_finite() && r > 0.0) {
        return Err(invalid(format!("dilation factor must be > 0, got {r}")));
    }
    let r3 = r * r * r;
    Ok(PhasePoint::from_parts(
        p.x.iter().map(|v| r * v).collect(),
        p.y.iter().map(|v| r3 * v).collect(),
        r * r * p.t,
    ))
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `|X| + |Y|^{1/3} + |t|^{1/2}` with Euclidean block norms.
pub fn group_norm(p: &PhasePoint) -> f64 {
    norm_parts(&p.x, &p.y, p.t)
}

pub(crate) fn norm_parts(x: &[f64], y: &[f64], t: f64) -> f64 {
    euclid(x) + euclid(y).cbrt() + t.abs().sqrt()
}

/// `d(p, q) = (||q^{-1} o p|| + ||p^{-1} o q||) / 2`.
pub fn quasi_distance(p: &PhasePoint, q: &PhasePoint) -> Result<f64> {
    p.check_same_m(q)?;
    Ok(distance_unchecked(p, q))
}

pub(crate) fn distance_unchecked(p: &PhasePoint, q: &PhasePoint) -> f64 {
    // Both relative displacements share |X - X~| and |t - t~|^{1/2}.
    let dt = p.t - q.t;
    let mut dx2 = 0.0;
    let mut a2 = 0.0;
    let mut b2 = 0.0;
    for i in 0..p.m() {
        let dx = p.x[i] - q.x[i];
        let dy = p.y[i] - q.y[i];
        dx2 += dx * dx;
        let a = dy + dt * q.x[i];
        let b = -dy - dt * p.x[i];
        a2 += a * a;
        b2 += b * b;
    }
    dx2.sqrt() + dt.abs().sqrt() + 0.5 * (a2.sqrt().cbrt() + b2.sqrt().cbrt())
}

/// Open ball membership: `d(p, center) < r`.
pub fn ball_contains(center: &PhasePoint, r: f64, p: &PhasePoint) -> Result<bool> {
    if !(r.is_finite() && r > 0.0) {
        return Err(invalid(format!("ball radius must be > 0, got {r}")));
    }
    Ok(quasi_distance(p, center)? < r)
}

/// The point `A^{+/-}_{rho, Lambda}` in split coordinates, before translation.
pub fn reference_offset(m: usize, params: &ReferenceParams) -> Result<PhasePoint> {
    params.validate()?;
    let ReferenceParams { rho, lambda, sign } = *params;
    let s = match sign {
        Sign::Plus => 1.0,
        Sign::Minus => -1.0,
    };
    let mut x = vec![0.0; m];
    let mut y = vec![0.0; m];
    x[m - 1] = lambda * rho;
    y[m - 1] = -s * 2.0 / 3.0 * lambda * rho.powi(3);
    Ok(PhasePoint::from_parts(x, y, s * rho * rho))
}

/// `base o A^{+/-}_{rho, Lambda}`.
pub fn reference_point(base: &PhasePoint, params: &ReferenceParams) -> Result<PhasePoint> {
    compose(base, &reference_offset(base.m(), params)?)
}

pub fn project_x(p: &PhasePoint) -> Vec<f64> {
    p.x.clone()
}

pub fn project_xt(p: &PhasePoint) -> (Vec<f64>, f64) {
    (p.x.clone(), p.t)
}

/// Monte Carlo volume of `B_r(origin)` with its standard error.
///
/// Importance sampling in homogeneous radial coordinates:
/// `|X| = r a`, `|t| = (r b)^2`, then with `s = r - |X| - |t|^{1/2}` the ball
/// forces `|Y| < 8 s^3` and `|Y| = 8 (s c)^3`, with `a, b, c` uniform and
/// uniform directions. Each sample carries the Jacobian, so weights stay bounded.
pub fn ball_volume_monte_carlo(m: usize, r: f64, samples: u64, seed: u64) -> Result<(f64, f64)> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid("ball radius must be > 0"));
    }
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    // Surface area of the unit sphere in R^m.
    let sphere = m as f64 * std::f64::consts::PI.powf(m as f64 / 2.0) / gamma_half_integer(m + 2);
    let origin = PhasePoint::origin(m);
    let mut rng = rng::stream(seed, 0);
    let mut p = PhasePoint::origin(m);
    let direction = |rng: &mut rand_chacha::ChaCha8Rng, out: &mut [f64], radius: f64| loop {
        for v in out.iter_mut() {
            *v = rng.sample(rand_distr::StandardNormal);
        }
        let n = euclid(out);
        if n > 0.0 {
            for v in out.iter_mut() {
                *v *= radius / n;
            }
            break;
        }
    };
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..samples {
        let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let rx = r * a;
        direction(&mut rng, &mut p.x, rx);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        p.t = sign * (r * b).powi(2);
        let s = r - rx - r * b;
        let mut w = 0.0;
        if s > 0.0 {
            let ry = 8.0 * (s * c).powi(3);
            direction(&mut rng, &mut p.y, ry);
            if distance_unchecked(&p, &origin) < r {
                let jx = sphere * rx.powi(m as i32 - 1) * r;
                let jt = 2.0 * 2.0 * r * r * b;
                let jy = sphere * ry.powi(m as i32 - 1) * 24.0 * s.powi(3) * c * c;
                w = jx * jt * jy;
            }
        }
        sum += w;
        sum2 += w * w;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// `Gamma(k / 2)` for a positive integer `k`.
fn gamma_half_integer(k: usize) -> f64 {
    let mut g = if k.is_multiple_of(2) {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut j = if k.is_multiple_of(2) { 2 } else { 1 };
    while j < k {
        g *= j as f64 / 2.0;
        j += 2;
    }
    g
}

/// Draws a point with every coordinate uniform in `[-bound, bound]`.
pub fn random_point<R: Rng>(rng: &mut R, m: usize, bound: f64) -> PhasePoint {
    let mut draw = || bound * (2.0 * rng.random::<f64>() - 1.0);
    let x = (0..m).map(|_| draw()).collect();
    let y = (0..m).map(|_| draw()).collect();
    let t = draw();
    PhasePoint::from_parts(x, y, t)
}

/// Empirical constants of the pseudo-triangle inequalities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasiMetricConstants {
    pub m: usize,
    pub samples: u64,
    /// `max ||p^{-1}|| / ||p||`.
    pub inverse: f64,
    /// `max ||p o q|| / (||p|| + ||q||)`.
    pub product: f64,
    /// `max d(p, q) / (d(p, w) + d(w, q))`.
    pub triangle: f64,
}

/// Measures the comparison constants over random samples. Coordinates are
/// drawn on a log scale so that all block scalings are exercised.
pub fn measure_quasi_metric_constants(m: usize, samples: u64, seed: u64) -> QuasiMetricConstants {
    let mut rng = rng::stream(seed, 1);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let scale = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
        random_point(rng, m, scale)
    };
    let (mut inverse_c, mut product_c, mut triangle_c) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let w = draw(&mut rng);
        let np = group_norm(&p);
        let nq = group_norm(&q);
        if np > 0.0 {
            inverse_c = inverse_c.max(group_norm(&inverse(&p)) / np);
        }
        let pq = compose(&p, &q).expect("same m");
        if np + nq > 0.0 {
            product_c = product_c.max(group_norm(&pq) / (np + nq));
        }
        let lhs = distance_unchecked(&p, &q);
        let rhs = distance_unchecked(&p, &w) + distance_unchecked(&w, &q);
        if rhs > 0.0 {
            triangle_c = triangle_c.max(lhs / rhs);
        }
    }
    QuasiMetricConstants {
        m,
        samples,
        inverse: inverse_c,
        product: product_c,
        triangle: triangle_c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64, t: f64) -> PhasePoint {
        PhasePoint::new(vec![x], vec![y], t).unwrap()
    }

    #[test]
    fn compose_matches_hand_substitution() {
        let p = compose(&pt(1.0, 0.0, 0.0), &pt(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(p, pt(1.0, -1.0, 1.0));
        let a = pt(0.3, -2.0, 4.0);
        assert_eq!(compose(&a, &PhasePoint::origin(1)).unwrap(), a);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse(&pt(2.0, 3.0, 1.0)), pt(-2.0, -5.0, -1.0));
        assert_eq!(inverse(&PhasePoint::origin(1)).norm(), 0.0);
        let p = pt(0.7, -1.1, 2.5);
        let back = inverse(&inverse(&p));
        assert!((back.y()[0] - p.y()[0]).abs() < 1e-15);
        let e = compose(&p, &inverse(&p)).unwrap();
        assert!(e.norm() < 1e-5);
    }

    #[test]
    fn dilation_examples() {
        let p = dilate(2.0, &pt(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(p, pt(2.0, 8.0, 4.0));
        assert!(dilate(0.0, &p).is_err());
        assert!(dilate(-1.0, &p).is_err());
        assert_eq!(dilate(1.0, &p).unwrap(), p);
    }

    #[test]
    fn norm_examples() {
        assert_eq!(group_norm(&pt(1.0, 8.0, 4.0)), 5.0);
        assert_eq!(group_norm(&PhasePoint::origin(3)), 0.0);
    }

    #[test]
    fn distance_examples() {
        let o = PhasePoint::origin(1);
        assert_eq!(quasi_distance(&o, &pt(1.0, 0.0, 0.0)).unwrap(), 1.0);
        let p = pt(0.2, 0.4, -0.3);
        assert_eq!(quasi_distance(&p, &p).unwrap(), 0.0);
        let generic =
            0.5 * (group_norm(&compose(&inverse(&o), &p).unwrap()) + group_norm(&compose(&inverse(&p), &o).unwrap()));
        assert!((quasi_distance(&p, &o).unwrap() - generic).abs() < 1e-14);
    }

    #[test]
    fn ball_is_open() {
        let c = PhasePoint::origin(1);
        assert!(ball_contains(&c, 0.5, &c).unwrap());
        assert!(!ball_contains(&c, 1.0, &pt(1.0, 0.0, 0.0)).unwrap());
        assert!(ball_contains(&c, 0.0, &c).is_err());
    }

    #[test]
    fn reference_point_examples() {
        let o = PhasePoint::origin(1);
        let plus = reference_point(&o, &ReferenceParams::new(1.0, 2.0, Sign::Plus).unwrap()).unwrap();
        assert!((plus.x()[0] - 2.0).abs() < 1e-15);
        assert!((plus.y()[0] + 4.0 / 3.0).abs() < 1e-15);
        assert!((plus.t() - 1.0).abs() < 1e-15);
        let minus = reference_point(&o, &ReferenceParams::new(1.0, 2.0, Sign::Minus).unwrap()).unwrap();
        assert!((minus.y()[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((minus.t() + 1.0).abs() < 1e-15);
        assert!(ReferenceParams::new(0.0, 2.0, Sign::Plus).is_err());
        assert!(ReferenceParams::new(1.0, 0.5, Sign::Plus).is_err());
    }

    #[test]
    fn reference_point_is_dilation_covariant() {
        let r = 1.7;
        let a = reference_offset(2, &ReferenceParams::new(0.6, 1.5, Sign::Plus).unwrap()).unwrap();
        let b = reference_offset(2, &ReferenceParams::new(0.6 * r, 1.5, Sign::Plus).unwrap()).unwrap();
        let da = dilate(r, &a).unwrap();
        for i in 0..2 {
            assert!((da.x()[i] - b.x()[i]).abs() < 1e-12);
            assert!((da.y()[i] - b.y()[i]).abs() < 1e-12);
        }
        assert!((da.t() - b.t()).abs() < 1e-12);
    }

    #[test]
    fn projections() {
        let p = pt(1.0, 2.0, 3.0);
        assert_eq!(project_x(&p), vec![1.0]);
        assert_eq!(project_xt(&p), (vec![1.0], 3.0));
        assert_eq!(project_x(&dilate(3.0, &p).unwrap()), vec![3.0]);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(PhasePoint::new(vec![f64::NAN], vec![0.0], 0.0).is_err());
        assert!(PhasePoint::new(vec![0.0], vec![0.0, 1.0], 0.0).is_err());
        assert!(PhasePoint::new(vec![], vec![], 0.0).is_err());
        assert!(PhasePoint::new(vec![0.0], vec![0.0], f64::INFINITY).is_err());
        let a = PhasePoint::origin(1);
        let b = PhasePoint::origin(2);
        assert!(compose(&a, &b).is_err());
        assert_eq!(GroupConstants::new(3).unwrap().q, 14);
    }

    #[test]
    fn quasi_metric_constants_are_finite() {
        let c = measure_quasi_metric_constants(2, 20_000, 11);
        assert!(c.inverse >= 1.0 && c.inverse.is_finite());
        assert!(c.triangle >= 0.5 && c.triangle.is_finite());
        assert!(c.product.is_finite());
    }
}

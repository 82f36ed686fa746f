//! Lipschitz graph domains `{x_m > psi(x)}`, their surface measures, and
//! closed-form coefficient fields `A(X)`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::PhasePoint;
use crate::{quad, rng};

/// Which operator a boundary measure belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    /// `div(A grad)` on `Omega`.
    #[serde(rename = "E")]
    Elliptic,
    /// `div(A grad) - d_t` on `Omega x R`.
    #[serde(rename = "P")]
    Parabolic,
    /// `div(A grad) + X . grad_Y - d_t` on `Omega x R^m x R`.
    #[serde(rename = "K")]
    Kolmogorov,
}

/// One term `amp * sin(freq . x + phase)` of a trigonometric graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineTerm {
    pub amp: f64,
    pub freq: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
}

/// Closed-form defining functions `psi: R^{m-1} -> R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Psi {
    Flat {
        #[serde(default)]
        level: f64,
    },
    Affine {
        slope: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    Trig {
        #[serde(default)]
        offset: f64,
        terms: Vec<SineTerm>,
    },
    /// `amp * sqrt(sin^2(freq . x) + delta^2)`, a smoothed `|sin|` sawtooth.
    SmoothAbsSine { amp: f64, freq: Vec<f64>, delta: f64 },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl Psi {
    fn check(&self, dim: usize) -> Result<()> {
        let bad = |what: &str, n: usize| invalid(format!("{what} has length {n}, expected m - 1 = {dim}"));
        match self {
            Psi::Flat { level } => {
                if !level.is_finite() {
                    return Err(Error::NonFinite("psi level"));
                }
            }
            Psi::Affine { slope, .. } if slope.len() != dim => return Err(bad("slope", slope.len())),
            Psi::Trig { terms, .. } => {
                for term in terms {
                    if term.freq.len() != dim {
                        return Err(bad("sine frequency", term.freq.len()));
                    }
                }
            }
            Psi::SmoothAbsSine { freq, delta, .. } => {
                if freq.len() != dim {
                    return Err(bad("sine frequency", freq.len()));
                }
                if *delta <= 0.0 {
                    return Err(invalid("smoothing delta must be > 0"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Psi::Flat { level } => *level,
            Psi::Affine { slope, offset } => offset + dot(slope, x),
            Psi::Trig { offset, terms } => {
                offset
                    + terms
                        .iter()
                        .map(|t| t.amp * (dot(&t.freq, x) + t.phase).sin())
                        .sum::<f64>()
            }
            Psi::SmoothAbsSine { amp, freq, delta } => {
                let s = dot(freq, x).sin();
                amp * (s * s + delta * delta).sqrt()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match self {
            Psi::Flat { .. } => {}
            Psi::Affine { slope, .. } => g.copy_from_slice(slope),
            Psi::Trig { terms, .. } => {
                for t in terms {
                    let c = t.amp * (dot(&t.freq, x) + t.phase).cos();
                    for (gi, fi) in g.iter_mut().zip(&t.freq) {
                        *gi += c * fi;
                    }
                }
            }
            Psi::SmoothAbsSine { amp, freq, delta } => {
                let arg = dot(freq, x);
                let (s, c) = arg.sin_cos();
                let c0 = amp * s * c / (s * s + delta * delta).sqrt();
                for (gi, fi) in g.iter_mut().zip(freq) {
                    *gi = c0 * fi;
                }
            }
        }
        g
    }

    /// An upper bound for the Lipschitz constant from the closed form.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            Psi::Flat { .. } => 0.0,
            Psi::Affine { slope, .. } => norm(slope),
            Psi::Trig { terms, .. } => terms.iter().map(|t| t.amp.abs() * norm(&t.freq)).sum(),
            Psi::SmoothAbsSine { amp, freq, .. } => amp.abs() * norm(freq),
        }
    }
}

/// `Omega = {(x, x_m) : x_m > psi(x)}` in `R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDomain {
    pub m: usize,
    pub psi: Psi,
}

impl GraphDomain {
    pub fn new(m: usize, psi: Psi) -> Result<Self> {
        if m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        psi.check(m - 1)?;
        Ok(Self { m, psi })
    }

    /// Half-space `x_m > 0`.
    pub fn flat(m: usize) -> Self {
        Self::new(m, Psi::Flat { level: 0.0 }).expect("flat domain is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        self.psi.check(self.m - 1)
    }

    pub fn lipschitz_m(&self) -> f64 {
        self.psi.lipschitz_bound()
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        self.psi.value(x)
    }

    /// Signed vertical height `x_m - psi(x)` of a spatial point.
    pub fn height(&self, x_full: &[f64]) -> f64 {
        let m = x_full.len();
        x_full[m - 1] - self.psi.value(&x_full[..m - 1])
    }

    pub fn contains_x(&self, x_full: &[f64]) -> bool {
        self.height(x_full) > 0.0
    }

    /// Strict membership in `Omega x R^m x R`.
    pub fn contains(&self, p: &PhasePoint) -> Result<bool> {
        if p.m() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: p.m(),
            });
        }
        Ok(self.contains_x(p.x()))
    }

    /// `sqrt(1 + |grad psi|^2)`; always at least one.
    pub fn surface_density(&self, x: &[f64]) -> f64 {
        let g = self.psi.gradient(x);
        (1.0 + dot(&g, &g)).sqrt()
    }

    /// Lifts tangential coordinates onto the graph.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        let mut full = x.to_vec();
        full.push(self.psi.value(x));
        full
    }

    /// Boundary point with tangential coordinates `x`.
    pub fn boundary_point(&self, x: &[f64], y: Vec<f64>, t: f64) -> Result<PhasePoint> {
        if x.len() + 1 != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m - 1,
                found: x.len(),
            });
        }
        PhasePoint::new(self.lift(x), y, t)
    }

    /// Largest ratio `|psi(x) - psi(x')| / |x - x'|` over random pairs in `[-window, window]^{m-1}`.
    pub fn sampled_lipschitz(&self, pairs: u64, window: f64, seed: u64) -> f64 {
        let dim = self.m - 1;
        if dim == 0 {
            return 0.0;
        }
        let mut rng = rng::stream(seed, 0);
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let a: Vec<f64> = (0..dim).map(|_| window * (2.0 * rng.random::<f64>() - 1.0)).collect();
            let scale = 10f64.powf(-3.0 * rng.random::<f64>());
            let b: Vec<f64> = a
                .iter()
                .map(|v| v + scale * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            let dist = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            if dist > 0.0 {
                worst = worst.max((self.psi(&a) - self.psi(&b)).abs() / dist);
            }
        }
        worst
    }

    /// Integral of the surface density over a tangential box, optionally
    /// restricted to points whose graph height stays within `band` of `center_height`.
    pub(crate) fn tangential_area(
        &self,
        lo: &[f64],
        hi: &[f64],
        band: Option<(f64, f64)>,
        panels: usize,
    ) -> Result<f64> {
        let mut bad = false;
        let v = quad::integrate_box(lo, hi, panels, |x| {
            if let Some((center, half)) = band {
                if (self.psi(x) - center).abs() >= half {
                    return 0.0;
                }
            }
            let d = self.surface_density(x);
            if !d.is_finite() {
                bad = true;
            }
            d
        });
        if bad || !v.is_finite() {
            return Err(Error::Quadrature("non-finite surface density".into()));
        }
        Ok(v)
    }
}

/// Surface cube `Delta_r(p0) = Sigma  ∩  (p0 o Q_r)` with `Q_r = delta_r (-1, 1)^{2m+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCube {
    pub center: PhasePoint,
    pub r: f64,
}

impl SurfaceCube {
    pub fn new(dom: &GraphDomain, center: PhasePoint, r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(invalid(format!("cube radius must be > 0, got {r}")));
        }
        if center.m() != dom.m {
            return Err(Error::DimensionMismatch {
                expected: dom.m,
                found: center.m(),
            });
        }
        if dom.height(center.x()).abs() > 1e-12 {
            return Err(invalid("surface cube center is not on the boundary"));
        }
        Ok(Self { center, r })
    }

    /// Cube centred at the boundary point above tangential coordinates `x`.
    pub fn at(dom: &GraphDomain, x: &[f64], y: Vec<f64>, t: f64, r: f64) -> Result<Self> {
        Self::new(dom, dom.boundary_point(x, y, t)?, r)
    }

    /// `delta_gamma`-enlarged cube about the same centre.
    pub fn scaled(&self, gamma: f64) -> Self {
        Self {
            center: self.center.clone(),
            r: self.r * gamma,
        }
    }

    fn x_inside(&self, x: &[f64]) -> bool {
        x.iter().zip(self.center.x()).all(|(a, b)| (a - b).abs() < self.r)
    }

    /// Membership of a boundary point in the cube.
    pub fn contains(&self, p: &PhasePoint) -> bool {
        let c = &self.center;
        let dt = p.t() - c.t();
        let r3 = self.r.powi(3);
        self.x_inside(p.x())
            && dt.abs() < self.r * self.r
            && p.y()
                .iter()
                .zip(c.y())
                .zip(c.x())
                .all(|((y, yc), xc)| (y - yc + dt * xc).abs() < r3)
    }

    /// Membership in the projection onto `(X, t)`.
    pub fn contains_xt(&self, x: &[f64], t: f64) -> bool {
        self.x_inside(x) && (t - self.center.t()).abs() < self.r * self.r
    }

    /// Membership in the projection onto `X`.
    pub fn contains_x(&self, x: &[f64]) -> bool {
        self.x_inside(x)
    }

    pub fn contains_kind(&self, p: &PhasePoint, kind: MeasureKind) -> bool {
        match kind {
            MeasureKind::Kolmogorov => self.contains(p),
            MeasureKind::Parabolic => self.contains_xt(p.x(), p.t()),
            MeasureKind::Elliptic => self.contains_x(p.x()),
        }
    }
}

const SIGMA_PANELS: usize = 16;

/// `sigma_E`, `sigma_P` or `sigma_K` of a surface cube (or of its projection).
///
/// The tangential part is integrated numerically; the `Y` and `t` factors are
/// exact because the group action shears `Y` with unit Jacobian.
pub fn sigma_of_cube(dom: &GraphDomain, cube: &SurfaceCube, which: MeasureKind) -> Result<f64> {
    let r = cube.r;
    let c = cube.center.x();
    let m = dom.m;
    let tangential = &c[..m - 1];
    let lo: Vec<f64> = tangential.iter().map(|v| v - r).collect();
    let hi: Vec<f64> = tangential.iter().map(|v| v + r).collect();
    let band = if dom.lipschitz_m() * r * ((m - 1) as f64).sqrt() < r {
        None
    } else {
        Some((c[m - 1], r))
    };
    let area = dom.tangential_area(&lo, &hi, band, SIGMA_PANELS)?;
    Ok(match which {
        MeasureKind::Elliptic => area,
        MeasureKind::Parabolic => area * 2.0 * r * r,
        MeasureKind::Kolmogorov => area * (2.0 * r.powi(3)).powi(m as i32) * 2.0 * r * r,
    })
}

/// `sigma` of a parameter rectangle `x in [lo, hi]`, `Y` of volume `y_volume`, `t` of length `t_len`.
pub fn sigma_of_param_box(
    dom: &GraphDomain,
    lo: &[f64],
    hi: &[f64],
    y_volume: f64,
    t_len: f64,
    which: MeasureKind,
) -> Result<f64> {
    let area = dom.tangential_area(lo, hi, None, 4)?;
    Ok(match which {
        MeasureKind::Elliptic => area,
        MeasureKind::Parabolic => area * t_len,
        MeasureKind::Kolmogorov => area * y_volume * t_len,
    })
}

/// A periodic scalar profile `mean + amp sin(2 pi freq s + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub mean: f64,
    #[serde(default)]
    pub amp: f64,
    #[serde(default = "one")]
    pub freq: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

impl Profile {
    pub fn constant(mean: f64) -> Self {
        Self {
            mean,
            amp: 0.0,
            freq: 1.0,
            phase: 0.0,
        }
    }

    pub fn sine(mean: f64, amp: f64, freq: f64) -> Self {
        Self {
            mean,
            amp,
            freq,
            phase: 0.0,
        }
    }

    fn value(&self, s: f64) -> f64 {
        self.mean + self.amp * (2.0 * PI * self.freq * s + self.phase).sin()
    }

    fn derivative(&self, s: f64) -> f64 {
        self.amp * 2.0 * PI * self.freq * (2.0 * PI * self.freq * s + self.phase).cos()
    }

    pub fn harmonic_mean(&self) -> f64 {
        if self.amp == 0.0 {
            self.mean
        } else {
            (self.mean * self.mean - self.amp * self.amp).sqrt()
        }
    }
}

/// One term `matrix * sin(2 pi freq . X + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub matrix: Vec<Vec<f64>>,
    pub freq: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientFamily {
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    TrigPolynomial {
        base: Vec<Vec<f64>>,
        terms: Vec<TrigTerm>,
    },
    /// `diag(p_1(x_axis), ..., p_m(x_axis))`.
    Laminate {
        axis: usize,
        diagonal: Vec<Profile>,
    },
}

/// Smooth radial blend to the identity outside `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blend {
    pub radius: f64,
    pub width: f64,
}

impl Blend {
    /// Quintic smoothstep from 1 (inside) to 0 (outside) and its radial derivative.
    fn weight(&self, rho: f64) -> (f64, f64) {
        if rho <= self.radius {
            return (1.0, 0.0);
        }
        if rho >= self.radius + self.width {
            return (0.0, 0.0);
        }
        let s = (rho - self.radius) / self.width;
        let w = 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        let dw = -30.0 * s * s * (1.0 - s) * (1.0 - s) / self.width;
        (w, dw)
    }
}

/// Symmetric `m x m` coefficient field from a closed-form family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRepr")]
pub struct CoefficientField {
    pub m: usize,
    #[serde(flatten)]
    pub family: CoefficientFamily,
    pub kappa: f64,
    /// Spatial scale: the field evaluates `A(X / scale)`.
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blend: Option<Blend>,
}

/// Flat form of [`CoefficientField`] so that unknown keys are rejected
/// (serde cannot deny unknown fields through a flattened enum).
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldRepr {
    m: usize,
    family: String,
    kappa: f64,
    #[serde(default = "one")]
    scale: f64,
    #[serde(default)]
    blend: Option<Blend>,
    matrix: Option<Vec<Vec<f64>>>,
    base: Option<Vec<Vec<f64>>>,
    terms: Option<Vec<TrigTerm>>,
    axis: Option<usize>,
    diagonal: Option<Vec<Profile>>,
}

impl TryFrom<FieldRepr> for CoefficientField {
    type Error = String;

    fn try_from(r: FieldRepr) -> std::result::Result<Self, String> {
        let family = match (r.family.as_str(), r.matrix, r.base, r.terms, r.axis, r.diagonal) {
            ("constant", Some(matrix), None, None, None, None) => CoefficientFamily::Constant { matrix },
            ("trig_polynomial", None, Some(base), Some(terms), None, None) => {
                CoefficientFamily::TrigPolynomial { base, terms }
            }
            ("laminate", None, None, None, Some(axis), Some(diagonal)) => {
                CoefficientFamily::Laminate { axis, diagonal }
            }
            ("constant", ..) => return Err("family `constant` takes exactly the key `matrix`".into()),
            ("trig_polynomial", ..) => {
                return Err("family `trig_polynomial` takes exactly the keys `base`, `terms`".into())
            }
            ("laminate", ..) => return Err("family `laminate` takes exactly the keys `axis`, `diagonal`".into()),
            (other, ..) => {
                return Err(format!(
                    "unknown variant `{other}`, expected one of `constant`, `trig_polynomial`, `laminate`"
                ))
            }
        };
        let field = CoefficientField {
            m: r.m,
            family,
            kappa: r.kappa,
            scale: r.scale,
            blend: r.blend,
        };
        field.validate().map_err(|e| e.to_string())?;
        Ok(field)
    }
}

fn check_square(mat: &[Vec<f64>], m: usize, what: &str) -> Result<()> {
    if mat.len() != m || mat.iter().any(|row| row.len() != m) {
        return Err(invalid(format!("{what} must be {m}x{m}")));
    }
    for i in 0..m {
        for j in 0..m {
            if !mat[i][j].is_finite() {
                return Err(Error::NonFinite("coefficient matrix"));
            }
            if (mat[i][j] - mat[j][i]).abs() > 1e-14 * (1.0 + mat[i][j].abs()) {
                return Err(invalid(format!("{what} is not symmetric")));
            }
        }
    }
    Ok(())
}

impl CoefficientField {
    pub fn new(m: usize, family: CoefficientFamily, kappa: f64) -> Result<Self> {
        let field = Self {
            m,
            family,
            kappa,
            scale: 1.0,
            blend: None,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn identity(m: usize) -> Self {
        let mut matrix = vec![vec![0.0; m]; m];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self::new(m, CoefficientFamily::Constant { matrix }, 1.0).expect("identity is valid")
    }

    /// Scalar multiple of the identity.
    pub fn scalar(m: usize, value: f64) -> Result<Self> {
        let mut matrix = vec![vec![0.0; m]; m];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = value;
        }
        let kappa = value.max(1.0 / value);
        Self::new(m, CoefficientFamily::Constant { matrix }, kappa)
    }

    /// The one-dimensional field `mean + amp sin(2 pi freq x)`.
    pub fn sinusoid_1d(mean: f64, amp: f64, freq: f64) -> Result<Self> {
        let lo = mean - amp.abs();
        let hi = mean + amp.abs();
        Self::new(
            1,
            CoefficientFamily::Laminate {
                axis: 0,
                diagonal: vec![Profile::sine(mean, amp, freq)],
            },
            hi.max(1.0 / lo),
        )
    }

    pub fn with_blend(mut self, blend: Blend) -> Result<Self> {
        self.blend = Some(blend);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m;
        if m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        if !(self.kappa.is_finite() && self.kappa >= 1.0) {
            return Err(invalid(format!("kappa must be >= 1, got {}", self.kappa)));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(invalid("scale must be > 0"));
        }
        match &self.family {
            CoefficientFamily::Constant { matrix } => check_square(matrix, m, "constant matrix")?,
            CoefficientFamily::TrigPolynomial { base, terms } => {
                check_square(base, m, "base matrix")?;
                for term in terms {
                    check_square(&term.matrix, m, "term matrix")?;
                    if term.freq.len() != m {
                        return Err(invalid("term frequency must have length m"));
                    }
                }
            }
            CoefficientFamily::Laminate { axis, diagonal } => {
                if *axis >= m {
                    return Err(invalid(format!("laminate axis {axis} out of range")));
                }
                if diagonal.len() != m {
                    return Err(invalid("laminate needs m diagonal profiles"));
                }
                if diagonal.iter().any(|p| p.mean - p.amp.abs() <= 0.0) {
                    return Err(invalid("laminate profile is not positive"));
                }
            }
        }
        if let Some(b) = &self.blend {
            if !(b.radius > 0.0 && b.width > 0.0) {
                return Err(invalid("blend radius and width must be > 0"));
            }
        }
        Ok(())
    }

    /// `A^eps(X) = A(X / eps)`.
    pub fn rescale(&self, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(invalid(format!("eps must be > 0, got {eps}")));
        }
        let mut out = self.clone();
        out.scale = self.scale * eps;
        Ok(out)
    }

    pub fn is_constant(&self) -> bool {
        match &self.family {
            CoefficientFamily::Constant { .. } => self.blend.is_none(),
            CoefficientFamily::TrigPolynomial { terms, .. } => {
                terms.iter().all(|t| t.matrix.iter().flatten().all(|v| *v == 0.0)) && self.blend.is_none()
            }
            CoefficientFamily::Laminate { diagonal, .. } => {
                diagonal.iter().all(|p| p.amp == 0.0) && self.blend.is_none()
            }
        }
    }

    /// True when `A(X + Z) = A(X)` for all `Z` in `Z^m` by construction.
    pub fn is_periodic(&self) -> bool {
        if self.blend.is_some() {
            return false;
        }
        let integral = |f: f64| {
            let g = f / self.scale;
            (g - g.round()).abs() < 1e-9
        };
        match &self.family {
            CoefficientFamily::Constant { .. } => true,
            CoefficientFamily::TrigPolynomial { terms, .. } => {
                terms.iter().all(|t| t.freq.iter().all(|f| integral(*f)))
            }
            CoefficientFamily::Laminate { diagonal, .. } => diagonal.iter().all(|p| p.amp == 0.0 || integral(p.freq)),
        }
    }

    /// True when `A` does not depend on `x_m`.
    pub fn is_xm_independent(&self) -> bool {
        if self.blend.is_some() {
            return false;
        }
        let last = self.m - 1;
        match &self.family {
            CoefficientFamily::Constant { .. } => true,
            CoefficientFamily::TrigPolynomial { terms, .. } => terms
                .iter()
                .all(|t| t.freq[last] == 0.0 || t.matrix.iter().flatten().all(|v| *v == 0.0)),
            CoefficientFamily::Laminate { axis, diagonal } => *axis != last || diagonal.iter().all(|p| p.amp == 0.0),
        }
    }

    /// Row-major `A(x)` written into `out` (length `m * m`).
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.m;
        let s = 1.0 / self.scale;
        match &self.family {
            CoefficientFamily::Constant { matrix } => {
                for i in 0..m {
                    out[i * m..(i + 1) * m].copy_from_slice(&matrix[i]);
                }
            }
            CoefficientFamily::TrigPolynomial { base, terms } => {
                for i in 0..m {
                    out[i * m..(i + 1) * m].copy_from_slice(&base[i]);
                }
                for term in terms {
                    let arg = 2.0 * PI * s * dot(&term.freq, x) + term.phase;
                    let sn = arg.sin();
                    for i in 0..m {
                        for j in 0..m {
                            out[i * m + j] += term.matrix[i][j] * sn;
                        }
                    }
                }
            }
            CoefficientFamily::Laminate { axis, diagonal } => {
                out[..m * m].iter_mut().for_each(|v| *v = 0.0);
                let u = s * x[*axis];
                for (i, p) in diagonal.iter().enumerate() {
                    out[i * m + i] = p.value(u);
                }
            }
        }
        if let Some(blend) = &self.blend {
            let (w, _) = blend.weight(norm(x));
            for i in 0..m {
                for j in 0..m {
                    let id = if i == j { 1.0 } else { 0.0 };
                    out[i * m + j] = id + w * (out[i * m + j] - id);
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m * self.m];
        self.eval_into(x, &mut out);
        out
    }

    /// `b_j = sum_i d_i a_ij`, the drift of the Ito form of `div(A grad)`.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.m;
        let s = 1.0 / self.scale;
        out[..m].iter_mut().for_each(|v| *v = 0.0);
        match &self.family {
            CoefficientFamily::Constant { .. } => {}
            CoefficientFamily::TrigPolynomial { terms, .. } => {
                for term in terms {
                    let arg = 2.0 * PI * s * dot(&term.freq, x) + term.phase;
                    let c = 2.0 * PI * s * arg.cos();
                    for j in 0..m {
                        for i in 0..m {
                            out[j] += term.matrix[i][j] * term.freq[i] * c;
                        }
                    }
                }
            }
            CoefficientFamily::Laminate { axis, diagonal } => {
                out[*axis] = s * diagonal[*axis].derivative(s * x[*axis]);
            }
        }
        if let Some(blend) = &self.blend {
            let rho = norm(x);
            let (w, dw) = blend.weight(rho);
            let mut a = vec![0.0; m * m];
            let raw = Self {
                blend: None,
                ..self.clone()
            };
            raw.eval_into(x, &mut a);
            for j in 0..m {
                let mut extra = 0.0;
                if rho > 0.0 {
                    for i in 0..m {
                        let id = if i == j { 1.0 } else { 0.0 };
                        extra += dw * x[i] / rho * (a[i * m + j] - id);
                    }
                }
                out[j] = w * out[j] + extra;
            }
        }
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.drift_into(x, &mut out);
        out
    }

    /// Extreme eigenvalues of `A` over random points in `[-window, window]^m`,
    /// with an error if they leave `[1/kappa, kappa]`.
    pub fn check_ellipticity(&self, samples: u64, window: f64, seed: u64) -> Result<(f64, f64)> {
        let m = self.m;
        let mut rng = rng::stream(seed, 0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut a = vec![0.0; m * m];
        for _ in 0..samples {
            let x: Vec<f64> = (0..m).map(|_| window * (2.0 * rng.random::<f64>() - 1.0)).collect();
            self.eval_into(&x, &mut a);
            let mat = nalgebra::DMatrix::from_row_slice(m, m, &a);
            let eig = mat.symmetric_eigenvalues();
            lo = lo.min(eig.min());
            hi = hi.max(eig.max());
        }
        let tol = 1e-12;
        if lo < 1.0 / self.kappa - tol || hi > self.kappa + tol {
            return Err(Error::NotSpd(format!(
                "sampled eigenvalues [{lo:.6}, {hi:.6}] leave [1/kappa, kappa] = [{:.6}, {:.6}]",
                1.0 / self.kappa,
                self.kappa
            )));
        }
        Ok((lo, hi))
    }
}

/// Sampling resolution for the Dini moduli.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiniGrid {
    pub x_points: usize,
    pub lambda_points: usize,
    /// Offsets per base point, spread over `(0, rho]`.
    pub offsets: usize,
    /// Length of the sampled `x_m` (or `X`) window.
    pub window: f64,
}

impl Default for DiniGrid {
    fn default() -> Self {
        Self {
            x_points: 256,
            lambda_points: 256,
            offsets: 8,
            window: 1.0,
        }
    }
}

fn frobenius_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while n > 0 {
        out += (n % base) as f64 * inv;
        n /= base;
        inv /= base as f64;
    }
    out
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Halton point `index` in `[0, 1)^dim`.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| radical_inverse(index + 1, PRIMES[d % PRIMES.len()]))
        .collect()
}

/// `theta(rho)`: sup of `|A(x, l1) - A(x, l2)|_F` over `|l1 - l2| <= rho`,
/// sampled on a tangential point set times an `x_m` grid.
pub fn dini_modulus(field: &CoefficientField, rho: f64, grid: &DiniGrid) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(invalid(format!("rho must lie in (0, 1], got {rho}")));
    }
    let m = field.m;
    if field.is_xm_independent() {
        return Ok(0.0);
    }
    let n_tangent = if m == 1 { 1 } else { grid.x_points };
    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m * m];
    let mut x = vec![0.0; m];
    let mut sup = 0.0f64;
    for k in 0..n_tangent {
        let h = halton(k as u64, m.saturating_sub(1));
        for (i, v) in h.iter().enumerate() {
            x[i] = grid.window * v;
        }
        for l in 0..grid.lambda_points {
            let l1 = grid.window * l as f64 / grid.lambda_points as f64;
            x[m - 1] = l1;
            field.eval_into(&x, &mut a);
            for o in 1..=grid.offsets {
                x[m - 1] = l1 + rho * o as f64 / grid.offsets as f64;
                field.eval_into(&x, &mut b);
                sup = sup.max(frobenius_diff(&a, &b));
            }
        }
    }
    Ok(sup)
}

/// `Theta(rho)`: the all-variable modulus, sampled over Halton base points and
/// displacements of length up to `rho` along coordinate and diagonal directions.
pub fn dini_modulus_full(field: &CoefficientField, rho: f64, grid: &DiniGrid) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(invalid(format!("rho must lie in (0, 1], got {rho}")));
    }
    let m = field.m;
    if field.is_constant() {
        return Ok(0.0);
    }
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        directions.push(e);
    }
    for k in 0..16u64 {
        let h = halton(1000 + k, m);
        let v: Vec<f64> = h.iter().map(|u| 2.0 * u - 1.0).collect();
        let n = norm(&v);
        if n > 1e-9 {
            directions.push(v.iter().map(|c| c / n).collect());
        }
    }
    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m * m];
    let mut sup = 0.0f64;
    let samples = grid.x_points * grid.lambda_points / 16;
    for k in 0..samples.max(1) {
        let base: Vec<f64> = halton(k as u64, m).iter().map(|v| grid.window * v).collect();
        field.eval_into(&base, &mut a);
        for d in &directions {
            for o in 1..=grid.offsets {
                let len = rho * o as f64 / grid.offsets as f64;
                let p: Vec<f64> = base.iter().zip(d).map(|(x, e)| x + len * e).collect();
                field.eval_into(&p, &mut b);
                sup = sup.max(frobenius_diff(&a, &b));
            }
        }
    }
    Ok(sup)
}

/// `int_cutoff^1 theta(rho)^2 / rho d rho`, integrated in `log rho`.
pub fn dini_integral<F>(mut modulus: F, cutoff: f64, panels: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(invalid("cutoff must lie in (0, 1)"));
    }
    let mut err = None;
    let v = quad::integrate_1d(cutoff.ln(), 0.0, panels, |s| match modulus(s.exp()) {
        Ok(theta) => theta * theta,
        Err(e) => {
            err = Some(e);
            0.0
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

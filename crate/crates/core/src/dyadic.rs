//! Anisotropic dyadic cubes on `Sigma = boundary x R^m x R` and a Whitney
//! decomposition of the interior.
//!
//! Cubes are parameter rectangles in `(x', Y, t)` lifted onto the graph. A
//! level-`k` cube has side `2^-k` in each `x'` direction, `2^-3k` in each `Y`
//! direction and `2^-2k` in `t`, so one refinement step splits it into
//! `2^(m-1) * 8^m * 4` children.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{sigma_of_param_box, GraphDomain, MeasureKind, SurfaceCube};
use crate::error::{invalid, Error, Result};
use crate::geometry::{distance_unchecked, PhasePoint};
use crate::rng;

/// Parameter box `[x_lo, x_lo + x_len) x [y_lo, y_lo + y_len) x [t_lo, t_lo + t_len)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DyadicWindow {
    pub x_lo: Vec<f64>,
    pub x_len: Vec<f64>,
    pub y_lo: Vec<f64>,
    pub y_len: Vec<f64>,
    pub t_lo: f64,
    pub t_len: f64,
}

impl DyadicWindow {
    /// `[0, 1)^(2m)` in `(x', Y, t)`.
    pub fn unit(m: usize) -> Self {
        Self::centered(m, 0.0, 0.0, 0.0, 1.0)
    }

    /// A box of `n` level-0 cubes per axis, with lower corner `(x, Y, t)`.
    pub fn centered(m: usize, x: f64, y: f64, t: f64, n: f64) -> Self {
        Self {
            x_lo: vec![x; m - 1],
            x_len: vec![n; m - 1],
            y_lo: vec![y; m],
            y_len: vec![n; m],
            t_lo: t,
            t_len: n,
        }
    }

    fn axes(&self) -> Vec<(f64, f64)> {
        self.x_lo
            .iter()
            .zip(&self.x_len)
            .chain(self.y_lo.iter().zip(&self.y_len))
            .map(|(a, b)| (*a, *b))
            .chain(std::iter::once((self.t_lo, self.t_len)))
            .collect()
    }
}

/// Side lengths of a level-`k` cube: `(x', Y, t)`.
pub fn sides(k: i32) -> (f64, f64, f64) {
    let s = 2f64.powi(-k);
    (s, s * s * s, s * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: i32,
    /// Integer position per axis `(x', Y, t)`, counted from the window corner.
    pub index: Vec<i64>,
    pub center: PhasePoint,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DyadicCube {
    /// `l(Q) = 2^-k`.
    pub fn ell(&self) -> f64 {
        2f64.powi(-self.level)
    }

    /// Membership of boundary parameters `(x', Y, t)`.
    pub fn contains_params(&self, params: &[f64]) -> bool {
        params
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v < *b)
    }

    pub fn sigma(&self, dom: &GraphDomain, kind: MeasureKind) -> Result<f64> {
        let m = dom.m;
        let y_volume: f64 = (0..m).map(|j| self.hi[m - 1 + j] - self.lo[m - 1 + j]).product();
        let t_len = self.hi[2 * m - 1] - self.lo[2 * m - 1];
        sigma_of_param_box(dom, &self.lo[..m - 1], &self.hi[..m - 1], y_volume, t_len, kind)
    }

    /// The surface cube `Delta_{gamma l(Q)}` about the cube centre.
    pub fn surface_dilate(&self, dom: &GraphDomain, gamma: f64) -> Result<SurfaceCube> {
        SurfaceCube::new(dom, self.center.clone(), gamma * self.ell())
    }
}

/// Boundary parameters `(x', Y, t)` of a phase point.
pub fn params_of(p: &PhasePoint) -> Vec<f64> {
    let mut v = p.x_tangential().to_vec();
    v.extend_from_slice(p.y());
    v.push(p.t());
    v
}

/// Dyadic cubes over a fixed window for levels `k_min..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicSystem {
    pub dom: GraphDomain,
    pub window: DyadicWindow,
    pub k_min: i32,
    pub k_max: i32,
}

const MAX_CUBES: u64 = 50_000_000;

impl DyadicSystem {
    pub fn new(dom: GraphDomain, window: DyadicWindow, k_min: i32, k_max: i32) -> Result<Self> {
        let m = dom.m;
        if window.x_lo.len() != m - 1
            || window.x_len.len() != m - 1
            || window.y_lo.len() != m
            || window.y_len.len() != m
        {
            return Err(invalid("window axes do not match m"));
        }
        if k_max < k_min {
            return Err(invalid("k_max must be >= k_min"));
        }
        let sys = Self {
            dom,
            window,
            k_min,
            k_max,
        };
        for (i, (lo, len)) in sys.window.axes().iter().enumerate() {
            if !(lo.is_finite() && len.is_finite()) {
                return Err(Error::NonFinite("dyadic window"));
            }
            let side = sys.axis_side(k_min, i);
            let n = len / side;
            if n < 1.0 - 1e-9 || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
                return Err(invalid(format!(
                    "window too small for k_min={k_min}: axis {i} has length {len}, not a positive multiple of {side}"
                )));
            }
        }
        Ok(sys)
    }

    pub fn m(&self) -> usize {
        self.dom.m
    }

    fn axis_side(&self, k: i32, axis: usize) -> f64 {
        let m = self.dom.m;
        let (sx, sy, st) = sides(k);
        if axis < m - 1 {
            sx
        } else if axis < 2 * m - 1 {
            sy
        } else {
            st
        }
    }

    /// Number of cubes per axis at level `k`.
    pub fn counts(&self, k: i32) -> Vec<i64> {
        self.window
            .axes()
            .iter()
            .enumerate()
            .map(|(i, (_, len))| (len / self.axis_side(k, i)).round() as i64)
            .collect()
    }

    pub fn cube_count(&self, k: i32) -> u64 {
        self.counts(k).iter().map(|c| *c as u64).product()
    }

    fn check_level(&self, k: i32) -> Result<()> {
        if k < self.k_min || k > self.k_max {
            return Err(invalid(format!("level {k} outside [{}, {}]", self.k_min, self.k_max)));
        }
        Ok(())
    }

    pub fn cube(&self, k: i32, index: &[i64]) -> Result<DyadicCube> {
        self.check_level(k)?;
        let counts = self.counts(k);
        if index.len() != counts.len() || index.iter().zip(&counts).any(|(i, c)| *i < 0 || i >= c) {
            return Err(Error::OutsideWindow(format!("cube index {index:?} at level {k}")));
        }
        let axes = self.window.axes();
        let mut lo = Vec::with_capacity(index.len());
        let mut hi = Vec::with_capacity(index.len());
        for (a, (&i, (origin, _))) in index.iter().zip(&axes).enumerate() {
            let s = self.axis_side(k, a);
            lo.push(origin + s * i as f64);
            hi.push(origin + s * (i + 1) as f64);
        }
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let m = self.dom.m;
        let center = PhasePoint::from_parts(
            self.dom.lift(&mid[..m - 1]),
            mid[m - 1..2 * m - 1].to_vec(),
            mid[2 * m - 1],
        );
        Ok(DyadicCube {
            level: k,
            index: index.to_vec(),
            center,
            lo,
            hi,
        })
    }

    /// Index of the level-`k` cube holding boundary parameters `params`.
    pub fn index_of(&self, params: &[f64], k: i32) -> Result<Vec<i64>> {
        self.check_level(k)?;
        let counts = self.counts(k);
        let axes = self.window.axes();
        if params.len() != axes.len() {
            return Err(Error::DimensionMismatch {
                expected: axes.len(),
                found: params.len(),
            });
        }
        let mut out = Vec::with_capacity(axes.len());
        for (a, (v, (origin, _))) in params.iter().zip(&axes).enumerate() {
            let i = ((v - origin) / self.axis_side(k, a)).floor();
            if !i.is_finite() || i < 0.0 || i >= counts[a] as f64 {
                return Err(Error::OutsideWindow(format!("parameter {v} on axis {a}")));
            }
            out.push(i as i64);
        }
        Ok(out)
    }

    /// Row-major position of an index among the level-`k` cubes.
    pub fn flat_index(&self, k: i32, index: &[i64]) -> usize {
        let counts = self.counts(k);
        let mut flat = 0usize;
        for (i, c) in index.iter().zip(&counts) {
            flat = flat * (*c as usize) + *i as usize;
        }
        flat
    }

    pub fn unflatten(&self, k: i32, mut flat: usize) -> Vec<i64> {
        let counts = self.counts(k);
        let mut idx = vec![0i64; counts.len()];
        for a in (0..counts.len()).rev() {
            let c = counts[a] as usize;
            idx[a] = (flat % c) as i64;
            flat /= c;
        }
        idx
    }

    /// The unique level-`k` cube containing the boundary point `p`.
    pub fn containing_cube(&self, p: &PhasePoint, k: i32) -> Result<DyadicCube> {
        if p.m() != self.dom.m {
            return Err(Error::DimensionMismatch {
                expected: self.dom.m,
                found: p.m(),
            });
        }
        let idx = self.index_of(&params_of(p), k)?;
        self.cube(k, &idx)
    }

    fn ratios(&self) -> Vec<i64> {
        let m = self.dom.m;
        let mut r = vec![2i64; m - 1];
        r.extend(std::iter::repeat_n(8, m));
        r.push(4);
        r
    }

    pub fn parent(&self, cube: &DyadicCube) -> Result<DyadicCube> {
        let idx: Vec<i64> = cube
            .index
            .iter()
            .zip(self.ratios())
            .map(|(i, r)| i.div_euclid(r))
            .collect();
        self.cube(cube.level - 1, &idx)
    }

    pub fn children(&self, cube: &DyadicCube) -> Result<Vec<DyadicCube>> {
        let ratios = self.ratios();
        let total: i64 = ratios.iter().product();
        let mut out = Vec::with_capacity(total as usize);
        for mut c in 0..total {
            let mut idx = vec![0i64; ratios.len()];
            for a in (0..ratios.len()).rev() {
                idx[a] = cube.index[a] * ratios[a] + c % ratios[a];
                c /= ratios[a];
            }
            out.push(self.cube(cube.level + 1, &idx)?);
        }
        Ok(out)
    }

    /// All cubes of level `k`.
    pub fn build_level(&self, k: i32) -> Result<Vec<DyadicCube>> {
        self.check_level(k)?;
        let n = self.cube_count(k);
        if n > MAX_CUBES {
            return Err(invalid(format!("level {k} has {n} cubes; refusing to materialise")));
        }
        (0..n as usize).map(|f| self.cube(k, &self.unflatten(k, f))).collect()
    }

    /// All cubes of levels `k_min..=k_max`.
    pub fn build_cubes(&self) -> Result<Vec<DyadicCube>> {
        let mut out = Vec::new();
        for k in self.k_min..=self.k_max {
            out.extend(self.build_level(k)?);
        }
        Ok(out)
    }

    /// Uniform random boundary point with parameters in the cube.
    pub fn sample_in_cube<R: Rng>(&self, rng: &mut R, cube: &DyadicCube) -> PhasePoint {
        let params: Vec<f64> = cube
            .lo
            .iter()
            .zip(&cube.hi)
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect();
        self.point_from_params(&params)
    }

    /// Uniform random boundary point in the window.
    pub fn sample_in_window<R: Rng>(&self, rng: &mut R) -> PhasePoint {
        let params: Vec<f64> = self
            .window
            .axes()
            .iter()
            .map(|(lo, len)| lo + len * rng.random::<f64>())
            .collect();
        self.point_from_params(&params)
    }

    pub fn point_from_params(&self, params: &[f64]) -> PhasePoint {
        let m = self.dom.m;
        PhasePoint::from_parts(
            self.dom.lift(&params[..m - 1]),
            params[m - 1..2 * m - 1].to_vec(),
            params[2 * m - 1],
        )
    }

    /// Quasi-distance from an interior point of `cube` to a point of `Sigma`
    /// outside it, minimised over axis moves and group-time moves. This is an
    /// upper bound on the distance to the complement.
    pub fn distance_to_complement(&self, p: &PhasePoint, cube: &DyadicCube) -> f64 {
        let m = self.dom.m;
        let params = params_of(p);
        let mut best = f64::INFINITY;
        let try_params = |q: &[f64], best: &mut f64| {
            let qp = self.point_from_params(q);
            *best = best.min(distance_unchecked(p, &qp));
        };
        for a in 0..params.len() {
            for face in [cube.lo[a], cube.hi[a]] {
                let mut q = params.clone();
                q[a] = face;
                if face == cube.lo[a] {
                    q[a] = next_down(face);
                }
                try_params(&q, &mut best);
            }
        }
        // p o (0, 0, tau) = (X, Y - tau X, t + tau): leaves through t or a sheared Y face.
        let x = p.x();
        let t_axis = 2 * m - 1;
        let mut taus = vec![
            cube.hi[t_axis] - params[t_axis],
            next_down(cube.lo[t_axis]) - params[t_axis],
        ];
        for j in 0..m {
            if x[j] != 0.0 {
                let yj = params[m - 1 + j];
                taus.push((yj - next_down(cube.lo[m - 1 + j])) / x[j]);
                taus.push((yj - cube.hi[m - 1 + j]) / x[j]);
            }
        }
        for tau in taus {
            let mut q = params.clone();
            for j in 0..m {
                q[m - 1 + j] -= tau * x[j];
            }
            q[t_axis] += tau;
            try_params(&q, &mut best);
        }
        best
    }

    /// Samples the Christ-cube constants over the levels of the system.
    pub fn measure_constants(&self, cubes_per_level: usize, samples: usize, seed: u64) -> Result<ChristConstants> {
        let mut rng = rng::stream(seed, 0);
        let mut c_star = 0.0f64;
        let mut alpha = f64::INFINITY;
        let rhos: Vec<f64> = (2..=7).map(|j| 2f64.powi(-j)).collect();
        let mut near = vec![0.0; rhos.len()];
        let mut total = 0.0;
        for k in self.k_min..=self.k_max {
            let n = self.cube_count(k) as usize;
            for _ in 0..cubes_per_level.min(n) {
                let flat = rng.random_range(0..n);
                let cube = self.cube(k, &self.unflatten(k, flat))?;
                let ell = cube.ell();
                for _ in 0..samples {
                    let p = self.sample_in_cube(&mut rng, &cube);
                    let q = self.sample_in_cube(&mut rng, &cube);
                    c_star = c_star.max(distance_unchecked(&p, &q) / ell);
                    let d = self.distance_to_complement(&p, &cube) / ell;
                    let w = self.dom.surface_density(p.x_tangential());
                    total += w;
                    for (slot, rho) in near.iter_mut().zip(&rhos) {
                        if d < *rho {
                            *slot += w;
                        }
                    }
                }
                alpha = alpha.min(self.distance_to_complement(&cube.center, &cube) / ell);
            }
        }
        let fractions: Vec<f64> = near.iter().map(|v| v / total).collect();
        // Scales without a near-boundary sample are unresolved, not zero.
        let (xs, ys): (Vec<f64>, Vec<f64>) = rhos.iter().zip(&fractions).filter(|(_, f)| **f > 0.0).unzip();
        if xs.len() < 3 {
            return Err(Error::DegenerateFit(format!(
                "{} resolved boundary scales, need at least 3",
                xs.len()
            )));
        }
        let fit = loglog_fit(&xs, &ys)?;
        Ok(ChristConstants {
            c_star,
            alpha,
            beta: fit.slope,
            thin_constant: fit.intercept.exp(),
            r_squared: fit.r_squared,
            rhos,
            fractions,
        })
    }
}

fn next_down(v: f64) -> f64 {
    v - 1e-12 * v.abs().max(1.0)
}

/// Measured `(c*, alpha, beta)` of the cube system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChristConstants {
    /// `max d(p, q) / l(Q)` over sampled pairs in a cube.
    pub c_star: f64,
    /// `min dist(centre, complement) / l(Q)`.
    pub alpha: f64,
    /// Thin-boundary exponent: `fraction(rho) ~ thin_constant * rho^beta`.
    pub beta: f64,
    pub thin_constant: f64,
    pub r_squared: f64,
    pub rhos: Vec<f64>,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`.
pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::DegenerateFit(format!("{n} points")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Fit of `log y = intercept + slope log x`; zero ordinates are rejected.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.iter().chain(y).any(|v| *v <= 0.0) {
        return Err(Error::DegenerateFit("non-positive value in log-log fit".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    line_fit(&lx, &ly)
}

/// An interior box `lo + [0, side]^m` in `X`, times all of `R^m x R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCube {
    pub depth: u32,
    pub index: Vec<i64>,
    pub lo: Vec<f64>,
    pub side: f64,
    /// Lower bound on the distance to the boundary divided by `side`.
    pub ratio: f64,
}

impl WhitneyCube {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lo).all(|(v, a)| *v >= *a && *v < a + self.side)
    }

    /// Membership in the concentric dilate with side `gamma * side`.
    pub fn dilate_contains(&self, gamma: f64, x: &[f64]) -> bool {
        let half = 0.5 * gamma * self.side;
        x.iter()
            .zip(&self.lo)
            .all(|(v, a)| (v - (a + 0.5 * self.side)).abs() < half)
    }
}

/// Whitney cubes in a cubic window `lo + [0, side]^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whitney {
    pub m: usize,
    pub lo: Vec<f64>,
    pub side: f64,
    pub max_depth: u32,
    pub cubes: Vec<WhitneyCube>,
    #[serde(skip)]
    lookup: HashMap<(u32, Vec<i64>), usize>,
}

/// Acceptance threshold on `dist / side`; above `3.5 sqrt(m)` the 8-fold dilate stays inside.
pub fn whitney_threshold(m: usize) -> f64 {
    4.0 * (m as f64).sqrt()
}

/// Bounds on the height `x_m - psi` over a box with the given centre and side.
fn height_bounds(dom: &GraphDomain, center: &[f64], side: f64) -> (f64, f64) {
    let m = dom.m;
    let hc = dom.height(center);
    let spread = 0.5 * side * (1.0 + dom.lipschitz_m() * ((m - 1) as f64).sqrt());
    (hc - spread, hc + spread)
}

pub fn whitney(dom: &GraphDomain, lo: &[f64], side: f64, max_depth: u32) -> Result<Whitney> {
    let m = dom.m;
    if lo.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: lo.len(),
        });
    }
    if !(side > 0.0 && side.is_finite()) {
        return Err(invalid("Whitney window side must be > 0"));
    }
    let grad_scale = (1.0 + dom.lipschitz_m().powi(2)).sqrt();
    let threshold = whitney_threshold(m);
    let mut cubes = Vec::new();
    let mut stack = vec![(0u32, vec![0i64; m])];
    while let Some((depth, index)) = stack.pop() {
        let h = side * 2f64.powi(-(depth as i32));
        let corner: Vec<f64> = lo.iter().zip(&index).map(|(a, i)| a + h * *i as f64).collect();
        let center: Vec<f64> = corner.iter().map(|c| c + 0.5 * h).collect();
        let (min_h, max_h) = height_bounds(dom, &center, h);
        if max_h <= 0.0 {
            continue;
        }
        let dist_lb = min_h.max(0.0) / grad_scale;
        if dist_lb >= threshold * h {
            cubes.push(WhitneyCube {
                depth,
                index,
                lo: corner,
                side: h,
                ratio: dist_lb / h,
            });
        } else if depth < max_depth {
            for c in 0..(1usize << m) {
                let child: Vec<i64> = (0..m).map(|a| 2 * index[a] + ((c >> a) & 1) as i64).collect();
                stack.push((depth + 1, child));
            }
        }
    }
    cubes.sort_by(|a, b| (a.depth, &a.index).cmp(&(b.depth, &b.index)));
    let lookup = cubes
        .iter()
        .enumerate()
        .map(|(i, c)| ((c.depth, c.index.clone()), i))
        .collect();
    Ok(Whitney {
        m,
        lo: lo.to_vec(),
        side,
        max_depth,
        cubes,
        lookup,
    })
}

impl Whitney {
    /// The Whitney cube containing `x`, if any.
    pub fn locate(&self, x: &[f64]) -> Option<&WhitneyCube> {
        for depth in 0..=self.max_depth {
            let h = self.side * 2f64.powi(-(depth as i32));
            let index: Vec<i64> = x
                .iter()
                .zip(&self.lo)
                .map(|(v, a)| ((v - a) / h).floor() as i64)
                .collect();
            if let Some(&i) = self.lookup.get(&(depth, index)) {
                return Some(&self.cubes[i]);
            }
        }
        None
    }

    fn sample_interior<R: Rng>(&self, dom: &GraphDomain, rng: &mut R) -> Vec<f64> {
        loop {
            let x: Vec<f64> = self.lo.iter().map(|a| a + self.side * rng.random::<f64>()).collect();
            if dom.contains_x(&x) {
                return x;
            }
        }
    }

    /// Fraction of uniform window points inside the domain that some cube covers.
    pub fn coverage(&self, dom: &GraphDomain, samples: u64, seed: u64) -> f64 {
        let mut rng = rng::stream(seed, 0);
        let hit = (0..samples)
            .filter(|_| {
                let x = self.sample_interior(dom, &mut rng);
                self.locate(&x).is_some()
            })
            .count();
        hit as f64 / samples as f64
    }

    /// Largest number of `gamma`-dilates containing one sampled point.
    pub fn max_overlap(&self, dom: &GraphDomain, gamma: f64, samples: u64, seed: u64) -> usize {
        let mut rng = rng::stream(seed, 0);
        let mut worst = 0;
        for _ in 0..samples {
            let x = self.sample_interior(dom, &mut rng);
            let n = self.cubes.iter().filter(|c| c.dilate_contains(gamma, &x)).count();
            worst = worst.max(n);
        }
        worst
    }

    /// Checks that sampled points of every 8-fold dilate lie in the domain.
    pub fn dilates_inside(&self, dom: &GraphDomain, gamma: f64, per_cube: usize, seed: u64) -> bool {
        let mut rng = rng::stream(seed, 0);
        self.cubes.iter().all(|c| {
            (0..per_cube).all(|_| {
                let x: Vec<f64> =
                    c.lo.iter()
                        .map(|a| a + 0.5 * c.side + gamma * c.side * (rng.random::<f64>() - 0.5))
                        .collect();
                dom.contains_x(&x)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Psi;

    fn flat_system(m: usize, k_max: i32) -> DyadicSystem {
        DyadicSystem::new(GraphDomain::flat(m), DyadicWindow::unit(m), 0, k_max).unwrap()
    }

    #[test]
    fn child_counts_follow_anisotropic_splitting() {
        let sys = flat_system(1, 2);
        assert_eq!(sys.cube_count(0), 1);
        assert_eq!(sys.cube_count(1), 32);
        assert_eq!(sys.cube_count(2), 1024);
        let root = sys.cube(0, &[0, 0]).unwrap();
        assert_eq!(sys.children(&root).unwrap().len(), 32);
        assert_eq!(flat_system(2, 1).cube_count(1), 512);
    }

    #[test]
    fn child_extents_are_half_eighth_quarter() {
        let sys = flat_system(2, 1);
        let root = sys.cube(0, &[0, 0, 0, 0]).unwrap();
        let child = &sys.children(&root).unwrap()[77];
        let ext: Vec<f64> = child.lo.iter().zip(&child.hi).map(|(a, b)| b - a).collect();
        assert_eq!(ext, vec![0.5, 0.125, 0.125, 0.25]);
    }

    #[test]
    fn window_must_fit_k_min() {
        let dom = GraphDomain::flat(1);
        let mut w = DyadicWindow::unit(1);
        w.t_len = 0.3;
        assert!(DyadicSystem::new(dom.clone(), w, 0, 1).is_err());
        assert!(DyadicSystem::new(dom.clone(), DyadicWindow::unit(1), -1, 1).is_err());
        let big = DyadicWindow::centered(1, 0.0, -4.0, -4.0, 8.0);
        assert!(DyadicSystem::new(dom, big, -1, 1).is_ok());
    }

    #[test]
    fn every_point_resolves_uniquely_and_nests() {
        let dom = GraphDomain::new(
            2,
            Psi::SmoothAbsSine {
                amp: 0.2,
                freq: vec![3.0],
                delta: 0.1,
            },
        )
        .unwrap();
        let sys = DyadicSystem::new(dom, DyadicWindow::unit(2), 0, 3).unwrap();
        let mut r = rng::stream(11, 0);
        for _ in 0..2000 {
            let p = sys.sample_in_window(&mut r);
            let mut prev: Option<DyadicCube> = None;
            for k in 0..=3 {
                let c = sys.containing_cube(&p, k).unwrap();
                assert!(c.contains_params(&params_of(&p)));
                if let Some(parent) = &prev {
                    assert_eq!(&sys.parent(&c).unwrap(), parent);
                }
                prev = Some(c);
            }
        }
    }

    #[test]
    fn cube_center_maps_to_itself() {
        let sys = flat_system(1, 2);
        for cube in sys.build_level(2).unwrap().iter().step_by(37) {
            assert_eq!(sys.containing_cube(&cube.center, 2).unwrap(), *cube);
        }
    }

    #[test]
    fn outside_window_is_an_error() {
        let sys = flat_system(1, 1);
        let p = PhasePoint::new(vec![0.0], vec![2.0], 0.5).unwrap();
        assert!(matches!(sys.containing_cube(&p, 0), Err(Error::OutsideWindow(_))));
    }

    #[test]
    fn flat_sigma_matches_product() {
        let sys = flat_system(2, 1);
        let c = sys.cube(1, &[1, 3, 5, 2]).unwrap();
        let s = c.sigma(&sys.dom, MeasureKind::Kolmogorov).unwrap();
        assert!((s - 0.5 * 0.125 * 0.125 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn christ_constants_are_positive() {
        let sys = flat_system(1, 3);
        let c = sys.measure_constants(8, 2000, 4).unwrap();
        assert!(c.c_star > 0.5 && c.c_star < 4.0, "{c:?}");
        assert!(c.alpha > 0.1, "{c:?}");
        assert!(c.beta > 0.0 && c.r_squared >= 0.9, "{c:?}");
    }

    #[test]
    fn line_fit_recovers_power_law() {
        let x = [0.1, 0.2, 0.4, 0.8];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        let f = loglog_fit(&x, &y).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!((f.intercept.exp() - 3.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(loglog_fit(&x, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn half_line_whitney_cubes_sit_at_dyadic_distances() {
        let dom = GraphDomain::flat(1);
        let w = whitney(&dom, &[0.0], 1.0, 16).unwrap();
        let threshold = whitney_threshold(1);
        for c in &w.cubes {
            let dist = c.lo[0];
            assert!(dist >= threshold * c.side);
            assert!(dist < 2.0 * (threshold + 1.0) * c.side, "{c:?}");
        }
        assert!(w.coverage(&dom, 100_000, 1) >= 0.999);
        assert!(w.dilates_inside(&dom, 8.0, 16, 2));
    }

    #[test]
    fn graph_whitney_covers_and_stays_inside() {
        let dom = GraphDomain::new(
            2,
            Psi::Trig {
                offset: 0.0,
                terms: vec![crate::domain::SineTerm {
                    amp: 0.1,
                    freq: vec![2.0],
                    phase: 0.0,
                }],
            },
        )
        .unwrap();
        let w = whitney(&dom, &[-0.5, -0.5], 1.5, 14).unwrap();
        assert!(w.coverage(&dom, 50_000, 3) >= 0.999);
        assert!(w.dilates_inside(&dom, 8.0, 4, 5));
        assert!(w.max_overlap(&dom, 1.5, 500, 6) <= 16);
    }
}

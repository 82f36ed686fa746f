//! Boundary analysis: non-tangential and Hardy-Littlewood maximal functions,
//! reverse-Hölder constants, and the comparability and doubling ratio tests.

use serde::{Deserialize, Serialize};

use crate::domain::{halton, sigma_of_cube, CoefficientField, GraphDomain, MeasureKind, SurfaceCube};
use crate::dyadic::{loglog_fit, params_of, DyadicCube, DyadicSystem, LineFit};
use crate::error::{invalid, Error, Result};
use crate::geometry::{distance_unchecked, reference_point, PhasePoint, ReferenceParams};
use crate::grid::GridFunction;
use crate::simulate::{estimate_measure, MeasureHistogram, Partition, SdeConfig};

/// Aperture `eta` and optional truncation `delta` of the cone
/// `{p : d(p, p0) < eta (x_m - x0_m)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeParams {
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl ConeParams {
    /// Midpoint of `(1, sqrt(1 + 1/M^2))`, the apertures whose cones are
    /// non-empty and touch the boundary only at the vertex; 2 when `M = 0`.
    pub fn default_eta(lipschitz: f64) -> f64 {
        if lipschitz <= 0.0 {
            2.0
        } else {
            0.5 * (1.0 + (1.0 + 1.0 / (lipschitz * lipschitz)).sqrt())
        }
    }

    pub fn for_domain(dom: &GraphDomain) -> Self {
        Self {
            eta: Self::default_eta(dom.lipschitz_m()),
            delta: None,
        }
    }

    pub fn validate(&self, dom: &GraphDomain) -> Result<()> {
        if !(self.eta > 1.0 && self.eta.is_finite()) {
            return Err(invalid(format!(
                "cone aperture {} must exceed 1 or the cone is empty",
                self.eta
            )));
        }
        let lip = dom.lipschitz_m();
        if lip > 0.0 && self.eta >= (1.0 + 1.0 / (lip * lip)).sqrt() {
            return Err(invalid(format!(
                "cone aperture {} lets the cone meet the boundary (M = {lip})",
                self.eta
            )));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(invalid("cone truncation must be > 0"));
            }
        }
        Ok(())
    }
}

/// Candidate points of the cone with aperture `box_eta` over `vertex`.
///
/// Filtering one candidate set by smaller apertures makes `N^eta` exactly
/// monotone in `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSamples {
    pub vertex: PhasePoint,
    pub box_eta: f64,
    /// `(point, height above the vertex)`.
    pub points: Vec<(PhasePoint, f64)>,
}

impl ConeSamples {
    /// Low-discrepancy samples with heights in `(0, height_cap]` whose homogeneous
    /// offset from the vertical above the vertex is below `(eta - 1) h`.
    pub fn generate(dom: &GraphDomain, vertex: &PhasePoint, box_eta: f64, height_cap: f64, n: usize) -> Result<Self> {
        let m = dom.m;
        if vertex.m() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: vertex.m(),
            });
        }
        if dom.height(vertex.x()).abs() > 1e-9 {
            return Err(invalid("cone vertex is not on the boundary"));
        }
        if !(height_cap > 0.0 && box_eta > 1.0) {
            return Err(invalid("cone height cap must be > 0 and aperture > 1"));
        }
        // Coordinates: height, radial fraction, block weights, then block directions.
        let blocks = if m > 1 { 3 } else { 2 };
        let dim = 2 + blocks + 2 * m;
        let mut points = Vec::with_capacity(n);
        for i in 0..n as u64 {
            let u = halton(i, dim);
            let h = height_cap * u[0].max(1e-12);
            let radius = (box_eta - 1.0) * h * u[1];
            let wsum: f64 = u[2..2 + blocks].iter().sum::<f64>().max(1e-300);
            let w: Vec<f64> = u[2..2 + blocks].iter().map(|v| radius * v / wsum).collect();
            let dir = &u[2 + blocks..];
            let unit = |c: &[f64]| {
                let v: Vec<f64> = c.iter().map(|a| 2.0 * a - 1.0).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
                v.into_iter().map(move |a| a / norm)
            };
            let mut x = vertex.x().to_vec();
            for (k, c) in unit(&dir[..m - 1]).enumerate() {
                x[k] += w[2] * c;
            }
            x[m - 1] += h;
            // Homogeneous sizes: |dt|^{1/2} = w_t and |dY + dt X0|^{1/3} = w_y.
            let dt = w[1] * w[1] * if dir[2 * m - 1] < 0.5 { -1.0 } else { 1.0 };
            let y: Vec<f64> = unit(&dir[m - 1..2 * m - 1])
                .enumerate()
                .map(|(j, c)| vertex.y()[j] - dt * vertex.x()[j] + w[0].powi(3) * c)
                .collect();
            let p = PhasePoint::new(x, y, vertex.t() + dt)?;
            points.push((p, h));
        }
        Ok(Self {
            vertex: vertex.clone(),
            box_eta,
            points,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtValue {
    pub value: f64,
    /// Samples inside the cone where `u` was evaluable.
    pub used: usize,
    pub candidates: usize,
}

/// `N^eta(u)` over a shared candidate set; `u` returns `None` where it is not evaluable.
pub fn nt_max_on(
    dom: &GraphDomain,
    samples: &ConeSamples,
    cone: &ConeParams,
    u: &dyn Fn(&PhasePoint) -> Option<f64>,
) -> Result<NtValue> {
    if cone.eta > samples.box_eta + 1e-12 {
        return Err(invalid("cone aperture exceeds the sampled aperture"));
    }
    let v = &samples.vertex;
    let vm = v.xm();
    let mut best: f64 = 0.0;
    let mut used = 0;
    for (p, _) in &samples.points {
        let height = p.xm() - vm;
        let d = distance_unchecked(p, v);
        if !(d < cone.eta * height) || !dom.contains_x(p.x()) {
            continue;
        }
        if cone.delta.is_some_and(|delta| d >= delta) {
            continue;
        }
        if let Some(val) = u(p) {
            if !val.is_finite() {
                return Err(Error::NonFinite("non-tangential sample"));
            }
            best = best.max(val.abs());
            used += 1;
        }
    }
    if used == 0 {
        return Err(invalid(
            "no cone samples inside the domain; aperture or height cap is degenerate",
        ));
    }
    Ok(NtValue {
        value: best,
        used,
        candidates: samples.points.len(),
    })
}

/// `N^eta(u)(vertex)` from `n` quasi-random cone samples at heights up to `height_cap`.
pub fn nt_max(
    dom: &GraphDomain,
    vertex: &PhasePoint,
    cone: &ConeParams,
    height_cap: f64,
    n: usize,
    u: &dyn Fn(&PhasePoint) -> Option<f64>,
) -> Result<NtValue> {
    cone.validate(dom)?;
    let cap = cone.delta.map_or(height_cap, |d| height_cap.min(d));
    let samples = ConeSamples::generate(dom, vertex, cone.eta, cap, n)?;
    nt_max_on(dom, &samples, cone, u)
}

/// Evaluator for an `m = 1` Kolmogorov grid function; `None` outside the box.
pub fn kolmogorov_evaluator(gf: &GridFunction) -> impl Fn(&PhasePoint) -> Option<f64> + '_ {
    move |p: &PhasePoint| gf.evaluate(&[p.x()[0], p.y()[0], p.t()]).ok()
}

/// Hardy-Littlewood maximal function at `p` of data that is constant on the
/// level-`level` cubes of `system`: the largest `sigma_K`-average of `|f|`
/// over the dyadic cubes containing `p`.
pub fn hl_max(system: &DyadicSystem, level: i32, values: &[f64], p: &PhasePoint) -> Result<f64> {
    if values.len() as u64 != system.cube_count(level) {
        return Err(invalid("one value per level cube is required"));
    }
    let dom = &system.dom;
    system.index_of(&params_of(p), level)?;
    let mut best: f64 = 0.0;
    for k in system.k_min..=level {
        let anc = system.containing_cube(p, k)?;
        let shift = level - k;
        let m = system.m();
        let mut ratios = vec![2i64.pow(shift as u32); m - 1];
        ratios.extend(std::iter::repeat_n(8i64.pow(shift as u32), m));
        ratios.push(4i64.pow(shift as u32));
        let mut num = 0.0;
        let mut den = 0.0;
        for (flat, v) in values.iter().enumerate() {
            let idx = system.unflatten(level, flat);
            if idx
                .iter()
                .zip(&ratios)
                .zip(&anc.index)
                .all(|((i, r), a)| i.div_euclid(*r) == *a)
            {
                let s = system.cube(level, &idx)?.sigma(dom, MeasureKind::Kolmogorov)?;
                num += v.abs() * s;
                den += s;
            }
        }
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    Ok(best)
}

/// One tested cube of a reverse-Hölder measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BqRatio {
    pub cube: Vec<i64>,
    pub level: i32,
    /// `(avg K^q)^{1/q} / avg K` over the children, averages weighted by `sigma`.
    pub ratio: f64,
    /// Bias-corrected `q = 2` ratio from `n_c (n_c - 1)`, when counts allow.
    pub debiased: Option<f64>,
    pub count: u64,
    pub zero_children: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BqReport {
    pub q: f64,
    pub depth: i32,
    pub ratios: Vec<BqRatio>,
    pub skipped: Vec<Vec<i64>>,
    pub constant: f64,
    pub debiased_constant: Option<f64>,
}

/// Reverse-Hölder ratio of child values `(omega_c, sigma_c)`.
pub fn bq_ratio(children: &[(f64, f64)], q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(invalid("q must be >= 1"));
    }
    let s: f64 = children.iter().map(|c| c.1).sum();
    let mean: f64 = children.iter().map(|c| c.0).sum::<f64>() / s;
    if !(s > 0.0 && mean > 0.0) {
        return Err(invalid("reverse-Hölder ratio needs positive total mass"));
    }
    let pow: f64 = children.iter().map(|(w, sg)| sg * (w / sg).powf(q)).sum::<f64>() / s;
    Ok(pow.powf(1.0 / q) / mean)
}

/// Reverse-Hölder constants of the histogram kernel over `tested` cubes, using
/// children `depth` levels down. Zero-count children enter as zeros and are
/// flagged; tested cubes without mass are skipped and listed.
pub fn bq_constant(hist: &MeasureHistogram, q: f64, tested: &[DyadicCube], depth: i32) -> Result<BqReport> {
    let Partition::Dyadic { system, level } = &hist.partition else {
        return Err(invalid("reverse-Hölder constants need a dyadic histogram"));
    };
    if depth < 1 {
        return Err(invalid("depth must be >= 1"));
    }
    let dom = &system.dom;
    let m = system.m();
    let mut ratios = Vec::new();
    let mut skipped = Vec::new();
    let mut cache: Vec<(i32, Vec<u64>)> = Vec::new();
    for cube in tested {
        if cube.level + 3 > *level {
            return Err(invalid(format!(
                "histogram level {level} resolves fewer than 3 levels below cube level {}",
                cube.level
            )));
        }
        let kc = cube.level + depth;
        if kc > *level {
            return Err(invalid("depth exceeds the histogram level"));
        }
        if !cache.iter().any(|(k, _)| *k == kc) {
            cache.push((kc, hist.counts_at_level(kc)?));
        }
        let counts = &cache.iter().find(|(k, _)| *k == kc).expect("cached").1;
        let mut ratios_axis = vec![2i64.pow(depth as u32); m - 1];
        ratios_axis.extend(std::iter::repeat_n(8i64.pow(depth as u32), m));
        ratios_axis.push(4i64.pow(depth as u32));
        let mut children: Vec<(u64, f64)> = Vec::new();
        for child_rel in 0..(1u64 << (depth as u64 * (4 * m as u64 + 1))) {
            // Enumerate child offsets axis by axis.
            let mut rem = child_rel;
            let mut idx = Vec::with_capacity(2 * m);
            for (a, r) in ratios_axis.iter().enumerate() {
                let off = (rem % *r as u64) as i64;
                rem /= *r as u64;
                idx.push(cube.index[a] * r + off);
            }
            let c = system.cube(kc, &idx)?;
            let flat = system.flat_index(kc, &idx);
            children.push((counts[flat], c.sigma(dom, hist.kind)?));
        }
        let total: u64 = children.iter().map(|c| c.0).sum();
        if total == 0 {
            skipped.push(cube.index.clone());
            continue;
        }
        let n = hist.n_paths as f64;
        let vals: Vec<(f64, f64)> = children.iter().map(|(c, s)| (*c as f64 / n, *s)).collect();
        let ratio = bq_ratio(&vals, q)?;
        let debiased = if q == 2.0 && total >= 2 {
            let s: f64 = children.iter().map(|c| c.1).sum();
            let nq = total as f64;
            let sum: f64 = children
                .iter()
                .map(|(c, sg)| (*c as f64) * (*c as f64 - 1.0) / sg)
                .sum();
            Some((s * sum / (nq * (nq - 1.0))).max(0.0).sqrt())
        } else {
            None
        };
        ratios.push(BqRatio {
            cube: cube.index.clone(),
            level: cube.level,
            ratio,
            debiased,
            count: total,
            zero_children: children.iter().filter(|c| c.0 == 0).count(),
        });
    }
    if ratios.is_empty() {
        return Err(invalid("no tested cube carries mass"));
    }
    let constant = ratios.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let debiased_constant = if ratios.iter().all(|r| r.debiased.is_some()) {
        Some(
            ratios
                .iter()
                .filter_map(|r| r.debiased)
                .fold(f64::NEG_INFINITY, f64::max),
        )
    } else {
        None
    };
    Ok(BqReport {
        q,
        depth,
        ratios,
        skipped,
        constant,
        debiased_constant,
    })
}

/// Synthetic kernel: `background` counts in every level cell plus `atom`
/// extra counts in the cell containing `at`. Not doubling once `atom` dominates.
pub fn point_mass_histogram(
    system: &DyadicSystem,
    level: i32,
    background: u64,
    atom: u64,
    at: &PhasePoint,
) -> Result<MeasureHistogram> {
    let n = system.cube_count(level) as usize;
    let mut counts = vec![background; n];
    let idx = system.index_of(&params_of(at), level)?;
    counts[system.flat_index(level, &idx)] += atom;
    let total: u64 = counts.iter().sum();
    Ok(MeasureHistogram {
        partition: Partition::Dyadic {
            system: system.clone(),
            level,
        },
        kind: MeasureKind::Kolmogorov,
        adjoint: false,
        pole: at.clone(),
        n_paths: total,
        counts,
        censored: 0,
        outside: 0,
    })
}

/// `|b / a - 1| <= tol`.
pub fn stable(a: f64, b: f64, tol: f64) -> bool {
    a.is_finite() && b.is_finite() && a > 0.0 && (b / a - 1.0).abs() <= tol
}

/// Normalized quantity `sigma(Delta) omega(pole, Delta~) / sigma(Delta~)` of one kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub value: f64,
    pub stderr: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparabilityRow {
    pub cube: usize,
    pub kolmogorov: Normalized,
    pub parabolic: Normalized,
    pub elliptic: Normalized,
    /// Largest pairwise ratio among the three quantities.
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparabilityTable {
    pub rows: Vec<ComparabilityRow>,
    /// Cubes whose mass was below resolution for some kind.
    pub skipped: Vec<usize>,
    pub max_ratio: f64,
    pub method_elliptic: String,
}

/// Poles and cube data shared by the three measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparabilitySetup {
    /// `Delta = Delta_rho(center)`.
    pub delta: SurfaceCube,
    pub sub_cubes: Vec<SurfaceCube>,
    /// Pole scale factor `c` and aperture `Lambda`: pole `A+_{c rho, Lambda}`.
    pub c: f64,
    pub lambda: f64,
}

impl ComparabilitySetup {
    pub fn pole(&self) -> Result<PhasePoint> {
        let params = ReferenceParams::new(self.c * self.delta.r, self.lambda, crate::geometry::Sign::Plus)?;
        reference_point(&self.delta.center, &params)
    }
}

/// The three normalized measure quantities per sub-cube, all by Monte Carlo.
pub fn comparability_test(
    dom: &GraphDomain,
    field: &CoefficientField,
    setup: &ComparabilitySetup,
    config: &SdeConfig,
) -> Result<ComparabilityTable> {
    let pole = setup.pole()?;
    let part = Partition::Surface {
        cubes: setup.sub_cubes.clone(),
    };
    let mut per_kind = Vec::new();
    for kind in [MeasureKind::Kolmogorov, MeasureKind::Parabolic, MeasureKind::Elliptic] {
        // Projections of the pole: the P and E diffusions ignore Y (and t).
        let h = estimate_measure(dom, field, &pole, &part, config, kind, false)?;
        let big = sigma_of_cube(dom, &setup.delta, kind)?;
        let vals: Vec<Normalized> = (0..setup.sub_cubes.len())
            .map(|i| {
                let small = sigma_of_cube(dom, &setup.sub_cubes[i], kind)?;
                let f = big / small;
                Ok(Normalized {
                    value: f * h.mass(i),
                    stderr: f * h.stderr(i),
                    mass: h.mass(i),
                })
            })
            .collect::<Result<_>>()?;
        per_kind.push(vals);
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..setup.sub_cubes.len() {
        let (k, p, e) = (per_kind[0][i], per_kind[1][i], per_kind[2][i]);
        if [k, p, e].iter().any(|v| !(v.mass > 0.0) || v.stderr > 0.2 * v.value) {
            skipped.push(i);
            continue;
        }
        let vals = [k.value, p.value, e.value];
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(ComparabilityRow {
            cube: i,
            kolmogorov: k,
            parabolic: p,
            elliptic: e,
            max_ratio: hi / lo,
        });
    }
    let max_ratio = rows.iter().map(|r| r.max_ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(ComparabilityTable {
        rows,
        skipped,
        max_ratio,
        method_elliptic: "monte-carlo".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    /// `omega(2 Delta) / omega(Delta)` per pair, `None` when skipped.
    pub ratios: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
    pub constant: f64,
}

/// Doubling ratios for `(Delta, 2 Delta)` index pairs of a surface-cube histogram.
/// A pair is resolvable when `Delta` holds at least `min_count` exits.
pub fn doubling_test(hist: &MeasureHistogram, pairs: &[(usize, usize)], min_count: u64) -> Result<DoublingReport> {
    let Partition::Surface { cubes } = &hist.partition else {
        return Err(invalid("doubling tests need a surface-cube histogram"));
    };
    let mut ratios = Vec::with_capacity(pairs.len());
    let mut skipped = Vec::new();
    for (k, &(a, b)) in pairs.iter().enumerate() {
        if a >= cubes.len() || b >= cubes.len() {
            return Err(invalid("doubling pair index out of range"));
        }
        if (cubes[b].r - 2.0 * cubes[a].r).abs() > 1e-12 * cubes[a].r || cubes[a].center != cubes[b].center {
            return Err(invalid(format!("pair {k} is not (Delta, 2 Delta)")));
        }
        let (na, nb) = (hist.counts[a], hist.counts[b]);
        if na == 0 || na < min_count {
            skipped.push(k);
            ratios.push(None);
            continue;
        }
        ratios.push(Some(nb as f64 / na as f64));
    }
    let constant = ratios.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DoublingReport {
        ratios,
        skipped,
        constant,
    })
}

/// Fit of `u(p) ~ h^alpha` along the vertical approach to a boundary point.
pub fn boundary_decay_test(
    u: &dyn Fn(&PhasePoint) -> Option<f64>,
    vertex: &PhasePoint,
    heights: &[f64],
) -> Result<LineFit> {
    let mut hs = Vec::new();
    let mut us = Vec::new();
    for &h in heights {
        let mut x = vertex.x().to_vec();
        let m = x.len();
        x[m - 1] += h;
        let p = PhasePoint::new(x, vertex.y().to_vec(), vertex.t())?;
        match u(&p) {
            Some(v) if v > 0.0 => {
                hs.push(h);
                us.push(v);
            }
            Some(_) => {
                return Err(Error::DegenerateFit(
                    "solution is not positive along the approach".into(),
                ))
            }
            None => {}
        }
    }
    if hs.len() < 4 {
        return Err(Error::DegenerateFit(format!("{} scales, need at least 4", hs.len())));
    }
    loglog_fit(&hs, &us)
}

/// Axis-aligned `(x, y, t)` box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

fn box_extrema(gf: &GridFunction, b: &Box3) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in 0..gf.values.len() {
        let c = gf.coords(p);
        if (0..3).all(|k| c[k] >= b.lo[k] && c[k] <= b.hi[k]) {
            lo = lo.min(gf.values[p]);
            hi = hi.max(gf.values[p]);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// `sup_earlier u / inf_later u` for a nonnegative grid solution.
pub fn harnack_constant(gf: &GridFunction, earlier: &Box3, later: &Box3) -> Result<f64> {
    if earlier.hi[2] >= later.lo[2] {
        return Err(invalid("the earlier box must end before the later box starts"));
    }
    let (_, sup) = box_extrema(gf, earlier).ok_or_else(|| invalid("earlier box holds no nodes"))?;
    let (inf, _) = box_extrema(gf, later).ok_or_else(|| invalid("later box holds no nodes"))?;
    if !(inf > 0.0) {
        return Err(Error::DegenerateFit("solution vanishes in the later box".into()));
    }
    Ok(sup / inf)
}

/// Oscillation of `u` over `delta_r`-boxes about `center` and the fitted decay exponent.
pub fn holder_exponent(gf: &GridFunction, center: [f64; 3], radii: &[f64]) -> Result<(Vec<f64>, LineFit)> {
    let mut rs = Vec::new();
    let mut osc = Vec::new();
    for &r in radii {
        let half = [r, r * r * r, r * r];
        let b = Box3 {
            lo: [center[0] - half[0], center[1] - half[1], center[2] - half[2]],
            hi: [center[0] + half[0], center[1] + half[1], center[2]],
        };
        let (lo, hi) = box_extrema(gf, &b).ok_or_else(|| invalid(format!("box of radius {r} holds no nodes")))?;
        if hi - lo > 0.0 {
            rs.push(r);
            osc.push(hi - lo);
        }
    }
    if rs.len() < 3 {
        return Err(Error::DegenerateFit(
            "fewer than 3 radii with positive oscillation".into(),
        ));
    }
    let fit = loglog_fit(&rs, &osc)?;
    Ok((osc, fit))
}

/// `max u(p) / u(A+_{rho, Lambda})` over grid nodes `p` at heights below `rho`
/// above the surface cube `Delta_rho(vertex)` (m = 1).
pub fn carleson_constant(gf: &GridFunction, vertex: &PhasePoint, rho: f64, lambda: f64) -> Result<f64> {
    let pole = reference_point(vertex, &ReferenceParams::new(rho, lambda, crate::geometry::Sign::Plus)?)?;
    let at_pole = gf
        .evaluate(&[pole.x()[0], pole.y()[0], pole.t()])
        .map_err(|_| invalid("reference point outside the grid"))?;
    if !(at_pole > 0.0) {
        return Err(Error::DegenerateFit("solution vanishes at the reference point".into()));
    }
    let (y0, t0) = (vertex.y()[0], vertex.t());
    let mut best: f64 = 0.0;
    for p in 0..gf.values.len() {
        let c = gf.coords(p);
        let dt = c[2] - t0;
        if c[0] > 0.0 && c[0] < rho && dt.abs() < rho * rho && (c[1] - y0 + dt * vertex.x()[0]).abs() < rho.powi(3) {
            best = best.max(gf.values[p] / at_pole);
        }
    }
    Ok(best)
}

/// `||N(u)||_2 / ||f||_2` over a grid of cone vertices on `x = 0` (m = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvabilityRatio {
    pub n_norm: f64,
    pub f_norm: f64,
    pub ratio: f64,
    pub vertices: usize,
}

/// `||N(u)||_{L^2(window)}` by midpoint quadrature on an `ny x nt` vertex grid,
/// against `||f||_{L^2}` of the lateral datum `g(y, t)` over its own box.
#[allow(clippy::too_many_arguments)]
pub fn solvability_ratio(
    dom: &GraphDomain,
    gf: &GridFunction,
    g: &dyn Fn(f64, f64) -> f64,
    window: ((f64, f64), (f64, f64)),
    data_box: ((f64, f64), (f64, f64)),
    vertices: (usize, usize),
    cone: &ConeParams,
    height_cap: f64,
    cone_samples: usize,
) -> Result<SolvabilityRatio> {
    if dom.m != 1 {
        return Err(invalid("solvability ratios are computed for m = 1"));
    }
    cone.validate(dom)?;
    let eval = kolmogorov_evaluator(gf);
    let ((ya, yb), (ta, tb)) = window;
    let (ny, nt) = vertices;
    let (hy, ht) = ((yb - ya) / ny as f64, (tb - ta) / nt as f64);
    let level = dom.psi(&[]);
    let mut n2 = 0.0;
    for i in 0..ny {
        for j in 0..nt {
            let v = PhasePoint::new(
                vec![level],
                vec![ya + (i as f64 + 0.5) * hy],
                ta + (j as f64 + 0.5) * ht,
            )?;
            let nt_val = nt_max(dom, &v, cone, height_cap, cone_samples, &eval)?;
            n2 += nt_val.value * nt_val.value * hy * ht;
        }
    }
    let ((fya, fyb), (fta, ftb)) = data_box;
    let f2 = crate::quad::integrate_box(&[fya, fta], &[fyb, ftb], 32, |s| g(s[0], s[1]).powi(2));
    if !(f2 > 0.0) {
        return Err(invalid("boundary datum has zero norm"));
    }
    Ok(SolvabilityRatio {
        n_norm: n2.sqrt(),
        f_norm: f2.sqrt(),
        ratio: (n2 / f2).sqrt(),
        vertices: ny * nt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::DyadicWindow;
    use crate::grid::Axis;

    fn flat_vertex() -> PhasePoint {
        PhasePoint::new(vec![0.0], vec![0.0], 0.0).unwrap()
    }

    #[test]
    fn default_aperture_keeps_cone_nonempty() {
        let dom = GraphDomain::flat(1);
        let cone = ConeParams::for_domain(&dom);
        assert_eq!(cone.eta, 2.0);
        cone.validate(&dom).unwrap();
        assert!(ConeParams { eta: 0.5, delta: None }.validate(&dom).is_err());
        let eta = ConeParams::default_eta(1.0);
        assert!(eta > 1.0 && eta < 2f64.sqrt());
    }

    #[test]
    fn nt_max_of_constant_and_of_height() {
        let dom = GraphDomain::flat(1);
        let cone = ConeParams { eta: 2.0, delta: None };
        let v = nt_max(&dom, &flat_vertex(), &cone, 1.0, 512, &|_| Some(-3.0)).unwrap();
        assert_eq!(v.value, 3.0);
        assert!(v.used > 0);
        let trunc = ConeParams {
            eta: 2.0,
            delta: Some(0.3),
        };
        let h = nt_max(&dom, &flat_vertex(), &trunc, 5.0, 2048, &|p| Some(p.xm())).unwrap();
        assert!(h.value <= 0.3);
    }

    #[test]
    fn nt_max_is_monotone_in_aperture() {
        let dom = GraphDomain::flat(2);
        let vertex = PhasePoint::new(vec![0.0, 0.0], vec![0.5, -0.5], 1.0).unwrap();
        let samples = ConeSamples::generate(&dom, &vertex, 3.0, 1.0, 4096).unwrap();
        let u = |p: &PhasePoint| Some((p.x()[0] * 3.0).sin() + p.y()[1] * p.t());
        let mut last = 0.0;
        for eta in [1.2, 1.5, 2.0, 3.0] {
            let v = nt_max_on(&dom, &samples, &ConeParams { eta, delta: None }, &u)
                .unwrap()
                .value;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn cone_samples_respect_the_vertex_geometry() {
        let dom = GraphDomain::flat(1);
        let vertex = PhasePoint::new(vec![0.0], vec![1.0], -2.0).unwrap();
        let cone = ConeParams { eta: 2.0, delta: None };
        let samples = ConeSamples::generate(&dom, &vertex, cone.eta, 1.0, 1024).unwrap();
        let mut inside = 0;
        for (p, h) in &samples.points {
            assert!((p.xm() - h).abs() < 1e-12);
            if distance_unchecked(p, &vertex) < cone.eta * h {
                inside += 1;
            }
        }
        assert!(inside > 50, "{inside}");
    }

    fn system(level: i32) -> DyadicSystem {
        DyadicSystem::new(GraphDomain::flat(1), DyadicWindow::unit(1), 0, level).unwrap()
    }

    #[test]
    fn hl_max_examples() {
        let sys = system(2);
        let n = sys.cube_count(2) as usize;
        let c = sys.cube(2, &[3, 1]).unwrap();
        let mut f = vec![0.0; n];
        f[sys.flat_index(2, &c.index)] = 1.0;
        assert_eq!(hl_max(&sys, 2, &f, &c.center).unwrap(), 1.0);
        let g = vec![-2.5; n];
        assert!((hl_max(&sys, 2, &g, &c.center).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_kernel_has_unit_ratio() {
        let sys = system(4);
        let h = point_mass_histogram(&sys, 4, 7, 0, &sys.cube(0, &[0, 0]).unwrap().center).unwrap();
        let tested = vec![sys.cube(0, &[0, 0]).unwrap()];
        for q in [1.5, 2.0, 4.0] {
            let r = bq_constant(&h, q, &tested, 2).unwrap();
            assert!((r.constant - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bq_is_monotone_in_q_and_control_is_unstable() {
        let sys = system(4);
        let center = sys.cube(0, &[0, 0]).unwrap().center;
        let h = point_mass_histogram(&sys, 4, 10, 5_000_000, &center).unwrap();
        let tested = vec![sys.cube(0, &[0, 0]).unwrap()];
        let mut last = 0.0;
        for q in [1.0, 1.5, 2.0, 3.0] {
            let g = bq_constant(&h, q, &tested, 3).unwrap().constant;
            assert!(g >= last);
            last = g;
        }
        let g2 = bq_constant(&h, 2.0, &tested, 2).unwrap().debiased_constant.unwrap();
        let g3 = bq_constant(&h, 2.0, &tested, 3).unwrap().debiased_constant.unwrap();
        assert!(!stable(g2, g3, 0.1), "{g2} {g3}");
    }

    #[test]
    fn poisson_kernel_bq_is_stable_under_refinement() {
        // Half-plane Poisson kernel at unit height on |xi| <= 1.
        let kernel = |a: f64, b: f64| (b.atan() - a.atan()) / std::f64::consts::PI;
        let ratio = |n: usize| {
            let w = 2.0 / n as f64;
            let cells: Vec<(f64, f64)> = (0..n)
                .map(|i| (kernel(-1.0 + i as f64 * w, -1.0 + (i + 1) as f64 * w), w))
                .collect();
            bq_ratio(&cells, 2.0).unwrap()
        };
        let (a, b) = (ratio(64), ratio(128));
        assert!(a > 1.0 && stable(a, b, 0.1));
    }

    #[test]
    fn bq_rejects_shallow_histograms() {
        let sys = system(2);
        let h = point_mass_histogram(&sys, 2, 1, 0, &sys.cube(0, &[0, 0]).unwrap().center).unwrap();
        assert!(bq_constant(&h, 2.0, &[sys.cube(0, &[0, 0]).unwrap()], 1).is_err());
    }

    #[test]
    fn doubling_of_uniform_law_is_volume_ratio() {
        let dom = GraphDomain::flat(1);
        let small = SurfaceCube::at(&dom, &[], vec![0.0], 0.0, 0.25).unwrap();
        let big = small.scaled(2.0);
        // Uniform law: counts proportional to sigma_K = (2r^3)(2r^2).
        let hist = MeasureHistogram {
            partition: Partition::Surface {
                cubes: vec![small.clone(), big.clone()],
            },
            kind: MeasureKind::Kolmogorov,
            adjoint: false,
            pole: flat_vertex(),
            n_paths: 1 << 20,
            counts: vec![1 << 10, 1 << 15],
            censored: 0,
            outside: 0,
        };
        let r = doubling_test(&hist, &[(0, 1)], 1).unwrap();
        assert_eq!(r.ratios[0], Some(32.0));
        assert_eq!(r.constant, 2f64.powi(6 - 1));
        assert!(doubling_test(&hist, &[(1, 0)], 1).is_err());
    }

    #[test]
    fn linear_barrier_decays_with_exponent_one() {
        let u = |p: &PhasePoint| Some(3.0 * p.xm());
        let fit = boundary_decay_test(&u, &flat_vertex(), &[0.01, 0.02, 0.04, 0.08, 0.16]).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!(boundary_decay_test(&u, &flat_vertex(), &[0.1, 0.2]).is_err());
    }

    #[test]
    fn harnack_and_holder_on_a_smooth_function() {
        let axes = vec![
            Axis {
                lo: 0.0,
                h: 0.05,
                n: 21,
            },
            Axis {
                lo: -1.0,
                h: 0.05,
                n: 41,
            },
            Axis {
                lo: 0.0,
                h: 0.05,
                n: 21,
            },
        ];
        let mut gf = GridFunction {
            values: vec![0.0; 21 * 41 * 21],
            mask: vec![true; 21 * 41 * 21],
            axes,
        };
        for p in 0..gf.values.len() {
            let c = gf.coords(p);
            gf.values[p] = 1.0 + c[0] + 0.1 * c[2];
        }
        let earlier = Box3 {
            lo: [0.4, -0.2, 0.2],
            hi: [0.6, 0.2, 0.4],
        };
        let later = Box3 {
            lo: [0.4, -0.2, 0.6],
            hi: [0.6, 0.2, 0.8],
        };
        let c = harnack_constant(&gf, &earlier, &later).unwrap();
        assert!(c > 0.0 && c.is_finite());
        assert!(harnack_constant(&gf, &later, &earlier).is_err());
        let (_, fit) = holder_exponent(&gf, [0.5, 0.0, 0.9], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(fit.slope > 0.0);
    }
}

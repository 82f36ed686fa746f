//! Monte Carlo boundary measures as first-exit laws of the diffusions behind
//! `L_E`, `L_P` and `L_K`, and the constant-coefficient fundamental solution.
//!
//! For the divergence-form generator `div(A grad)` the Ito form has drift
//! `b_j = sum_i d_i a_ij` and diffusion `sqrt(2A)`. Kolmogorov paths also carry
//! `dY = X ds` and run backwards in physical time, `t = t0 - s`. The adjoint
//! flag flips both: `dY = -X ds`, `t = t0 + s`.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::{sigma_of_param_box, CoefficientField, GraphDomain, MeasureKind, SurfaceCube};
use crate::dyadic::{params_of, DyadicSystem};
use crate::error::{invalid, Error, Result};
use crate::geometry::{distance_unchecked, GroupConstants, PhasePoint};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExitRefine {
    #[default]
    None,
    Bisection,
}

/// Time-step rule. `Adaptive` uses `dt = clamp((frac * height)^2, dt_min, dt_max)`
/// so that steps shrink near the boundary and grow far from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepPolicy {
    #[default]
    Fixed,
    Adaptive {
        dt_min: f64,
        dt_max: f64,
        frac: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    /// Step for `Fixed`; ignored by `Adaptive`.
    pub dt: f64,
    pub max_time: f64,
    pub n_paths: u64,
    pub seed: u64,
    #[serde(default)]
    pub exit_refine: ExitRefine,
    #[serde(default)]
    pub step: StepPolicy,
    #[serde(default = "default_batch")]
    pub batch: u64,
}

fn default_batch() -> u64 {
    1024
}

impl SdeConfig {
    pub fn new(dt: f64, max_time: f64, n_paths: u64, seed: u64) -> Self {
        Self {
            dt,
            max_time,
            n_paths,
            seed,
            exit_refine: ExitRefine::None,
            step: StepPolicy::Fixed,
            batch: default_batch(),
        }
    }

    pub fn adaptive(mut self, dt_min: f64, dt_max: f64, frac: f64) -> Self {
        self.step = StepPolicy::Adaptive { dt_min, dt_max, frac };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_time.is_finite() && self.max_time > 0.0) {
            return Err(invalid("max_time must be > 0"));
        }
        if self.n_paths == 0 {
            return Err(invalid("n_paths must be >= 1"));
        }
        match self.step {
            StepPolicy::Fixed => {
                if !(self.dt > 0.0 && self.dt <= self.max_time) {
                    return Err(invalid(format!("need 0 < dt <= max_time, got dt={}", self.dt)));
                }
            }
            StepPolicy::Adaptive { dt_min, dt_max, frac } => {
                if !(dt_min > 0.0 && dt_min <= dt_max && dt_max <= self.max_time && frac > 0.0) {
                    return Err(invalid(
                        "adaptive steps need 0 < dt_min <= dt_max <= max_time and frac > 0",
                    ));
                }
            }
        }
        Ok(())
    }

    fn step_for(&self, height: f64) -> f64 {
        match self.step {
            StepPolicy::Fixed => self.dt,
            StepPolicy::Adaptive { dt_min, dt_max, frac } => (frac * height).powi(2).clamp(dt_min, dt_max),
        }
    }
}

/// Diffusion state: `X`, `Y` and the elapsed clock `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitEvent {
    pub point: PhasePoint,
    pub elapsed: f64,
    pub censored: bool,
}

/// Scratch buffers for one path.
struct Workspace {
    a: Vec<f64>,
    b: Vec<f64>,
    sq: Vec<f64>,
    x_new: Vec<f64>,
    y_new: Vec<f64>,
    probe: Vec<f64>,
}

impl Workspace {
    fn new(m: usize) -> Self {
        Self {
            a: vec![0.0; m * m],
            b: vec![0.0; m],
            sq: vec![0.0; m * m],
            x_new: vec![0.0; m],
            y_new: vec![0.0; m],
            probe: vec![0.0; m],
        }
    }
}

/// Principal square root of `2A` (row-major), with an error if `A` is not SPD.
pub fn sqrt_two_a(a: &[f64], m: usize, out: &mut [f64]) -> Result<()> {
    match m {
        1 => {
            if !(a[0] > 0.0) {
                return Err(Error::NotSpd(format!("a = {}", a[0])));
            }
            out[0] = (2.0 * a[0]).sqrt();
        }
        2 => {
            let (p, q, r) = (2.0 * a[0], 2.0 * a[1], 2.0 * a[3]);
            let det = p * r - q * q;
            if !(det > 0.0 && p > 0.0) {
                return Err(Error::NotSpd(format!("2x2 matrix with det {det}")));
            }
            let sd = det.sqrt();
            let norm = (p + r + 2.0 * sd).sqrt();
            out[0] = (p + sd) / norm;
            out[1] = q / norm;
            out[2] = q / norm;
            out[3] = (r + sd) / norm;
        }
        _ => {
            let mat = nalgebra::DMatrix::from_row_slice(m, m, a) * 2.0;
            let eig = mat.symmetric_eigen();
            if eig.eigenvalues.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::NotSpd(format!("eigenvalues {:?}", eig.eigenvalues.as_slice())));
            }
            let d = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
            let root = &eig.eigenvectors * d * eig.eigenvectors.transpose();
            for i in 0..m {
                for j in 0..m {
                    out[i * m + j] = root[(i, j)];
                }
            }
        }
    }
    Ok(())
}

/// One Euler-Maruyama step with the given Brownian increment `dw` (variance `dt`).
///
/// `X <- X + b dt + sqrt(2A) dw`; for Kolmogorov runs also `Y <- Y +/- X dt`
/// with the sign set by `adjoint`; the clock always advances by `dt`.
pub fn sde_step(
    field: &CoefficientField,
    state: &KineticState,
    dw: &[f64],
    dt: f64,
    kind: MeasureKind,
    adjoint: bool,
) -> Result<KineticState> {
    let m = field.m;
    let mut ws = Workspace::new(m);
    let mut next = state.clone();
    step_into(field, &state.x, &state.y, dw, dt, kind, adjoint, &mut ws, None)?;
    next.x.copy_from_slice(&ws.x_new);
    next.y.copy_from_slice(&ws.y_new);
    next.s += dt;
    Ok(next)
}

#[allow(clippy::too_many_arguments)]
fn step_into(
    field: &CoefficientField,
    x: &[f64],
    y: &[f64],
    dw: &[f64],
    dt: f64,
    kind: MeasureKind,
    adjoint: bool,
    ws: &mut Workspace,
    frozen: Option<&[f64]>,
) -> Result<()> {
    let m = field.m;
    let sq: &[f64] = match frozen {
        Some(s) => s,
        None => {
            field.eval_into(x, &mut ws.a);
            field.drift_into(x, &mut ws.b);
            sqrt_two_a(&ws.a, m, &mut ws.sq)?;
            &ws.sq
        }
    };
    for i in 0..m {
        let mut noise = 0.0;
        for j in 0..m {
            noise += sq[i * m + j] * dw[j];
        }
        let drift = if frozen.is_some() { 0.0 } else { ws.b[i] };
        ws.x_new[i] = x[i] + drift * dt + noise;
    }
    let sign = if adjoint { -1.0 } else { 1.0 };
    for i in 0..m {
        ws.y_new[i] = if kind == MeasureKind::Kolmogorov {
            y[i] + sign * x[i] * dt
        } else {
            y[i]
        };
    }
    Ok(())
}

/// Everything a path needs besides its random stream.
#[derive(Clone, Copy)]
pub struct PathSpec<'a> {
    pub dom: &'a GraphDomain,
    pub field: &'a CoefficientField,
    pub config: &'a SdeConfig,
    pub kind: MeasureKind,
    pub adjoint: bool,
}

impl<'a> PathSpec<'a> {
    pub fn new(dom: &'a GraphDomain, field: &'a CoefficientField, config: &'a SdeConfig, kind: MeasureKind) -> Self {
        Self {
            dom,
            field,
            config,
            kind,
            adjoint: false,
        }
    }

    pub fn adjoint(mut self, adjoint: bool) -> Self {
        self.adjoint = adjoint;
        self
    }

    fn validate(&self, start: &PhasePoint) -> Result<()> {
        self.config.validate()?;
        self.dom.validate()?;
        if self.field.m != self.dom.m || start.m() != self.dom.m {
            return Err(Error::DimensionMismatch {
                expected: self.dom.m,
                found: if start.m() != self.dom.m {
                    start.m()
                } else {
                    self.field.m
                },
            });
        }
        if !self.dom.contains(start)? {
            return Err(invalid("start point is not strictly inside the domain"));
        }
        Ok(())
    }

    fn frozen_root(&self) -> Result<Option<Vec<f64>>> {
        if !self.field.is_constant() {
            return Ok(None);
        }
        let m = self.field.m;
        let a = self.field.eval(&vec![0.0; m]);
        let mut sq = vec![0.0; m * m];
        sqrt_two_a(&a, m, &mut sq)?;
        Ok(Some(sq))
    }

    fn exit_time(&self, start: &PhasePoint, s: f64) -> f64 {
        match self.kind {
            MeasureKind::Elliptic => start.t(),
            _ if self.adjoint => start.t() + s,
            _ => start.t() - s,
        }
    }

    fn run(
        &self,
        start: &PhasePoint,
        rng: &mut ChaCha8Rng,
        ws: &mut Workspace,
        frozen: Option<&[f64]>,
    ) -> Result<ExitEvent> {
        let m = self.dom.m;
        let cfg = self.config;
        let mut x = start.x().to_vec();
        let mut y = start.y().to_vec();
        let mut s = 0.0;
        let mut h = self.dom.height(&x);
        let mut dw = vec![0.0; m];
        loop {
            if s >= cfg.max_time {
                return Ok(ExitEvent {
                    point: PhasePoint::from_parts(x, y, self.exit_time(start, s)),
                    elapsed: s,
                    censored: true,
                });
            }
            let dt = cfg.step_for(h).min(cfg.max_time - s);
            let sd = dt.sqrt();
            for w in dw.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = sd * z;
            }
            step_into(self.field, &x, &y, &dw, dt, self.kind, self.adjoint, ws, frozen)?;
            if ws.x_new.iter().any(|v| !v.is_finite()) || ws.y_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("diffusion state"));
            }
            let h_new = self.dom.height(&ws.x_new);
            if h_new <= 0.0 {
                let mut theta = h / (h - h_new);
                if cfg.exit_refine == ExitRefine::Bisection {
                    theta = self.bisect(&x, &ws.x_new.clone(), ws);
                }
                let mut xe: Vec<f64> = (0..m).map(|i| x[i] + theta * (ws.x_new[i] - x[i])).collect();
                xe[m - 1] = self.dom.psi(&xe[..m - 1]);
                let ye: Vec<f64> = (0..m).map(|i| y[i] + theta * (ws.y_new[i] - y[i])).collect();
                let se = s + theta * dt;
                return Ok(ExitEvent {
                    point: PhasePoint::from_parts(xe, ye, self.exit_time(start, se)),
                    elapsed: se,
                    censored: false,
                });
            }
            x.copy_from_slice(&ws.x_new);
            y.copy_from_slice(&ws.y_new);
            s += dt;
            h = h_new;
        }
    }

    /// Crossing parameter on the segment `x0 -> x1` located to 1e-8.
    fn bisect(&self, x0: &[f64], x1: &[f64], ws: &mut Workspace) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > 1e-8 {
            let mid = 0.5 * (lo + hi);
            for i in 0..x0.len() {
                ws.probe[i] = x0[i] + mid * (x1[i] - x0[i]);
            }
            if self.dom.height(&ws.probe) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Runs paths `0..n_paths`, mapping each exit through `f`, in path order.
    pub fn map_paths<T, F>(&self, start: &PhasePoint, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&ExitEvent) -> T + Sync,
    {
        self.validate(start)?;
        let frozen = self.frozen_root()?;
        let parts: Vec<Result<Vec<T>>> = rng::batches(self.config.n_paths, self.config.batch)
            .into_par_iter()
            .map(|range| {
                let mut ws = Workspace::new(self.dom.m);
                range
                    .map(|i| {
                        let mut r = rng::stream(self.config.seed, i);
                        self.run(start, &mut r, &mut ws, frozen.as_deref()).map(|e| f(&e))
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(self.config.n_paths as usize);
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }

    /// Bins exits into `partition` with per-batch tallies reduced in batch order.
    pub fn histogram(&self, start: &PhasePoint, partition: &Partition) -> Result<MeasureHistogram> {
        self.validate(start)?;
        partition.check(self.dom, self.kind)?;
        let frozen = self.frozen_root()?;
        let cells = partition.len(self.kind);
        let tallies: Vec<Result<Tally>> = rng::batches(self.config.n_paths, self.config.batch)
            .into_par_iter()
            .map(|range| {
                let mut ws = Workspace::new(self.dom.m);
                let mut tally = Tally::new(cells);
                let mut hits = Vec::new();
                for i in range {
                    let mut r = rng::stream(self.config.seed, i);
                    let e = self.run(start, &mut r, &mut ws, frozen.as_deref())?;
                    if e.censored {
                        tally.censored += 1;
                        continue;
                    }
                    hits.clear();
                    partition.locate(&e.point, self.kind, &mut hits);
                    if hits.is_empty() {
                        tally.outside += 1;
                    }
                    for &c in &hits {
                        tally.counts[c] += 1;
                    }
                }
                Ok(tally)
            })
            .collect();
        let mut total = Tally::new(cells);
        for t in tallies {
            let t = t?;
            total.censored += t.censored;
            total.outside += t.outside;
            for (a, b) in total.counts.iter_mut().zip(&t.counts) {
                *a += b;
            }
        }
        if total.censored == self.config.n_paths {
            return Err(Error::AllCensored(self.config.n_paths as usize));
        }
        Ok(MeasureHistogram {
            partition: partition.clone(),
            kind: self.kind,
            adjoint: self.adjoint,
            pole: start.clone(),
            n_paths: self.config.n_paths,
            counts: total.counts,
            censored: total.censored,
            outside: total.outside,
        })
    }
}

struct Tally {
    counts: Vec<u64>,
    censored: u64,
    outside: u64,
}

impl Tally {
    fn new(n: usize) -> Self {
        Self {
            counts: vec![0; n],
            censored: 0,
            outside: 0,
        }
    }
}

/// First exit of path 0 of the configured seed.
pub fn sample_exit(
    dom: &GraphDomain,
    field: &CoefficientField,
    start: &PhasePoint,
    config: &SdeConfig,
    kind: MeasureKind,
) -> Result<ExitEvent> {
    let spec = PathSpec::new(dom, field, config, kind);
    spec.validate(start)?;
    let frozen = spec.frozen_root()?;
    let mut ws = Workspace::new(dom.m);
    spec.run(start, &mut rng::stream(config.seed, 0), &mut ws, frozen.as_deref())
}

/// Boundary parameters that a measure of the given kind sees.
pub fn kind_params(p: &PhasePoint, kind: MeasureKind) -> Vec<f64> {
    match kind {
        MeasureKind::Elliptic => p.x_tangential().to_vec(),
        MeasureKind::Parabolic => {
            let mut v = p.x_tangential().to_vec();
            v.push(p.t());
            v
        }
        MeasureKind::Kolmogorov => params_of(p),
    }
}

/// How exits are binned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "partition", rename_all = "snake_case")]
pub enum Partition {
    /// Level-`level` cubes of a dyadic system (Kolmogorov measures only).
    Dyadic { system: DyadicSystem, level: i32 },
    /// Tensor bins over the parameters of the measure kind:
    /// `x'` for E, `(x', t)` for P, `(x', Y, t)` for K.
    Bins {
        lo: Vec<f64>,
        width: Vec<f64>,
        count: Vec<usize>,
    },
    /// Possibly overlapping surface cubes.
    Surface { cubes: Vec<SurfaceCube> },
}

/// Geometry of one histogram cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: String,
    pub center: PhasePoint,
    pub r: f64,
    pub sigma: f64,
}

impl Partition {
    fn check(&self, dom: &GraphDomain, kind: MeasureKind) -> Result<()> {
        match self {
            Partition::Dyadic { system, level } => {
                if kind != MeasureKind::Kolmogorov {
                    return Err(invalid("dyadic partitions bin Kolmogorov exits only"));
                }
                if system.dom != *dom {
                    return Err(invalid("dyadic system is built on a different domain"));
                }
                if *level < system.k_min || *level > system.k_max {
                    return Err(invalid("partition level outside the dyadic system"));
                }
            }
            Partition::Bins { lo, width, count } => {
                let dim = kind_params(&PhasePoint::origin(dom.m), kind).len();
                if lo.len() != dim || width.len() != dim || count.len() != dim {
                    return Err(invalid(format!("bins need {dim} axes for this measure kind")));
                }
                if width.iter().any(|w| !(*w > 0.0)) || count.contains(&0) {
                    return Err(invalid("bin widths and counts must be positive"));
                }
            }
            Partition::Surface { cubes } => {
                if cubes.iter().any(|c| c.center.m() != dom.m) {
                    return Err(invalid("surface cube dimension mismatch"));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self, kind: MeasureKind) -> usize {
        let _ = kind;
        match self {
            Partition::Dyadic { system, level } => system.cube_count(*level) as usize,
            Partition::Bins { count, .. } => count.iter().product(),
            Partition::Surface { cubes } => cubes.len(),
        }
    }

    pub fn is_empty(&self, kind: MeasureKind) -> bool {
        self.len(kind) == 0
    }

    fn locate(&self, p: &PhasePoint, kind: MeasureKind, out: &mut Vec<usize>) {
        match self {
            Partition::Dyadic { system, level } => {
                if let Ok(idx) = system.index_of(&params_of(p), *level) {
                    out.push(system.flat_index(*level, &idx));
                }
            }
            Partition::Bins { lo, width, count } => {
                let params = kind_params(p, kind);
                let mut flat = 0usize;
                for a in 0..params.len() {
                    let i = ((params[a] - lo[a]) / width[a]).floor();
                    if !(i >= 0.0 && i < count[a] as f64) {
                        return;
                    }
                    flat = flat * count[a] + i as usize;
                }
                out.push(flat);
            }
            Partition::Surface { cubes } => {
                for (i, c) in cubes.iter().enumerate() {
                    if c.contains_kind(p, kind) {
                        out.push(i);
                    }
                }
            }
        }
    }

    /// Parameter box of bin `i`.
    pub fn bin_box(&self, i: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Partition::Dyadic { system, level } => {
                let cube = system.cube(*level, &system.unflatten(*level, i)).ok()?;
                Some((cube.lo, cube.hi))
            }
            Partition::Bins { lo, width, count } => {
                let mut idx = vec![0usize; count.len()];
                let mut f = i;
                for a in (0..count.len()).rev() {
                    idx[a] = f % count[a];
                    f /= count[a];
                }
                let l: Vec<f64> = (0..count.len()).map(|a| lo[a] + width[a] * idx[a] as f64).collect();
                let h: Vec<f64> = (0..count.len()).map(|a| l[a] + width[a]).collect();
                Some((l, h))
            }
            Partition::Surface { .. } => None,
        }
    }

    pub fn cell(&self, dom: &GraphDomain, kind: MeasureKind, i: usize) -> Result<Cell> {
        let m = dom.m;
        match self {
            Partition::Dyadic { system, level } => {
                let cube = system.cube(*level, &system.unflatten(*level, i))?;
                Ok(Cell {
                    id: format!("k{}:{:?}", level, cube.index),
                    sigma: cube.sigma(dom, kind)?,
                    r: cube.ell(),
                    center: cube.center,
                })
            }
            Partition::Bins { .. } => {
                let (lo, hi) = self.bin_box(i).expect("bins have boxes");
                let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
                let xd = m - 1;
                let (y_volume, y_mid, t_len, t_mid) = match kind {
                    MeasureKind::Elliptic => (1.0, vec![0.0; m], 0.0, 0.0),
                    MeasureKind::Parabolic => (1.0, vec![0.0; m], hi[xd] - lo[xd], mid[xd]),
                    MeasureKind::Kolmogorov => (
                        (0..m).map(|j| hi[xd + j] - lo[xd + j]).product(),
                        mid[xd..xd + m].to_vec(),
                        hi[xd + m] - lo[xd + m],
                        mid[xd + m],
                    ),
                };
                let sigma = sigma_of_param_box(dom, &lo[..xd], &hi[..xd], y_volume, t_len, kind)?;
                let mut r: f64 = 0.0;
                for a in 0..lo.len() {
                    let w = hi[a] - lo[a];
                    let scaled = if a < xd {
                        w
                    } else if kind == MeasureKind::Kolmogorov && a < xd + m {
                        w.cbrt()
                    } else {
                        w.sqrt()
                    };
                    r = r.max(0.5 * scaled);
                }
                Ok(Cell {
                    id: format!("bin{i}"),
                    center: PhasePoint::from_parts(dom.lift(&mid[..xd]), y_mid, t_mid),
                    r,
                    sigma,
                })
            }
            Partition::Surface { cubes } => {
                let c = &cubes[i];
                Ok(Cell {
                    id: format!("cube{i}"),
                    center: c.center.clone(),
                    r: c.r,
                    sigma: crate::domain::sigma_of_cube(dom, c, kind)?,
                })
            }
        }
    }
}

/// Empirical boundary measure over a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureHistogram {
    pub partition: Partition,
    pub kind: MeasureKind,
    pub adjoint: bool,
    pub pole: PhasePoint,
    pub n_paths: u64,
    pub counts: Vec<u64>,
    pub censored: u64,
    /// Exits that landed in no cell.
    pub outside: u64,
}

/// `omega(cell) / sigma(cell)`; `zero_count` flags an empty cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelRatio {
    pub value: f64,
    pub stderr: f64,
    pub zero_count: bool,
}

impl MeasureHistogram {
    pub fn mass(&self, i: usize) -> f64 {
        self.counts[i] as f64 / self.n_paths as f64
    }

    /// Binomial standard error of `mass(i)`.
    pub fn stderr(&self, i: usize) -> f64 {
        let p = self.mass(i);
        (p * (1.0 - p) / self.n_paths as f64).sqrt()
    }

    pub fn total_mass(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.n_paths as f64
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.n_paths as f64
    }

    /// Fraction of non-censored exits that landed inside the partition.
    pub fn captured_fraction(&self) -> f64 {
        let exited = self.n_paths - self.censored;
        if exited == 0 {
            return 0.0;
        }
        1.0 - self.outside as f64 / exited as f64
    }

    /// True when fewer than 95% of exits fall inside the partition.
    pub fn coverage_warning(&self) -> bool {
        self.captured_fraction() < 0.95
    }

    pub fn cell(&self, dom: &GraphDomain, i: usize) -> Result<Cell> {
        self.partition.cell(dom, self.kind, i)
    }

    /// Empirical `omega / sigma` on cell `i`, against the surface measure of `which`.
    pub fn kernel_ratio(&self, dom: &GraphDomain, i: usize, which: MeasureKind) -> Result<KernelRatio> {
        let sigma = self.partition.cell(dom, which, i)?.sigma;
        if !(sigma > 0.0) {
            return Err(invalid(format!("cell {i} has zero surface measure")));
        }
        Ok(KernelRatio {
            value: self.mass(i) / sigma,
            stderr: self.stderr(i) / sigma,
            zero_count: self.counts[i] == 0,
        })
    }

    /// Counts summed up to level `k` for dyadic partitions.
    pub fn counts_at_level(&self, k: i32) -> Result<Vec<u64>> {
        let Partition::Dyadic { system, level } = &self.partition else {
            return Err(invalid("only dyadic histograms can be coarsened"));
        };
        if k > *level || k < system.k_min {
            return Err(invalid(format!("cannot coarsen level {level} to {k}")));
        }
        let mut out = vec![0u64; system.cube_count(k) as usize];
        let shift = level - k;
        let m = system.m();
        let mut ratios = vec![2i64.pow(shift as u32); m - 1];
        ratios.extend(std::iter::repeat_n(8i64.pow(shift as u32), m));
        ratios.push(4i64.pow(shift as u32));
        for (flat, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let idx: Vec<i64> = system
                .unflatten(*level, flat)
                .iter()
                .zip(&ratios)
                .map(|(i, r)| i.div_euclid(*r))
                .collect();
            out[system.flat_index(k, &idx)] += c;
        }
        Ok(out)
    }

    pub fn to_json(&self, dom: &GraphDomain) -> Result<serde_json::Value> {
        let mut cells = Vec::with_capacity(self.counts.len());
        for i in 0..self.counts.len() {
            let c = self.cell(dom, i)?;
            cells.push(json!({
                "id": c.id,
                "center": c.center,
                "r": c.r,
                "count": self.counts[i],
                "mass": self.mass(i),
                "stderr": self.stderr(i),
                "sigma": c.sigma,
            }));
        }
        Ok(json!({
            "kind": self.kind,
            "adjoint": self.adjoint,
            "pole": self.pole,
            "n_paths": self.n_paths,
            "censored": self.censored,
            "outside": self.outside,
            "total_mass": self.total_mass(),
            "coverage_warning": self.coverage_warning(),
            "cells": cells,
        }))
    }

    /// CSV rows `id, center coordinates, r, mass, stderr, sigma`.
    pub fn to_csv(&self, dom: &GraphDomain) -> Result<String> {
        let m = dom.m;
        let mut header = vec!["id".to_string()];
        header.extend((0..m).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("y{i}")));
        header.extend(["t", "r", "count", "mass", "stderr", "sigma"].map(String::from));
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.counts.len() {
            let c = self.cell(dom, i)?;
            let mut row = vec![c.id.replace(',', ";")];
            row.extend(c.center.x().iter().chain(c.center.y()).map(|v| v.to_string()));
            row.push(c.center.t().to_string());
            row.push(c.r.to_string());
            row.push(self.counts[i].to_string());
            row.push(self.mass(i).to_string());
            row.push(self.stderr(i).to_string());
            row.push(c.sigma.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        Ok(out)
    }
}

/// `estimate_measure`: exit histogram of the `kind` diffusion from `pole`.
pub fn estimate_measure(
    dom: &GraphDomain,
    field: &CoefficientField,
    pole: &PhasePoint,
    partition: &Partition,
    config: &SdeConfig,
    kind: MeasureKind,
    adjoint: bool,
) -> Result<MeasureHistogram> {
    PathSpec::new(dom, field, config, kind)
        .adjoint(adjoint)
        .histogram(pole, partition)
}

/// Fundamental solution of `L_K` for `A = I`:
/// the density at `(X, Y)` of the kinetic diffusion started at `(X~, Y~)`
/// after time `s = t - t~`. Each coordinate pair is Gaussian with mean
/// `(X~_j, Y~_j - s X~_j)` and covariance `[[2s, -s^2], [-s^2, 2s^3/3]]`.
pub fn fundamental_solution_const(field: &CoefficientField, p: &PhasePoint, p_tilde: &PhasePoint) -> Result<f64> {
    if !field.is_constant()
        || field.eval(&vec![0.0; field.m]) != CoefficientField::identity(field.m).eval(&vec![0.0; field.m])
    {
        return Err(invalid("the closed-form fundamental solution needs A = I"));
    }
    if p.m() != p_tilde.m() || p.m() != field.m {
        return Err(Error::DimensionMismatch {
            expected: field.m,
            found: p.m(),
        });
    }
    let s = p.t() - p_tilde.t();
    if s <= 0.0 {
        return Ok(0.0);
    }
    let mut density = 1.0;
    for j in 0..p.m() {
        let u = p.x()[j] - p_tilde.x()[j];
        let v = p.y()[j] - p_tilde.y()[j] + s * p_tilde.x()[j];
        density *= kinetic_pair_density(u, v, s);
    }
    Ok(density)
}

/// Density of `(X_s, Y_s) - (x0, y0 - s x0)` for one coordinate pair.
pub fn kinetic_pair_density(u: f64, v: f64, s: f64) -> f64 {
    // Inverse of [[2s, -s^2], [-s^2, 2s^3/3]] is (3/s^4) [[2s^3/3, s^2], [s^2, 2s]].
    let q = (2.0 / s) * u * u + (6.0 / (s * s)) * u * v + (6.0 / s.powi(3)) * v * v;
    3f64.sqrt() / (2.0 * PI * s * s) * (-0.5 * q).exp()
}

/// Largest sampled `Gamma(p, p~) d(p, p~)^(q - 2)` over random pairs.
pub fn fundamental_bound_constant(m: usize, samples: u64, seed: u64) -> Result<f64> {
    let field = CoefficientField::identity(m);
    let q = GroupConstants::new(m)?.q as i32;
    let mut r = rng::stream(seed, 0);
    let origin = PhasePoint::origin(m);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let scale = 10f64.powf(2.0 * r.random::<f64>() - 1.0);
        let x: Vec<f64> = (0..m).map(|_| scale * (2.0 * r.random::<f64>() - 1.0)).collect();
        let y: Vec<f64> = (0..m)
            .map(|_| scale.powi(3) * (2.0 * r.random::<f64>() - 1.0))
            .collect();
        let t = scale * scale * r.random::<f64>();
        let p = PhasePoint::from_parts(x, y, t);
        let g = fundamental_solution_const(&field, &p, &origin)?;
        let d = distance_unchecked(&p, &origin);
        worst = worst.max(g * d.powi(q - 2));
    }
    Ok(worst)
}

/// Free-space transition samples of the `A = I` kinetic diffusion from `(x0, y0)`
/// after time `s`, using `steps` Euler steps with `dY = -X ds`.
pub fn kinetic_transition_samples(
    m: usize,
    x0: &[f64],
    y0: &[f64],
    s: f64,
    steps: usize,
    n: u64,
    seed: u64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let dt = s / steps as f64;
    let sd = (2.0 * dt).sqrt();
    rng::batches(n, default_batch())
        .into_par_iter()
        .map(|range| {
            range
                .map(|i| {
                    let mut r = rng::stream(seed, i);
                    let mut x = x0.to_vec();
                    let mut y = y0.to_vec();
                    for _ in 0..steps {
                        for j in 0..m {
                            y[j] -= x[j] * dt;
                            let z: f64 = r.sample(StandardNormal);
                            x[j] += sd * z;
                        }
                    }
                    (x, y)
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

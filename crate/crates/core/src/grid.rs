//! Finite-difference Dirichlet solvers for `L_E` (m = 1, 2), `L_P` and `L_K` (m = 1).
//!
//! All schemes are in flux form with harmonic face averages of `A`. The
//! parabolic and Kolmogorov solvers march forward from data at the earliest
//! time: `L_K u = 0` reads `u_t = (a u_x)_x + x u_y`, which is split into an
//! explicit upwind step in `y` and a backward-Euler step in `x`. Both steps
//! are monotone, so the discrete maximum principle holds whenever the CFL
//! bound `h_t max|x| <= h_y` does.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{CoefficientField, GraphDomain};
use crate::error::{invalid, Error, Result};

/// Uniform axis with nodes `lo + i h`, `i < n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub h: f64,
    pub n: usize,
}

impl Axis {
    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.h * i as f64
    }

    pub fn hi(&self) -> f64 {
        self.node(self.n - 1)
    }

    /// Axis over `[lo, hi]` whose spacing is at most `h`.
    pub fn covering(lo: f64, hi: f64, h: f64) -> Result<Self> {
        if !(hi > lo && h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("bad axis [{lo}, {hi}] with spacing {h}")));
        }
        let cells = ((hi - lo) / h - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            lo,
            h: (hi - lo) / cells as f64,
            n: cells + 1,
        })
    }
}

/// Nodal values on a tensor grid, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
    /// True at unknowns, false at nodes carrying Dirichlet data.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SolveReport {
    pub residual: f64,
    pub iterations: usize,
    pub steps: usize,
    /// Largest excursion of the solution outside `[min data, max data]`.
    pub max_principle_violation: f64,
}

impl GridFunction {
    fn new(axes: Vec<Axis>) -> Self {
        let n = axes.iter().map(|a| a.n).product();
        Self {
            axes,
            values: vec![0.0; n],
            mask: vec![false; n],
        }
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.axes.len()];
        for d in (0..self.axes.len().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.axes[d + 1].n;
        }
        s
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.index(idx)]
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let strides = self.strides();
        self.axes
            .iter()
            .zip(&strides)
            .map(|(a, s)| {
                let i = rem / s;
                rem %= s;
                a.node(i)
            })
            .collect()
    }

    /// Multilinear interpolation at `p`.
    pub fn evaluate(&self, p: &[f64]) -> Result<f64> {
        let d = self.axes.len();
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let a = &self.axes[k];
            let s = (p[k] - a.lo) / a.h;
            let tol = 1e-9;
            if !(s >= -tol && s <= (a.n - 1) as f64 + tol) {
                return Err(Error::OutsideWindow(format!("coordinate {} on axis {k}", p[k])));
            }
            if a.n == 1 {
                continue;
            }
            let i = (s.floor().max(0.0) as usize).min(a.n - 2);
            base[k] = i;
            frac[k] = (s - i as f64).clamp(0.0, 1.0);
        }
        let strides = self.strides();
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                if self.axes[k].n == 1 && bit == 1 {
                    w = 0.0;
                    break;
                }
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat += (base[k] + bit) * strides[k];
            }
            if w != 0.0 {
                total += w * self.values[flat];
            }
        }
        Ok(total)
    }

    /// Text format: a header line `dims n.. spacings h.. origin o..`, then one value per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("dims");
        for a in &self.axes {
            let _ = write!(out, " {}", a.n);
        }
        out.push_str(" spacings");
        for a in &self.axes {
            let _ = write!(out, " {:e}", a.h);
        }
        out.push_str(" origin");
        for a in &self.axes {
            let _ = write!(out, " {:e}", a.lo);
        }
        out.push('\n');
        for v in &self.values {
            let _ = writeln!(out, "{v:e}");
        }
        out
    }

    /// Parses [`GridFunction::to_text`] output; leading `#` lines are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Format("empty grid file".into()))?;
        let words: Vec<&str> = header.split_whitespace().collect();
        let pos = |key: &str| {
            words
                .iter()
                .position(|w| *w == key)
                .ok_or_else(|| Error::Format(format!("missing `{key}` in grid header")))
        };
        let (pd, ps, po) = (pos("dims")?, pos("spacings")?, pos("origin")?);
        let d = ps - pd - 1;
        if po - ps - 1 != d || words.len() - po - 1 != d || d == 0 {
            return Err(Error::Format("inconsistent grid header".into()));
        }
        let num = |w: &str| w.parse::<f64>().map_err(|e| Error::Format(format!("`{w}`: {e}")));
        let mut axes = Vec::with_capacity(d);
        for k in 0..d {
            let n = words[pd + 1 + k]
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("dims: {e}")))?;
            axes.push(Axis {
                n,
                h: num(words[ps + 1 + k])?,
                lo: num(words[po + 1 + k])?,
            });
        }
        let mut gf = GridFunction::new(axes);
        let mut count = 0;
        for (slot, line) in gf.values.iter_mut().zip(lines.by_ref()) {
            *slot = num(line.trim())?;
            count += 1;
        }
        if count != gf.values.len() || lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Format(format!("expected {} values", gf.values.len())));
        }
        gf.mask = vec![true; gf.values.len()];
        Ok(gf)
    }

    /// CSV of the slice with `axis` fixed at node `index`: free coordinates then value.
    pub fn slice_csv(&self, axis: usize, index: usize) -> Result<String> {
        if axis >= self.axes.len() || index >= self.axes[axis].n {
            return Err(invalid("slice outside grid"));
        }
        let names = ["x", "y", "t", "w"];
        let mut header: Vec<&str> = (0..self.axes.len())
            .filter(|k| *k != axis)
            .map(|k| names[k.min(3)])
            .collect();
        header.push("u");
        let mut out = header.join(",");
        out.push('\n');
        let strides = self.strides();
        for flat in 0..self.values.len() {
            if (flat / strides[axis]) % self.axes[axis].n != index {
                continue;
            }
            let c = self.coords(flat);
            let row: Vec<String> = c
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != axis)
                .map(|(_, v)| v.to_string())
                .chain(std::iter::once(self.values[flat].to_string()))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        Ok(out)
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Compressed sparse rows for the SPD systems of the elliptic solver.
struct Csr {
    start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.start[r]..self.start[r + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            *o = s;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.start.len() - 1)
            .map(|r| {
                (self.start[r]..self.start[r + 1])
                    .find(|&k| self.col[k] == r)
                    .map(|k| self.val[k])
                    .unwrap_or(1.0)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients to relative residual `tol`.
fn conjugate_gradient(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0.0, 0));
    }
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        a.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = dot(&r, &r).sqrt() / bnorm;
        if !res.is_finite() {
            return Err(Error::NonFinite("conjugate gradient residual"));
        }
        if res <= tol {
            // Confirm with the true residual.
            a.apply(&x, &mut ap);
            let true_res = b.iter().zip(&ap).map(|(b, v)| (b - v).powi(2)).sum::<f64>().sqrt() / bnorm;
            if true_res <= tol * 10.0 {
                return Ok((x, true_res, it));
            }
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = dot(&r, &r).sqrt() / bnorm;
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EllipticOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

fn data_range(gf: &GridFunction) -> (f64, f64) {
    gf.values
        .iter()
        .zip(&gf.mask)
        .filter(|(_, m)| !**m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| {
            (lo.min(*v), hi.max(*v))
        })
}

fn violation(values: &[f64], mask: &[bool], lo: f64, hi: f64) -> f64 {
    values
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(v, _)| (v - hi).max(lo - v).max(0.0))
        .fold(0.0, f64::max)
}

/// `div(A grad u) = 0` on the box `[lo, hi]` intersected with the domain, `u = f`
/// at box-face nodes and at nodes on or below the graph.
pub fn solve_elliptic(
    dom: &GraphDomain,
    field: &CoefficientField,
    lo: &[f64],
    hi: &[f64],
    h: f64,
    f: &dyn Fn(&[f64]) -> f64,
    opts: &EllipticOptions,
) -> Result<(GridFunction, SolveReport)> {
    let m = dom.m;
    if !(m == 1 || m == 2) {
        return Err(invalid("the elliptic grid solver supports m = 1 and m = 2"));
    }
    if field.m != m || lo.len() != m || hi.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: lo.len(),
        });
    }
    let axes: Vec<Axis> = (0..m).map(|d| Axis::covering(lo[d], hi[d], h)).collect::<Result<_>>()?;
    let mut gf = GridFunction::new(axes.clone());
    let strides = gf.strides();
    let npts = gf.values.len();
    let mut unknown = vec![usize::MAX; npts];
    let mut n_unknown = 0;
    let mut coeff = vec![0.0; npts * m * m];
    let mut buf = vec![0.0; m * m];
    for p in 0..npts {
        let x = gf.coords(p);
        field.eval_into(&x, &mut buf);
        coeff[p * m * m..(p + 1) * m * m].copy_from_slice(&buf);
        let on_face = (0..m).any(|d| {
            let i = (p / strides[d]) % axes[d].n;
            i == 0 || i == axes[d].n - 1
        });
        if !on_face && dom.contains_x(&x) {
            gf.mask[p] = true;
            unknown[p] = n_unknown;
            n_unknown += 1;
        } else {
            gf.values[p] = f(&x);
        }
    }
    let a_at = |p: usize, i: usize, j: usize| coeff[p * m * m + i * m + j];
    let h2 = h * h;
    let mut start = vec![0usize];
    let mut col = Vec::new();
    let mut val = Vec::new();
    let mut rhs = vec![0.0; n_unknown];
    let mut row: Vec<(usize, f64)> = Vec::new();
    for p in 0..npts {
        if !gf.mask[p] {
            continue;
        }
        let r = unknown[p];
        row.clear();
        let mut diag = 0.0;
        for d in 0..m {
            let s = axes[d].h;
            for q in [p + strides[d], p - strides[d]] {
                let w = harmonic(a_at(p, d, d), a_at(q, d, d)) / (s * s);
                diag += w;
                row.push((q, -w));
            }
        }
        if m == 2 {
            let (s0, s1) = (strides[0], strides[1]);
            let w = 1.0 / (4.0 * h2);
            // d_0(a01 d_1 u) + d_1(a10 d_0 u), central differences, negated.
            for (q, sign, c) in [
                (p + s0, 1.0, p + s0 + s1),
                (p + s0, -1.0, p + s0 - s1),
                (p - s0, -1.0, p - s0 + s1),
                (p - s0, 1.0, p - s0 - s1),
                (p + s1, 1.0, p + s1 + s0),
                (p + s1, -1.0, p + s1 - s0),
                (p - s1, -1.0, p - s1 + s0),
                (p - s1, 1.0, p - s1 - s0),
            ] {
                let a01 = a_at(q, 0, 1);
                if a01 != 0.0 {
                    row.push((c, -sign * a01 * w));
                }
            }
        }
        row.push((p, diag));
        row.sort_by_key(|(q, _)| *q);
        let mut last = usize::MAX;
        for &(q, v) in row.iter() {
            if gf.mask[q] {
                let c = unknown[q];
                if c == last {
                    *val.last_mut().expect("entry exists") += v;
                } else {
                    col.push(c);
                    val.push(v);
                    last = c;
                }
            } else {
                rhs[r] -= v * gf.values[q];
            }
        }
        start.push(col.len());
    }
    let a = Csr { start, col, val };
    let (x, residual, iterations) = conjugate_gradient(&a, &rhs, opts.tol, opts.max_iter)?;
    for p in 0..npts {
        if gf.mask[p] {
            gf.values[p] = x[unknown[p]];
        }
    }
    let (dlo, dhi) = data_range(&gf);
    let report = SolveReport {
        residual,
        iterations,
        steps: 0,
        max_principle_violation: violation(&gf.values, &gf.mask, dlo, dhi),
    };
    Ok((gf, report))
}

/// Prefactored tridiagonal operator `I - h_t D_x(a D_x)` on interior nodes.
struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    /// Thomas-algorithm modified upper coefficients and pivots.
    c_prime: Vec<f64>,
    pivot: Vec<f64>,
}

impl Tridiagonal {
    /// Interior rows `1..n-1`; `face[i]` is the conductance between nodes `i` and `i+1`.
    fn implicit_diffusion(face: &[f64], hx: f64, ht: f64) -> Self {
        let n = face.len() + 1;
        let r = ht / (hx * hx);
        let k = n - 2;
        let mut lower = vec![0.0; k];
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        for row in 0..k {
            let i = row + 1;
            lower[row] = -r * face[i - 1];
            upper[row] = -r * face[i];
            diag[row] = 1.0 + r * (face[i - 1] + face[i]);
        }
        let mut c_prime = vec![0.0; k];
        let mut pivot = vec![0.0; k];
        for row in 0..k {
            let denom = diag[row] - if row > 0 { lower[row] * c_prime[row - 1] } else { 0.0 };
            pivot[row] = denom;
            c_prime[row] = upper[row] / denom;
        }
        Self {
            lower,
            diag,
            upper,
            c_prime,
            pivot,
        }
    }

    /// Solves in place for the interior of `u`, with `u[0]` and `u[n-1]` as data.
    fn solve(&self, u: &mut [f64], stride: usize, scratch: &mut [f64]) {
        let k = self.diag.len();
        let n = k + 2;
        for row in 0..k {
            let i = row + 1;
            let mut d = u[i * stride];
            if row == 0 {
                d -= self.lower[0] * u[0];
            }
            if row == k - 1 {
                d -= self.upper[k - 1] * u[(n - 1) * stride];
            }
            if row > 0 {
                d -= self.lower[row] * scratch[row - 1];
            }
            scratch[row] = d / self.pivot[row];
        }
        for row in (0..k).rev() {
            let next = if row + 1 < k { scratch[row + 1] } else { 0.0 };
            if row + 1 < k {
                scratch[row] -= self.c_prime[row] * next;
            }
            u[(row + 1) * stride] = scratch[row];
        }
    }
}

/// General Thomas solve where rows flagged `fixed` keep their current values.
fn solve_segmented(face: &[f64], hx: f64, ht: f64, u: &mut [f64], stride: usize, fixed: &[bool]) {
    let n = face.len() + 1;
    let r = ht / (hx * hx);
    let mut i = 1;
    while i < n - 1 {
        if fixed[i] {
            i += 1;
            continue;
        }
        let s = i;
        while i < n - 1 && !fixed[i] {
            i += 1;
        }
        let e = i;
        let len = e - s;
        let mut cp = vec![0.0; len];
        let mut dp = vec![0.0; len];
        for row in 0..len {
            let j = s + row;
            let lower = -r * face[j - 1];
            let upper = -r * face[j];
            let diag = 1.0 + r * (face[j - 1] + face[j]);
            let mut d = u[j * stride];
            if row == 0 {
                d -= lower * u[(j - 1) * stride];
            }
            if row == len - 1 {
                d -= upper * u[(j + 1) * stride];
            }
            let denom = diag - if row > 0 { lower * cp[row - 1] } else { 0.0 };
            cp[row] = if row + 1 < len { upper / denom } else { 0.0 };
            dp[row] = (d - if row > 0 { lower * dp[row - 1] } else { 0.0 }) / denom;
        }
        for row in (0..len).rev() {
            if row + 1 < len {
                dp[row] -= cp[row] * dp[row + 1];
            }
            u[(s + row) * stride] = dp[row];
        }
    }
}

fn face_conductances(field: &CoefficientField, ax: &Axis) -> Vec<f64> {
    let mut a = vec![0.0; 1];
    let nodal: Vec<f64> = (0..ax.n)
        .map(|i| {
            field.eval_into(&[ax.node(i)], &mut a);
            a[0]
        })
        .collect();
    nodal.windows(2).map(|w| harmonic(w[0], w[1])).collect()
}

fn check_one_dimensional(dom: &GraphDomain, field: &CoefficientField, x_lo: f64) -> Result<()> {
    if dom.m != 1 || field.m != 1 {
        return Err(invalid("this grid solver supports m = 1 only"));
    }
    let level = dom.psi(&[]);
    if x_lo < level - 1e-12 {
        return Err(invalid(format!(
            "box starts at x = {x_lo}, below the boundary x = {level}"
        )));
    }
    Ok(())
}

/// Time axis over `[t_lo, t_hi]` with `steps` steps; snapshots every `stride` steps.
fn time_axis(t_lo: f64, t_hi: f64, ht: f64, stride: usize) -> Result<(usize, f64, Axis)> {
    if !(t_hi > t_lo && ht > 0.0) {
        return Err(invalid("need t_hi > t_lo and h_t > 0"));
    }
    let stride = stride.max(1);
    let raw = ((t_hi - t_lo) / ht - 1e-9).ceil().max(1.0) as usize;
    let steps = raw.div_ceil(stride) * stride;
    let ht = (t_hi - t_lo) / steps as f64;
    Ok((
        steps,
        ht,
        Axis {
            lo: t_lo,
            h: ht * stride as f64,
            n: steps / stride + 1,
        },
    ))
}

/// `(a u_x)_x - u_t = 0` on `[x_lo, x_hi] x [t_lo, t_hi]` by backward Euler,
/// with `f` as initial data and on both `x` faces.
pub fn solve_parabolic(
    dom: &GraphDomain,
    field: &CoefficientField,
    x: (f64, f64),
    t: (f64, f64),
    hx: f64,
    ht: f64,
    f: &dyn Fn(f64, f64) -> f64,
) -> Result<(GridFunction, SolveReport)> {
    check_one_dimensional(dom, field, x.0)?;
    let ax = Axis::covering(x.0, x.1, hx)?;
    let (steps, ht, at) = time_axis(t.0, t.1, ht, 1)?;
    let face = face_conductances(field, &ax);
    let tri = Tridiagonal::implicit_diffusion(&face, ax.h, ht);
    let mut gf = GridFunction::new(vec![ax, at]);
    let nx = ax.n;
    let nt = at.n;
    let mut u: Vec<f64> = (0..nx).map(|i| f(ax.node(i), t.0)).collect();
    let (mut dlo, mut dhi) = u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let mut worst = 0.0f64;
    let mut scratch = vec![0.0; nx];
    let interior: Vec<bool> = (0..nx)
        .map(|i| i > 0 && i < nx - 1 && dom.contains_x(&[ax.node(i)]))
        .collect();
    for i in 0..nx {
        gf.values[i * nt] = u[i];
    }
    for n in 1..=steps {
        let tn = at.node(0) + ht * n as f64;
        u[0] = f(ax.node(0), tn);
        u[nx - 1] = f(ax.node(nx - 1), tn);
        for i in 0..nx {
            if !interior[i] && i != 0 && i != nx - 1 {
                u[i] = f(ax.node(i), tn);
            }
        }
        dlo = dlo.min(u[0]).min(u[nx - 1]);
        dhi = dhi.max(u[0]).max(u[nx - 1]);
        if interior.iter().skip(1).take(nx - 2).all(|b| *b) {
            tri.solve(&mut u, 1, &mut scratch);
        } else {
            let fixed: Vec<bool> = interior.iter().map(|b| !b).collect();
            solve_segmented(&face, ax.h, ht, &mut u, 1, &fixed);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parabolic solution"));
        }
        for i in 0..nx {
            if interior[i] {
                worst = worst.max((u[i] - dhi).max(dlo - u[i]).max(0.0));
            }
            gf.values[i * nt + n] = u[i];
        }
    }
    for i in 0..nx {
        for n in 1..nt {
            gf.mask[i * nt + n] = interior[i];
        }
    }
    Ok((
        gf,
        SolveReport {
            residual: 0.0,
            iterations: 0,
            steps,
            max_principle_violation: worst,
        },
    ))
}

/// Box `[x_lo, x_hi] x [y_lo, y_hi] x [t_lo, t_hi]` for the Kolmogorov solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KolmogorovBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub t: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KolmogorovSteps {
    pub hx: f64,
    pub hy: f64,
    pub ht: f64,
    /// Keep every `store_stride`-th time level.
    #[serde(default = "one")]
    pub store_stride: usize,
}

fn one() -> usize {
    1
}

impl KolmogorovSteps {
    /// Steps with `h_t` at `cfl` times the transport limit for this box.
    pub fn with_cfl(bx: &KolmogorovBox, hx: f64, hy: f64, cfl: f64) -> Self {
        let xmax = bx.x.0.abs().max(bx.x.1.abs()).max(1e-300);
        Self {
            hx,
            hy,
            ht: cfl * hy / xmax,
            store_stride: 1,
        }
    }
}

/// `(a u_x)_x + x u_y - u_t = 0` for `m = 1`.
///
/// `f` supplies the initial data at `t_lo`, the lateral data on both `x` faces
/// and the inflow data on the `y` face that characteristics enter through
/// (`y_hi` where `x > 0`, `y_lo` where `x < 0`). With `eps` the coefficient is
/// replaced by `A(X / eps)` first.
pub fn solve_kolmogorov(
    dom: &GraphDomain,
    field: &CoefficientField,
    bx: &KolmogorovBox,
    steps: &KolmogorovSteps,
    f: &dyn Fn(f64, f64, f64) -> f64,
    eps: Option<f64>,
) -> Result<(GridFunction, SolveReport)> {
    check_one_dimensional(dom, field, bx.x.0)?;
    let field = match eps {
        Some(e) => field.rescale(e)?,
        None => field.clone(),
    };
    let ax = Axis::covering(bx.x.0, bx.x.1, steps.hx)?;
    let ay = Axis::covering(bx.y.0, bx.y.1, steps.hy)?;
    let (nsteps, ht, at) = time_axis(bx.t.0, bx.t.1, steps.ht, steps.store_stride)?;
    let xmax = (0..ax.n).map(|i| ax.node(i).abs()).fold(0.0, f64::max);
    let limit = if xmax > 0.0 { ay.h / xmax } else { f64::INFINITY };
    if ht > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt: ht, limit });
    }
    let (nx, ny, nt) = (ax.n, ay.n, at.n);
    let stride = steps.store_stride.max(1);
    let face = face_conductances(&field, &ax);
    let tri = Tridiagonal::implicit_diffusion(&face, ax.h, ht);
    let interior_x: Vec<bool> = (0..nx)
        .map(|i| i > 0 && i < nx - 1 && dom.contains_x(&[ax.node(i)]))
        .collect();
    let all_interior = interior_x[1..nx - 1].iter().all(|b| *b);
    // Node (i, j) is inflow data when characteristics enter through its y face.
    let inflow = |i: usize, j: usize| {
        let x = ax.node(i);
        (x > 0.0 && j == ny - 1) || (x < 0.0 && j == 0)
    };
    let mut gf = GridFunction::new(vec![ax, ay, at]);
    // Current level stored x-major: u[i * ny + j].
    let mut u = vec![0.0; nx * ny];
    let mut next = vec![0.0; nx * ny];
    let t0 = at.node(0);
    for i in 0..nx {
        for j in 0..ny {
            u[i * ny + j] = f(ax.node(i), ay.node(j), t0);
        }
    }
    let (mut dlo, mut dhi) = u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let store = |gf: &mut GridFunction, u: &[f64], level: usize| {
        for i in 0..nx {
            for j in 0..ny {
                gf.values[(i * ny + j) * nt + level] = u[i * ny + j];
            }
        }
    };
    store(&mut gf, &u, 0);
    let mut worst = 0.0f64;
    let mut scratch = vec![0.0; nx];
    let mut line = vec![0.0; nx];
    let mut fixed = vec![false; nx];
    for n in 1..=nsteps {
        let tn = t0 + ht * n as f64;
        // Explicit upwind transport u_t = x u_y.
        for i in 0..nx {
            let x = ax.node(i);
            let c = ht * x / ay.h;
            for j in 0..ny {
                let k = i * ny + j;
                next[k] = if x > 0.0 && j + 1 < ny {
                    u[k] + c * (u[k + 1] - u[k])
                } else if x < 0.0 && j > 0 {
                    u[k] + c * (u[k] - u[k - 1])
                } else {
                    u[k]
                };
            }
        }
        // Dirichlet data at the new time level.
        for i in 0..nx {
            let x = ax.node(i);
            for j in 0..ny {
                if !interior_x[i] || inflow(i, j) {
                    let v = f(x, ay.node(j), tn);
                    next[i * ny + j] = v;
                    dlo = dlo.min(v);
                    dhi = dhi.max(v);
                }
            }
        }
        // Implicit diffusion along x for each y line.
        for j in 0..ny {
            for i in 0..nx {
                line[i] = next[i * ny + j];
                fixed[i] = !interior_x[i] || inflow(i, j);
            }
            if all_interior && !fixed[1..nx - 1].iter().any(|b| *b) {
                tri.solve(&mut line, 1, &mut scratch);
            } else {
                solve_segmented(&face, ax.h, ht, &mut line, 1, &fixed);
            }
            for i in 0..nx {
                let v = line[i];
                if !v.is_finite() {
                    return Err(Error::NonFinite("Kolmogorov solution"));
                }
                if !fixed[i] {
                    worst = worst.max((v - dhi).max(dlo - v).max(0.0));
                }
                next[i * ny + j] = v;
            }
        }
        std::mem::swap(&mut u, &mut next);
        if n % stride == 0 {
            store(&mut gf, &u, n / stride);
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            for l in 1..nt {
                gf.mask[(i * ny + j) * nt + l] = interior_x[i] && !inflow(i, j);
            }
        }
    }
    Ok((
        gf,
        SolveReport {
            residual: 0.0,
            iterations: 0,
            steps: nsteps,
            max_principle_violation: worst,
        },
    ))
}

/// Observed convergence orders `log2(e_k / e_{k+1})` for successive halvings.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    #[test]
    fn axis_covering_hits_both_ends() {
        let a = Axis::covering(0.0, 1.0, 0.3).unwrap();
        assert_eq!(a.n, 5);
        assert!((a.hi() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_is_exact_on_multilinear_data() {
        let mut gf = GridFunction::new(vec![
            Axis { lo: 0.0, h: 0.5, n: 3 },
            Axis {
                lo: -1.0,
                h: 0.25,
                n: 9,
            },
        ]);
        for p in 0..gf.values.len() {
            let c = gf.coords(p);
            gf.values[p] = 1.0 + 2.0 * c[0] - c[1] + 3.0 * c[0] * c[1];
        }
        assert_eq!(gf.evaluate(&[0.5, -0.5]).unwrap(), gf.get(&[1, 2]));
        for (x, y) in [(0.1, 0.3), (0.77, -0.9), (1.0, 1.0)] {
            let v = gf.evaluate(&[x, y]).unwrap();
            assert!((v - (1.0 + 2.0 * x - y + 3.0 * x * y)).abs() < 1e-13);
        }
        assert!(gf.evaluate(&[1.1, 0.0]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut gf = GridFunction::new(vec![Axis { lo: 0.5, h: 0.1, n: 3 }, Axis { lo: 0.0, h: 2.0, n: 2 }]);
        gf.values = vec![1.0, 2.0, 3.0, 4.5, -1e-9, 7.0];
        gf.mask = vec![true; 6];
        let back = GridFunction::from_text(&gf.to_text()).unwrap();
        assert_eq!(back, gf);
        assert!(GridFunction::from_text("dims 2 spacings 1 origin 0\n1\n").is_err());
        let csv = gf.slice_csv(1, 1).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn elliptic_constant_data() {
        let dom = GraphDomain::flat(2);
        let field = CoefficientField::identity(2);
        let (gf, rep) = solve_elliptic(
            &dom,
            &field,
            &[-1.0, 0.0],
            &[1.0, 1.0],
            1.0 / 16.0,
            &|_| 3.5,
            &EllipticOptions::default(),
        )
        .unwrap();
        let worst = gf.values.iter().map(|v| (v - 3.5).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst} {rep:?}");
        assert!(rep.max_principle_violation < 1e-8);
    }

    #[test]
    fn elliptic_harmonic_polynomial() {
        let dom = GraphDomain::flat(2);
        let field = CoefficientField::identity(2);
        let f = |x: &[f64]| x[0] * x[0] - x[1] * x[1];
        let (gf, rep) = solve_elliptic(
            &dom,
            &field,
            &[-1.0, 0.0],
            &[1.0, 1.0],
            1.0 / 64.0,
            &f,
            &EllipticOptions::default(),
        )
        .unwrap();
        let err = (0..gf.values.len())
            .map(|p| (gf.values[p] - f(&gf.coords(p))).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
        assert!(rep.residual <= 1e-9);
        assert!(rep.max_principle_violation <= 1e-12);
    }

    #[test]
    fn elliptic_one_dimensional_flux_oracle() {
        let dom = GraphDomain::flat(1);
        let field = CoefficientField::sinusoid_1d(2.0, 1.0, 1.0).unwrap();
        let exact = |x: f64| quad::integrate_1d(0.0, x, 16, |s| 1.0 / (2.0 + (2.0 * std::f64::consts::PI * s).sin()));
        let total = exact(1.0);
        let mut errs = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
            let (gf, _) = solve_elliptic(
                &dom,
                &field,
                &[0.0],
                &[1.0],
                h,
                &|x: &[f64]| if x[0] > 0.5 { total } else { 0.0 },
                &EllipticOptions::default(),
            )
            .unwrap();
            let e = (0..gf.values.len())
                .map(|p| (gf.values[p] - exact(gf.coords(p)[0])).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        for o in observed_orders(&errs) {
            assert!(o > 1.8, "{errs:?}");
        }
    }

    #[test]
    fn elliptic_with_cross_terms_reproduces_linear_data() {
        let dom = GraphDomain::flat(2);
        let field = CoefficientField::new(
            2,
            crate::domain::CoefficientFamily::Constant {
                matrix: vec![vec![2.0, 0.5], vec![0.5, 1.0]],
            },
            3.0,
        )
        .unwrap();
        let f = |x: &[f64]| 1.0 + x[0] - 2.0 * x[1];
        let (gf, _) = solve_elliptic(
            &dom,
            &field,
            &[0.0, 0.0],
            &[1.0, 1.0],
            1.0 / 16.0,
            &f,
            &EllipticOptions::default(),
        )
        .unwrap();
        for p in 0..gf.values.len() {
            assert!((gf.values[p] - f(&gf.coords(p))).abs() < 1e-9);
        }
    }

    #[test]
    fn parabolic_heat_polynomial_and_constants() {
        let dom = GraphDomain::flat(1);
        let field = CoefficientField::identity(1);
        let f = |x: f64, t: f64| x * x + 2.0 * t;
        let (gf, rep) = solve_parabolic(&dom, &field, (0.0, 1.0), (0.0, 0.5), 1.0 / 32.0, 1.0 / 256.0, &f).unwrap();
        for p in 0..gf.values.len() {
            let c = gf.coords(p);
            assert!((gf.values[p] - f(c[0], c[1])).abs() < 1e-11);
        }
        assert!(rep.max_principle_violation <= 1e-12);
        let (gc, _) = solve_parabolic(&dom, &field, (0.0, 1.0), (0.0, 0.5), 1.0 / 32.0, 1.0 / 64.0, &|_, _| {
            -2.0
        })
        .unwrap();
        assert!(gc.values.iter().all(|v| (v + 2.0).abs() < 1e-13));
    }

    #[test]
    fn parabolic_order_two_in_space() {
        let dom = GraphDomain::flat(1);
        let field = CoefficientField::identity(1);
        let f = |x: f64, t: f64| (-t).exp() * x.sin();
        let mut errs = Vec::new();
        for k in 0..3 {
            let hx = 0.1 / 2f64.powi(k);
            let (gf, _) = solve_parabolic(&dom, &field, (0.0, 3.0), (0.0, 0.5), hx, hx * hx, &f).unwrap();
            errs.push(
                (0..gf.values.len())
                    .map(|p| {
                        let c = gf.coords(p);
                        (gf.values[p] - f(c[0], c[1])).abs()
                    })
                    .fold(0.0, f64::max),
            );
        }
        for o in observed_orders(&errs) {
            assert!(o > 1.8, "{errs:?}");
        }
    }

    fn kolmogorov_error(
        f: &dyn Fn(f64, f64, f64) -> f64,
        bx: &KolmogorovBox,
        st: &KolmogorovSteps,
    ) -> (f64, SolveReport) {
        let dom = GraphDomain::flat(1);
        let (gf, rep) = solve_kolmogorov(&dom, &CoefficientField::identity(1), bx, st, f, None).unwrap();
        let err = (0..gf.values.len())
            .map(|p| {
                let c = gf.coords(p);
                (gf.values[p] - f(c[0], c[1], c[2])).abs()
            })
            .fold(0.0, f64::max);
        (err, rep)
    }

    #[test]
    fn kolmogorov_polynomials_are_reproduced() {
        let bx = KolmogorovBox {
            x: (0.0, 1.0),
            y: (-1.0, 1.0),
            t: (0.0, 0.5),
        };
        let st = KolmogorovSteps::with_cfl(&bx, 1.0 / 16.0, 1.0 / 16.0, 0.9);
        let cases: [&dyn Fn(f64, f64, f64) -> f64; 3] =
            [&|x, _, _| x, &|x, y, t| y + t * x, &|x, _, t| x * x + 2.0 * t];
        for f in cases {
            let (err, rep) = kolmogorov_error(f, &bx, &st);
            assert!(err < 1e-12, "{err}");
            assert!(rep.max_principle_violation <= 1e-12);
        }
    }

    #[test]
    fn kolmogorov_rejects_cfl_violation() {
        let bx = KolmogorovBox {
            x: (0.0, 2.0),
            y: (0.0, 1.0),
            t: (0.0, 1.0),
        };
        let st = KolmogorovSteps {
            hx: 0.1,
            hy: 0.1,
            ht: 0.1,
            store_stride: 1,
        };
        let r = solve_kolmogorov(
            &GraphDomain::flat(1),
            &CoefficientField::identity(1),
            &bx,
            &st,
            &|_, _, _| 0.0,
            None,
        );
        assert!(matches!(r, Err(Error::Cfl { .. })));
    }

    #[test]
    fn kolmogorov_store_stride_keeps_final_time() {
        let bx = KolmogorovBox {
            x: (0.0, 1.0),
            y: (0.0, 1.0),
            t: (0.0, 1.0),
        };
        let mut st = KolmogorovSteps::with_cfl(&bx, 0.1, 0.1, 0.5);
        st.store_stride = 7;
        let f = |x: f64, y: f64, t: f64| y + t * x;
        let (gf, _) = solve_kolmogorov(
            &GraphDomain::flat(1),
            &CoefficientField::identity(1),
            &bx,
            &st,
            &f,
            None,
        )
        .unwrap();
        assert!((gf.axes[2].hi() - 1.0).abs() < 1e-12);
        assert!((gf.evaluate(&[0.5, 0.5, 1.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_diffusion_order_two() {
        let f = |x: f64, _: f64, t: f64| (-t).exp() * x.sin();
        let bx = KolmogorovBox {
            x: (0.0, 3.0),
            y: (0.0, 0.5),
            t: (0.0, 0.5),
        };
        let mut errs = Vec::new();
        for k in 0..3 {
            let hx = 0.1 / 2f64.powi(k);
            let st = KolmogorovSteps {
                hx,
                hy: 0.25,
                ht: hx * hx,
                store_stride: 1,
            };
            errs.push(kolmogorov_error(&f, &bx, &st).0);
        }
        for o in observed_orders(&errs) {
            assert!(o > 1.8, "{errs:?}");
        }
    }

    #[test]
    fn kolmogorov_transport_order_one() {
        // exp(k y + phi x + phi^3 / 3k) with phi = k t solves u_t = u_xx + x u_y.
        let k = 1.0;
        let f = move |x: f64, y: f64, t: f64| {
            let phi = k * t;
            (k * y + phi * x + phi.powi(3) / (3.0 * k)).exp()
        };
        let bx = KolmogorovBox {
            x: (0.0, 1.0),
            y: (0.0, 1.0),
            t: (0.0, 1.0),
        };
        let mut errs = Vec::new();
        for j in 0..4 {
            let hy = 0.1 / 2f64.powi(j);
            let st = KolmogorovSteps::with_cfl(&bx, 1.0 / 64.0, hy, 0.5);
            let (e, rep) = kolmogorov_error(&f, &bx, &st);
            assert!(rep.max_principle_violation <= 1e-12);
            errs.push(e);
        }
        for o in observed_orders(&errs) {
            assert!(o > 0.8, "{errs:?}");
        }
    }
}

//! Periodic cell problem, effective matrix and the epsilon sweep.
//!
//! The corrector `w_alpha = alpha . X + chi` has periodic `chi` solving
//! `div(A grad chi) = -div(A alpha)` on the unit torus, discretized with the
//! same flux form as the elliptic grid solver and gauged to zero mean.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{CoefficientField, GraphDomain};
use crate::error::{invalid, Error, Result};
use crate::grid::{solve_kolmogorov, KolmogorovBox, KolmogorovSteps};

/// Periodic part `chi = w_alpha - alpha . X` on the `n^m` node torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corrector {
    pub alpha: Vec<f64>,
    pub n: usize,
    pub chi: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// `alpha` component of the cell average of `A grad w_alpha`.
    pub flux: Vec<f64>,
}

impl Corrector {
    /// `w_alpha` at node `idx`.
    pub fn w(&self, idx: &[usize]) -> f64 {
        let h = 1.0 / self.n as f64;
        let mut flat = 0;
        let mut lin = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            flat = flat * self.n + i;
            lin += self.alpha[k] * h * i as f64;
        }
        lin + self.chi[flat]
    }

    pub fn mean(&self) -> f64 {
        self.chi.iter().sum::<f64>() / self.chi.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensor {
    pub matrix: Vec<Vec<f64>>,
    pub grid: usize,
}

impl EffectiveTensor {
    pub fn asymmetry(&self) -> f64 {
        let m = self.matrix.len();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                worst = worst.max((self.matrix[i][j] - self.matrix[j][i]).abs());
            }
        }
        worst
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = self.matrix.len();
        let a = DMatrix::from_fn(m, m, |i, j| 0.5 * (self.matrix[i][j] + self.matrix[j][i]));
        let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Symmetry within `1e-8` and spectrum inside `[1/kappa - tol, kappa + tol]`.
    pub fn check(&self, kappa: f64, tol: f64) -> Result<()> {
        if self.asymmetry() > 1e-8 {
            return Err(Error::NotSpd(format!(
                "effective matrix asymmetry {:.3e}",
                self.asymmetry()
            )));
        }
        for ev in self.eigenvalues() {
            if ev < 1.0 / kappa - tol || ev > kappa + tol {
                return Err(Error::NotSpd(format!(
                    "effective eigenvalue {ev} outside [1/{kappa}, {kappa}]"
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        self.matrix
            .iter()
            .map(|row| row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Coefficients sampled on the periodic cell grid.
struct CellCoefficients {
    m: usize,
    n: usize,
    nodal: Vec<f64>,
    /// Harmonic face conductance between node `p` and `p + e_d`, indexed `p * m + d`.
    face: Vec<f64>,
}

impl CellCoefficients {
    fn new(field: &CoefficientField, n: usize) -> Self {
        let m = field.m;
        let total = n.pow(m as u32);
        let h = 1.0 / n as f64;
        let mut nodal = vec![0.0; total * m * m];
        let mut x = vec![0.0; m];
        for p in 0..total {
            let mut rem = p;
            for k in (0..m).rev() {
                x[k] = h * (rem % n) as f64;
                rem /= n;
            }
            field.eval_into(&x, &mut nodal[p * m * m..(p + 1) * m * m]);
        }
        let mut c = Self {
            m,
            n,
            nodal,
            face: vec![0.0; total * m],
        };
        for p in 0..total {
            for d in 0..m {
                let q = c.shift(p, d, 1);
                c.face[p * m + d] = harmonic(c.a(p, d, d), c.a(q, d, d));
            }
        }
        c
    }

    fn a(&self, p: usize, i: usize, j: usize) -> f64 {
        self.nodal[p * self.m * self.m + i * self.m + j]
    }

    fn stride(&self, d: usize) -> usize {
        self.n.pow((self.m - 1 - d) as u32)
    }

    /// Periodic neighbour of `p` by `step` along axis `d`.
    fn shift(&self, p: usize, d: usize, step: isize) -> usize {
        let s = self.stride(d);
        let i = (p / s) % self.n;
        let j = (i as isize + step).rem_euclid(self.n as isize) as usize;
        p - i * s + j * s
    }

    /// Discrete `div(A grad u)` for `u = lin . X + v` with periodic `v`.
    fn apply(&self, v: &[f64], lin: &[f64], out: &mut [f64]) {
        let m = self.m;
        let h = 1.0 / self.n as f64;
        for (p, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for d in 0..m {
                let qp = self.shift(p, d, 1);
                let qm = self.shift(p, d, -1);
                let gp = (v[qp] - v[p]) / h + lin[d];
                let gm = (v[p] - v[qm]) / h + lin[d];
                s += (self.face[p * m + d] * gp - self.face[qm * m + d] * gm) / h;
            }
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    // d_i(a_ij d_j u) with central differences.
                    let qp = self.shift(p, i, 1);
                    let qm = self.shift(p, i, -1);
                    let dj = |q: usize| (v[self.shift(q, j, 1)] - v[self.shift(q, j, -1)]) / (2.0 * h) + lin[j];
                    s += (self.a(qp, i, j) * dj(qp) - self.a(qm, i, j) * dj(qm)) / (2.0 * h);
                }
            }
            *o = s;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let m = self.m;
        let h2 = (1.0 / self.n as f64).powi(2);
        (0..self.face.len() / m)
            .map(|p| {
                (0..m)
                    .map(|d| (self.face[p * m + d] + self.face[self.shift(p, d, -1) * m + d]) / h2)
                    .sum()
            })
            .collect()
    }

    /// Cell average of `A grad u` for `u = lin . X + v`.
    fn mean_flux(&self, v: &[f64], lin: &[f64]) -> Vec<f64> {
        let m = self.m;
        let h = 1.0 / self.n as f64;
        let total = v.len();
        let mut flux = vec![0.0; m];
        for p in 0..total {
            for i in 0..m {
                let qp = self.shift(p, i, 1);
                flux[i] += self.face[p * m + i] * ((v[qp] - v[p]) / h + lin[i]);
                for j in 0..m {
                    if j != i {
                        let dj = (v[self.shift(p, j, 1)] - v[self.shift(p, j, -1)]) / (2.0 * h) + lin[j];
                        flux[i] += self.a(p, i, j) * dj;
                    }
                }
            }
        }
        flux.iter().map(|f| f / total as f64).collect()
    }
}

fn project_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Corrector for direction `alpha` on an `n^m` periodic grid.
pub fn solve_cell(field: &CoefficientField, alpha: &[f64], n: usize) -> Result<Corrector> {
    solve_cell_with(&CellCoefficients::new(field, n), field, alpha, 1e-10)
}

fn solve_cell_with(cell: &CellCoefficients, field: &CoefficientField, alpha: &[f64], tol: f64) -> Result<Corrector> {
    let m = field.m;
    let n = cell.n;
    if alpha.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: alpha.len(),
        });
    }
    if n < 4 {
        return Err(invalid("cell grid needs at least 4 nodes per axis"));
    }
    if !field.is_periodic() {
        return Err(invalid("the cell problem needs a Z^m-periodic field"));
    }
    let total = n.pow(m as u32);
    let zero_lin = vec![0.0; m];
    // Solve -L chi = L(alpha . X) by preconditioned CG on the zero-mean subspace.
    let mut b = vec![0.0; total];
    cell.apply(&vec![0.0; total], alpha, &mut b);
    project_mean(&mut b);
    let bnorm = dot(&b, &b).sqrt();
    let mut chi = vec![0.0; total];
    let mut residual = 0.0;
    let mut iterations = 0;
    if bnorm > 0.0 {
        let dinv: Vec<f64> = cell.diagonal().iter().map(|d| 1.0 / d).collect();
        let neg_apply = |v: &[f64], out: &mut [f64]| {
            cell.apply(v, &zero_lin, out);
            out.iter_mut().for_each(|x| *x = -*x);
        };
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
        project_mean(&mut z);
        let mut p = z.clone();
        let mut ap = vec![0.0; total];
        let mut rz = dot(&r, &z);
        let max_iter = 20 * total + 1000;
        loop {
            iterations += 1;
            neg_apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::NotSpd("cell operator".into()));
            }
            let alpha_k = rz / pap;
            for i in 0..total {
                chi[i] += alpha_k * p[i];
                r[i] -= alpha_k * ap[i];
            }
            residual = dot(&r, &r).sqrt() / bnorm;
            if residual <= tol {
                break;
            }
            if iterations >= max_iter {
                return Err(Error::NoConvergence { iterations, residual });
            }
            for i in 0..total {
                z[i] = r[i] * dinv[i];
            }
            project_mean(&mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..total {
                p[i] = z[i] + beta * p[i];
            }
        }
        project_mean(&mut chi);
    }
    let flux = cell.mean_flux(&chi, alpha);
    Ok(Corrector {
        alpha: alpha.to_vec(),
        n,
        chi,
        residual,
        iterations,
        flux,
    })
}

/// `A_bar` assembled column by column from unit-direction correctors.
pub fn effective_matrix(field: &CoefficientField, n: usize) -> Result<EffectiveTensor> {
    let m = field.m;
    let basis: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    effective_matrix_in_basis(field, n, &basis)
}

/// `A_bar` from correctors in the directions `basis` (rows), mapped back to the standard basis.
pub fn effective_matrix_in_basis(field: &CoefficientField, n: usize, basis: &[Vec<f64>]) -> Result<EffectiveTensor> {
    let m = field.m;
    field.validate()?;
    if basis.len() != m {
        return Err(invalid("basis needs m directions"));
    }
    let cell = CellCoefficients::new(field, n);
    let columns: Vec<Vec<f64>> = basis
        .par_iter()
        .map(|alpha| solve_cell_with(&cell, field, alpha, 1e-10).map(|c| c.flux))
        .collect::<Result<_>>()?;
    // Columns hold A_bar b_k; solve A_bar B = F for A_bar.
    let b = DMatrix::from_fn(m, m, |i, k| basis[k][i]);
    let f = DMatrix::from_fn(m, m, |i, k| columns[k][i]);
    let b_inv = b.try_inverse().ok_or_else(|| invalid("basis is singular"))?;
    let a = f * b_inv;
    Ok(EffectiveTensor {
        matrix: (0..m).map(|i| (0..m).map(|j| a[(i, j)]).collect()).collect(),
        grid: n,
    })
}

/// `A^eps(X) = A(X / eps)`.
pub fn rescale(field: &CoefficientField, eps: f64) -> Result<CoefficientField> {
    field.rescale(eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    #[serde(rename = "box")]
    pub bx: KolmogorovBox,
    /// Sup-norm window, interior to the box.
    pub compact: KolmogorovBox,
    /// `h_x = min(eps) / x_cells_per_period` for every solve.
    #[serde(default = "default_cells_per_period")]
    pub x_cells_per_period: usize,
    pub hy: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_cell_grid")]
    pub cell_grid: usize,
}

fn default_cells_per_period() -> usize {
    16
}

fn default_cfl() -> f64 {
    0.9
}

fn default_cell_grid() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub error: f64,
    /// `e(eps_i) / e(eps_{i-1})`, absent on the first row.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub a_bar: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }

    pub fn max_ratio(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.ratio)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,error,ratio\n");
        for r in &self.rows {
            let ratio = r.ratio.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.eps, r.error, ratio));
        }
        out
    }
}

/// `e(eps) = sup_K |u_eps - u_bar|` for `m = 1` Kolmogorov solves with shared data.
///
/// `a_bar` overrides the effective coefficient (negative controls); by default
/// it comes from [`effective_matrix`].
pub fn epsilon_sweep(
    dom: &GraphDomain,
    field: &CoefficientField,
    f: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    cfg: &SweepConfig,
    a_bar: Option<f64>,
) -> Result<SweepTable> {
    if dom.m != 1 || field.m != 1 {
        return Err(invalid("the epsilon sweep runs for m = 1"));
    }
    if cfg.eps.is_empty() || cfg.eps.iter().any(|e| !(*e > 0.0)) || cfg.eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("eps list must be positive and strictly decreasing"));
    }
    let inside = |k: (f64, f64), b: (f64, f64)| k.0 >= b.0 && k.1 <= b.1 && k.0 < k.1;
    let (k, b) = (&cfg.compact, &cfg.bx);
    if !(inside(k.x, b.x) && inside(k.y, b.y) && inside(k.t, b.t)) {
        return Err(invalid("compact window must lie inside the box"));
    }
    let a_bar = match a_bar {
        Some(a) => a,
        None => effective_matrix(field, cfg.cell_grid)?.matrix[0][0],
    };
    let eps_min = cfg.eps.iter().copied().fold(f64::INFINITY, f64::min);
    let hx = eps_min / cfg.x_cells_per_period.max(1) as f64;
    let steps = KolmogorovSteps::with_cfl(b, hx, cfg.hy, cfg.cfl);
    let bar_field = CoefficientField::scalar(1, a_bar)?;
    let mut jobs: Vec<Option<f64>> = vec![None];
    jobs.extend(cfg.eps.iter().map(|e| Some(*e)));
    let solves = jobs
        .par_iter()
        .map(|eps| match eps {
            None => solve_kolmogorov(dom, &bar_field, b, &steps, f, None),
            Some(e) => solve_kolmogorov(dom, field, b, &steps, f, Some(*e)),
        })
        .collect::<Result<Vec<_>>>()?;
    let (bar, _) = &solves[0];
    let mut rows: Vec<SweepRow> = Vec::with_capacity(cfg.eps.len());
    for (eps, (u, _)) in cfg.eps.iter().zip(&solves[1..]) {
        let mut err: f64 = 0.0;
        for p in 0..u.values.len() {
            let c = u.coords(p);
            if c[0] >= k.x.0 && c[0] <= k.x.1 && c[1] >= k.y.0 && c[1] <= k.y.1 && c[2] >= k.t.0 && c[2] <= k.t.1 {
                err = err.max((u.values[p] - bar.values[p]).abs());
            }
        }
        let ratio = rows.last().map(|r| err / r.error);
        rows.push(SweepRow {
            eps: *eps,
            error: err,
            ratio,
        });
    }
    Ok(SweepTable { a_bar, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CoefficientFamily, Profile, TrigTerm};

    #[test]
    fn constant_field_has_trivial_corrector() {
        let field = CoefficientField::new(
            2,
            CoefficientFamily::Constant {
                matrix: vec![vec![2.0, 0.3], vec![0.3, 1.5]],
            },
            3.0,
        )
        .unwrap();
        let c = solve_cell(&field, &[1.0, 0.0], 16).unwrap();
        assert!(c.chi.iter().all(|v| v.abs() < 1e-14));
        let t = effective_matrix(&field, 16).unwrap();
        assert!((t.matrix[0][0] - 2.0).abs() < 1e-12 && (t.matrix[0][1] - 0.3).abs() < 1e-12);
        let id = effective_matrix(&CoefficientField::identity(2), 32).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((id.matrix[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn one_dimensional_sinusoid_gives_harmonic_mean() {
        let field = CoefficientField::sinusoid_1d(2.0, 1.0, 1.0).unwrap();
        let t = effective_matrix(&field, 256).unwrap();
        assert!((t.matrix[0][0] - 3f64.sqrt()).abs() < 1e-3);
        // w' = c / a with c the harmonic mean, here checked at O(h^2).
        let n = 128;
        let c = solve_cell(&field, &[1.0], n).unwrap();
        let h = 1.0 / n as f64;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mid = (i as f64 + 0.5) * h;
            let slope = (c.w(&[(i + 1) % n]) + if i + 1 == n { 1.0 } else { 0.0 } - c.w(&[i])) / h;
            let exact = 3f64.sqrt() / (2.0 + (2.0 * std::f64::consts::PI * mid).sin());
            worst = worst.max((slope - exact).abs());
        }
        assert!(worst < 1e-3, "{worst}");
        assert!(c.mean().abs() < 1e-10);
        t.check(field.kappa, 1e-6).unwrap();
    }

    #[test]
    fn laminate_means() {
        let field = CoefficientField::new(
            2,
            CoefficientFamily::Laminate {
                axis: 0,
                diagonal: vec![Profile::sine(2.0, 1.0, 1.0), Profile::sine(3.0, 1.5, 1.0)],
            },
            6.0,
        )
        .unwrap();
        let t = effective_matrix(&field, 64).unwrap();
        assert!((t.matrix[0][0] - 3f64.sqrt()).abs() < 1e-3);
        assert!((t.matrix[1][1] - 3.0).abs() < 1e-3);
        assert!(t.matrix[0][1].abs() < 1e-8);
    }

    fn coupled_field() -> CoefficientField {
        CoefficientField::new(
            2,
            CoefficientFamily::TrigPolynomial {
                base: vec![vec![2.0, 0.2], vec![0.2, 2.0]],
                terms: vec![
                    TrigTerm {
                        matrix: vec![vec![0.8, 0.0], vec![0.0, 0.4]],
                        freq: vec![1.0, 1.0],
                        phase: 0.0,
                    },
                    TrigTerm {
                        matrix: vec![vec![0.0, 0.3], vec![0.3, 0.5]],
                        freq: vec![0.0, 1.0],
                        phase: 0.5,
                    },
                ],
            },
            4.0,
        )
        .unwrap()
    }

    #[test]
    fn rotated_basis_agrees() {
        let field = coupled_field();
        let a = effective_matrix(&field, 32).unwrap();
        let (c, s) = (0.6f64, 0.8f64);
        let b = effective_matrix_in_basis(&field, 32, &[vec![c, s], vec![-s, c]]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.matrix[i][j] - b.matrix[i][j]).abs() < 1e-6);
            }
        }
        a.check(field.kappa, 1e-6).unwrap();
    }

    #[test]
    fn cell_refinement_order() {
        let field = coupled_field();
        let reference = effective_matrix(&field, 256).unwrap();
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let t = effective_matrix(&field, n).unwrap();
                (0..2)
                    .flat_map(|i| (0..2).map(move |j| (i, j)))
                    .map(|(i, j)| (t.matrix[i][j] - reference.matrix[i][j]).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.8, "{errs:?}");
        }
    }

    #[test]
    fn sweep_with_constant_field_is_exact() {
        let dom = GraphDomain::flat(1);
        let field = CoefficientField::scalar(1, 1.5).unwrap();
        let cfg = SweepConfig {
            eps: vec![0.5, 0.25],
            bx: KolmogorovBox {
                x: (0.0, 1.0),
                y: (-0.5, 0.5),
                t: (0.0, 0.25),
            },
            compact: KolmogorovBox {
                x: (0.2, 0.8),
                y: (-0.3, 0.3),
                t: (0.05, 0.25),
            },
            x_cells_per_period: 8,
            hy: 0.125,
            cfl: 0.9,
            cell_grid: 16,
        };
        let f = |x: f64, y: f64, t: f64| (-x).exp() * (1.0 + 0.5 * y) + t;
        let table = epsilon_sweep(&dom, &field, &f, &cfg, None).unwrap();
        assert!(table.rows.iter().all(|r| r.error < 1e-12));
        assert!((table.a_bar - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_periodic_field() {
        let field = CoefficientField::sinusoid_1d(2.0, 1.0, 1.5).unwrap();
        assert!(solve_cell(&field, &[1.0], 16).is_err());
    }
}

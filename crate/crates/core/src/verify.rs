//! Self-check suites with pass/fail reports, shared by the CLI and the acceptance tests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CoefficientFamily, CoefficientField, GraphDomain, Profile, Psi};
use crate::dyadic::{params_of, DyadicSystem, DyadicWindow};
use crate::error::{invalid, Result};
use crate::geometry::{
    ball_volume_monte_carlo, compose, dilate, group_norm, inverse, random_point, relative, GroupConstants, PhasePoint,
};
use crate::grid::{observed_orders, solve_kolmogorov, KolmogorovBox, KolmogorovSteps};
use crate::homogenize::effective_matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn lines(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{} {}: {:.6e} (threshold {:.6e})\n",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                )
            })
            .collect()
    }
}

pub const SUITES: [&str; 5] = [
    "group-axioms",
    "ball-scaling",
    "dyadic",
    "effective-tensor",
    "manufactured",
];

/// Runs a suite by name; `samples` overrides the suite's default budget.
pub fn run_suite(name: &str, samples: Option<u64>, seed: u64) -> Result<SuiteReport> {
    match name {
        "group-axioms" => group_axioms(samples.unwrap_or(10_000), seed),
        "ball-scaling" => ball_scaling(samples.unwrap_or(4_000_000), seed),
        "dyadic" => dyadic_properties(samples.unwrap_or(2_000), seed),
        "effective-tensor" => effective_tensor(256),
        "manufactured" => manufactured(),
        other => Err(invalid(format!(
            "unknown suite '{other}'; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

fn rel_err(a: &PhasePoint, b: &PhasePoint) -> f64 {
    let pair = |u: f64, v: f64| (u - v).abs() / u.abs().max(v.abs()).max(1.0);
    let mut worst = pair(a.t(), b.t());
    for (u, v) in a.x().iter().zip(b.x()).chain(a.y().iter().zip(b.y())) {
        worst = worst.max(pair(*u, *v));
    }
    worst
}

fn draw(r: &mut rand_chacha::ChaCha8Rng, m: usize) -> PhasePoint {
    let scale = 10f64.powf(2.0 * r.random::<f64>() - 1.0);
    random_point(r, m, scale)
}

/// Associativity, identity, inverses, dilation homomorphism, norm homogeneity and
/// the closed form of `q^{-1} o p`, componentwise relative to `max(1, |value|)`.
pub fn group_axioms(samples: u64, seed: u64) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for m in [1usize, 2, 3] {
        let mut r = rng::stream(seed, m as u64);
        let e = PhasePoint::origin(m);
        let (mut assoc, mut ident, mut inv, mut hom, mut norm, mut rel) = (0f64, 0f64, 0f64, 0f64, 0f64, 0f64);
        let mut rel_integer = 0f64;
        for _ in 0..samples {
            let (p, q, w) = (draw(&mut r, m), draw(&mut r, m), draw(&mut r, m));
            assoc = assoc.max(rel_err(
                &compose(&compose(&p, &q)?, &w)?,
                &compose(&p, &compose(&q, &w)?)?,
            ));
            ident = ident
                .max(rel_err(&compose(&p, &e)?, &p))
                .max(rel_err(&compose(&e, &p)?, &p));
            inv = inv
                .max(rel_err(&compose(&p, &inverse(&p))?, &e))
                .max(rel_err(&compose(&inverse(&p), &p)?, &e));
            let s = 10f64.powf(2.0 * r.random::<f64>() - 1.0);
            hom = hom.max(rel_err(
                &dilate(s, &compose(&p, &q)?)?,
                &compose(&dilate(s, &p)?, &dilate(s, &q)?)?,
            ));
            norm = norm.max((group_norm(&dilate(s, &p)?) - s * group_norm(&p)).abs() / (s * group_norm(&p)).max(1.0));
            rel = rel.max(rel_err(&relative(&q, &p)?, &compose(&inverse(&q), &p)?));
            // Small integers make both sides exact in floating point.
            let mut int_point = || {
                let v = |r: &mut rand_chacha::ChaCha8Rng| r.random_range(-20i32..=20) as f64;
                PhasePoint::new(
                    (0..m).map(|_| v(&mut r)).collect(),
                    (0..m).map(|_| v(&mut r)).collect(),
                    v(&mut r),
                )
            };
            let (a, b) = (int_point()?, int_point()?);
            rel_integer = rel_integer.max(rel_err(&relative(&b, &a)?, &compose(&inverse(&b), &a)?));
        }
        checks.push(Check::at_most(format!("m={m} associativity"), assoc, 1e-12));
        checks.push(Check::at_most(format!("m={m} identity"), ident, 1e-12));
        checks.push(Check::at_most(format!("m={m} inverse"), inv, 1e-12));
        checks.push(Check::at_most(format!("m={m} dilation homomorphism"), hom, 1e-12));
        checks.push(Check::at_most(format!("m={m} norm homogeneity"), norm, 1e-12));
        checks.push(Check::at_most(format!("m={m} relative closed form"), rel, 1e-12));
        checks.push(Check::at_most(
            format!("m={m} relative closed form on integers"),
            rel_integer,
            0.0,
        ));
    }
    Ok(SuiteReport {
        suite: "group-axioms".into(),
        checks,
    })
}

/// `vol(B_2) / vol(B_1) = 2^q` within 2% for `m = 1, 2`.
pub fn ball_scaling(samples: u64, seed: u64) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for m in [1usize, 2] {
        let q = GroupConstants::new(m)?.q as i32;
        let (v1, _) = ball_volume_monte_carlo(m, 1.0, samples, seed)?;
        let (v2, _) = ball_volume_monte_carlo(m, 2.0, samples, seed.wrapping_add(1))?;
        let ratio = v2 / v1 / 2f64.powi(q);
        checks.push(Check::at_most(
            format!("m={m} vol(B2)/vol(B1)/2^{q} - 1"),
            (ratio - 1.0).abs(),
            0.02,
        ));
    }
    Ok(SuiteReport {
        suite: "ball-scaling".into(),
        checks,
    })
}

/// Partition, nesting and child counts exactly; `(c*, alpha, beta)` by sampling.
pub fn dyadic_properties(samples: u64, seed: u64) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let domains = [
        GraphDomain::flat(1),
        GraphDomain::new(
            2,
            Psi::SmoothAbsSine {
                amp: 0.2,
                freq: vec![3.0],
                delta: 0.1,
            },
        )?,
    ];
    for dom in domains {
        let m = dom.m;
        let kmax = if m == 1 { 4 } else { 2 };
        let sys = DyadicSystem::new(dom, DyadicWindow::unit(m), 0, kmax)?;
        let mut r = rng::stream(seed, 7);
        let mut bad_partition = 0u64;
        let mut bad_nesting = 0u64;
        for _ in 0..samples {
            let p = sys.sample_in_window(&mut r);
            let params = params_of(&p);
            let mut prev = None;
            for k in 0..=kmax {
                let c = sys.containing_cube(&p, k)?;
                // Unique containment: the neighbouring flat indices never claim the point.
                let flat = sys.flat_index(k, &c.index);
                let n = sys.cube_count(k) as usize;
                for other in [flat.wrapping_sub(1), flat + 1] {
                    if other < n && sys.cube(k, &sys.unflatten(k, other))?.contains_params(&params) {
                        bad_partition += 1;
                    }
                }
                if !c.contains_params(&params) {
                    bad_partition += 1;
                }
                if let Some(parent) = &prev {
                    if sys.parent(&c)? != *parent {
                        bad_nesting += 1;
                    }
                }
                prev = Some(c);
            }
        }
        let mut bad_children = 0u64;
        let expected = 1u64 << (4 * m + 1);
        for cube in sys.build_level(0)? {
            let kids = sys.children(&cube)?;
            if kids.len() as u64 != expected || kids.iter().any(|k| sys.parent(k).ok().as_ref() != Some(&cube)) {
                bad_children += 1;
            }
        }
        checks.push(Check::at_most(
            format!("m={m} partition violations"),
            bad_partition as f64,
            0.0,
        ));
        checks.push(Check::at_most(
            format!("m={m} nesting violations"),
            bad_nesting as f64,
            0.0,
        ));
        checks.push(Check::at_most(
            format!("m={m} child count violations"),
            bad_children as f64,
            0.0,
        ));
        let c = sys.measure_constants(8, (samples as usize / 4).max(200), seed)?;
        checks.push(Check::at_least(
            format!("m={m} ball-inside constant alpha"),
            c.alpha,
            f64::MIN_POSITIVE,
        ));
        checks.push(Check::at_most(format!("m={m} diameter constant c*"), c.c_star, 100.0));
        checks.push(Check::at_least(
            format!("m={m} thin-boundary exponent beta"),
            c.beta,
            f64::MIN_POSITIVE,
        ));
        checks.push(Check::at_least(
            format!("m={m} thin-boundary fit R^2"),
            c.r_squared,
            0.9,
        ));
    }
    Ok(SuiteReport {
        suite: "dyadic".into(),
        checks,
    })
}

/// Identity, 1D sinusoid and m = 2 laminate effective tensors at grid `n`.
pub fn effective_tensor(n: usize) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for m in [1usize, 2] {
        let t = effective_matrix(&CoefficientField::identity(m), n)?;
        let mut worst = 0f64;
        for i in 0..m {
            for j in 0..m {
                worst = worst.max((t.matrix[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        checks.push(Check::at_most(format!("m={m} identity"), worst, 1e-10));
    }
    let t = effective_matrix(&CoefficientField::sinusoid_1d(2.0, 1.0, 1.0)?, n)?;
    checks.push(Check::at_most(
        "2 + sin(2 pi x) vs sqrt(3)",
        (t.matrix[0][0] - 3f64.sqrt()).abs(),
        1e-3,
    ));
    let (p0, p1) = (Profile::sine(2.0, 1.0, 1.0), Profile::sine(3.0, 1.5, 1.0));
    let lam = CoefficientField::new(
        2,
        CoefficientFamily::Laminate {
            axis: 0,
            diagonal: vec![p0.clone(), p1.clone()],
        },
        6.0,
    )?;
    let t = effective_matrix(&lam, n)?;
    checks.push(Check::at_most(
        "laminate harmonic mean",
        (t.matrix[0][0] - p0.harmonic_mean()).abs(),
        1e-3,
    ));
    checks.push(Check::at_most(
        "laminate arithmetic mean",
        (t.matrix[1][1] - p1.mean).abs(),
        1e-3,
    ));
    checks.push(Check::at_most("laminate off-diagonal", t.matrix[0][1].abs(), 1e-3));
    Ok(SuiteReport {
        suite: "effective-tensor".into(),
        checks,
    })
}

type Exact = dyn Fn(f64, f64, f64) -> f64 + Sync;

fn kolmogorov_error(f: &Exact, bx: &KolmogorovBox, st: &KolmogorovSteps) -> Result<(f64, f64)> {
    let (gf, rep) = solve_kolmogorov(&GraphDomain::flat(1), &CoefficientField::identity(1), bx, st, f, None)?;
    let err = (0..gf.values.len())
        .map(|p| {
            let c = gf.coords(p);
            (gf.values[p] - f(c[0], c[1], c[2])).abs()
        })
        .fold(0.0, f64::max);
    Ok((err, rep.max_principle_violation))
}

/// Exact polynomial solutions, observed orders and the discrete maximum principle
/// of the `m = 1` Kolmogorov scheme.
pub fn manufactured() -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let mut violation = 0f64;
    let bx = KolmogorovBox {
        x: (0.0, 1.0),
        y: (-1.0, 1.0),
        t: (0.0, 0.5),
    };
    let polys: [(&str, &Exact); 3] = [
        ("u = x", &|x, _, _| x),
        ("u = y + t x", &|x, y, t| y + t * x),
        ("u = x^2 + 2t", &|x, _, t| x * x + 2.0 * t),
    ];
    for (name, f) in polys {
        let mut worst = 0f64;
        for h in [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0] {
            let (e, v) = kolmogorov_error(f, &bx, &KolmogorovSteps::with_cfl(&bx, h, h, 0.9))?;
            worst = worst.max(e);
            violation = violation.max(v);
        }
        checks.push(Check::at_most(format!("{name} reproduced"), worst, 1e-12));
    }
    // Polynomials are exact, so orders are measured on smooth non-polynomial solutions.
    let diffusion = |x: f64, _: f64, t: f64| (-t).exp() * x.sin();
    let dbx = KolmogorovBox {
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
        let (e, v) = kolmogorov_error(&diffusion, &dbx, &st)?;
        errs.push(e);
        violation = violation.max(v);
    }
    let order = observed_orders(&errs).into_iter().fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least("diffusion-direction order", order, 1.8));
    let transport = |x: f64, y: f64, t: f64| (y + t * x + t.powi(3) / 3.0).exp();
    let tbx = KolmogorovBox {
        x: (0.0, 1.0),
        y: (0.0, 1.0),
        t: (0.0, 1.0),
    };
    let mut errs = Vec::new();
    for j in 0..4 {
        let hy = 0.1 / 2f64.powi(j);
        let (e, v) = kolmogorov_error(&transport, &tbx, &KolmogorovSteps::with_cfl(&tbx, 1.0 / 64.0, hy, 0.5))?;
        errs.push(e);
        violation = violation.max(v);
    }
    let order = observed_orders(&errs).into_iter().fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least("upwind-direction order", order, 0.8));
    checks.push(Check::at_most("maximum principle violation", violation, 1e-12));
    Ok(SuiteReport {
        suite: "manufactured".into(),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_axioms_pass() {
        let r = group_axioms(500, 7).unwrap();
        assert!(r.passed(), "{}", r.lines());
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("nope", None, 1).is_err());
    }

    #[test]
    fn dyadic_small_run_passes() {
        let r = dyadic_properties(400, 3).unwrap();
        assert!(r.passed(), "{}", r.lines());
    }
}

//! Grid solvers against closed forms and against Monte Carlo.

use std::f64::consts::PI;

use kolmo::domain::{CoefficientField, GraphDomain, MeasureKind};
use kolmo::geometry::PhasePoint;
use kolmo::grid::{solve_elliptic, solve_parabolic, EllipticOptions};
use kolmo::simulate::{estimate_measure, Partition, SdeConfig};
use statrs::function::erf::erfc;

/// Harmonic measure of `{|x'| < 1}` in the upper half-plane.
fn poisson_window(x: f64, h: f64) -> f64 {
    (((1.0 - x) / h).atan() + ((1.0 + x) / h).atan()) / PI
}

#[test]
fn caloric_grid_matches_the_complementary_error_function() {
    let dom = GraphDomain::flat(1);
    let field = CoefficientField::identity(1);
    let data = |x: f64, _t: f64| if x <= 0.0 { 1.0 } else { 0.0 };
    let (gf, rep) = solve_parabolic(&dom, &field, (0.0, 8.0), (0.0, 1.0), 1.0 / 64.0, 1.0 / 1024.0, &data).unwrap();
    assert!(rep.max_principle_violation <= 1e-12);
    let mut worst = 0.0f64;
    for x in [0.25, 0.5, 1.0, 1.5, 2.0, 3.0] {
        let u = gf.evaluate(&[x, 1.0]).unwrap();
        worst = worst.max((u - erfc(x / 2.0)).abs());
    }
    assert!(worst < 5e-3, "{worst}");
}

fn poisson_grid_error(h: f64, points: &[[f64; 2]]) -> f64 {
    let dom = GraphDomain::flat(2);
    let field = CoefficientField::identity(2);
    let exact = |p: &[f64]| {
        if p[1] <= 0.0 {
            if p[0].abs() < 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            poisson_window(p[0], p[1])
        }
    };
    let (gf, _) = solve_elliptic(
        &dom,
        &field,
        &[-4.0, 0.0],
        &[4.0, 4.0],
        h,
        &exact,
        &EllipticOptions::default(),
    )
    .unwrap();
    points
        .iter()
        .map(|p| (gf.evaluate(p).unwrap() - exact(p)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn elliptic_grid_converges_to_the_half_plane_poisson_integral() {
    // The data jump at |x'| = 1 limits the rate to first order.
    let points = [[0.0, 1.0], [0.5, 0.5], [-1.5, 1.0], [2.0, 2.0]];
    let coarse = poisson_grid_error(1.0 / 16.0, &points);
    let fine = poisson_grid_error(1.0 / 32.0, &points);
    assert!(fine < 1e-2, "{fine}");
    assert!((coarse / fine).log2() > 0.8, "{coarse} -> {fine}");
}

#[test]
fn elliptic_measure_of_a_window_matches_the_poisson_integral() {
    let dom = GraphDomain::flat(2);
    let field = CoefficientField::identity(2);
    let pole = PhasePoint::new(vec![0.5, 0.5], vec![0.0, 0.0], 0.0).unwrap();
    let part = Partition::Bins {
        lo: vec![-1.0],
        width: vec![2.0],
        count: vec![1],
    };
    let cfg = SdeConfig::new(1e-3, 1e4, 40_000, 9).adaptive(1e-7, 100.0, 0.1);
    let h = estimate_measure(&dom, &field, &pole, &part, &cfg, MeasureKind::Elliptic, false).unwrap();
    let exact = poisson_window(0.5, 0.5);
    assert!(
        (h.mass(0) - exact).abs() < 4.0 * h.stderr(0) + 5e-3,
        "{} vs {exact}",
        h.mass(0)
    );
}

//! Composite Gauss-Legendre quadrature on boxes.

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Nodes and weights of an 8-point rule on each of `panels` equal sub-intervals.
pub fn composite_rule(lo: f64, hi: f64, panels: usize) -> Vec<(f64, f64)> {
    let panels = panels.max(1);
    let h = (hi - lo) / panels as f64;
    let mut rule = Vec::with_capacity(8 * panels);
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * h;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            rule.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    rule
}

pub fn integrate_1d<F: FnMut(f64) -> f64>(lo: f64, hi: f64, panels: usize, mut f: F) -> f64 {
    composite_rule(lo, hi, panels).into_iter().map(|(x, w)| w * f(x)).sum()
}

/// Tensor-product rule over `prod [lo_i, hi_i]`. A zero-dimensional box
/// integrates to `f(&[])`.
pub fn integrate_box<F: FnMut(&[f64]) -> f64>(lo: &[f64], hi: &[f64], panels: usize, mut f: F) -> f64 {
    let rules: Vec<Vec<(f64, f64)>> = lo.iter().zip(hi).map(|(&a, &b)| composite_rule(a, b, panels)).collect();
    let dim = rules.len();
    if dim == 0 {
        return f(&[]);
    }
    let mut idx = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for d in 0..dim {
            let (x, wd) = rules[d][idx[d]];
            point[d] = x;
            w *= wd;
        }
        total += w * f(&point);
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < rules[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == dim {
                return total;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate_1d(0.0, 2.0, 1, |x| x.powi(7) - 3.0 * x.powi(2));
        assert!((v - (256.0 / 8.0 - 8.0)).abs() < 1e-11);
        let v = integrate_box(&[0.0, -1.0], &[1.0, 1.0], 2, |p| p[0] * p[0] + p[1] * p[1]);
        assert!((v - (2.0 / 3.0 + 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(integrate_box(&[], &[], 4, |_| 3.5), 3.5);
    }

    #[test]
    fn smooth_function() {
        let v = integrate_1d(0.0, 1.0, 8, |x| 1.0 / (2.0 + (2.0 * std::f64::consts::PI * x).sin()));
        assert!((v - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    }
}

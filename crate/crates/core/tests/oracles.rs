//! Closed-form and independently integrated reference values for the grid
//! utilities and the coefficient library.

use rieszlab::coeffs::{
    beta_from_lambda, compact_perturbation, conic_nd, critical_p, gd_decay, gd_profile, meyer_conic, mollify,
    partial_conic, rescale, strip_perturbation, ConicVariant, GdConfig,
};
use rieszlab::grid::{ball_average, lp_norm, measure_profile};
use rieszlab::{Grid, GridFunction, MatrixField, SymMat, WeightField};

fn assert_mat(a: &SymMat, b: &SymMat, tol: f64) {
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            assert!((a.get(i, j) - b.get(i, j)).abs() <= tol, "entry ({i},{j}): {} vs {}", a.get(i, j), b.get(i, j));
        }
    }
}

/// Fraction of the disk `B(0, r)` covered by the slab `0 <= y < 1`.
fn strip_disk_fraction(r: f64) -> f64 {
    let antiderivative = |y: f64| y * (r * r - y * y).sqrt() + r * r * (y / r).asin();
    (antiderivative(1.0) - antiderivative(0.0)) / (std::f64::consts::PI * r * r)
}

#[test]
fn strip_indicator_ball_average() {
    let oracle = strip_disk_fraction(8.0);
    assert!((oracle - 0.0794).abs() < 5e-4, "{oracle}");
    let grid = Grid::new(2, 10.0, 1.0 / 32.0).unwrap();
    let f = GridFunction::from_fn(grid, |x| if (0.0..1.0).contains(&x[1]) { 1.0 } else { 0.0 });
    let avg = ball_average(&f, &[0.0, 0.0], 8.0, &WeightField::unit(2)).unwrap();
    assert!((avg - oracle).abs() < 2e-3, "{avg} vs {oracle}");
}

#[test]
fn constant_average_and_norms() {
    let grid = Grid::new(2, 1.0, 1.0 / 16.0).unwrap();
    let w = WeightField::unit(2);
    let c = GridFunction::from_fn(grid, |_| 3.25);
    assert!((ball_average(&c, &[0.1, -0.2], 0.5, &w).unwrap() - 3.25).abs() < 1e-14);
    let one = GridFunction::from_fn(grid, |_| 1.0);
    // Interior nodes only: the box area minus one boundary layer.
    let l2 = lp_norm(&one, 2.0, &w).unwrap();
    assert!((l2 - 2.0).abs() < 4.0 * grid.spacing(), "{l2}");
    let g = GridFunction::from_fn(grid, |x| x[0] - 2.0 * x[1] * x[1]);
    assert_eq!(lp_norm(&g, f64::INFINITY, &w).unwrap(), g.max_abs());
}

#[test]
fn holder_monotonicity() {
    let grid = Grid::new(2, 1.0, 1.0 / 16.0).unwrap();
    let w = WeightField::unit(2);
    let f = GridFunction::from_fn(grid, |x| (3.0 * x[0]).sin() + x[1] * x[1] - 0.3);
    let mu = lp_norm(&GridFunction::from_fn(grid, |_| 1.0), 1.0, &w).unwrap();
    let ps = [1.0, 1.5, 2.0, 3.0, 6.0, 10.0];
    for (i, &p) in ps.iter().enumerate() {
        for &q in &ps[i + 1..] {
            let lhs = lp_norm(&f, p, &w).unwrap();
            let rhs = mu.powf(1.0 / p - 1.0 / q) * lp_norm(&f, q, &w).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12), "p={p} q={q}: {lhs} > {rhs}");
        }
    }
}

#[test]
fn lebesgue_and_power_weight_growth() {
    let radii = [0.25, 0.5, 1.0, 2.0];
    let unit = measure_profile(&WeightField::unit(2), &[vec![0.0, 0.0], vec![3.0, 1.0]], &radii).unwrap();
    assert!((unit.lower_exponent - 2.0).abs() < 0.1 && (unit.upper_exponent - 2.0).abs() < 0.1);
    assert!((unit.doubling - 4.0).abs() < 0.1);
    let w = WeightField::power(2, 1.0).unwrap();
    let prof = measure_profile(&w, &[vec![0.0, 0.0]], &radii).unwrap();
    assert!((prof.pooled.growth() - 3.0).abs() < 0.1, "{}", prof.pooled.growth());
}

#[test]
fn conic_values() {
    let a = meyer_conic(-0.5).unwrap();
    assert_mat(&a.eval(&[1.0, 0.0]), &SymMat::diagonal(&[1.0, 0.25]), 1e-14);
    assert_mat(&meyer_conic(0.0).unwrap().eval(&[0.3, -0.7]), &SymMat::identity(2), 1e-14);
    // Radial eigenvector with eigenvalue 1, tangential one with (1 + beta)^2.
    let x = [0.6, -0.8];
    let m = a.eval(&x);
    let radial = m.mul_vec(&x);
    let tangent = m.mul_vec(&[0.8, 0.6]);
    assert!((radial[0] - 0.6).abs() < 1e-14 && (radial[1] + 0.8).abs() < 1e-14);
    assert!((tangent[0] - 0.2).abs() < 1e-14 && (tangent[1] - 0.15).abs() < 1e-14);

    let c = conic_nd(0.3, 3).unwrap();
    assert_mat(&c.eval(&[0.0, 0.0, 1.0]), &SymMat::diagonal(&[0.3, 0.3, 1.0]), 1e-14);
    assert_mat(&conic_nd(1.0, 3).unwrap().eval(&[0.2, 0.1, -0.4]), &SymMat::identity(3), 1e-14);
    let pc = partial_conic(-0.5, 3).unwrap();
    assert_mat(&pc.eval(&[1.0, 0.0, 0.0]), &SymMat::diagonal(&[1.0, 0.25, 1.0]), 1e-14);
}

#[test]
fn beta_lambda_roots() {
    assert!((beta_from_lambda(0.25, 2).unwrap() + 0.5).abs() < 1e-14);
    assert!(beta_from_lambda(1.0, 3).unwrap().abs() < 1e-14);
    let b = beta_from_lambda(0.5, 3).unwrap();
    assert!((b - (-1.5 + 5f64.sqrt() / 2.0)).abs() < 1e-12);
    // Harmonicity of |x|^beta x_1 for the N = 3 conic: (1 + beta)(beta + 2) = 2 lambda.
    assert!(((1.0 + b) * (b + 2.0) - 1.0).abs() < 1e-12);
}

#[test]
fn critical_exponents_from_the_conic() {
    assert_eq!(critical_p(-0.5, 2, ConicVariant::Full).unwrap(), 4.0);
    assert_eq!(critical_p(-0.5, 3, ConicVariant::Partial).unwrap(), 4.0);
    assert_eq!(critical_p(-0.5, 3, ConicVariant::Full).unwrap(), 6.0);
}

#[test]
fn perturbations_of_a_field_by_itself() {
    let i = MatrixField::identity(2);
    let x = [0.3, 0.5];
    assert_mat(&strip_perturbation(&i, &i).unwrap().eval(&x), &SymMat::identity(2), 0.0);
    assert_mat(&compact_perturbation(&i, &i, 1.0).unwrap().eval(&x), &SymMat::identity(2), 0.0);
    let tiny = compact_perturbation(&i, &MatrixField::scalar(2, 2.0).unwrap(), 1e-9).unwrap();
    assert_mat(&tiny.eval(&[1e-3, 0.0]), &SymMat::identity(2), 0.0);
}

#[test]
fn gd_exponents_of_strip_and_compact() {
    let i = MatrixField::identity(2);
    let two = MatrixField::scalar(2, 2.0).unwrap();
    let unit = WeightField::unit(2);
    let radii: Vec<f64> = (1..=6).map(|k| 2f64.powi(k)).collect();
    let strip = strip_perturbation(&i, &two).unwrap();
    let fit = gd_decay(&strip, &i, &[vec![0.0, 0.5], vec![0.0, 0.0]], &radii, &unit).unwrap();
    assert!((fit.exponent - 1.0).abs() <= 0.15, "{}", fit.exponent);
    let compact = compact_perturbation(&i, &two, 1.0).unwrap();
    let fit = gd_decay(&compact, &i, &[vec![0.0, 0.0]], &radii, &unit).unwrap();
    assert!((fit.exponent - 2.0).abs() <= 0.1, "{}", fit.exponent);
    // Balls that miss the support see no difference at all.
    let far = gd_profile(&compact, &i, &[vec![20.0, 0.0]], &[2.0, 4.0, 8.0], &unit, &GdConfig::default()).unwrap();
    assert!(far.averages.iter().all(|&v| v == 0.0));
}

#[test]
fn strip_difference_is_not_integrable() {
    let i = MatrixField::identity(2);
    let strip = strip_perturbation(&i, &MatrixField::scalar(2, 2.0).unwrap()).unwrap();
    let integral = |half: f64| {
        let h = 1.0 / 16.0;
        let m = (2.0 * half / h) as i64;
        let mut acc = 0.0;
        for a in 0..m {
            for b in 0..m {
                let x = [-half + (a as f64 + 0.5) * h, -half + (b as f64 + 0.5) * h];
                acc += strip.eval(&x).sub(&i.eval(&x)).frobenius().powi(3) * h * h;
            }
        }
        acc
    };
    let ratio = integral(16.0) / integral(8.0);
    assert!((ratio - 2.0).abs() < 1e-9, "{ratio}");
}

/// `P(z_1 <= u)` for `z` distributed with density `∝ (1 - |z|^2)^4` on the unit disk,
/// by Simpson integration of the marginal `(1 - u^2)^{9/2}`.
fn bump_marginal_cdf(u: f64) -> f64 {
    let marginal = |s: f64| (1.0 - s * s).max(0.0).powf(4.5);
    let simpson = |a: f64, b: f64| {
        let m = 2000;
        let h = (b - a) / m as f64;
        let mut acc = marginal(a) + marginal(b);
        for k in 1..m {
            acc += marginal(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    simpson(-1.0, u) / simpson(-1.0, 1.0)
}

#[test]
fn mollified_strip_interface_profile() {
    let i = MatrixField::identity(2);
    let s = 0.2;
    let m = mollify(&strip_perturbation(&i, &MatrixField::scalar(2, 2.0).unwrap()).unwrap(), s).unwrap();
    // Exactly 1 below the transition layer, exactly 2 inside the slab away from it.
    assert_mat(&m.eval(&[0.37, -s - 1e-6]), &SymMat::identity(2), 1e-12);
    assert_mat(&m.eval(&[0.37, 0.5]), &SymMat::scaled_identity(2, 2.0), 1e-12);
    for d in [-0.15, -0.05, 0.0, 0.08, 0.15] {
        let want = 1.0 + bump_marginal_cdf(d / s);
        let got = m.eval(&[0.37, d]).get(0, 0);
        assert!((got - want).abs() < 0.02, "offset {d}: {got} vs {want}");
    }
}

#[test]
fn mollified_field_keeps_ellipticity() {
    let i = MatrixField::identity(2);
    let bump = compact_perturbation(&i, &MatrixField::scalar(2, 1.5).unwrap(), 0.25).unwrap();
    let m = mollify(&bump, 0.1).unwrap();
    let c = MatrixField::scalar(2, 0.7).unwrap();
    assert_mat(&mollify(&c, 0.3).unwrap().eval(&[0.1, 0.2]), &SymMat::scaled_identity(2, 0.7), 1e-10);
    for k in 0..400 {
        let t = k as f64 * 0.37;
        let r = 0.4 * (k as f64 / 400.0);
        let ev = m.eval(&[r * t.cos(), r * t.sin()]).eigenvalues();
        assert!(ev[0] >= 1.0 - 1e-12 && ev[1] <= 1.5 + 1e-12, "{ev:?}");
    }
}

#[test]
fn rescaling_identities() {
    let a = meyer_conic(-0.5).unwrap();
    let x = [0.31, -0.42];
    assert_mat(&rescale(&a, 1.0).unwrap().eval(&x), &a.eval(&x), 0.0);
    assert_mat(&rescale(&MatrixField::identity(2), 37.0).unwrap().eval(&x), &SymMat::identity(2), 0.0);
    // The conic is homogeneous of degree zero.
    assert_mat(&rescale(&a, 5.0).unwrap().eval(&x), &a.eval(&x), 1e-14);
}

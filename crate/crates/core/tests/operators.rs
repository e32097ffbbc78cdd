//! Assembly, discrete calculus and functional calculus against spectral and
//! Taylor-expansion oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rieszlab::coeffs::{compact_perturbation, meyer_conic};
use rieszlab::funcalc::{
    heat, inv_sqrt, local_riesz, resolvent, resolvent_difference, riesz, split_difference, InvSqrtRule,
};
use rieszlab::{DiscreteOperator, Grid, GridFunction, MatrixField, SolverConfig, VectorGridFunction, WeightField};

fn op(field: &MatrixField, w: &WeightField, half: f64, h: f64) -> DiscreteOperator {
    DiscreteOperator::assemble(Grid::new(field.dim(), half, h).unwrap(), field, w).unwrap()
}

fn random_fn(grid: Grid, rng: &mut ChaCha8Rng) -> GridFunction {
    GridFunction::from_values(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn l2(op: &DiscreteOperator, f: &GridFunction) -> f64 {
    op.measure().inner(f.values(), f.values()).sqrt()
}

fn cg() -> SolverConfig {
    SolverConfig { use_dense: false, ..SolverConfig::default() }
}

#[test]
fn laplacian_spectrum_is_a_sum_of_sines() {
    let (half, h) = (1.0, 1.0 / 8.0);
    let l = op(&MatrixField::identity(2), &WeightField::unit(2), half, h);
    let q = l.grid().interior_per_axis();
    let one_d: Vec<f64> =
        (1..=q).map(|k| 4.0 / (h * h) * (k as f64 * std::f64::consts::PI * h / (2.0 * 2.0 * half)).sin().powi(2)).collect();
    let mut want: Vec<f64> = one_d.iter().flat_map(|a| one_d.iter().map(move |b| a + b)).collect();
    want.sort_by(f64::total_cmp);
    let eig = l.dense_spectral().unwrap();
    for (got, want) in eig.values.iter().zip(&want) {
        assert!((got - want).abs() <= 1e-10 * want.max(1.0), "{got} vs {want}");
    }
    assert!(eig.values[0] > 0.0);
}

#[test]
fn dense_eigenpairs_and_trace() {
    let l = op(&meyer_conic(-0.5).unwrap(), &WeightField::power(2, 0.3).unwrap(), 1.0, 1.0 / 8.0);
    let eig = l.dense_spectral().unwrap();
    let sq = l.sqrt_mass();
    let lmax = *eig.values.last().unwrap();
    for k in [0, 7, eig.values.len() - 1] {
        let u = eig.vectors.col(k);
        let f = GridFunction::from_values(*l.grid(), (0..sq.len()).map(|i| u[i] / sq[i]).collect()).unwrap();
        let r = l.apply(&f).combine(1.0, &f, -eig.values[k]);
        let res: f64 = r.values().iter().zip(sq).map(|(v, s)| (v * s).powi(2)).sum::<f64>().sqrt();
        assert!(res <= 1e-8 * lmax, "eigenpair {k}: {res}");
    }
    let trace: f64 = l.symmetric().diagonal().iter().sum();
    let sum: f64 = eig.values.iter().sum();
    assert!((trace - sum).abs() <= 1e-8 * trace);
    assert!(eig.values[0] > 0.0);
}

#[test]
fn quadratic_is_consistent_with_minus_laplacian() {
    let l = op(&MatrixField::identity(2), &WeightField::unit(2), 1.0, 1.0 / 16.0);
    let grid = *l.grid();
    let f = GridFunction::from_fn(grid, |x| x[0] * x[0] + x[1] * x[1]);
    let lf = l.apply(&f);
    let margin = 1.5 * grid.spacing();
    for i in 0..grid.len() {
        let x = grid.node_point(i);
        if grid.distance_to_boundary(&x[..2]) > margin {
            assert!((lf.values()[i] + 4.0).abs() <= grid.spacing().powi(2), "{}", lf.values()[i]);
        }
    }
}

#[test]
fn gradient_accuracy() {
    for (h, tol) in [(1.0 / 16.0, 1e-12), (1.0 / 32.0, 1e-12)] {
        let grid = Grid::new(2, 1.0, h).unwrap();
        let l = DiscreteOperator::assemble(grid, &MatrixField::identity(2), &WeightField::unit(2)).unwrap();
        let affine = l.gradient(&GridFunction::from_fn(grid, |x| 2.0 * x[0] - 0.5 * x[1] + 0.1));
        let constant = l.gradient(&GridFunction::from_fn(grid, |_| 4.0));
        for cell in 0..grid.cell_count() {
            let c = grid.cell_center(cell);
            if grid.distance_to_boundary(&c[..2]) < 1.0 * h {
                continue;
            }
            for k in 0..4 {
                let g = affine.at(cell * 4 + k);
                assert!((g[0] - 2.0).abs() < tol && (g[1] + 0.5).abs() < tol);
                assert!(constant.at(cell * 4 + k).iter().all(|v| v.abs() < tol));
            }
        }
    }
    // sin(pi x_1): the edge difference is second order at the edge midpoint.
    let err = |h: f64| {
        let grid = Grid::new(2, 1.0, h).unwrap();
        let l = DiscreteOperator::assemble(grid, &MatrixField::identity(2), &WeightField::unit(2)).unwrap();
        let g = l.gradient(&GridFunction::from_fn(grid, |x| (std::f64::consts::PI * x[0]).sin()));
        let mut worst: f64 = 0.0;
        for cell in 0..grid.cell_count() {
            let c = grid.cell_center(cell);
            if grid.distance_to_boundary(&c[..2]) < h {
                continue;
            }
            let exact = std::f64::consts::PI * (std::f64::consts::PI * c[0]).cos();
            for k in 0..4 {
                worst = worst.max((g.at(cell * 4 + k)[0] - exact).abs());
            }
        }
        worst
    };
    let (e1, e2) = (err(1.0 / 16.0), err(1.0 / 32.0));
    assert!(e1 / e2 > 3.5, "{e1} {e2}");
}

#[test]
fn divergence_is_minus_the_gradient_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = compact_perturbation(&meyer_conic(-0.5).unwrap(), &MatrixField::scalar(2, 1.7).unwrap(), 0.4).unwrap();
    let l = op(&a, &WeightField::power(2, 0.3).unwrap(), 1.0, 1.0 / 8.0);
    let grid = *l.grid();
    let vlen = grid.subcell_count() * 2;
    let m = l.measure();
    for _ in 0..100 {
        let f = random_fn(grid, &mut rng);
        let v = VectorGridFunction::from_values(grid, (0..vlen).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let lhs = m.inner(l.divergence_w(&v).values(), f.values());
        let rhs = -m.inner_vec(v.values(), l.gradient(&f).values());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    let unit = op(&MatrixField::identity(2), &WeightField::unit(2), 1.0, 1.0 / 8.0);
    let f = random_fn(grid, &mut rng);
    let div = unit.divergence_w(&unit.gradient(&f)).scale(-1.0);
    let lf = unit.apply(&f);
    for (a, b) in div.values().iter().zip(lf.values()) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
    }
    let constant = VectorGridFunction::from_fn(grid, |_| [0.3, -1.1, 0.0]);
    let d = unit.divergence_w(&constant);
    for i in 0..grid.len() {
        let x = grid.node_point(i);
        if grid.distance_to_boundary(&x[..2]) > 1.5 * grid.spacing() {
            assert!(d.values()[i].abs() < 1e-10);
        }
    }
}

#[test]
fn resolvent_on_eigenvectors_and_contraction() {
    let l = op(&meyer_conic(-0.5).unwrap(), &WeightField::unit(2), 1.0, 1.0 / 8.0);
    let grid = *l.grid();
    let eig = l.dense_spectral().unwrap();
    let sq = l.sqrt_mass();
    let u = eig.vectors.col(3);
    let f = GridFunction::from_values(grid, (0..sq.len()).map(|i| u[i] / sq[i]).collect()).unwrap();
    for (s, t) in [(1.0, 0.5), (2.0, 3.0)] {
        let out = resolvent(&l, s, t, &f, &cg()).unwrap();
        let want = f.scale(1.0 / (s + t * eig.values[3]));
        assert!(l2(&l, &out.combine(1.0, &want, -1.0)) <= 1e-8 * l2(&l, &want));
    }
    assert_eq!(resolvent(&l, 2.0, 0.0, &f, &cg()).unwrap(), f.scale(0.5));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = cg();
    for t in [1.0, 10.0, 100.0] {
        for _ in 0..20 {
            let f = random_fn(grid, &mut rng);
            let ratio = l2(&l, &resolvent(&l, 1.0, t, &f, &cfg).unwrap()) / l2(&l, &f);
            assert!(ratio <= 1.0 + cfg.cg_tol, "{ratio}");
        }
    }
}

#[test]
fn heat_semigroup_and_free_space_kernel() {
    let l = op(&meyer_conic(-0.5).unwrap(), &WeightField::unit(2), 1.0, 1.0 / 8.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = random_fn(*l.grid(), &mut rng);
    let cfg = SolverConfig::default();
    assert_eq!(heat(&l, 0.0, &f, &cfg).unwrap(), f);
    let two_steps = heat(&l, 0.3, &heat(&l, 0.2, &f, &cfg).unwrap(), &cfg).unwrap();
    let one_step = heat(&l, 0.5, &f, &cfg).unwrap();
    assert!(l2(&l, &two_steps.combine(1.0, &one_step, -1.0)) <= 1e-10 * l2(&l, &f));
    let (be1, be2) = (heat(&l, 0.5, &heat(&l, 0.2, &f, &cg()).unwrap(), &cg()).unwrap(), heat(&l, 0.7, &f, &cg()).unwrap());
    assert!(l2(&l, &be1.combine(1.0, &be2, -1.0)) <= 4.0 * cfg.heat_target * l2(&l, &f));

    // Unit point mass at the origin on a box large enough that the boundary is invisible.
    let t = 0.25;
    let lap = op(&MatrixField::identity(2), &WeightField::unit(2), 4.0, 1.0 / 8.0).with_dense_cap(4000);
    let grid = *lap.grid();
    let y = grid.nearest_node(&[0.0, 0.0]);
    assert!((-(4.0f64 * 4.0) / (4.0 * t)).exp() < 1e-6);
    let mut delta = vec![0.0; grid.len()];
    delta[y] = 1.0 / lap.node_mass()[y];
    let k = heat(&lap, t, &GridFunction::from_values(grid, delta).unwrap(), &SolverConfig::default()).unwrap();
    for i in 0..grid.len() {
        let x = grid.node_point(i);
        let d2 = x[0] * x[0] + x[1] * x[1];
        if d2.sqrt() <= 3.0 * t.sqrt() {
            let g = (-d2 / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t);
            assert!((k.values()[i] - g).abs() <= 0.05 * g, "|x| = {}: {} vs {g}", d2.sqrt(), k.values()[i]);
        }
    }
}

#[test]
fn inverse_square_root() {
    let rule = InvSqrtRule::certified(1e-3, 1e3, 1e-8, 16).unwrap();
    assert!((rule.eval(1.0) - 1.0).abs() <= 1e-8);

    let l = op(&meyer_conic(-0.5).unwrap(), &WeightField::unit(2), 1.0, 1.0 / 16.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_fn(*l.grid(), &mut rng);
    let dense = inv_sqrt(&l, &f, 0.0, &SolverConfig::default()).unwrap();
    let quad = inv_sqrt(&l, &f, 0.0, &cg()).unwrap();
    assert!(l2(&l, &quad.combine(1.0, &dense, -1.0)) <= 1e-5 * l2(&l, &f));
    let twice = inv_sqrt(&l, &quad, 0.0, &cg()).unwrap();
    let inverse = GridFunction::from_values(*l.grid(), l.dense_apply(f.values(), |x| 1.0 / x).unwrap()).unwrap();
    assert!(l2(&l, &twice.combine(1.0, &inverse, -1.0)) <= 1e-4 * l2(&l, &inverse));
}

#[test]
fn riesz_isometry_linearity_and_local_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let conic = op(&meyer_conic(-0.5).unwrap(), &WeightField::unit(2), 1.0, 1.0 / 16.0);
    let grid = *conic.grid();
    for (cfg, tol) in [(SolverConfig::default(), 1e-4), (cg(), 1e-3)] {
        for _ in 0..20 {
            let f = random_fn(grid, &mut rng);
            let r = riesz(&conic, &f, &cfg).unwrap();
            let defect = (conic.coefficient_energy(&r).sqrt() - l2(&conic, &f)).abs() / l2(&conic, &f);
            assert!(defect <= tol, "{defect}");
        }
    }
    let unit = op(&MatrixField::identity(2), &WeightField::unit(2), 1.0, 1.0 / 16.0);
    let f = random_fn(grid, &mut rng);
    let g = random_fn(grid, &mut rng);
    let r = riesz(&unit, &f, &SolverConfig::default()).unwrap();
    let plain = unit.measure().inner_vec(r.values(), r.values()).sqrt();
    assert!((plain - l2(&unit, &f)).abs() <= 1e-8 * l2(&unit, &f));

    let cfg = SolverConfig::default();
    let lhs = riesz(&conic, &f.combine(2.0, &g, -0.5), &cfg).unwrap();
    let rhs = riesz(&conic, &f, &cfg).unwrap().combine(2.0, &riesz(&conic, &g, &cfg).unwrap(), -0.5);
    assert!(lhs.combine(1.0, &rhs, -1.0).max_abs() <= 1e-10 * rhs.max_abs());

    let local = local_riesz(&conic, &f, &cfg).unwrap();
    assert!(conic.coefficient_energy(&local).sqrt() <= l2(&conic, &f) * (1.0 + 1e-12));
    let near = conic.gradient(&inv_sqrt(&conic, &f, 1e-6, &cfg).unwrap());
    let full = riesz(&conic, &f, &cfg).unwrap();
    let lmin = conic.dense_spectral().unwrap().values[0];
    assert!(near.combine(1.0, &full, -1.0).max_abs() <= 1e-6 / lmin * full.max_abs());
    let zero = GridFunction::zeros(grid);
    assert_eq!(local_riesz(&conic, &zero, &cfg).unwrap().max_abs(), 0.0);
}

#[test]
fn resolvent_difference_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let i = MatrixField::identity(2);
    let a = compact_perturbation(&i, &MatrixField::scalar(2, 2.0).unwrap(), 0.3).unwrap();
    let w = WeightField::power(2, 0.3).unwrap();
    let (l, l0) = (op(&a, &w, 1.0, 1.0 / 16.0), op(&i, &w, 1.0, 1.0 / 16.0));
    let cfg = SolverConfig::default();
    for _ in 0..5 {
        let f = random_fn(*l.grid(), &mut rng);
        let d = resolvent_difference(&l, &l0, 3.0, &f, &cfg).unwrap();
        assert!(d.residual <= 1e-8, "{}", d.residual);
    }
    let f = random_fn(*l.grid(), &mut rng);
    let same = resolvent_difference(&l0, &l0, 3.0, &f, &cfg).unwrap();
    assert_eq!(same.direct.max_abs(), 0.0);
    // Linear in t once t |L| is small; |L| ~ 8 / h^2 here.
    let (small, smaller) = (
        l2(&l, &resolvent_difference(&l, &l0, 1e-6, &f, &cfg).unwrap().direct),
        l2(&l, &resolvent_difference(&l, &l0, 5e-7, &f, &cfg).unwrap().direct),
    );
    assert!((small / smaller - 2.0).abs() < 0.05, "{}", small / smaller);
}

#[test]
fn split_difference_sums_to_the_operator_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let i = MatrixField::identity(2);
    let a = compact_perturbation(&meyer_conic(-0.5).unwrap(), &MatrixField::scalar(2, 2.0).unwrap(), 0.5).unwrap();
    let (w, w0) = (WeightField::power(2, 0.3).unwrap(), WeightField::power(2, -0.2).unwrap());
    for (wl, wl0, same_weight) in [(&w, &w, true), (&w, &w0, false)] {
        let (l, l0) = (op(&a, wl, 1.0, 1.0 / 8.0), op(&i, wl0, 1.0, 1.0 / 8.0));
        let f = random_fn(*l.grid(), &mut rng);
        let (first, second) = split_difference(&l, &l0, &f).unwrap();
        let want = l0.apply(&f).combine(1.0, &l.apply(&f), -1.0);
        let err = first.combine(1.0, &second, 1.0).combine(1.0, &want, -1.0);
        assert!(l2(&l, &err) <= 1e-9 * l2(&l, &want));
        if same_weight {
            assert_eq!(second.max_abs(), 0.0);
        }
    }
}

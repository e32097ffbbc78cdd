//! Exact discrete identities evaluated on one randomly drawn instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rieszlab::coeffs::{compact_perturbation, meyer_conic};
use rieszlab::funcalc::{inv_sqrt, resolvent_difference, riesz, split_difference};
use rieszlab::{DiscreteOperator, Grid, GridFunction, MatrixField, SolverConfig, WeightField};

/// Parameters of one instance.
#[derive(Clone, Copy, Debug)]
pub struct Instance {
    pub seed: u64,
    pub spacing: f64,
    pub contrast: f64,
    pub radius: f64,
    pub alpha: f64,
    pub t: f64,
}

/// Worst defects of one instance.
#[derive(Clone, Copy, Debug, Default)]
pub struct Defects {
    pub factored_identity: f64,
    pub split_sum: f64,
    pub isometry: f64,
    pub quadrature: f64,
}

impl Defects {
    #[allow(dead_code)]
    pub fn max(self, o: Defects) -> Defects {
        Defects {
            factored_identity: self.factored_identity.max(o.factored_identity),
            split_sum: self.split_sum.max(o.split_sum),
            isometry: self.isometry.max(o.isometry),
            quadrature: self.quadrature.max(o.quadrature),
        }
    }
}

fn l2(op: &DiscreteOperator, f: &GridFunction) -> f64 {
    op.measure().inner(f.values(), f.values()).sqrt()
}

pub fn defects(inst: Instance) -> Defects {
    let mut rng = ChaCha8Rng::seed_from_u64(inst.seed);
    let grid = Grid::new(2, 1.0, inst.spacing).unwrap();
    let base = meyer_conic(-0.5).unwrap();
    let a = compact_perturbation(&base, &MatrixField::scalar(2, inst.contrast).unwrap(), inst.radius).unwrap();
    let w = WeightField::power(2, inst.alpha).unwrap();
    let w0 = WeightField::power(2, 0.5 * inst.alpha).unwrap();
    let l = DiscreteOperator::assemble(grid, &a, &w).unwrap();
    let l0 = DiscreteOperator::assemble(grid, &base, &w).unwrap();
    let l0w = DiscreteOperator::assemble(grid, &base, &w0).unwrap();
    let f = GridFunction::from_values(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let dense = SolverConfig::default();
    let cg = SolverConfig { use_dense: false, ..SolverConfig::default() };

    let factored_identity = resolvent_difference(&l, &l0, inst.t, &f, &dense).unwrap().residual;

    let (first, second) = split_difference(&l, &l0w, &f).unwrap();
    let want = l0w.apply(&f).combine(1.0, &l.apply(&f), -1.0);
    let split_sum = l2(&l, &first.combine(1.0, &second, 1.0).combine(1.0, &want, -1.0)) / l2(&l, &want);

    let r = riesz(&l, &f, &dense).unwrap();
    let isometry = (l.coefficient_energy(&r).sqrt() - l2(&l, &f)).abs() / l2(&l, &f);

    let exact = inv_sqrt(&l, &f, 0.0, &dense).unwrap();
    let quad = inv_sqrt(&l, &f, 0.0, &cg).unwrap();
    let quadrature = l2(&l, &quad.combine(1.0, &exact, -1.0)) / l2(&l, &f);

    Defects { factored_identity, split_sum, isometry, quadrature }
}

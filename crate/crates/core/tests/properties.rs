mod common;

use proptest::prelude::*;
use rieszlab::coeffs::meyer_conic;
use rieszlab::{DiscreteOperator, Grid, GridFunction, WeightField};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn discrete_identities_hold(
        seed in any::<u64>(),
        fine in any::<bool>(),
        contrast in 0.5f64..2.0,
        radius in 0.1f64..0.8,
        alpha in -0.5f64..0.5,
        t in 0.1f64..50.0,
    ) {
        let d = common::defects(common::Instance {
            seed,
            spacing: if fine { 1.0 / 16.0 } else { 1.0 / 8.0 },
            contrast,
            radius,
            alpha,
            t,
        });
        prop_assert!(d.factored_identity <= 1e-8, "{d:?}");
        prop_assert!(d.split_sum <= 1e-9, "{d:?}");
        prop_assert!(d.isometry <= 1e-4, "{d:?}");
        prop_assert!(d.quadrature <= 1e-5, "{d:?}");
    }

    #[test]
    fn assembly_is_symmetric_and_positive(
        beta in -0.8f64..0.5,
        alpha in -0.5f64..0.5,
        values in proptest::collection::vec(-1.0f64..1.0, 49),
    ) {
        let grid = Grid::new(2, 1.0, 0.25).unwrap();
        let op = DiscreteOperator::assemble(grid, &meyer_conic(beta).unwrap(), &WeightField::power(2, alpha).unwrap()).unwrap();
        let s = op.symmetric();
        for i in 0..s.dim() {
            for j in 0..s.dim() {
                prop_assert!((s.get(i, j) - s.get(j, i)).abs() <= 1e-12 * s.get(i, i).abs());
            }
        }
        let f = GridFunction::from_values(grid, values).unwrap();
        let energy = op.energy(&f);
        prop_assert!(energy >= 0.0);
        // Energy against the ellipticity sandwich: λ |∇f|² ≤ ⟨A∇f, ∇f⟩ ≤ Λ |∇f|².
        let g = op.gradient(&f);
        let plain = op.measure().inner_vec(g.values(), g.values());
        let (lo, hi) = meyer_conic(beta).unwrap().ellipticity();
        prop_assert!(energy >= lo * plain * (1.0 - 1e-12) && energy <= hi * plain * (1.0 + 1e-12));
    }

    #[test]
    fn conic_eigenvalues_everywhere(beta in -0.9f64..1.0, angle in 0.0f64..6.3, r in 1e-3f64..10.0) {
        let a = meyer_conic(beta).unwrap();
        let x = [r * angle.cos(), r * angle.sin()];
        let ev = a.eval(&x).eigenvalues();
        let tangential = (1.0 + beta).powi(2);
        let (lo, hi) = if tangential < 1.0 { (tangential, 1.0) } else { (1.0, tangential) };
        prop_assert!((ev[0] - lo).abs() < 1e-12 && (ev[1] - hi).abs() < 1e-12);
    }
}

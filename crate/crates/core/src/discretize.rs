//! Assembly of `L = -(1/w) div(w A grad)` with homogeneous Dirichlet data.
//!
//! The energy is integrated cell by cell with one quadrature point per cell
//! corner: on the sub-cell next to corner `k`, the gradient is the vector of
//! one-sided differences along the cell edges through that corner and `w A`
//! is sampled at the cell centre. Hence `K = G^T Ω G`, with `Ω` holding the
//! sub-cell masses times `A`, and `L = M^{-1} K` factors exactly through the
//! discrete gradient. For `A = I` the stencil is the `(2n+1)`-point Laplacian;
//! off-diagonal entries of `A` add the diagonal neighbours of the 9-point
//! (n = 2) or 19-point (n = 3) stencil.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use crate::coeffs::{MatrixField, SymMat, WeightField};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, GridMeasure, VectorGridFunction, BOUNDARY};
use crate::linalg::{lanczos_extremes, CsrMatrix, DenseEigen};

/// Default unknown-count cap of the dense spectral oracle.
pub const DENSE_CAP: usize = 3000;

/// Spectral enclosure of `L` (eigenvalues of the symmetrized matrix).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct SpectralBounds {
    /// Certified lower bound from the ellipticity sandwich against the Dirichlet Laplacian.
    pub lower: f64,
    /// Certified upper bound (Gershgorin).
    pub upper: f64,
    /// Lanczos estimate of the smallest eigenvalue.
    pub estimated_min: f64,
    /// Lanczos estimate of the largest eigenvalue.
    pub estimated_max: f64,
}

/// Assembled weighted divergence-form operator.
pub struct DiscreteOperator {
    grid: Grid,
    field: MatrixField,
    weight: WeightField,
    ellipticity: (f64, f64),
    measure: GridMeasure,
    coeff: Vec<SymMat>,
    stiffness: CsrMatrix,
    symmetric: CsrMatrix,
    sqrt_mass: Vec<f64>,
    bounds: SpectralBounds,
    m_matrix: bool,
    dense_cap: usize,
    dense: OnceLock<Arc<DenseEigen>>,
    iterations: AtomicUsize,
}

impl std::fmt::Debug for DiscreteOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteOperator")
            .field("grid", &self.grid)
            .field("field", &self.field.id())
            .field("weight", &self.weight.id())
            .field("bounds", &self.bounds)
            .field("m_matrix", &self.m_matrix)
            .finish()
    }
}

/// Assembles the operator of `(A, w)` on `grid`.
pub fn assemble(grid: Grid, a: &MatrixField, w: &WeightField) -> Result<DiscreteOperator> {
    DiscreteOperator::assemble(grid, a, w)
}

/// Discrete gradient on the sub-cell lattice.
pub fn gradient(op: &DiscreteOperator, f: &GridFunction) -> VectorGridFunction {
    op.gradient(f)
}

/// Negative `w`-adjoint of [`gradient`].
pub fn divergence_w(op: &DiscreteOperator, v: &VectorGridFunction) -> GridFunction {
    op.divergence_w(v)
}

/// Dense eigendecomposition of the symmetrized operator.
pub fn dense_spectral(op: &DiscreteOperator) -> Result<Arc<DenseEigen>> {
    op.dense_spectral()
}

impl DiscreteOperator {
    pub fn assemble(grid: Grid, a: &MatrixField, w: &WeightField) -> Result<Self> {
        let n = grid.dim();
        if a.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.dim() });
        }
        if w.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: w.dim() });
        }
        let measure = GridMeasure::new(grid, w)?;
        let (c_ell, c_upper) = a.ellipticity();
        let tol = 1e-7 * c_upper.max(1.0);
        let mut coeff = Vec::with_capacity(grid.cell_count());
        for cell in 0..grid.cell_count() {
            let x = grid.cell_center(cell);
            let m = a.eval(&x[..n]);
            let ev = m.eigenvalues();
            if !(ev[0] >= c_ell - tol && ev[n - 1] <= c_upper + tol) || m.max_asymmetry() > 1e-12 * m.frobenius().max(1.0) {
                return Err(Error::Ellipticity {
                    field: a.id().to_string(),
                    detail: format!(
                        "at cell centre {:?}: eigenvalues [{}, {}] outside [{c_ell}, {c_upper}]",
                        &x[..n],
                        ev[0],
                        ev[n - 1]
                    ),
                });
            }
            coeff.push(m);
        }
        let stiffness = assemble_stiffness(&grid, &coeff, measure.cell_weight());
        let sqrt_mass: Vec<f64> = measure.node_mass().iter().map(|m| m.sqrt()).collect();
        let inv: Vec<f64> = sqrt_mass.iter().map(|s| 1.0 / s).collect();
        let symmetric = stiffness.scaled(&inv, &inv);
        let m_matrix = is_m_matrix(&stiffness);

        let h = grid.spacing();
        let l = grid.half_width();
        let wmin = measure.cell_weight().iter().cloned().fold(f64::INFINITY, f64::min);
        let wbar_max = measure.node_mass().iter().cloned().fold(0.0, f64::max) / grid.cell_volume();
        let lap_min = n as f64 * 4.0 / (h * h) * (std::f64::consts::PI * h / (4.0 * l)).sin().powi(2);
        let lower = c_ell * wmin / wbar_max * lap_min;
        let upper = symmetric.gershgorin_bound();
        let start: Vec<f64> = (0..grid.len())
            .map(|i| 1.0 + 0.25 * ((i as f64) * 0.618_033_988_7).fract())
            .collect();
        let (estimated_min, estimated_max) = lanczos_extremes(|x, y| symmetric.matvec_into(x, y), &start, 80);
        let bounds = SpectralBounds { lower, upper, estimated_min, estimated_max };

        Ok(Self {
            grid,
            field: a.clone(),
            weight: w.clone(),
            ellipticity: a.ellipticity(),
            measure,
            coeff,
            stiffness,
            symmetric,
            sqrt_mass,
            bounds,
            m_matrix,
            dense_cap: DENSE_CAP,
            dense: OnceLock::new(),
            iterations: AtomicUsize::new(0),
        })
    }

    /// Overrides the dense-oracle cap.
    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn field(&self) -> &MatrixField {
        &self.field
    }

    pub fn weight(&self) -> &WeightField {
        &self.weight
    }

    pub fn ellipticity(&self) -> (f64, f64) {
        self.ellipticity
    }

    pub fn measure(&self) -> &GridMeasure {
        &self.measure
    }

    pub fn node_mass(&self) -> &[f64] {
        self.measure.node_mass()
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// `M^{-1/2} K M^{-1/2}`.
    pub fn symmetric(&self) -> &CsrMatrix {
        &self.symmetric
    }

    pub fn sqrt_mass(&self) -> &[f64] {
        &self.sqrt_mass
    }

    pub fn cell_coefficients(&self) -> &[SymMat] {
        &self.coeff
    }

    pub fn bounds(&self) -> SpectralBounds {
        self.bounds
    }

    /// Off-diagonals nonpositive and rows weakly diagonally dominant.
    pub fn is_m_matrix(&self) -> bool {
        self.m_matrix
    }

    pub fn dense_cap(&self) -> usize {
        self.dense_cap
    }

    pub fn has_dense(&self) -> bool {
        self.len() <= self.dense_cap
    }

    /// Solver iterations accumulated since the last [`Self::take_iterations`].
    pub fn record_iterations(&self, k: usize) {
        self.iterations.fetch_add(k, Ordering::Relaxed);
    }

    pub fn take_iterations(&self) -> usize {
        self.iterations.swap(0, Ordering::Relaxed)
    }

    fn check_grid(&self, g: &Grid) {
        assert_eq!(g, &self.grid, "grid function lives on a different grid");
    }

    /// `L f`.
    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        self.check_grid(f.grid());
        GridFunction::from_raw(self.grid, self.apply_raw(f.values()))
    }

    pub fn apply_raw(&self, f: &[f64]) -> Vec<f64> {
        let mut y = self.stiffness.matvec(f);
        for (yi, m) in y.iter_mut().zip(self.measure.node_mass()) {
            *yi /= m;
        }
        y
    }

    /// `<L f, f>_w = f^T K f`.
    pub fn energy(&self, f: &GridFunction) -> f64 {
        self.check_grid(f.grid());
        let kf = self.stiffness.matvec(f.values());
        kf.iter().zip(f.values()).map(|(a, b)| a * b).sum()
    }

    /// `<f, g>_w`.
    pub fn inner(&self, f: &GridFunction, g: &GridFunction) -> f64 {
        self.measure.inner(f.values(), g.values())
    }

    pub fn gradient(&self, f: &GridFunction) -> VectorGridFunction {
        self.check_grid(f.grid());
        VectorGridFunction::from_raw(self.grid, gradient_raw(&self.grid, f.values()))
    }

    pub fn divergence_w(&self, v: &VectorGridFunction) -> GridFunction {
        self.check_grid(v.grid());
        let masses = self.measure.subcell_masses();
        let mut out = gradient_transpose_raw(&self.grid, v.values(), &masses);
        for (o, m) in out.iter_mut().zip(self.measure.node_mass()) {
            *o = -*o / m;
        }
        GridFunction::from_raw(self.grid, out)
    }

    /// `A V` pointwise on the sub-cell lattice.
    pub fn apply_coefficient(&self, v: &VectorGridFunction) -> VectorGridFunction {
        self.check_grid(v.grid());
        let n = self.grid.dim();
        let k = self.grid.corners_per_cell();
        let mut out = vec![0.0; v.values().len()];
        for (c, a) in self.coeff.iter().enumerate() {
            for corner in 0..k {
                let idx = (c * k + corner) * n;
                let av = a.mul_vec(&v.values()[idx..idx + n]);
                out[idx..idx + n].copy_from_slice(&av[..n]);
            }
        }
        VectorGridFunction::from_raw(self.grid, out)
    }

    /// `||A^{1/2} V||_{2,w}^2`.
    pub fn coefficient_energy(&self, v: &VectorGridFunction) -> f64 {
        let av = self.apply_coefficient(v);
        self.measure.inner_vec(av.values(), v.values())
    }

    pub fn dense_spectral(&self) -> Result<Arc<DenseEigen>> {
        if !self.has_dense() {
            return Err(Error::OverCap { unknowns: self.len(), cap: self.dense_cap });
        }
        if let Some(d) = self.dense.get() {
            return Ok(d.clone());
        }
        let d = Arc::new(DenseEigen::compute(&self.symmetric)?);
        Ok(self.dense.get_or_init(|| d).clone())
    }

    /// `g(L) f` through the dense oracle: `M^{-1/2} U g(Λ) U^T M^{1/2} f`.
    pub fn dense_apply(&self, f: &[f64], g: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let eig = self.dense_spectral()?;
        let x: Vec<f64> = f.iter().zip(&self.sqrt_mass).map(|(a, s)| a * s).collect();
        let mut y = eig.apply_fn(&x, g);
        for (yi, s) in y.iter_mut().zip(&self.sqrt_mass) {
            *yi /= s;
        }
        Ok(y)
    }
}

fn is_m_matrix(k: &CsrMatrix) -> bool {
    (0..k.dim()).all(|i| {
        let (cols, vals) = k.row(i);
        let mut diag = 0.0;
        let mut off = 0.0;
        for (&j, &v) in cols.iter().zip(vals) {
            if j as usize == i {
                diag = v;
            } else {
                if v > 0.0 {
                    return false;
                }
                off += v;
            }
        }
        diag > 0.0 && diag + off >= -1e-12 * diag
    })
}

/// Offsets `(κ ∨ e_d, κ ∧ ¬e_d)` of the one-sided difference along axis `d` on sub-cell `κ`.
#[inline]
fn edge(corner: usize, d: usize) -> (usize, usize) {
    (corner | (1 << d), corner & !(1 << d))
}

fn assemble_stiffness(grid: &Grid, coeff: &[SymMat], cell_weight: &[f64]) -> CsrMatrix {
    let n = grid.dim();
    let k = grid.corners_per_cell();
    let h = grid.spacing();
    let q = grid.interior_per_axis();
    let slots = 3usize.pow(n as u32);
    let mut stencil = vec![0.0; grid.len() * slots];
    let sub = grid.cell_volume() / k as f64 / (h * h);

    // Stencil slot of the offset between two corners of one cell.
    let slot = |a: usize, b: usize| -> usize {
        (0..n).fold(0, |acc, d| {
            let o = ((b >> d) & 1) as i64 - ((a >> d) & 1) as i64;
            acc * 3 + (o + 1) as usize
        })
    };

    let mut elem = [[0.0f64; 8]; 8];
    for (cell, a) in coeff.iter().enumerate() {
        let corners = grid.cell_corners(cell);
        if corners[..k].iter().all(|&c| c == BOUNDARY) {
            continue;
        }
        for row in elem.iter_mut().take(k) {
            row[..k].fill(0.0);
        }
        let scale = sub * cell_weight[cell];
        for kappa in 0..k {
            for d in 0..n {
                let (dp, dm) = edge(kappa, d);
                for e in 0..n {
                    let ade = a.get(d, e) * scale;
                    if ade == 0.0 {
                        continue;
                    }
                    let (ep, em) = edge(kappa, e);
                    elem[dp][ep] += ade;
                    elem[dp][em] -= ade;
                    elem[dm][ep] -= ade;
                    elem[dm][em] += ade;
                }
            }
        }
        for ia in 0..k {
            let na = corners[ia];
            if na == BOUNDARY {
                continue;
            }
            for ib in 0..k {
                if corners[ib] == BOUNDARY || elem[ia][ib] == 0.0 {
                    continue;
                }
                stencil[na as usize * slots + slot(ia, ib)] += elem[ia][ib];
            }
        }
    }

    let mut row_ptr = Vec::with_capacity(grid.len() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    let strides: Vec<i64> = (0..n).map(|d| (q as i64).pow((n - 1 - d) as u32)).collect();
    for i in 0..grid.len() {
        for s in 0..slots {
            let v = stencil[i * slots + s];
            if v == 0.0 {
                continue;
            }
            let mut off = 0i64;
            let mut rest = s;
            for d in (0..n).rev() {
                off += ((rest % 3) as i64 - 1) * strides[d];
                rest /= 3;
            }
            cols.push((i as i64 + off) as u32);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    CsrMatrix::from_parts(grid.len(), row_ptr, cols, vals)
}

pub(crate) fn gradient_raw(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let n = grid.dim();
    let k = grid.corners_per_cell();
    let inv_h = 1.0 / grid.spacing();
    let mut out = vec![0.0; grid.subcell_count() * n];
    let mut vals = [0.0; 8];
    for cell in 0..grid.cell_count() {
        let corners = grid.cell_corners(cell);
        for (v, &c) in vals.iter_mut().zip(&corners).take(k) {
            *v = if c == BOUNDARY { 0.0 } else { f[c as usize] };
        }
        for kappa in 0..k {
            let base = (cell * k + kappa) * n;
            for d in 0..n {
                let (p, m) = edge(kappa, d);
                out[base + d] = (vals[p] - vals[m]) * inv_h;
            }
        }
    }
    out
}

/// `G^T diag(masses) V`.
pub(crate) fn gradient_transpose_raw(grid: &Grid, v: &[f64], masses: &[f64]) -> Vec<f64> {
    let n = grid.dim();
    let k = grid.corners_per_cell();
    let inv_h = 1.0 / grid.spacing();
    let mut out = vec![0.0; grid.len()];
    for cell in 0..grid.cell_count() {
        let corners = grid.cell_corners(cell);
        if corners[..k].iter().all(|&c| c == BOUNDARY) {
            continue;
        }
        for kappa in 0..k {
            let idx = cell * k + kappa;
            let m = masses[idx] * inv_h;
            for d in 0..n {
                let y = v[idx * n + d] * m;
                let (p, q) = edge(kappa, d);
                if corners[p] != BOUNDARY {
                    out[corners[p] as usize] += y;
                }
                if corners[q] != BOUNDARY {
                    out[corners[q] as usize] -= y;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::meyer_conic;

    #[test]
    fn identity_gives_five_point_laplacian() {
        let g = Grid::new(2, 1.0, 0.25).unwrap();
        let op = assemble(g, &MatrixField::identity(2), &WeightField::unit(2)).unwrap();
        let k = op.stiffness();
        let centre = g.node_index(&[3, 3]);
        let (cols, vals) = k.row(centre);
        assert_eq!(cols.len(), 5);
        for (&j, &v) in cols.iter().zip(vals) {
            let expected = if j as usize == centre { 4.0 } else { -1.0 };
            assert!((v - expected).abs() < 1e-14);
        }
        assert!(op.is_m_matrix());
    }

    #[test]
    fn conic_stencil_is_nine_point_and_symmetric() {
        let g = Grid::new(2, 1.0, 0.125).unwrap();
        let op = assemble(g, &meyer_conic(-0.5).unwrap(), &WeightField::unit(2)).unwrap();
        let k = op.stiffness();
        let i = g.node_index(&[4, 9]);
        assert_eq!(k.row(i).0.len(), 9);
        for i in 0..k.dim() {
            let (cols, vals) = k.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                assert!((v - k.get(j as usize, i)).abs() <= 1e-14 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gradient_of_affine_is_exact_in_the_interior() {
        let g = Grid::new(2, 1.0, 0.125).unwrap();
        let op = assemble(g, &MatrixField::identity(2), &WeightField::unit(2)).unwrap();
        let f = GridFunction::from_fn(g, |x| 0.5 + 2.0 * x[0] - 3.0 * x[1]);
        let v = op.gradient(&f);
        for cell in 0..g.cell_count() {
            let corners = g.cell_corners(cell);
            if corners[..4].contains(&BOUNDARY) {
                continue;
            }
            for kappa in 0..4 {
                let gv = v.at(cell * 4 + kappa);
                assert!((gv[0] - 2.0).abs() < 1e-12 && (gv[1] + 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn over_cap_is_an_error() {
        let g = Grid::new(2, 1.0, 0.25).unwrap();
        let op = assemble(g, &MatrixField::identity(2), &WeightField::unit(2)).unwrap().with_dense_cap(10);
        assert!(matches!(op.dense_spectral(), Err(Error::OverCap { .. })));
    }
}

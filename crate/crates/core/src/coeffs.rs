//! Coefficient and weight fields, the perturbation classes, mollification,
//! the smooth tiling construction, and the (GD) decay checker.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{fit_decay_with_zeros, DecayFit};
use crate::grid::ball_quadrature;

/// Symmetric `n x n` matrix, `n <= 3`, stored densely.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat {
    dim: usize,
    a: [[f64; 3]; 3],
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, a: [[0.0; 3]; 3] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.a[i][i] = c;
        }
        m
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m.a[i][i] = e;
        }
        m
    }

    /// Builds from a full matrix; the lower triangle is mirrored from the upper one.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.a[i][j] = rows[i][j];
                m.a[j][i] = rows[i][j];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i][j] = v;
        self.a[j][i] = v;
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        self.zip(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        self.zip(other, |x, y| x - y)
    }

    pub fn scale(&self, c: f64) -> SymMat {
        let mut m = *self;
        for row in m.a.iter_mut() {
            for v in row.iter_mut() {
                *v *= c;
            }
        }
        m
    }

    fn zip(&self, other: &SymMat, f: impl Fn(f64, f64) -> f64) -> SymMat {
        let mut m = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.a[i][j] = f(self.a[i][j], other.a[i][j]);
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| self.a[i][j] * v[j]).sum();
        }
        out
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let av = self.mul_vec(v);
        (0..self.dim).map(|i| av[i] * v[i]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m = m.max((self.a[i][j] - self.a[j][i]).abs());
            }
        }
        m
    }

    /// Eigenvalues in ascending order (first `dim` entries are meaningful).
    pub fn eigenvalues(&self) -> [f64; 3] {
        let a = &self.a;
        match self.dim {
            1 => [a[0][0], 0.0, 0.0],
            2 => {
                let m = 0.5 * (a[0][0] + a[1][1]);
                let d = (0.25 * (a[0][0] - a[1][1]).powi(2) + a[0][1] * a[0][1]).sqrt();
                [m - d, m + d, 0.0]
            }
            _ => {
                let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
                if p1 == 0.0 {
                    let mut d = [a[0][0], a[1][1], a[2][2]];
                    d.sort_by(f64::total_cmp);
                    return d;
                }
                let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
                let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
                let p = (p2 / 6.0).sqrt();
                let b = self.sub(&SymMat::scaled_identity(3, q)).scale(1.0 / p);
                let r = (b.det() / 2.0).clamp(-1.0, 1.0);
                let phi = r.acos() / 3.0;
                let e1 = q + 2.0 * p * phi.cos();
                let e3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
                [e3, 3.0 * q - e1 - e3, e1]
            }
        }
    }

    pub fn det(&self) -> f64 {
        let a = &self.a;
        match self.dim {
            1 => a[0][0],
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            _ => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues()[self.dim - 1]
    }

    /// Eigenvalues of `L^{-1} self L^{-T}` with `other = L L^T`, i.e. the
    /// generalized eigenvalues of the pencil `(self, other)`.
    pub fn relative_eigenvalues(&self, other: &SymMat) -> Option<[f64; 3]> {
        let n = self.dim;
        let mut l = [[0.0; 3]; 3];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let d = other.a[i][i] - s;
                    if d <= 0.0 {
                        return None;
                    }
                    l[i][i] = d.sqrt();
                } else {
                    l[i][j] = (other.a[i][j] - s) / l[j][j];
                }
            }
        }
        // X = L^{-1} A, then M = X L^{-T}.
        let mut x = [[0.0; 3]; 3];
        for col in 0..n {
            for i in 0..n {
                let s: f64 = (0..i).map(|k| l[i][k] * x[k][col]).sum();
                x[i][col] = (self.a[i][col] - s) / l[i][i];
            }
        }
        let mut m = SymMat::zeros(n);
        for row in 0..n {
            let mut y = [0.0; 3];
            for i in 0..n {
                let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
                y[i] = (x[row][i] - s) / l[i][i];
            }
            for j in 0..n {
                m.a[row][j] = y[j];
            }
        }
        let sym = SymMat::from_rows(&[&m.a[0][..n], &m.a[1][..n], &m.a[2][..n]][..n]);
        Some(sym.eigenvalues())
    }
}

type MatrixRule = dyn Fn(&[f64]) -> SymMat + Send + Sync;
type WeightRule = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Number of quasi-random points used by the constructor spot checks.
pub const SPOT_CHECK_POINTS: usize = 1000;

/// Position-dependent symmetric coefficient matrix with declared ellipticity constants.
#[derive(Clone)]
pub struct MatrixField {
    id: String,
    dim: usize,
    lower: f64,
    upper: f64,
    extent: f64,
    rule: Arc<MatrixRule>,
}

impl fmt::Debug for MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixField")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("ellipticity", &(self.lower, self.upper))
            .finish()
    }
}

impl MatrixField {
    /// Wraps a rule and spot-checks symmetry and the ellipticity sandwich on
    /// [`SPOT_CHECK_POINTS`] Halton points of `[-extent, extent]^n`.
    pub fn new(
        id: impl Into<String>,
        dim: usize,
        ellipticity: (f64, f64),
        extent: f64,
        rule: impl Fn(&[f64]) -> SymMat + Send + Sync + 'static,
    ) -> Result<Self> {
        let id = id.into();
        check_dim(dim)?;
        let (lower, upper) = ellipticity;
        if !(lower > 0.0 && upper >= lower && upper.is_finite()) {
            return Err(Error::Ellipticity { field: id, detail: format!("bad constants ({lower}, {upper})") });
        }
        let field = Self { id, dim, lower, upper, extent, rule: Arc::new(rule) };
        field.spot_check(&halton_points(dim, SPOT_CHECK_POINTS, extent))?;
        Ok(field)
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(SymMat::identity(dim), "identity")
    }

    /// `c I`.
    pub fn scalar(dim: usize, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Degenerate(format!("scalar coefficient {c} must be positive")));
        }
        Ok(Self::constant(SymMat::scaled_identity(dim, c), &format!("scalar{{c={c}}}")))
    }

    /// Constant diagonal matrix.
    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        check_dim(entries.len())?;
        if entries.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Degenerate(format!("diagonal entries {entries:?} must be positive")));
        }
        let list: Vec<String> = entries.iter().map(|e| e.to_string()).collect();
        Ok(Self::constant(SymMat::diagonal(entries), &format!("diag{{a=[{}]}}", list.join(","))))
    }

    fn constant(m: SymMat, id: &str) -> Self {
        let ev = m.eigenvalues();
        let n = m.dim();
        Self {
            id: id.to_string(),
            dim: n,
            lower: ev[0],
            upper: ev[n - 1],
            extent: 1.0,
            rule: Arc::new(move |_| m),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Declared `(c_ell, C_ell)`.
    pub fn ellipticity(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// Half-width of the box sampled by spot checks.
    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn eval(&self, x: &[f64]) -> SymMat {
        (self.rule)(x)
    }

    /// Same rule under a new identifier.
    pub fn renamed(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Checks symmetry (1e-12) and the declared sandwich (1e-7, the accuracy of
    /// closed-form eigenvalues near a double root) at the given points.
    pub fn spot_check(&self, points: &[Vec<f64>]) -> Result<()> {
        let tol = 1e-7 * self.upper.max(1.0);
        for x in points {
            let a = self.eval(x);
            if a.dim() != self.dim {
                return Err(Error::Ellipticity { field: self.id.clone(), detail: "matrix has wrong dimension".into() });
            }
            if a.max_asymmetry() > 1e-12 * a.frobenius().max(1.0) {
                return Err(Error::Ellipticity { field: self.id.clone(), detail: format!("not symmetric at {x:?}") });
            }
            let ev = a.eigenvalues();
            let (lo, hi) = (ev[0], ev[self.dim - 1]);
            if !(lo >= self.lower - tol && hi <= self.upper + tol) {
                return Err(Error::Ellipticity {
                    field: self.id.clone(),
                    detail: format!(
                        "eigenvalues [{lo}, {hi}] at {x:?} outside declared [{}, {}]",
                        self.lower, self.upper
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Positive scalar weight; the unit weight is special-cased for speed and exactness.
#[derive(Clone)]
pub struct WeightField {
    id: String,
    dim: usize,
    rule: Option<Arc<WeightRule>>,
}

impl fmt::Debug for WeightField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightField").field("id", &self.id).field("dim", &self.dim).finish()
    }
}

impl WeightField {
    pub fn unit(dim: usize) -> Self {
        Self { id: "unit".into(), dim, rule: None }
    }

    /// `|x|^alpha`, an A_2 weight for `-n < alpha < n`.
    pub fn power(dim: usize, alpha: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(alpha.abs() < dim as f64) {
            return Err(Error::InvalidArgument(format!(
                "|x|^{alpha} is not an A_2 weight in dimension {dim} (need |alpha| < {dim})"
            )));
        }
        if alpha == 0.0 {
            return Ok(Self::unit(dim));
        }
        Ok(Self {
            id: format!("power{{alpha={alpha}}}"),
            dim,
            rule: Some(Arc::new(move |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().powf(0.5 * alpha))),
        })
    }

    /// Arbitrary weight; positivity is checked on a Halton sample of `[-extent, extent]^n`.
    pub fn from_fn(
        id: impl Into<String>,
        dim: usize,
        extent: f64,
        rule: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_dim(dim)?;
        let w = Self { id: id.into(), dim, rule: Some(Arc::new(rule)) };
        for x in halton_points(dim, SPOT_CHECK_POINTS, extent) {
            w.eval_checked(&x)?;
        }
        Ok(w)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_unit(&self) -> bool {
        self.rule.is_none()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.rule {
            None => 1.0,
            Some(r) => r(x),
        }
    }

    pub fn eval_checked(&self, x: &[f64]) -> Result<f64> {
        let v = self.eval(x);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveWeight { point: x.to_vec(), value: v });
        }
        Ok(v)
    }

    /// Smallest `C` with `C^{-1} w <= other <= C w` over the sample points.
    pub fn comparability(&self, other: &WeightField, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .map(|x| {
                let r = other.eval(x) / self.eval(x);
                r.max(1.0 / r)
            })
            .fold(1.0, f64::max)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidArgument(format!("dimension {dim} not in {{2, 3}}")));
    }
    Ok(())
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Halton points in `[-extent, extent]^n` (bases 2, 3, 5).
pub fn halton_points(dim: usize, count: usize, extent: f64) -> Vec<Vec<f64>> {
    const BASES: [usize; 3] = [2, 3, 5];
    (1..=count)
        .map(|i| (0..dim).map(|d| extent * (2.0 * radical_inverse(i, BASES[d]) - 1.0)).collect())
        .collect()
}

/// Worst generalized-eigenvalue ratio between two fields over sample points:
/// the smallest `C` with `C^{-1} A0 <= A <= C A0` there.
pub fn quasi_isometry_constant(a: &MatrixField, a0: &MatrixField, points: &[Vec<f64>]) -> Result<f64> {
    if a.dim() != a0.dim() {
        return Err(Error::DimensionMismatch { expected: a0.dim(), got: a.dim() });
    }
    let n = a.dim();
    let mut c: f64 = 1.0;
    for x in points {
        let ev = a
            .eval(x)
            .relative_eigenvalues(&a0.eval(x))
            .ok_or_else(|| Error::Degenerate(format!("{} is not positive definite at {x:?}", a0.id())))?;
        c = c.max(ev[n - 1]).max(1.0 / ev[0]);
    }
    Ok(c)
}

fn radial_tangential(x: &[f64], radial: f64, tangential: f64) -> SymMat {
    let n = x.len();
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 == 0.0 {
        return SymMat::identity(n);
    }
    let mut m = SymMat::scaled_identity(n, tangential);
    for i in 0..n {
        for j in 0..n {
            m.a[i][j] += (radial - tangential) * x[i] * x[j] / r2;
        }
    }
    m
}

/// Planar conic matrix with radial eigenvalue 1 and tangential eigenvalue `(1+beta)^2`.
pub fn meyer_conic(beta: f64) -> Result<MatrixField> {
    if !(beta > -1.0) || !beta.is_finite() {
        return Err(Error::Degenerate(format!("conic exponent beta = {beta} must exceed -1")));
    }
    let k = beta * (beta + 2.0);
    let lam = (1.0 + beta).powi(2);
    MatrixField::new(format!("meyer_conic{{beta={beta}}}"), 2, (lam.min(1.0), lam.max(1.0)), 4.0, move |x| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        if r2 == 0.0 {
            return SymMat::identity(2);
        }
        let c = k / r2;
        SymMat::from_rows(&[
            &[1.0 + c * x[1] * x[1], -c * x[0] * x[1]],
            &[-c * x[0] * x[1], 1.0 + c * x[0] * x[0]],
        ])
    })
}

/// `N`-dimensional conic matrix: radial eigenvalue 1, tangential `lambda`.
pub fn conic_nd(lambda: f64, dim: usize) -> Result<MatrixField> {
    check_dim(dim)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Degenerate(format!("tangential eigenvalue lambda = {lambda} must be positive")));
    }
    MatrixField::new(
        format!("conic_nd{{lambda={lambda},N={dim}}}"),
        dim,
        (lambda.min(1.0), lambda.max(1.0)),
        4.0,
        move |x| radial_tangential(x, 1.0, lambda),
    )
}

/// Exponent of the homogeneous solution `|x|^beta x_1` of the `N`-dimensional conic operator.
pub fn beta_from_lambda(lambda: f64, dim: usize) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} must be positive")));
    }
    let n = dim as f64;
    Ok(-0.5 * n + ((0.5 * n - 1.0).powi(2) + lambda * (n - 1.0)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConicVariant {
    Full,
    Partial,
}

/// Exponent beyond which the conic Riesz transform is unbounded.
pub fn critical_p(beta: f64, dim: usize, variant: ConicVariant) -> Result<f64> {
    if !(beta > -1.0 && beta < 0.0) {
        return Err(Error::InvalidArgument(format!("beta = {beta} outside (-1, 0): no blow-up predicted")));
    }
    Ok(match variant {
        ConicVariant::Full => dim as f64 / beta.abs(),
        ConicVariant::Partial => 2.0 / beta.abs(),
    })
}

/// Planar conic block in `(x_1, x_2)`, identity in the remaining coordinates.
pub fn partial_conic(beta: f64, dim: usize) -> Result<MatrixField> {
    if dim != 3 {
        return Err(Error::InvalidArgument(format!("partial conic needs N = 3, got {dim}")));
    }
    if !(beta > -1.0 && beta < 0.0) {
        return Err(Error::InvalidArgument(format!("beta = {beta} outside (-1, 0)")));
    }
    let planar = meyer_conic(beta)?;
    let lam = (1.0 + beta).powi(2);
    MatrixField::new(format!("partial_conic{{beta={beta},N={dim}}}"), dim, (lam, 1.0), 4.0, move |x| {
        let block = planar.eval(&x[..2]);
        let mut m = SymMat::identity(3);
        for i in 0..2 {
            for j in 0..2 {
                m.a[i][j] = block.a[i][j];
            }
        }
        m
    })
}

fn joint_ellipticity(a: &MatrixField, b: &MatrixField) -> (f64, f64) {
    (a.lower.min(b.lower), a.upper.max(b.upper))
}

/// `Apert` on the slab `x_n ∈ [0, 1]`, `A0` elsewhere.
pub fn strip_perturbation(a0: &MatrixField, apert: &MatrixField) -> Result<MatrixField> {
    if a0.dim() != apert.dim() {
        return Err(Error::DimensionMismatch { expected: a0.dim(), got: apert.dim() });
    }
    let n = a0.dim();
    let (base, pert) = (a0.clone(), apert.clone());
    MatrixField::new(
        format!("strip{{a0={},pert={}}}", a0.id(), apert.id()),
        n,
        joint_ellipticity(a0, apert),
        a0.extent.max(4.0),
        move |x| {
            if (0.0..=1.0).contains(&x[n - 1]) {
                pert.eval(x)
            } else {
                base.eval(x)
            }
        },
    )
}

/// `Apert` inside the open ball `B(0, R0)`, `A0` outside.
pub fn compact_perturbation(a0: &MatrixField, apert: &MatrixField, radius: f64) -> Result<MatrixField> {
    if a0.dim() != apert.dim() {
        return Err(Error::DimensionMismatch { expected: a0.dim(), got: apert.dim() });
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("support radius {radius} must be positive")));
    }
    let (base, pert) = (a0.clone(), apert.clone());
    let r2 = radius * radius;
    MatrixField::new(
        format!("compact{{a0={},pert={},R0={radius}}}", a0.id(), apert.id()),
        a0.dim(),
        joint_ellipticity(a0, apert),
        a0.extent.max(2.0 * radius),
        move |x| {
            if x.iter().map(|v| v * v).sum::<f64>() < r2 {
                pert.eval(x)
            } else {
                base.eval(x)
            }
        },
    )
}

/// Lattice spacing of the mollifier quadrature, relative to the scale.
fn mollifier_spacing(dim: usize) -> f64 {
    if dim == 2 {
        1.0 / 8.0
    } else {
        1.0 / 5.0
    }
}

/// Entrywise convolution with the bump `psi ∝ (1 - |z|^2)^4` of radius `scale`.
///
/// The integral is a normalized sum over a lattice fixed in space, with
/// weights `psi((x - y_j) / scale)`. Nodes enter the support with vanishing
/// weight, so the result is C^3 in `x` even when `field` jumps, and it stays
/// a convex combination of values of `field`.
pub fn mollify(field: &MatrixField, scale: f64) -> Result<MatrixField> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("mollifier scale {scale} must be positive")));
    }
    let n = field.dim();
    let step = scale * mollifier_spacing(n);
    let inner = field.clone();
    MatrixField::new(
        format!("mollify{{field={},scale={scale}}}", field.id()),
        n,
        field.ellipticity(),
        field.extent + scale,
        move |x| {
            let mut lo = [0i64; 3];
            let mut hi = [0i64; 3];
            for d in 0..n {
                lo[d] = ((x[d] - scale) / step - 0.5).floor() as i64;
                hi[d] = ((x[d] + scale) / step - 0.5).ceil() as i64;
            }
            let mut acc = SymMat::zeros(n);
            let mut total = 0.0;
            let mut y = [0.0; 3];
            let mut j = lo;
            loop {
                let mut r2 = 0.0;
                for d in 0..n {
                    y[d] = (j[d] as f64 + 0.5) * step;
                    r2 += ((y[d] - x[d]) / scale).powi(2);
                }
                if r2 < 1.0 {
                    let w = (1.0 - r2).powi(4);
                    acc = acc.add(&inner.eval(&y[..n]).scale(w));
                    total += w;
                }
                let mut d = 0;
                while d < n {
                    j[d] += 1;
                    if j[d] <= hi[d] {
                        break;
                    }
                    j[d] = lo[d];
                    d += 1;
                }
                if d == n {
                    break;
                }
            }
            acc.scale(1.0 / total)
        },
    )
}

/// Increasing radii with `r_1 > 1` and `2 r_k^2 < sqrt(r_{k+1}) - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadiiSchedule {
    radii: Vec<f64>,
}

impl RadiiSchedule {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::Schedule("no radii".into()));
        }
        if !(radii[0] > 1.0) {
            return Err(Error::Schedule(format!("r_1 > 1 violated: r_1 = {}", radii[0])));
        }
        for k in 0..radii.len() {
            let r = radii[k];
            if !(r < r * r) {
                return Err(Error::Schedule(format!("r_{0} < r_{0}^2 violated: r_{0} = {r}", k + 1)));
            }
            if k + 1 < radii.len() {
                let inner_next = radii[k + 1].sqrt() - 1.0;
                if !(2.0 * r * r < inner_next) {
                    return Err(Error::Schedule(format!(
                        "2 r_{0}^2 < sqrt(r_{1}) - 1 violated: {2} >= {3}",
                        k + 1,
                        k + 2,
                        2.0 * r * r,
                        inner_next
                    )));
                }
            }
        }
        Ok(Self { radii })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// Annulus `[sqrt(r_k) - 1, 2 r_k^2)` of every radius.
    pub fn annuli(&self) -> Vec<(f64, f64)> {
        self.radii.iter().map(|&r| (r.sqrt() - 1.0, 2.0 * r * r)).collect()
    }
}

/// Tiled field `A(x / r_k)` on annulus `k`, identity elsewhere, then mollified.
pub fn build_tiled(a: &MatrixField, schedule: &RadiiSchedule, mollifier_scale: f64) -> Result<MatrixField> {
    let n = a.dim();
    let annuli = schedule.annuli();
    let radii = schedule.radii().to_vec();
    let base = a.clone();
    let (lo, hi) = a.ellipticity();
    let outer = annuli.last().map(|x| x.1).unwrap_or(1.0);
    let list: Vec<String> = radii.iter().map(|r| r.to_string()).collect();
    let raw = MatrixField::new(
        format!("tiled_raw{{base={},radii=[{}]}}", a.id(), list.join(",")),
        n,
        (lo.min(1.0), hi.max(1.0)),
        outer + 1.0,
        move |x| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (k, &(inner, outer)) in annuli.iter().enumerate() {
                if r >= inner && r < outer {
                    let mut y = [0.0; 3];
                    for d in 0..n {
                        y[d] = x[d] / radii[k];
                    }
                    return base.eval(&y[..n]);
                }
            }
            SymMat::identity(n)
        },
    )?;
    let id = format!("tiled{{base={},radii=[{}],moll={mollifier_scale}}}", a.id(), list.join(","));
    Ok(mollify(&raw, mollifier_scale)?.renamed(id))
}

/// `x -> field(s x)`.
pub fn rescale(field: &MatrixField, s: f64) -> Result<MatrixField> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("rescaling factor {s} must be positive")));
    }
    let n = field.dim();
    let inner = field.clone();
    MatrixField::new(
        format!("rescale{{field={},s={s}}}", field.id()),
        n,
        field.ellipticity(),
        (field.extent / s).max(1e-3),
        move |x| {
            let mut y = [0.0; 3];
            for d in 0..n {
                y[d] = s * x[d];
            }
            inner.eval(&y[..n])
        },
    )
}

/// Lattice spacing of the ball quadrature used by the (GD) checker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GdConfig {
    /// Largest lattice spacing (length units).
    pub spacing: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self { spacing: 0.125 }
    }
}

impl GdConfig {
    fn spacing_for(&self, r: f64, dim: usize) -> f64 {
        let finest = if dim == 2 { r / 512.0 } else { r / 48.0 };
        self.spacing.min(r / 32.0).max(finest)
    }
}

/// Per-radius maxima of the (GD) ball averages and the resulting fit.
#[derive(Clone, Debug, serde::Serialize)]
pub struct GdProfile {
    pub radii: Vec<f64>,
    pub averages: Vec<f64>,
    pub fit: DecayFit,
}

/// `D(r) = max_y ⨍_{B(y,r)} |A - A0|_F w0` and its power-law fit.
pub fn gd_decay(
    a: &MatrixField,
    a0: &MatrixField,
    centers: &[Vec<f64>],
    radii: &[f64],
    w0: &WeightField,
) -> Result<DecayFit> {
    Ok(gd_profile(a, a0, centers, radii, w0, &GdConfig::default())?.fit)
}

pub fn gd_profile(
    a: &MatrixField,
    a0: &MatrixField,
    centers: &[Vec<f64>],
    radii: &[f64],
    w0: &WeightField,
    cfg: &GdConfig,
) -> Result<GdProfile> {
    if a.dim() != a0.dim() || a.dim() != w0.dim() {
        return Err(Error::DimensionMismatch { expected: a0.dim(), got: a.dim() });
    }
    let density = |x: &[f64]| a.eval(x).sub(&a0.eval(x)).frobenius();
    ball_decay_profile(a.dim(), centers, radii, w0, cfg, density)
}

/// Joint and separate (GD) fits for a weighted pair: the joint density is
/// `|A - A0|_F + |w0 - w| / w0`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct JointGdFit {
    pub joint: GdProfile,
    pub matrix: GdProfile,
    pub weight: GdProfile,
}

pub fn gd_decay_joint(
    a: &MatrixField,
    a0: &MatrixField,
    w: &WeightField,
    w0: &WeightField,
    centers: &[Vec<f64>],
    radii: &[f64],
    cfg: &GdConfig,
) -> Result<JointGdFit> {
    let n = a.dim();
    if a0.dim() != n || w.dim() != n || w0.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a0.dim() });
    }
    let wdiff = |x: &[f64]| {
        let b = w0.eval(x);
        (b - w.eval(x)).abs() / b
    };
    let mdiff = |x: &[f64]| a.eval(x).sub(&a0.eval(x)).frobenius();
    Ok(JointGdFit {
        joint: ball_decay_profile(n, centers, radii, w0, cfg, |x| mdiff(x) + wdiff(x))?,
        matrix: ball_decay_profile(n, centers, radii, w0, cfg, mdiff)?,
        weight: ball_decay_profile(n, centers, radii, w0, cfg, wdiff)?,
    })
}

fn ball_decay_profile(
    dim: usize,
    centers: &[Vec<f64>],
    radii: &[f64],
    w0: &WeightField,
    cfg: &GdConfig,
    density: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<GdProfile> {
    if radii.len() < 3 {
        return Err(Error::InvalidArgument("the (GD) fit needs at least three radii".into()));
    }
    if let Some(&r) = radii.iter().find(|&&r| !(r > 1.0)) {
        return Err(Error::ScaleRestricted(r));
    }
    if centers.is_empty() {
        return Err(Error::InvalidArgument("no centres".into()));
    }
    if let Some(c) = centers.iter().find(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: c.len() });
    }
    let mut averages = Vec::with_capacity(radii.len());
    for &r in radii {
        let s = cfg.spacing_for(r, dim);
        let per = (r / s).round().max(1.0) as usize;
        let per_center: Vec<Result<f64>> = centers
            .par_iter()
            .map(|c| {
                let (mut num, mut den) = (0.0, 0.0);
                ball_quadrature(c, r, per, |x| {
                    let w = w0.eval(x);
                    den += w;
                    let d = density(x);
                    if d != 0.0 {
                        num += d * w;
                    }
                });
                if !(den > 0.0) {
                    return Err(Error::ZeroWeight);
                }
                Ok(num / den)
            })
            .collect();
        let mut worst: f64 = 0.0;
        for v in per_center {
            worst = worst.max(v?);
        }
        averages.push(worst);
    }
    let fit = fit_decay_with_zeros(radii, &averages)?;
    Ok(GdProfile { radii: radii.to_vec(), averages, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &SymMat, b: &SymMat, tol: f64) -> bool {
        a.sub(b).frobenius() <= tol
    }

    #[test]
    fn meyer_conic_values() {
        let a = meyer_conic(-0.5).unwrap();
        assert!(close(&a.eval(&[1.0, 0.0]), &SymMat::diagonal(&[1.0, 0.25]), 1e-15));
        assert!(close(&a.eval(&[0.0, 0.0]), &SymMat::identity(2), 0.0));
        let b = meyer_conic(0.0).unwrap();
        assert!(close(&b.eval(&[0.3, -2.0]), &SymMat::identity(2), 1e-15));
        assert!(meyer_conic(-1.0).is_err());
        for x in halton_points(2, 50, 3.0) {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let u = [x[0] / r, x[1] / r];
            assert!((a.eval(&x).quad_form(&u) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conic_nd_matches_meyer() {
        let beta: f64 = -0.5;
        let a = meyer_conic(beta).unwrap();
        let b = conic_nd((1.0 + beta).powi(2), 2).unwrap();
        for x in halton_points(2, 200, 2.0) {
            assert!(close(&a.eval(&x), &b.eval(&x), 1e-12));
        }
        let c = conic_nd(0.3, 3).unwrap();
        assert!(close(&c.eval(&[0.0, 0.0, 1.0]), &SymMat::diagonal(&[0.3, 0.3, 1.0]), 1e-15));
        assert!(conic_nd(0.0, 2).is_err());
    }

    #[test]
    fn beta_lambda_relation() {
        assert!((beta_from_lambda(0.25, 2).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(beta_from_lambda(1.0, 3).unwrap(), 0.0);
        let b = beta_from_lambda(0.5, 3).unwrap();
        assert!((b - (-1.5 + 5f64.sqrt() / 2.0)).abs() < 1e-15);
        assert!(((1.0 + b) * (b + 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn critical_exponents() {
        assert_eq!(critical_p(-0.5, 2, ConicVariant::Full).unwrap(), 4.0);
        assert_eq!(critical_p(-0.5, 3, ConicVariant::Partial).unwrap(), 4.0);
        assert_eq!(critical_p(-0.5, 3, ConicVariant::Full).unwrap(), 6.0);
        assert!(critical_p(0.2, 2, ConicVariant::Full).is_err());
    }

    #[test]
    fn partial_conic_block() {
        let a = partial_conic(-0.5, 3).unwrap();
        assert!(close(&a.eval(&[1.0, 0.0, 0.0]), &SymMat::diagonal(&[1.0, 0.25, 1.0]), 1e-15));
        assert!(close(&a.eval(&[0.0, 0.0, 0.7]), &SymMat::identity(3), 0.0));
    }

    #[test]
    fn three_by_three_eigenvalues() {
        let m = SymMat::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, -0.2], &[0.5, -0.2, 2.0]]);
        let ev = m.eigenvalues();
        let jac = crate::linalg::symmetric_eigenvalues(vec![
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 2.0],
        ]);
        for k in 0..3 {
            assert!((ev[k] - jac[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_eigenvalues_of_scaled_pair() {
        let a = SymMat::from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let ev = a.scale(3.0).relative_eigenvalues(&a).unwrap();
        assert!((ev[0] - 3.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mollifier_preserves_constants() {
        let c = MatrixField::scalar(2, 1.7).unwrap();
        let m = mollify(&c, 0.4).unwrap();
        assert!(close(&m.eval(&[0.2, 0.9]), &SymMat::scaled_identity(2, 1.7), 1e-10));
        let c3 = MatrixField::scalar(3, 0.6).unwrap();
        let m3 = mollify(&c3, 0.4).unwrap();
        assert!(close(&m3.eval(&[0.2, 0.9, 0.0]), &SymMat::scaled_identity(3, 0.6), 1e-10));
    }

    #[test]
    fn schedule_validation() {
        assert!(RadiiSchedule::new(vec![2.0, 100.0]).is_ok());
        let err = RadiiSchedule::new(vec![2.0, 50.0]).unwrap_err().to_string();
        assert!(err.contains("2 r_1^2 < sqrt(r_2) - 1"), "{err}");
        assert!(RadiiSchedule::new(vec![1.0]).is_err());
    }

    #[test]
    fn tiled_is_identity_far_from_annuli() {
        let s = RadiiSchedule::new(vec![2.0, 100.0]).unwrap();
        let b = build_tiled(&meyer_conic(-0.5).unwrap(), &s, 0.1).unwrap();
        // Between annulus 1 (ends at 8) and annulus 2 (starts at 9).
        assert!(close(&b.eval(&[8.5, 0.0]), &SymMat::identity(2), 1e-14));
        assert!(close(&b.eval(&[0.0, 0.1]), &SymMat::identity(2), 1e-14));
    }

    #[test]
    fn gd_requires_large_radii() {
        let i = MatrixField::identity(2);
        let u = WeightField::unit(2);
        assert!(matches!(
            gd_decay(&i, &i, &[vec![0.0, 0.0]], &[1.0, 2.0, 4.0], &u),
            Err(Error::ScaleRestricted(_))
        ));
        let fit = gd_decay(&i, &i, &[vec![0.0, 0.0]], &[2.0, 4.0, 8.0], &u).unwrap();
        assert!(fit.infinite_decay);
    }

    #[test]
    fn power_weight_validation() {
        assert!(WeightField::power(2, 2.0).is_err());
        let w = WeightField::power(2, 1.0).unwrap();
        assert!((w.eval(&[3.0, 4.0]) - 5.0).abs() < 1e-14);
    }
}

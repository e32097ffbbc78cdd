//! Sparse matrices, Krylov solvers and small dense helpers shared by the
//! discretization and the functional calculus.

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_parts(n: usize, row_ptr: Vec<usize>, cols: Vec<u32>, vals: Vec<f64>) -> Self {
        debug_assert_eq!(row_ptr.len(), n + 1);
        debug_assert_eq!(cols.len(), vals.len());
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in a..b {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Same sparsity, values `v_ij * left_i * right_j`.
    pub fn scaled(&self, left: &[f64], right: &[f64]) -> Self {
        let mut vals = self.vals.clone();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                vals[k] *= left[i] * right[self.cols[k] as usize];
            }
        }
        Self { n: self.n, row_ptr: self.row_ptr.clone(), cols: self.cols.clone(), vals }
    }

    /// Largest absolute row sum, an upper bound on the spectral radius.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Principal submatrix on `keep` (given in increasing order).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![u32::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new as u32;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for &old in keep {
            let (c, v) = self.row(old);
            for (&j, &x) in c.iter().zip(v) {
                let nj = map[j as usize];
                if nj != u32::MAX {
                    cols.push(nj);
                    vals.push(x);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n: keep.len(), row_ptr, cols, vals }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                row[j as usize] = x;
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for `(alpha*D + beta*K) x = b`
/// given `apply(x) = K x` and a positive diagonal `D`. Solving in this form
/// lets one stiffness matrix serve every shift.
pub fn pcg<F>(
    apply: F,
    precond_diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveInfo)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveInfo::default()));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(precond_diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: norm2(&r) / bnorm,
                detail: "operator is not positive definite along the search direction".into(),
            });
        }
        let alpha = rz / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        let res = norm2(&r) / bnorm;
        if res <= tol {
            return Ok((x, SolveInfo { iterations: it, relative_residual: res }));
        }
        for ((zi, ri), di) in z.iter_mut().zip(&r).zip(precond_diag) {
            *zi = ri / di;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: norm2(&r) / bnorm,
        detail: "iteration cap reached".into(),
    })
}

/// Multi-shift conjugate gradients: returns `sum_j coeff_j (S + shift_j)^{-1} b`
/// for a symmetric positive definite `S`, using one Krylov space for all shifts.
///
/// Residuals of the shifted systems stay collinear with the base residual
/// (smallest shift), so every shift costs two vector updates per iteration.
/// A shift is retired once its own residual drops below `tol * |b|`.
pub fn multishift_cg<F>(
    apply: F,
    shifts: &[f64],
    coeffs: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveInfo)>
where
    F: Fn(&[f64], &mut [f64]),
{
    assert_eq!(shifts.len(), coeffs.len());
    let n = b.len();
    let mut out = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 || shifts.is_empty() {
        return Ok((out, SolveInfo::default()));
    }
    let base = shifts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let sigma0 = shifts[base];

    struct Shifted {
        rel: f64,
        coeff: f64,
        zeta: f64,
        zeta_prev: f64,
        p: Vec<f64>,
        active: bool,
    }
    let mut sys: Vec<Shifted> = shifts
        .iter()
        .zip(coeffs)
        .map(|(&s, &c)| Shifted {
            rel: s - sigma0,
            coeff: c,
            zeta: 1.0,
            zeta_prev: 1.0,
            p: b.to_vec(),
            active: true,
        })
        .collect();

    let mut r = b.to_vec();
    let mut q = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut alpha_prev = 1.0;
    let mut beta_prev = 0.0;
    let mut iterations = 0;
    let mut res = 1.0;

    while sys.iter().any(|s| s.active) {
        if iterations >= max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: res,
                detail: "multi-shift iteration cap reached".into(),
            });
        }
        iterations += 1;
        let p0 = &sys[base].p;
        apply(p0, &mut q);
        axpy(sigma0, p0, &mut q);
        let pq = dot(p0, &q);
        if !(pq > 0.0) {
            return Err(Error::NoConvergence {
                iterations,
                residual: res,
                detail: "base system is not positive definite".into(),
            });
        }
        let alpha = rr / pq;

        // Coefficients of each shifted recurrence for this step.
        let mut steps = Vec::with_capacity(sys.len());
        for s in sys.iter_mut() {
            if !s.active {
                steps.push((0.0, 0.0));
                continue;
            }
            let denom = alpha * beta_prev * (s.zeta_prev - s.zeta)
                + s.zeta_prev * alpha_prev * (1.0 + s.rel * alpha);
            let zeta_next = if denom != 0.0 { s.zeta * s.zeta_prev * alpha_prev / denom } else { 0.0 };
            let alpha_s = if s.zeta != 0.0 { alpha * zeta_next / s.zeta } else { 0.0 };
            steps.push((alpha_s, zeta_next));
        }
        for (s, &(alpha_s, _)) in sys.iter().zip(&steps) {
            if s.active {
                axpy(s.coeff * alpha_s, &s.p, &mut out);
            }
        }
        axpy(-alpha, &q, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        let rnorm = rr_new.sqrt() / bnorm;
        res = rnorm;
        for (s, &(_, zeta_next)) in sys.iter_mut().zip(&steps) {
            if !s.active {
                continue;
            }
            let ratio = if s.zeta != 0.0 { zeta_next / s.zeta } else { 0.0 };
            let beta_s = beta * ratio * ratio;
            for (pi, ri) in s.p.iter_mut().zip(&r) {
                *pi = zeta_next * ri + beta_s * *pi;
            }
            s.zeta_prev = s.zeta;
            s.zeta = zeta_next;
            if (zeta_next.abs() * rnorm) <= tol {
                s.active = false;
            }
        }
        rr = rr_new;
        alpha_prev = alpha;
        beta_prev = beta;
    }
    Ok((out, SolveInfo { iterations, relative_residual: res }))
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Eigenvalues (ascending) of a small symmetric matrix by cyclic Jacobi.
pub fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a symmetric tridiagonal matrix (ascending) via faer.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let k = diag.len();
    let m = faer::Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            off[i]
        } else if j + 1 == i {
            off[j]
        } else {
            0.0
        }
    });
    let mut ev = m
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .unwrap_or_else(|_| diag.to_vec());
    ev.sort_by(f64::total_cmp);
    ev
}

/// Extremal Ritz values of a symmetric operator after `steps` Lanczos steps
/// (full reorthogonalization; steps are few).
pub fn lanczos_extremes<F>(apply: F, start: &[f64], steps: usize) -> (f64, f64)
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = start.len();
    let steps = steps.min(n).max(1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let nrm = norm2(start);
    let mut v: Vec<f64> = start.iter().map(|x| x / nrm).collect();
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut w = vec![0.0; n];
    for _ in 0..steps {
        apply(&v, &mut w);
        let a = dot(&v, &w);
        alphas.push(a);
        axpy(-a, &v, &mut w);
        if let Some(prev) = basis.last() {
            axpy(-*betas.last().unwrap_or(&0.0), prev, &mut w);
        }
        basis.push(v.clone());
        for b in &basis {
            let c = dot(b, &w);
            axpy(-c, b, &mut w);
        }
        let beta = norm2(&w);
        if beta < 1e-12 * a.abs().max(1.0) || basis.len() == steps {
            break;
        }
        betas.push(beta);
        v = w.iter().map(|x| x / beta).collect();
    }
    let ev = tridiagonal_eigenvalues(&alphas, &betas[..alphas.len() - 1]);
    (ev[0], ev[ev.len() - 1])
}

/// Dense symmetric eigendecomposition `S = U diag(lambda) U^T`.
pub struct DenseEigen {
    pub values: Vec<f64>,
    pub vectors: faer::Mat<f64>,
}

impl DenseEigen {
    pub fn compute(matrix: &CsrMatrix) -> Result<Self> {
        let n = matrix.dim();
        let mut m = faer::Mat::<f64>::zeros(n, n);
        for i in 0..n {
            let (c, v) = matrix.row(i);
            for (&j, &x) in c.iter().zip(v) {
                m[(i, j as usize)] = x;
            }
        }
        let eig = m
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::NoConvergence {
                iterations: 0,
                residual: f64::NAN,
                detail: format!("dense eigensolver failed: {e:?}"),
            })?;
        let s = eig.S();
        let values: Vec<f64> = (0..n).map(|i| s[i]).collect();
        let vectors = eig.U().to_owned();
        Ok(Self { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `U g(Lambda) U^T x`.
    pub fn apply_fn(&self, x: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.dim();
        let u = &self.vectors;
        let mut coef = vec![0.0; n];
        for (k, ck) in coef.iter_mut().enumerate() {
            let col = u.col(k);
            let mut acc = 0.0;
            for i in 0..n {
                acc += col[i] * x[i];
            }
            *ck = acc * g(self.values[k]);
        }
        let mut y = vec![0.0; n];
        for (k, &ck) in coef.iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            let col = u.col(k);
            for i in 0..n {
                y[i] += ck * col[i];
            }
        }
        y
    }
}

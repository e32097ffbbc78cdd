//! Functional calculus of a [`DiscreteOperator`]: resolvents, the heat
//! semigroup, inverse square roots, Riesz transforms and resolvent differences.
//!
//! Every routine takes the dense spectral path when the operator admits the
//! dense oracle and [`SolverConfig::use_dense`] is set, and otherwise runs
//! Krylov solvers on the symmetrized matrix `S = M^{-1/2} K M^{-1/2}`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::discretize::DiscreteOperator;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, VectorGridFunction};
use crate::linalg::{gauss_legendre, multishift_cg, pcg};

/// Tolerances and budgets of the solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative residual target of CG.
    pub cg_tol: f64,
    pub max_iter: usize,
    /// Target relative error of the inverse-square-root quadrature.
    pub quad_target: f64,
    /// Largest Gauss–Legendre order per quadrature panel.
    pub max_panel_points: usize,
    /// Target of the scalar backward-Euler heat model error.
    pub heat_target: f64,
    pub heat_max_steps: usize,
    /// Resolvent identity tolerance on the dense path.
    pub identity_tol_dense: f64,
    /// Resolvent identity tolerance on the CG path.
    pub identity_tol_cg: f64,
    /// Use the dense oracle whenever the operator admits it.
    pub use_dense: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cg_tol: 1e-10,
            max_iter: 50_000,
            quad_target: 1e-6,
            max_panel_points: 16,
            heat_target: 1e-4,
            heat_max_steps: 1 << 14,
            identity_tol_dense: 1e-8,
            identity_tol_cg: 1e-6,
            use_dense: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cg_tol", self.cg_tol),
            ("quad_target", self.quad_target),
            ("heat_target", self.heat_target),
            ("identity_tol_dense", self.identity_tol_dense),
            ("identity_tol_cg", self.identity_tol_cg),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        if self.max_iter == 0 || self.heat_max_steps == 0 || self.max_panel_points == 0 {
            return Err(Error::InvalidArgument("iteration budgets must be positive".into()));
        }
        Ok(())
    }

    fn dense(&self, op: &DiscreteOperator) -> bool {
        self.use_dense && op.has_dense()
    }
}

fn check_same_grid(op: &DiscreteOperator, f: &GridFunction) -> Result<()> {
    if f.grid() != op.grid() {
        return Err(Error::InvalidArgument("grid function lives on a different grid".into()));
    }
    Ok(())
}

/// `(s + t L)^{-1} f`.
pub fn resolvent(op: &DiscreteOperator, s: f64, t: f64, f: &GridFunction, cfg: &SolverConfig) -> Result<GridFunction> {
    check_same_grid(op, f)?;
    if !(s > 0.0) || !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("resolvent needs s > 0, t >= 0 (got s = {s}, t = {t})")));
    }
    if t == 0.0 {
        return Ok(f.scale(1.0 / s));
    }
    let out = if cfg.dense(op) {
        op.dense_apply(f.values(), |l| 1.0 / (s + t * l))?
    } else {
        resolvent_cg(op, s, t, f.values(), cfg)?
    };
    Ok(GridFunction::from_raw(*op.grid(), out))
}

/// Solves `(s M + t K) x = M f` by Jacobi-preconditioned CG.
fn resolvent_cg(op: &DiscreteOperator, s: f64, t: f64, f: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
    let mass = op.node_mass();
    let k = op.stiffness();
    let diag: Vec<f64> = k.diagonal().iter().zip(mass).map(|(d, m)| s * m + t * d).collect();
    let rhs: Vec<f64> = f.iter().zip(mass).map(|(a, m)| a * m).collect();
    let (x, info) = pcg(
        |x, y| {
            k.matvec_into(x, y);
            for ((yi, xi), m) in y.iter_mut().zip(x).zip(mass) {
                *yi = t * *yi + s * m * xi;
            }
        },
        &diag,
        &rhs,
        cfg.cg_tol,
        cfg.max_iter,
    )?;
    op.record_iterations(info.iterations);
    Ok(x)
}

/// `e^{-tL} f`.
pub fn heat(op: &DiscreteOperator, t: f64, f: &GridFunction, cfg: &SolverConfig) -> Result<GridFunction> {
    check_same_grid(op, f)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("heat time {t} must be non-negative")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    if cfg.dense(op) {
        let out = op.dense_apply(f.values(), |l| (-t * l).exp())?;
        return Ok(GridFunction::from_raw(*op.grid(), out));
    }
    let b = op.bounds();
    let steps = backward_euler_steps(t, b.lower, b.upper, cfg.heat_target, cfg.heat_max_steps)?;
    let dt = t / steps as f64;
    let mut u = f.values().to_vec();
    for _ in 0..steps {
        u = resolvent_cg(op, 1.0, dt, &u, cfg)?;
    }
    Ok(GridFunction::from_raw(*op.grid(), u))
}

/// Smallest power of two `m` with `sup |(1 + tλ/m)^{-m} - e^{-tλ}| <= target` on `[lo, hi]`.
pub fn backward_euler_steps(t: f64, lo: f64, hi: f64, target: f64, cap: usize) -> Result<usize> {
    let grid = log_grid(lo, hi, 2000);
    let mut m = 1usize;
    loop {
        let err = grid
            .iter()
            .map(|&l| ((1.0 + t * l / m as f64).powf(-(m as f64)) - (-t * l).exp()).abs())
            .fold(0.0, f64::max);
        if err <= target {
            return Ok(m);
        }
        if m >= cap {
            return Err(Error::NoConvergence {
                iterations: m,
                residual: err,
                detail: format!("backward Euler needs more than {cap} substeps for target {target:e}"),
            });
        }
        m *= 2;
    }
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Quadrature `λ^{-1/2} ≈ Σ c_j / (1 + s_j^2 λ)` of `(2/π) ∫_0^∞ ds / (1 + s^2 λ)`,
/// certified on a spectral interval.
#[derive(Clone, Debug, PartialEq)]
pub struct InvSqrtRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Largest relative error over the certification grid.
    pub certified_error: f64,
    pub interval: (f64, f64),
}

impl InvSqrtRule {
    /// Head `[0, a]`, panels of ratio 4 in `log s` on `[a, b]` and a tail
    /// integrated in `σ = 1/s`, with `a = 0.1/√hi`, `b = 10/√lo`. The order
    /// per panel grows until the relative error on 2000 log-spaced points of
    /// `[lo, hi]` is at most `target / 2`.
    pub fn certified(lo: f64, hi: f64, target: f64, max_points: usize) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("spectral interval [{lo}, {hi}] is not positive")));
        }
        let hi = hi.max(lo * (1.0 + 1e-12));
        let check = log_grid(lo, hi, 2000);
        let mut err = f64::INFINITY;
        for q in 2..=max_points.max(2) {
            let rule = Self::build(lo, hi, q);
            err = check.iter().map(|&l| (rule.eval(l) * l.sqrt() - 1.0).abs()).fold(0.0, f64::max);
            if err <= 0.5 * target {
                return Ok(Self { certified_error: err, ..rule });
            }
        }
        Err(Error::NoConvergence {
            iterations: max_points,
            residual: err,
            detail: format!("inverse square-root quadrature cannot reach {target:e} on [{lo:e}, {hi:e}]"),
        })
    }

    fn build(lo: f64, hi: f64, q: usize) -> Self {
        let (x, w) = gauss_legendre(q);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let a = 0.1 / hi.sqrt();
        let b = 10.0 / lo.sqrt();
        let c = 2.0 / PI;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(0.5 * a * (xi + 1.0));
            weights.push(c * 0.5 * a * wi);
        }
        let (ua, ub) = (a.ln(), b.ln());
        let panels = ((ub - ua) / 4f64.ln()).ceil().max(1.0) as usize;
        let width = (ub - ua) / panels as f64;
        for p in 0..panels {
            let u0 = ua + p as f64 * width;
            for (xi, wi) in x.iter().zip(&w) {
                let s = (u0 + 0.5 * width * (xi + 1.0)).exp();
                nodes.push(s);
                weights.push(c * 0.5 * width * wi * s);
            }
        }
        let top = 1.0 / b;
        for (xi, wi) in x.iter().zip(&w) {
            let sigma = 0.5 * top * (xi + 1.0);
            nodes.push(1.0 / sigma);
            weights.push(c * 0.5 * top * wi / (sigma * sigma));
        }
        Self { nodes, weights, certified_error: f64::NAN, interval: (lo, hi) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scalar model of the quadrature at `λ`.
    pub fn eval(&self, lambda: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(s, c)| c / (1.0 + s * s * lambda))
            .sum()
    }
}

/// `(shift + L)^{-1/2} f`.
pub fn inv_sqrt(op: &DiscreteOperator, f: &GridFunction, shift: f64, cfg: &SolverConfig) -> Result<GridFunction> {
    check_same_grid(op, f)?;
    let out = inv_sqrt_raw(op, f.values(), shift, cfg)?;
    Ok(GridFunction::from_raw(*op.grid(), out))
}

pub(crate) fn inv_sqrt_raw(op: &DiscreteOperator, f: &[f64], shift: f64, cfg: &SolverConfig) -> Result<Vec<f64>> {
    if !(shift >= 0.0) {
        return Err(Error::InvalidArgument(format!("shift {shift} must be non-negative")));
    }
    if cfg.dense(op) {
        return op.dense_apply(f, |l| 1.0 / (l + shift).sqrt());
    }
    let b = op.bounds();
    if !(b.lower + shift > 0.0) {
        return Err(Error::InvalidArgument("spectral lower bound unavailable".into()));
    }
    let rule = InvSqrtRule::certified(b.lower + shift, b.upper + shift, cfg.quad_target, cfg.max_panel_points)?;
    inv_sqrt_with_rule(op, f, shift, &rule, cfg)
}

/// Applies a given quadrature through multi-shift CG on `S`.
pub fn inv_sqrt_with_rule(
    op: &DiscreteOperator,
    f: &[f64],
    shift: f64,
    rule: &InvSqrtRule,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let sq = op.sqrt_mass();
    let rhs: Vec<f64> = f.iter().zip(sq).map(|(a, s)| a * s).collect();
    // (1 + s^2 (shift + S))^{-1} = s^{-2} (s^{-2} + shift + S)^{-1}
    let shifts: Vec<f64> = rule.nodes.iter().map(|s| 1.0 / (s * s) + shift).collect();
    let coeffs: Vec<f64> = rule.nodes.iter().zip(&rule.weights).map(|(s, c)| c / (s * s)).collect();
    let sym = op.symmetric();
    let (mut y, info) = multishift_cg(|x, out| sym.matvec_into(x, out), &shifts, &coeffs, &rhs, cfg.cg_tol, cfg.max_iter)?;
    op.record_iterations(info.iterations);
    for (yi, s) in y.iter_mut().zip(sq) {
        *yi /= s;
    }
    Ok(y)
}

/// `∇ L^{-1/2} f`.
pub fn riesz(op: &DiscreteOperator, f: &GridFunction, cfg: &SolverConfig) -> Result<VectorGridFunction> {
    Ok(op.gradient(&inv_sqrt(op, f, 0.0, cfg)?))
}

/// `∇ (1 + L)^{-1/2} f`.
pub fn local_riesz(op: &DiscreteOperator, f: &GridFunction, cfg: &SolverConfig) -> Result<VectorGridFunction> {
    Ok(op.gradient(&inv_sqrt(op, f, 1.0, cfg)?))
}

/// `w`-adjoint of `∇ (shift + L)^{-1/2}`: `(shift + L)^{-1/2} (-div_w V)`.
pub fn riesz_adjoint(op: &DiscreteOperator, v: &VectorGridFunction, shift: f64, cfg: &SolverConfig) -> Result<GridFunction> {
    let d = op.divergence_w(v).scale(-1.0);
    inv_sqrt(op, &d, shift, cfg)
}

/// Both evaluations of `[(1+tL_0)^{-1} - (1+tL)^{-1}] f` and their agreement.
#[derive(Clone, Debug)]
pub struct ResolventDifference {
    pub factored: GridFunction,
    pub direct: GridFunction,
    /// `|direct - factored| / (|(1+tL_0)^{-1} f| + |(1+tL)^{-1} f|)` in `L^2(w)`.
    pub residual: f64,
}

/// `[(1+tL_0)^{-1} - (1+tL)^{-1}] f` computed directly and through
/// `t (1+tL)^{-1} (L - L_0) (1+tL_0)^{-1} f`.
pub fn resolvent_difference(
    op_l: &DiscreteOperator,
    op_l0: &DiscreteOperator,
    t: f64,
    f: &GridFunction,
    cfg: &SolverConfig,
) -> Result<ResolventDifference> {
    if op_l.grid() != op_l0.grid() {
        return Err(Error::InvalidArgument("operators live on different grids".into()));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t = {t} must be positive")));
    }
    let u0 = resolvent(op_l0, 1.0, t, f, cfg)?;
    let u = resolvent(op_l, 1.0, t, f, cfg)?;
    let direct = u0.combine(1.0, &u, -1.0);
    let lu0 = op_l.apply(&u0);
    let l0u0 = op_l0.apply(&u0);
    let g = lu0.combine(t, &l0u0, -t);
    let factored = resolvent(op_l, 1.0, t, &g, cfg)?;
    let m = op_l.measure();
    let diff = direct.combine(1.0, &factored, -1.0);
    let scale = m.inner(u0.values(), u0.values()).sqrt() + m.inner(u.values(), u.values()).sqrt();
    let err = m.inner(diff.values(), diff.values()).sqrt();
    let residual = if scale > 0.0 { err / scale } else { err };
    Ok(ResolventDifference { factored, direct, residual })
}

fn identity_tolerance(op: &DiscreteOperator, cfg: &SolverConfig) -> f64 {
    if cfg.dense(op) {
        cfg.identity_tol_dense
    } else {
        cfg.identity_tol_cg
    }
}

/// `∇[(1+tL_0)^{-1} - (1+tL)^{-1}] f`, after checking that the direct and
/// factored evaluations agree.
pub fn resolvent_diff_grad(
    op_l: &DiscreteOperator,
    op_l0: &DiscreteOperator,
    t: f64,
    f: &GridFunction,
    cfg: &SolverConfig,
) -> Result<VectorGridFunction> {
    let d = resolvent_difference(op_l, op_l0, t, f, cfg)?;
    let tol = identity_tolerance(op_l, cfg).max(identity_tolerance(op_l0, cfg));
    if d.residual > tol {
        return Err(Error::IdentityResidual { residual: d.residual, tolerance: tol });
    }
    Ok(op_l.gradient(&d.factored))
}

/// `R^*` in `L^2(w)` of the resolvent `R = (1 + tL')^{-1}` of an operator whose
/// own measure may differ: `M^{-1} M' R M'^{-1} M`.
fn resolvent_adjoint_in(
    op: &DiscreteOperator,
    own: &DiscreteOperator,
    t: f64,
    f: &GridFunction,
    cfg: &SolverConfig,
) -> Result<GridFunction> {
    if op.node_mass() == own.node_mass() {
        return resolvent(own, 1.0, t, f, cfg);
    }
    let (m, m1) = (op.node_mass(), own.node_mass());
    let pre: Vec<f64> = f.values().iter().zip(m).zip(m1).map(|((v, a), b)| v * a / b).collect();
    let r = resolvent(own, 1.0, t, &GridFunction::from_raw(*op.grid(), pre), cfg)?;
    let post = r.values().iter().zip(m).zip(m1).map(|((v, a), b)| v * b / a).collect();
    Ok(GridFunction::from_raw(*op.grid(), post))
}

/// `L^2(w)`-adjoint of `f ↦ ∇[(1+tL_0)^{-1} - (1+tL)^{-1}] f`, where `w` is
/// the weight of `op_l`.
pub fn resolvent_diff_grad_adjoint(
    op_l: &DiscreteOperator,
    op_l0: &DiscreteOperator,
    t: f64,
    v: &VectorGridFunction,
    cfg: &SolverConfig,
) -> Result<GridFunction> {
    let g = op_l.divergence_w(v).scale(-1.0);
    let a = resolvent_adjoint_in(op_l, op_l0, t, &g, cfg)?;
    let b = resolvent(op_l, 1.0, t, &g, cfg)?;
    Ok(a.combine(1.0, &b, -1.0))
}

/// The two pieces of `(L_0 - L) f` from the weighted splitting:
/// `(1/w) div[((w - w_0) A - w_0 (A_0 - A)) ∇f]` and
/// `-((w - w_0)/(w_0 w)) div(w_0 A_0 ∇f)`.
pub fn split_difference(
    op_l: &DiscreteOperator,
    op_l0: &DiscreteOperator,
    f: &GridFunction,
) -> Result<(GridFunction, GridFunction)> {
    if op_l.grid() != op_l0.grid() {
        return Err(Error::InvalidArgument("operators live on different grids".into()));
    }
    check_same_grid(op_l, f)?;
    let grid = *op_l.grid();
    let n = grid.dim();
    let k = grid.corners_per_cell();
    let grad = op_l.gradient(f);
    let (w, w0) = (op_l.measure().cell_weight(), op_l0.measure().cell_weight());
    let (a, a0) = (op_l.cell_coefficients(), op_l0.cell_coefficients());
    let mut flux = vec![0.0; grad.values().len()];
    for c in 0..grid.cell_count() {
        let b = a[c].scale(w[c] - w0[c]).sub(&a0[c].sub(&a[c]).scale(w0[c]));
        for corner in 0..k {
            let idx = (c * k + corner) * n;
            let bv = b.mul_vec(&grad.values()[idx..idx + n]);
            flux[idx..idx + n].copy_from_slice(&bv[..n]);
        }
    }
    let volumes = vec![grid.cell_volume() / k as f64; grid.subcell_count()];
    let gt = crate::discretize::gradient_transpose_raw(&grid, &flux, &volumes);
    let mass = op_l.node_mass();
    let mass0 = op_l0.node_mass();
    let first: Vec<f64> = gt.iter().zip(mass).map(|(v, m)| -v / m).collect();
    let l0f = op_l0.apply(f);
    let second: Vec<f64> = l0f
        .values()
        .iter()
        .zip(mass)
        .zip(mass0)
        .map(|((v, m), m0)| if m == m0 { 0.0 } else { (m - m0) / m * v })
        .collect();
    Ok((GridFunction::from_raw(grid, first), GridFunction::from_raw(grid, second)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_rule_is_certified() {
        let rule = InvSqrtRule::certified(0.5, 2e4, 1e-6, 16).unwrap();
        assert!(rule.certified_error <= 5e-7);
        assert!((rule.eval(1.0) - 1.0).abs() < 1e-6);
        assert!((rule.eval(100.0) * 10.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_euler_step_count_meets_target() {
        let m = backward_euler_steps(1.0, 0.1, 1e3, 1e-3, 1 << 16).unwrap();
        assert!(m >= 64 && m.is_power_of_two());
        assert!(backward_euler_steps(1.0, 0.1, 1e3, 1e-9, 8).is_err());
    }
}

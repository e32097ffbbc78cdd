//! Experimental instruments: `L^p` operator-norm estimation, reverse Hölder
//! ratios, heat-kernel bound fitting, decay regression and the lemma suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{MatrixField, WeightField};
use crate::discretize::DiscreteOperator;
use crate::error::{Error, Result};
use crate::fit::{fit_decay_with_zeros, fit_power_law, DecayFit};
use crate::funcalc::{
    heat, inv_sqrt, resolvent, resolvent_diff_grad, resolvent_diff_grad_adjoint, riesz_adjoint, SolverConfig,
};
use crate::grid::{ball_volume, check_exponent, dist2, weighted_lp, Grid, GridFunction, VectorGridFunction};
use crate::linalg::pcg;

/// A linear map between weighted sequence spaces, with its adjoint for the
/// pairings `Σ μ_i x_i y_i` (input) and `Σ ω_b <u_b, v_b>` (output blocks).
pub trait LinearMap: Sync {
    fn input_measure(&self) -> &[f64];
    fn output_measure(&self) -> &[f64];
    /// Components per output block; norms use the Euclidean length of a block.
    fn output_block(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>>;
    /// Deterministic starting vectors tried before the random ones.
    fn structured_starts(&self) -> Vec<Vec<f64>> {
        Vec::new()
    }
}

/// Budget of the duality power iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormConfig {
    pub random_starts: usize,
    /// Iterations given to every start before the best one is continued.
    pub warmup_iters: usize,
    /// Iteration cap of the continued start.
    pub max_iters: usize,
    /// Stop once an iteration improves the estimate by less than this fraction.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self { random_starts: 8, warmup_iters: 2, max_iters: 30, rel_tol: 1e-3, seed: 0x5eed }
    }
}

/// Certified lower bound of `||T||_{p→p}`.
#[derive(Clone, Debug, Serialize)]
pub struct NormEstimate {
    pub p: f64,
    pub estimate: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub witness: Vec<f64>,
    /// Number of starting vectors tried.
    pub restarts: usize,
    /// `||T x||_p / ||x||_p` of the witness from one fresh application.
    pub verified: f64,
}

struct Run {
    x: Vec<f64>,
    value: f64,
    best_x: Vec<f64>,
    best: f64,
    iterations: usize,
    done: bool,
}

fn block_norms(y: &[f64], block: usize) -> Vec<f64> {
    if block == 1 {
        return y.iter().map(|v| v.abs()).collect();
    }
    y.chunks_exact(block).map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

fn output_norm(t: &dyn LinearMap, y: &[f64], p: f64) -> Result<f64> {
    weighted_lp(&block_norms(y, t.output_block()), t.output_measure(), p)
}

fn normalize_input(t: &dyn LinearMap, x: &mut [f64], p: f64) -> Result<bool> {
    let nrm = weighted_lp(x, t.input_measure(), p)?;
    if !(nrm > 0.0 && nrm.is_finite()) {
        return Ok(false);
    }
    for v in x.iter_mut() {
        *v /= nrm;
    }
    Ok(true)
}

/// One duality step from a normalized `x` with value `||T x||`: returns the
/// next normalized iterate.
fn duality_step(t: &dyn LinearMap, y: &[f64], gamma: f64, p: f64) -> Result<Vec<f64>> {
    let block = t.output_block();
    let mags = block_norms(y, block);
    let mut dual = vec![0.0; y.len()];
    for (b, &m) in mags.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let scale = (m / gamma).powf(p - 2.0) / gamma;
        for k in 0..block {
            dual[b * block + k] = y[b * block + k] * scale;
        }
    }
    let z = t.apply_adjoint(&dual)?;
    let q = p / (p - 1.0);
    let zmax = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if zmax == 0.0 {
        return Ok(z);
    }
    let mut x: Vec<f64> = z.iter().map(|v| v.signum() * (v.abs() / zmax).powf(q - 1.0)).collect();
    if !normalize_input(t, &mut x, p)? {
        return Err(Error::NonFinite("duality iterate".into()));
    }
    Ok(x)
}

fn advance(t: &dyn LinearMap, run: &mut Run, p: f64, rel_tol: f64) -> Result<()> {
    if run.done {
        return Ok(());
    }
    let y = t.apply(&run.x)?;
    let gamma = output_norm(t, &y, p)?;
    if !gamma.is_finite() {
        return Err(Error::NonFinite("operator image".into()));
    }
    run.iterations += 1;
    let improved = gamma > run.best;
    let gain = if run.best > 0.0 { gamma / run.best - 1.0 } else { f64::INFINITY };
    if improved {
        run.best = gamma;
        run.best_x = run.x.clone();
    }
    run.value = gamma;
    if gamma == 0.0 || (run.iterations > 1 && gain < rel_tol) {
        run.done = true;
        return Ok(());
    }
    run.x = duality_step(t, &y, gamma, p)?;
    Ok(())
}

/// Duality-map power iteration for `||T||_{p→p}` from the structured starts
/// and `cfg.random_starts` random ones; the best start after the warm-up is
/// continued to convergence.
pub fn pnorm_estimate(t: &dyn LinearMap, p: f64, cfg: &NormConfig) -> Result<NormEstimate> {
    check_exponent(p)?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidExponent(p));
    }
    let n = t.input_measure().len();
    let mut starts = t.structured_starts();
    for k in 0..cfg.random_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        starts.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    let mut runs: Vec<Run> = starts
        .into_par_iter()
        .map(|mut x| -> Result<Option<Run>> {
            if x.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: x.len() });
            }
            if !normalize_input(t, &mut x, p)? {
                return Ok(None);
            }
            let mut run = Run { best_x: x.clone(), x, value: 0.0, best: 0.0, iterations: 0, done: false };
            for _ in 0..cfg.warmup_iters.max(1) {
                advance(t, &mut run, p, cfg.rel_tol)?;
            }
            Ok(Some(run))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no usable starting vector".into()));
    }
    let restarts = runs.len();
    let mut iterations: usize = runs.iter().map(|r| r.iterations).sum();
    let best_idx = runs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.best.total_cmp(&b.1.best))
        .map(|(i, _)| i)
        .unwrap();
    let run = &mut runs[best_idx];
    let before = run.iterations;
    while !run.done && run.iterations < cfg.max_iters {
        advance(t, run, p, cfg.rel_tol)?;
    }
    iterations += run.iterations - before;
    let witness = run.best_x.clone();
    let y = t.apply(&witness)?;
    let verified = output_norm(t, &y, p)? / weighted_lp(&witness, t.input_measure(), p)?;
    Ok(NormEstimate { p, estimate: verified.max(0.0), iterations: iterations + 1, witness, restarts, verified })
}

/// Dense matrix on unit-weight sequence spaces.
pub struct DenseMap {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    in_measure: Vec<f64>,
    out_measure: Vec<f64>,
}

impl DenseMap {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data, in_measure: vec![1.0; cols], out_measure: vec![1.0; rows] }
    }
}

impl LinearMap for DenseMap {
    fn input_measure(&self) -> &[f64] {
        &self.in_measure
    }
    fn output_measure(&self) -> &[f64] {
        &self.out_measure
    }
    fn output_block(&self) -> usize {
        1
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.data[i * self.cols + j] * x[j]).sum())
            .collect())
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.data[i * self.cols + j] * y[i]).sum())
            .collect())
    }
}

/// Bumps at the origin used as structured starts: an even bump and its
/// products with each coordinate of `axes`. The bump depends on the
/// coordinates in `axes` only, so a singular line gets a tube-shaped start.
pub fn singular_starts(grid: &Grid, radius: f64, axes: &[usize]) -> Vec<Vec<f64>> {
    let n = grid.dim();
    let others: Vec<usize> = (0..n).filter(|d| !axes.contains(d)).collect();
    let l = grid.half_width();
    let bump = |x: &[f64]| {
        let r2: f64 = axes.iter().map(|&d| x[d] * x[d]).sum::<f64>() / (radius * radius);
        let along: f64 = others.iter().map(|&d| (1.0 - (x[d] / l).powi(2)).max(0.0)).product();
        (1.0 - r2).max(0.0).powi(2) * along
    };
    let mut out = vec![GridFunction::from_fn(*grid, bump).into_values()];
    for &d in axes {
        out.push(GridFunction::from_fn(*grid, |x| x[d] * bump(x)).into_values());
    }
    out
}

/// `∇ (shift + L)^{-1/2}` as a [`LinearMap`].
pub struct RieszMap<'a> {
    pub op: &'a DiscreteOperator,
    pub shift: f64,
    pub solver: SolverConfig,
    pub starts: Vec<Vec<f64>>,
    out_measure: Vec<f64>,
}

impl<'a> RieszMap<'a> {
    pub fn new(op: &'a DiscreteOperator, shift: f64, solver: SolverConfig, starts: Vec<Vec<f64>>) -> Self {
        let out_measure = op.measure().subcell_masses();
        Self { op, shift, solver, starts, out_measure }
    }
}

impl LinearMap for RieszMap<'_> {
    fn input_measure(&self) -> &[f64] {
        self.op.node_mass()
    }
    fn output_measure(&self) -> &[f64] {
        &self.out_measure
    }
    fn output_block(&self) -> usize {
        self.op.grid().dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = GridFunction::from_raw(*self.op.grid(), x.to_vec());
        let u = inv_sqrt(self.op, &f, self.shift, &self.solver)?;
        Ok(self.op.gradient(&u).into_values())
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let v = VectorGridFunction::from_raw(*self.op.grid(), y.to_vec());
        Ok(riesz_adjoint(self.op, &v, self.shift, &self.solver)?.into_values())
    }
    fn structured_starts(&self) -> Vec<Vec<f64>> {
        self.starts.clone()
    }
}

/// `(s + tL)^{-1}` or `(s + tL)^{-1/2}` on scalars.
pub struct ResolventMap<'a> {
    pub op: &'a DiscreteOperator,
    pub s: f64,
    pub t: f64,
    pub half_power: bool,
    pub solver: SolverConfig,
    pub starts: Vec<Vec<f64>>,
}

impl ResolventMap<'_> {
    fn run(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = GridFunction::from_raw(*self.op.grid(), x.to_vec());
        let out = if self.half_power {
            // (s + tL)^{-1/2} = t^{-1/2} (s/t + L)^{-1/2}
            inv_sqrt(self.op, &f, self.s / self.t, &self.solver)?.scale(1.0 / self.t.sqrt())
        } else {
            resolvent(self.op, self.s, self.t, &f, &self.solver)?
        };
        Ok(out.into_values())
    }
}

impl LinearMap for ResolventMap<'_> {
    fn input_measure(&self) -> &[f64] {
        self.op.node_mass()
    }
    fn output_measure(&self) -> &[f64] {
        self.op.node_mass()
    }
    fn output_block(&self) -> usize {
        1
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.run(x)
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.run(y)
    }
    fn structured_starts(&self) -> Vec<Vec<f64>> {
        self.starts.clone()
    }
}

/// `∇ (1 + tL)^{-1}` or `∇ (1 + tL)^{-1/2}`.
pub struct GradResolventMap<'a> {
    pub op: &'a DiscreteOperator,
    pub t: f64,
    pub half_power: bool,
    pub solver: SolverConfig,
    pub starts: Vec<Vec<f64>>,
    out_measure: Vec<f64>,
}

impl<'a> GradResolventMap<'a> {
    pub fn new(op: &'a DiscreteOperator, t: f64, half_power: bool, solver: SolverConfig, starts: Vec<Vec<f64>>) -> Self {
        let out_measure = op.measure().subcell_masses();
        Self { op, t, half_power, solver, starts, out_measure }
    }

    fn smooth(&self, f: &GridFunction) -> Result<GridFunction> {
        if self.half_power {
            Ok(inv_sqrt(self.op, f, 1.0 / self.t, &self.solver)?.scale(1.0 / self.t.sqrt()))
        } else {
            resolvent(self.op, 1.0, self.t, f, &self.solver)
        }
    }
}

impl LinearMap for GradResolventMap<'_> {
    fn input_measure(&self) -> &[f64] {
        self.op.node_mass()
    }
    fn output_measure(&self) -> &[f64] {
        &self.out_measure
    }
    fn output_block(&self) -> usize {
        self.op.grid().dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = GridFunction::from_raw(*self.op.grid(), x.to_vec());
        Ok(self.op.gradient(&self.smooth(&f)?).into_values())
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let v = VectorGridFunction::from_raw(*self.op.grid(), y.to_vec());
        let d = self.op.divergence_w(&v).scale(-1.0);
        Ok(self.smooth(&d)?.into_values())
    }
    fn structured_starts(&self) -> Vec<Vec<f64>> {
        self.starts.clone()
    }
}

/// `f ↦ ∇[(1+tL_0)^{-1} - (1+tL)^{-1}] f`.
pub struct ResolventDiffMap<'a> {
    pub op: &'a DiscreteOperator,
    pub op0: &'a DiscreteOperator,
    pub t: f64,
    pub solver: SolverConfig,
    pub starts: Vec<Vec<f64>>,
    out_measure: Vec<f64>,
}

impl<'a> ResolventDiffMap<'a> {
    pub fn new(
        op: &'a DiscreteOperator,
        op0: &'a DiscreteOperator,
        t: f64,
        solver: SolverConfig,
        starts: Vec<Vec<f64>>,
    ) -> Self {
        let out_measure = op.measure().subcell_masses();
        Self { op, op0, t, solver, starts, out_measure }
    }
}

impl LinearMap for ResolventDiffMap<'_> {
    fn input_measure(&self) -> &[f64] {
        self.op.node_mass()
    }
    fn output_measure(&self) -> &[f64] {
        &self.out_measure
    }
    fn output_block(&self) -> usize {
        self.op.grid().dim()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = GridFunction::from_raw(*self.op.grid(), x.to_vec());
        Ok(resolvent_diff_grad(self.op, self.op0, self.t, &f, &self.solver)?.into_values())
    }
    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let v = VectorGridFunction::from_raw(*self.op.grid(), y.to_vec());
        Ok(resolvent_diff_grad_adjoint(self.op, self.op0, self.t, &v, &self.solver)?.into_values())
    }
    fn structured_starts(&self) -> Vec<Vec<f64>> {
        self.starts.clone()
    }
}

/// Abscissa of a mesh family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshAxis {
    /// `h` decreases at fixed `L`; fit against `1/h`.
    InverseSpacing,
    /// `L` increases at fixed `h`; fit against `L`.
    HalfWidth,
}

/// One mesh of a Riesz norm curve.
#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    pub half_width: f64,
    pub spacing: f64,
    pub unknowns: usize,
    pub norm: NormEstimate,
    pub solver_iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct NormCurve {
    pub axis: MeshAxis,
    pub points: Vec<CurvePoint>,
    /// Power law in the mesh abscissa; [`DecayFit::growth`] is the growth exponent.
    pub fit: DecayFit,
}

impl NormCurve {
    /// Last over first estimated norm.
    pub fn last_first_ratio(&self) -> f64 {
        let first = self.points.first().map(|p| p.norm.estimate).unwrap_or(f64::NAN);
        let last = self.points.last().map(|p| p.norm.estimate).unwrap_or(f64::NAN);
        last / first
    }
}

/// Controls of [`riesz_norm_curve`].
#[derive(Clone, Debug)]
pub struct CurveConfig {
    pub solver: SolverConfig,
    pub norm: NormConfig,
    /// Radius of the structured bumps at the singular set.
    pub bump_radius: f64,
    /// Coordinates transverse to the singular set.
    pub singular_axes: Vec<usize>,
    /// Shift of `(shift + L)^{-1/2}`; zero for the Riesz transform.
    pub shift: f64,
    /// Seed later meshes with the previous witness.
    pub warm_start: bool,
}

impl CurveConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            solver: SolverConfig { cg_tol: 1e-7, ..SolverConfig::default() },
            norm: NormConfig::default(),
            bump_radius: 0.25,
            singular_axes: (0..dim).collect(),
            shift: 0.0,
            warm_start: true,
        }
    }
}

fn mesh_axis(meshes: &[(f64, f64)]) -> Result<MeshAxis> {
    if meshes.len() < 3 {
        return Err(Error::InvalidArgument("a norm curve needs at least three meshes".into()));
    }
    let same_l = meshes.windows(2).all(|w| w[0].0 == w[1].0);
    let same_h = meshes.windows(2).all(|w| w[0].1 == w[1].1);
    if same_l && meshes.windows(2).all(|w| w[1].1 < w[0].1) {
        Ok(MeshAxis::InverseSpacing)
    } else if same_h && meshes.windows(2).all(|w| w[1].0 > w[0].0) {
        Ok(MeshAxis::HalfWidth)
    } else {
        Err(Error::InvalidArgument("meshes must refine h at fixed L or grow L at fixed h".into()))
    }
}

/// Estimated `||∇ L^{-1/2}||_{p→p}` over a mesh family with its power-law fit.
pub fn riesz_norm_curve(
    a: &MatrixField,
    w: &WeightField,
    p: f64,
    meshes: &[(f64, f64)],
    cfg: &CurveConfig,
) -> Result<NormCurve> {
    let axis = mesh_axis(meshes)?;
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut previous: Option<GridFunction> = None;
    for &(l, h) in meshes {
        let grid = Grid::new(a.dim(), l, h)?;
        let op = DiscreteOperator::assemble(grid, a, w)?;
        let mut starts = singular_starts(&grid, cfg.bump_radius, &cfg.singular_axes);
        if let Some(prev) = previous.as_ref().filter(|_| cfg.warm_start) {
            starts.insert(0, prev.resample(grid).into_values());
        }
        let map = RieszMap::new(&op, cfg.shift, cfg.solver.clone(), starts);
        op.take_iterations();
        let norm = pnorm_estimate(&map, p, &cfg.norm)?;
        let iters = op.take_iterations();
        previous = Some(GridFunction::from_raw(grid, norm.witness.clone()));
        points.push(CurvePoint { half_width: l, spacing: h, unknowns: grid.len(), norm, solver_iterations: iters });
    }
    let xs: Vec<f64> = points
        .iter()
        .map(|pt| match axis {
            MeshAxis::InverseSpacing => 1.0 / pt.spacing,
            MeshAxis::HalfWidth => pt.half_width,
        })
        .collect();
    let ys: Vec<f64> = points.iter().map(|pt| pt.norm.estimate).collect();
    let fit = fit_power_law(&xs, &ys)?;
    Ok(NormCurve { axis, points, fit })
}

/// One reverse Hölder measurement.
#[derive(Clone, Debug, Serialize)]
pub struct RhSample {
    pub ratio: f64,
    /// `(⨍_{B(r/2)} |∇u|^p)^{1/p}`.
    pub gradient_average: f64,
    /// `⨍_{B(r)} |u|`.
    pub value_average: f64,
    pub unknowns: usize,
    pub iterations: usize,
}

/// Solves `Lu = 0` in `B(center, r)` with `u = boundary` outside and returns
/// `r (⨍_{B(r/2)} |∇u|^p)^{1/p} / ⨍_{B(r)} |u|`.
pub fn rh_ratio(
    op: &DiscreteOperator,
    center: &[f64],
    r: f64,
    boundary: &dyn Fn(&[f64]) -> f64,
    p: f64,
    cfg: &SolverConfig,
) -> Result<RhSample> {
    check_exponent(p)?;
    let grid = *op.grid();
    let n = grid.dim();
    if center.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: center.len() });
    }
    if grid.distance_to_boundary(center) < 2.0 * r - 1e-12 * r {
        return Err(Error::InvalidArgument(format!("B({center:?}, 2r) with r = {r} leaves the grid")));
    }
    let inside = grid.nodes_in_ball(center, r);
    if inside.is_empty() {
        return Err(Error::EmptyBall { center: center.to_vec(), radius: r });
    }
    let mut is_inside = vec![false; grid.len()];
    for &i in &inside {
        is_inside[i] = true;
    }
    let mut u = vec![0.0; grid.len()];
    for (i, ui) in u.iter_mut().enumerate() {
        if !is_inside[i] {
            let v = boundary(&grid.node_point(i)[..n]);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("boundary data at node {i}")));
            }
            *ui = v;
        }
    }
    let k = op.stiffness();
    let ku = k.matvec(&u);
    let rhs: Vec<f64> = inside.iter().map(|&i| -ku[i]).collect();
    let kii = k.principal_submatrix(&inside);
    let diag = kii.diagonal();
    let (ui, info) = pcg(|x, y| kii.matvec_into(x, y), &diag, &rhs, cfg.cg_tol, cfg.max_iter)?;
    op.record_iterations(info.iterations);
    for (&i, v) in inside.iter().zip(ui) {
        u[i] = v;
    }
    let mass = op.node_mass();
    let (mut num, mut den) = (0.0, 0.0);
    for &i in &inside {
        num += u[i].abs() * mass[i];
        den += mass[i];
    }
    let value_average = num / den;
    if !(value_average > 0.0) {
        return Err(Error::Degenerate("u vanishes on the ball".into()));
    }
    let grad = op.gradient(&GridFunction::from_raw(grid, u));
    let k_corners = grid.corners_per_cell();
    let half2 = 0.25 * r * r;
    let (mut gnum, mut gden) = (0.0, 0.0);
    for cell in 0..grid.cell_count() {
        let m = op.measure().subcell_mass(cell);
        for corner in 0..k_corners {
            let x = grid.subcell_center(cell, corner);
            if dist2(&x[..n], center) < half2 {
                let g = grad.at(cell * k_corners + corner);
                let mag = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                gnum += mag.powf(p) * m;
                gden += m;
            }
        }
    }
    if gden == 0.0 {
        return Err(Error::EmptyBall { center: center.to_vec(), radius: 0.5 * r });
    }
    let gradient_average = (gnum / gden).powf(1.0 / p);
    Ok(RhSample {
        ratio: r * gradient_average / value_average,
        gradient_average,
        value_average,
        unknowns: inside.len(),
        iterations: info.iterations,
    })
}

/// `max |L f_h|` over interior nodes with `r_in <= |x| <= r_out`, skipping
/// nodes within two cells of the box boundary.
pub fn harmonic_residual(op: &DiscreteOperator, f_exact: &dyn Fn(&[f64]) -> f64, annulus: (f64, f64)) -> f64 {
    harmonic_residual_by(op, f_exact, annulus, &|x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// [`harmonic_residual`] with a caller-supplied distance to the singular set.
pub fn harmonic_residual_by(
    op: &DiscreteOperator,
    f_exact: &dyn Fn(&[f64]) -> f64,
    annulus: (f64, f64),
    distance: &dyn Fn(&[f64]) -> f64,
) -> f64 {
    let grid = op.grid();
    let n = grid.dim();
    let f = GridFunction::from_fn(*grid, f_exact);
    let lf = op.apply(&f);
    let margin = 2.0 * grid.spacing();
    (0..grid.len())
        .filter(|&i| {
            let x = grid.node_point(i);
            let d = distance(&x[..n]);
            d >= annulus.0 && d <= annulus.1 && grid.distance_to_boundary(&x[..n]) >= margin
        })
        .map(|i| lf.values()[i].abs())
        .fold(0.0, f64::max)
}

/// Gaussian envelope `C exp(-c d^2 / t) / V(x, √t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaussianEnvelope {
    pub amplitude: f64,
    pub rate: f64,
    /// Mean log-distance between the envelope and the samples.
    pub mean_gap: f64,
}

/// `∫ |∇_x k_t|^p e^{γ d²/t} w dx` scaled by `t^{p/2} V(y,√t)^{p-1}`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GlySample {
    pub t: f64,
    pub integral: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelFit {
    pub upper: GaussianEnvelope,
    pub lower: GaussianEnvelope,
    pub times: Vec<f64>,
    /// Largest `d(x, y)` among fitted samples.
    pub max_distance: f64,
    pub samples: usize,
    /// Most negative kernel value seen in the validity region.
    pub min_value: f64,
    /// Kernel values below `-1e-12` were clamped before taking logarithms.
    pub negative_warning: bool,
    /// `(t, Σ k_t w h^n)` for boundary-uninfluenced times.
    pub mass: Vec<(f64, f64)>,
    pub gly: Vec<GlySample>,
}

/// Options of [`heat_kernel_probe`].
#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub solver: SolverConfig,
    /// Fit region: `d(x,y) <= radius_factor √t` and boundary distance `>= radius_factor √t`.
    pub radius_factor: f64,
    /// `(p, γ)` for the gradient integral; `γ = None` takes a quarter of the fitted rate.
    pub gly: Option<(f64, Option<f64>)>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), radius_factor: 3.0, gly: None }
    }
}

fn hull(points: &[(f64, f64)], upper: bool) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for &p in points {
        while out.len() >= 2 {
            let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if (upper && cross >= 0.0) || (!upper && cross <= 0.0) {
                out.pop();
            } else {
                break;
            }
        }
        out.push(p);
    }
    out
}

/// Supporting line of the point cloud above (`upper`) or below it with the
/// least mean gap: the hull edge over the mean abscissa.
fn envelope(points: &[(f64, f64)], upper: bool) -> Result<GaussianEnvelope> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if upper {
        pts.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 = a.1.max(b.1);
                true
            } else {
                false
            }
        });
    } else {
        pts.dedup_by(|b, a| a.0 == b.0);
    }
    if pts.len() < 2 {
        return Err(Error::Degenerate("kernel samples span a single distance".into()));
    }
    let h = hull(&pts, upper);
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let k = h
        .windows(2)
        .position(|w| w[0].0 <= mean_x && mean_x <= w[1].0)
        .unwrap_or(h.len() - 2);
    let (a, b) = (h[k], h[k + 1]);
    let slope = (b.1 - a.1) / (b.0 - a.0);
    let intercept = a.1 - slope * a.0;
    let mean_gap = points
        .iter()
        .map(|p| (intercept + slope * p.0 - p.1).abs())
        .sum::<f64>()
        / points.len() as f64;
    let rate = -slope;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Degenerate(format!(
            "{} Gaussian fit has non-positive rate {rate}",
            if upper { "upper" } else { "lower" }
        )));
    }
    Ok(GaussianEnvelope { amplitude: intercept.exp(), rate, mean_gap })
}

/// Heat-kernel columns `k_t(·, y)` and two-sided Gaussian fits.
pub fn heat_kernel_probe(op: &DiscreteOperator, y: &[f64], times: &[f64], cfg: &ProbeConfig) -> Result<KernelFit> {
    let grid = *op.grid();
    let n = grid.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument("times must be positive and non-empty".into()));
    }
    let w = op.weight();
    let iy = grid.nearest_node(y);
    let yp = grid.node_point(iy);
    let yv = &yp[..n];
    let mass = op.node_mass();
    let mut delta = vec![0.0; grid.len()];
    delta[iy] = 1.0 / mass[iy];
    let delta = GridFunction::from_raw(grid, delta);
    let boundary_dist = grid.distance_to_boundary(yv);

    let mut points = Vec::new();
    let mut min_value = f64::INFINITY;
    let mut max_distance: f64 = 0.0;
    let mut mass_checks = Vec::new();
    let mut columns = Vec::new();
    for &t in times {
        let k = heat(op, t, &delta, &cfg.solver)?;
        let rt = t.sqrt();
        let reach = cfg.radius_factor * rt;
        let peak = k.max_abs();
        for i in 0..grid.len() {
            let x = grid.node_point(i);
            let d2 = dist2(&x[..n], yv);
            if d2.sqrt() > reach || grid.distance_to_boundary(&x[..n]) < reach {
                continue;
            }
            let v = k.values()[i];
            min_value = min_value.min(v);
            let vol = ball_volume(w, &x[..n], rt);
            let clamped = v.max(1e-300_f64.max(1e-15 * peak));
            points.push((d2 / t, (clamped * vol).ln()));
            max_distance = max_distance.max(d2.sqrt());
        }
        if boundary_dist * boundary_dist / (4.0 * t) >= 20.0 {
            let total: f64 = k.values().iter().zip(mass).map(|(a, m)| a * m).sum();
            mass_checks.push((t, total));
        }
        columns.push((t, k));
    }
    if points.len() < 3 {
        return Err(Error::Degenerate("validity region holds fewer than three samples".into()));
    }
    let upper = envelope(&points, true)?;
    let lower = envelope(&points, false)?;

    let mut gly = Vec::new();
    if let Some((p, gamma)) = cfg.gly {
        check_exponent(p)?;
        let gamma = gamma.unwrap_or(upper.rate / 4.0);
        let kc = grid.corners_per_cell();
        for (t, k) in &columns {
            let g = op.gradient(k);
            let mut integral = 0.0;
            for cell in 0..grid.cell_count() {
                let m = op.measure().subcell_mass(cell);
                for corner in 0..kc {
                    let x = grid.subcell_center(cell, corner);
                    let d2 = dist2(&x[..n], yv);
                    let v = g.at(cell * kc + corner);
                    let mag = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                    integral += mag.powf(p) * (gamma * d2 / t).exp() * m;
                }
            }
            let vy = ball_volume(w, yv, t.sqrt());
            gly.push(GlySample { t: *t, integral, normalized: integral * t.powf(p / 2.0) * vy.powf(p - 1.0) });
        }
    }

    Ok(KernelFit {
        upper,
        lower,
        times: times.to_vec(),
        max_distance,
        samples: points.len(),
        min_value,
        negative_warning: min_value < -1e-12,
        mass: mass_checks,
        gly,
    })
}

/// Log-log regression of `(t, value)` samples with `t > 1`.
pub fn decay_exponent(samples: &[(f64, f64)]) -> Result<DecayFit> {
    if samples.len() < 3 {
        return Err(Error::InvalidArgument("decay fits need at least three samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| !(s.0 > 1.0)) {
        return Err(Error::InvalidArgument(format!("sample time {} is not > 1", s.0)));
    }
    let (ts, vs): (Vec<f64>, Vec<f64>) = samples.iter().cloned().unzip();
    fit_power_law(&ts, &vs)
}

/// Decay rate of the resolvent difference predicted from `(ε, p_0)`.
pub fn predicted_alpha(eps: f64, p: f64, p0: f64) -> f64 {
    let first = eps * (p - 1.0) / (2.0 * p);
    let second = if p0.is_infinite() { eps / (2.0 * p) } else { eps * (p0 - p) / (2.0 * p * (p0 + p)) };
    first.min(second)
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationDecay {
    pub p: f64,
    pub samples: Vec<(f64, NormEstimate)>,
    pub fit: DecayFit,
    pub predicted_alpha: f64,
    /// `α + 1/2`, the predicted decay exponent of the measured family.
    pub predicted_exponent: f64,
}

/// `||∇[(1+tL_0)^{-1} - (1+tL)^{-1}]||_{p→p}` over `t` and its decay fit.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_decay(
    op_l: &DiscreteOperator,
    op_l0: &DiscreteOperator,
    p: f64,
    times: &[f64],
    solver: &SolverConfig,
    norm: &NormConfig,
    starts: &[Vec<f64>],
    eps: f64,
    p0: f64,
) -> Result<PerturbationDecay> {
    if let Some(&t) = times.iter().find(|&&t| !(t > 1.0)) {
        return Err(Error::InvalidArgument(format!("time {t} is not > 1")));
    }
    let mut samples = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for &t in times {
        let mut s = starts.to_vec();
        if let Some(w) = warm.take() {
            s.insert(0, w);
        }
        let map = ResolventDiffMap::new(op_l, op_l0, t, solver.clone(), s);
        let est = pnorm_estimate(&map, p, norm)?;
        warm = Some(est.witness.clone());
        samples.push((t, est));
    }
    let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let vs: Vec<f64> = samples.iter().map(|s| s.1.estimate).collect();
    let fit = fit_decay_with_zeros(&ts, &vs)?;
    let alpha = predicted_alpha(eps, p, p0);
    Ok(PerturbationDecay { p, samples, fit, predicted_alpha: alpha, predicted_exponent: alpha + 0.5 })
}

/// `||∇(1 + tL)^{-1}||_{p→p}` (or the half power) over `t`.
pub fn gradient_resolvent_curve(
    op: &DiscreteOperator,
    p: f64,
    times: &[f64],
    half_power: bool,
    solver: &SolverConfig,
    norm: &NormConfig,
    starts: &[Vec<f64>],
) -> Result<Vec<(f64, NormEstimate)>> {
    let mut out = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for &t in times {
        let mut s = starts.to_vec();
        if let Some(w) = warm.take() {
            s.insert(0, w);
        }
        let map = GradResolventMap::new(op, t, half_power, solver.clone(), s);
        let est = pnorm_estimate(&map, p, norm)?;
        warm = Some(est.witness.clone());
        out.push((t, est));
    }
    Ok(out)
}

/// Comparison of a measured value with its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Relation {
    AtMost { bound: f64 },
    AtLeast { bound: f64 },
    Within { target: f64, tol: f64 },
}

impl Relation {
    /// NaN never satisfies a relation.
    pub fn holds(&self, value: f64) -> bool {
        match *self {
            Relation::AtMost { bound } => value <= bound,
            Relation::AtLeast { bound } => value >= bound,
            Relation::Within { target, tol } => (value - target).abs() <= tol,
        }
    }
}

/// One check of the lemma suite.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub pass: bool,
    /// False when the check is informational only (e.g. `p ≠ 2` bounds on
    /// assemblies without a discrete maximum principle).
    pub asserted: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, relation: Relation, asserted: bool) -> Self {
        Self { name: name.into(), value, relation, pass: relation.holds(value), asserted }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AppendixReport {
    pub p: f64,
    pub checks: Vec<Check>,
    pub nu_resolvent: DecayFit,
    pub nu_sqrt: DecayFit,
    /// Improper resolvent integral with the coarse and the doubled quadrature.
    pub integral: (f64, f64),
}

impl AppendixReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| c.asserted).all(|c| c.pass)
    }
}

/// Controls of [`appendix_suite`].
#[derive(Clone, Debug)]
pub struct AppendixConfig {
    pub solver: SolverConfig,
    pub norm: NormConfig,
    /// `t` samples of the decay fits (all `> 1`).
    pub times: Vec<f64>,
    pub s_values: Vec<f64>,
    pub t_values: Vec<f64>,
    /// Gauss–Legendre points of the coarse resolvent-integral quadrature (doubled for the check).
    pub integral_points: usize,
    pub integral_tol: f64,
    pub bound_tol: f64,
    pub exponent_slack: f64,
    /// Expected `ν`, when known, and its tolerance.
    pub expected_nu: Option<(f64, f64)>,
    pub starts: Vec<Vec<f64>>,
}

impl AppendixConfig {
    pub fn new(grid: &Grid) -> Self {
        Self {
            solver: SolverConfig::default(),
            norm: NormConfig::default(),
            times: vec![2.0, 4.0, 8.0, 16.0],
            s_values: vec![0.5, 1.0, 2.0],
            t_values: vec![1.0, 10.0, 100.0],
            integral_points: 16,
            integral_tol: 0.01,
            bound_tol: 1e-8,
            exponent_slack: 0.05,
            expected_nu: None,
            starts: singular_starts(grid, 0.25 * grid.half_width(), &(0..grid.dim()).collect::<Vec<_>>()),
        }
    }
}

/// Bounds on resolvents and their half powers, the improper resolvent
/// integral, and the transfer of resolvent decay to the half power.
pub fn appendix_suite(op: &DiscreteOperator, p: f64, cfg: &AppendixConfig) -> Result<AppendixReport> {
    check_exponent(p)?;
    let mut checks = Vec::new();
    let lambda_min = if cfg.solver.use_dense && op.has_dense() {
        Some(op.dense_spectral()?.values[0])
    } else {
        None
    };
    for &s in &cfg.s_values {
        for &t in &cfg.t_values {
            for half in [false, true] {
                let bound = if half { 1.0 / s.sqrt() } else { 1.0 / s };
                let label = if half { "a2" } else { "a1" };
                let value = match lambda_min {
                    Some(l) if half => 1.0 / (s + t * l).sqrt(),
                    Some(l) => 1.0 / (s + t * l),
                    None => {
                        let map = ResolventMap { op, s, t, half_power: half, solver: cfg.solver.clone(), starts: vec![] };
                        pnorm_estimate(&map, 2.0, &cfg.norm)?.estimate
                    }
                };
                checks.push(Check::new(
                    format!("{label} p=2 s={s} t={t}"),
                    value,
                    Relation::AtMost { bound: bound + cfg.bound_tol },
                    true,
                ));
                if p != 2.0 {
                    let map = ResolventMap { op, s, t, half_power: half, solver: cfg.solver.clone(), starts: cfg.starts.clone() };
                    let est = pnorm_estimate(&map, p, &cfg.norm)?.estimate;
                    checks.push(Check::new(
                        format!("{label} p={p} s={s} t={t}"),
                        est,
                        Relation::AtMost { bound: bound * (1.0 + 1e-6) + cfg.bound_tol },
                        op.is_m_matrix(),
                    ));
                }
            }
        }
    }

    // ∫_0^1 |∇(1+tL)^{-1} f|_p dt/√t = 2 ∫_0^1 |∇(1+s²L)^{-1} f|_p ds.
    let witness = GridFunction::from_raw(
        *op.grid(),
        cfg.starts.get(1).or(cfg.starts.first()).cloned().unwrap_or_else(|| vec![1.0; op.len()]),
    );
    let integral = |points: usize| -> Result<f64> {
        let (x, wq) = crate::linalg::gauss_legendre(points);
        let mut acc = 0.0;
        for (xi, wi) in x.iter().zip(&wq) {
            let s = 0.5 * (xi + 1.0);
            let u = resolvent(op, 1.0, s * s, &witness, &cfg.solver)?;
            acc += wi * op.measure().lp_norm_vec(op.gradient(&u).values(), p)?;
        }
        Ok(acc)
    };
    let coarse = integral(cfg.integral_points)?;
    let fine = integral(2 * cfg.integral_points)?;
    let rel = (coarse - fine).abs() / fine.abs().max(f64::MIN_POSITIVE);
    checks.push(Check::new(
        "resolvent integral quadrature stability",
        if fine.is_finite() { rel } else { f64::NAN },
        Relation::AtMost { bound: cfg.integral_tol },
        true,
    ));

    let res = gradient_resolvent_curve(op, p, &cfg.times, false, &cfg.solver, &cfg.norm, &cfg.starts)?;
    let sq = gradient_resolvent_curve(op, p, &cfg.times, true, &cfg.solver, &cfg.norm, &cfg.starts)?;
    let nu_resolvent = decay_exponent(&res.iter().map(|(t, e)| (*t, e.estimate)).collect::<Vec<_>>())?;
    let nu_sqrt = decay_exponent(&sq.iter().map(|(t, e)| (*t, e.estimate)).collect::<Vec<_>>())?;
    if let Some((nu, tol)) = cfg.expected_nu {
        let within = Relation::Within { target: nu, tol };
        checks.push(Check::new("resolvent-gradient decay exponent", nu_resolvent.exponent, within, true));
        checks.push(Check::new("sqrt-resolvent-gradient decay exponent", nu_sqrt.exponent, within, true));
    }
    // The transfer is stated for ν ∈ [0, 1/2); a faster measured decay
    // implies every smaller ν, so the transferred rate is capped at 1/2.
    let nu_hyp = nu_resolvent.exponent.min(0.5);
    checks.push(Check::new(
        "decay transfer",
        nu_sqrt.exponent,
        Relation::AtLeast { bound: nu_hyp - cfg.exponent_slack },
        true,
    ));
    Ok(AppendixReport { p, checks, nu_resolvent, nu_sqrt, integral: (coarse, fine) })
}

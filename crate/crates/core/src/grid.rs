//! Uniform box grids, grid functions, weighted measures, balls and norms.
//!
//! Nodes sit at `-L + j*h` for `j = 0..=2L/h` on every axis; boundary nodes
//! carry the homogeneous Dirichlet condition and are not unknowns. Interior
//! nodes are flattened row-major with the first axis varying slowest.
//!
//! Gradients live on the half-cell lattice: every cell is split into `2^n`
//! sub-cells, one per cell corner, and a vector grid function stores one
//! `n`-vector per sub-cell.

use std::io::{BufRead, Read, Write};

use crate::coeffs::WeightField;
use crate::error::{Error, Result};
use crate::fit::{fit_power_law, DecayFit};

/// Sentinel for a Dirichlet (boundary) corner in [`Grid::cell_corners`].
pub const BOUNDARY: u32 = u32::MAX;

/// Uniform Cartesian grid on `[-L, L]^n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    spacing: f64,
    half_cells: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, spacing: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) || !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidGrid(format!("need L > 0 and h > 0, got L = {half_width}, h = {spacing}")));
        }
        let ratio = half_width / spacing;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidGrid(format!("L/h = {ratio} is not a positive integer")));
        }
        let half_cells = k as usize;
        if (2 * half_cells - 1).pow(dim as u32) > u32::MAX as usize / 2 {
            return Err(Error::InvalidGrid("too many nodes".into()));
        }
        Ok(Self { dim, half_width, spacing, half_cells })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Node count per axis including the two boundary nodes.
    pub fn nodes_per_axis(&self) -> usize {
        2 * self.half_cells + 1
    }

    pub fn interior_per_axis(&self) -> usize {
        2 * self.half_cells - 1
    }

    pub fn cells_per_axis(&self) -> usize {
        2 * self.half_cells
    }

    /// Number of unknowns.
    pub fn len(&self) -> usize {
        self.interior_per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_axis().pow(self.dim as u32)
    }

    pub fn corners_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn subcell_count(&self) -> usize {
        self.cell_count() * self.corners_per_cell()
    }

    /// `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Coordinate of full-axis node index `j` (boundary nodes are `0` and `2L/h`).
    pub fn axis_coord(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing
    }

    /// Interior multi-index of a flat node index.
    pub fn node_multi_index(&self, flat: usize) -> [usize; 3] {
        let q = self.interior_per_axis();
        let mut out = [0; 3];
        let mut rest = flat;
        for d in (0..self.dim).rev() {
            out[d] = rest % q;
            rest /= q;
        }
        out
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        let q = self.interior_per_axis();
        multi[..self.dim].iter().fold(0, |acc, &i| acc * q + i)
    }

    /// Position of interior node `flat`.
    pub fn node_point(&self, flat: usize) -> [f64; 3] {
        let mi = self.node_multi_index(flat);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = self.axis_coord(mi[d] + 1);
        }
        x
    }

    pub fn cell_multi_index(&self, cell: usize) -> [usize; 3] {
        let q = self.cells_per_axis();
        let mut out = [0; 3];
        let mut rest = cell;
        for d in (0..self.dim).rev() {
            out[d] = rest % q;
            rest /= q;
        }
        out
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let ci = self.cell_multi_index(cell);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = -self.half_width + (ci[d] as f64 + 0.5) * self.spacing;
        }
        x
    }

    /// Centre of the sub-cell of `cell` adjacent to corner `corner`
    /// (bit `d` of `corner` selects the upper side along axis `d`).
    pub fn subcell_center(&self, cell: usize, corner: usize) -> [f64; 3] {
        let ci = self.cell_multi_index(cell);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            let k = ((corner >> d) & 1) as f64;
            x[d] = -self.half_width + (ci[d] as f64 + 0.5 * k + 0.25) * self.spacing;
        }
        x
    }

    /// Interior indices of the `2^n` corners of `cell` ([`BOUNDARY`] for Dirichlet nodes).
    pub fn cell_corners(&self, cell: usize) -> [u32; 8] {
        let ci = self.cell_multi_index(cell);
        let q = self.interior_per_axis();
        let mut out = [BOUNDARY; 8];
        'corner: for (corner, slot) in out.iter_mut().enumerate().take(1 << self.dim) {
            let mut flat = 0usize;
            for d in 0..self.dim {
                let j = ci[d] + ((corner >> d) & 1);
                if j == 0 || j > q {
                    continue 'corner;
                }
                flat = flat * q + (j - 1);
            }
            *slot = flat as u32;
        }
        out
    }

    /// Distance from `x` to the boundary of the box.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        x[..self.dim]
            .iter()
            .map(|xi| self.half_width - xi.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Interior nodes strictly inside the Euclidean ball.
    pub fn nodes_in_ball(&self, center: &[f64], r: f64) -> Vec<usize> {
        let r2 = r * r;
        (0..self.len())
            .filter(|&i| dist2(&self.node_point(i)[..self.dim], center) < r2)
            .collect()
    }

    /// Index of the interior node nearest to `x`.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let q = self.interior_per_axis();
        let mut multi = [0usize; 3];
        for d in 0..self.dim {
            let j = ((x[d] + self.half_width) / self.spacing).round();
            multi[d] = (j.clamp(1.0, q as f64) as usize) - 1;
        }
        self.node_index(&multi)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One real value per interior node.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        Self { values: vec![0.0; grid.len()], grid }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid function value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at interior nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| f(&grid.node_point(i)[..grid.dim()]))
            .collect();
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `a*self + b*other`.
    pub fn combine(&self, a: f64, other: &GridFunction, b: f64) -> GridFunction {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self { grid: self.grid, values }
    }

    pub fn scale(&self, a: f64) -> GridFunction {
        Self { grid: self.grid, values: self.values.iter().map(|x| a * x).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation at `x`, with the Dirichlet zero on and outside the boundary.
    pub fn sample_at(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let n = g.dim();
        let q = g.interior_per_axis();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for d in 0..n {
            let s = (x[d] + g.half_width()) / g.spacing();
            if !(s > 0.0 && s < (q + 1) as f64) {
                return 0.0;
            }
            let j = s.floor();
            base[d] = j as usize;
            frac[d] = s - j;
        }
        let mut acc = 0.0;
        'corner: for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for d in 0..n {
                let up = (corner >> d) & 1;
                let j = base[d] + up;
                weight *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
                if j == 0 || j > q {
                    continue 'corner;
                }
                flat = flat * q + (j - 1);
            }
            if weight != 0.0 {
                acc += weight * self.values[flat];
            }
        }
        acc
    }

    /// Interpolates onto another grid.
    pub fn resample(&self, target: Grid) -> GridFunction {
        GridFunction::from_fn(target, |x| self.sample_at(x))
    }

    /// Binary layout: magic `RLGF`, `u32` version, `u32` n, `f64` L, `f64` h,
    /// `u64` count, then `count` values; all little-endian.
    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.grid.dim as u32).to_le_bytes())?;
        out.write_all(&self.grid.half_width.to_le_bytes())?;
        out.write_all(&self.grid.spacing.to_le_bytes())?;
        out.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut input)? as usize;
        let half_width = read_f64(&mut input)?;
        let spacing = read_f64(&mut input)?;
        let grid = Grid::new(dim, half_width, spacing)?;
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        let count = u64::from_le_bytes(buf) as usize;
        if count != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: count });
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(read_f64(&mut input)?);
        }
        Self::from_values(grid, values)
    }

    /// CSV layout: `n,L,h` header, one header row of values, a `value`
    /// header, then one node value per line in flat order. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "n,L,h")?;
        writeln!(out, "{},{:?},{:?}", self.grid.dim, self.grid.half_width, self.grid.spacing)?;
        writeln!(out, "value")?;
        for v in &self.values {
            writeln!(out, "{v:?}")?;
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Format(format!("missing {what}")))
        };
        if next("header")?.trim() != "n,L,h" {
            return Err(Error::Format("expected `n,L,h` header".into()));
        }
        let meta = next("grid row")?;
        let parts: Vec<&str> = meta.trim().split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!("grid row `{meta}`")));
        }
        let dim: usize = parts[0].parse().map_err(|_| Error::Format(format!("n = `{}`", parts[0])))?;
        let half_width = parse_f64(parts[1])?;
        let spacing = parse_f64(parts[2])?;
        let grid = Grid::new(dim, half_width, spacing)?;
        if next("value header")?.trim() != "value" {
            return Err(Error::Format("expected `value` header".into()));
        }
        let mut values = Vec::with_capacity(grid.len());
        for line in lines {
            let line = line?;
            let line = line.trim();
            if !line.is_empty() {
                values.push(parse_f64(line)?);
            }
        }
        Self::from_values(grid, values)
    }
}

const MAGIC: &[u8; 4] = b"RLGF";
const FORMAT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("not a number: `{s}`")))
}

/// One `n`-vector per sub-cell (see the module docs).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorGridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorGridFunction {
    pub fn zeros(grid: Grid) -> Self {
        Self { values: vec![0.0; grid.subcell_count() * grid.dim()], grid }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.subcell_count() * grid.dim();
        if values.len() != expected {
            return Err(Error::LengthMismatch { expected, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector grid function".into()));
        }
        Ok(Self { grid, values })
    }

    /// Samples a vector field at sub-cell centres.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> [f64; 3]) -> Self {
        let n = grid.dim();
        let mut values = Vec::with_capacity(grid.subcell_count() * n);
        for cell in 0..grid.cell_count() {
            for corner in 0..grid.corners_per_cell() {
                let v = f(&grid.subcell_center(cell, corner)[..n]);
                values.extend_from_slice(&v[..n]);
            }
        }
        Self { grid, values }
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.subcell_count() * grid.dim());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Vector at sub-cell `index` (`cell * 2^n + corner`).
    pub fn at(&self, index: usize) -> &[f64] {
        let n = self.grid.dim();
        &self.values[index * n..(index + 1) * n]
    }

    /// Pointwise Euclidean lengths.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values
            .chunks_exact(self.grid.dim())
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    pub fn combine(&self, a: f64, other: &VectorGridFunction, b: f64) -> VectorGridFunction {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self { grid: self.grid, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Node masses `w_i h^n` and per-cell weights of a weighted grid.
///
/// The node weight is the mean of `w` over the `2^n` points `x_i ± h/4`,
/// which stays finite and positive for power weights vanishing at a node.
/// Cell weights are `w` at cell centres; each sub-cell carries `w_c h^n / 2^n`.
#[derive(Clone, Debug)]
pub struct GridMeasure {
    grid: Grid,
    node_mass: Vec<f64>,
    cell_weight: Vec<f64>,
}

impl GridMeasure {
    pub fn new(grid: Grid, w: &WeightField) -> Result<Self> {
        if w.dim() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: grid.dim(), got: w.dim() });
        }
        let n = grid.dim();
        let h = grid.spacing();
        let vol = grid.cell_volume();
        let corners = grid.corners_per_cell();
        let mut node_mass = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let x = grid.node_point(i);
            if w.is_unit() {
                node_mass.push(vol);
                continue;
            }
            let mut acc = 0.0;
            for s in 0..corners {
                let mut y = x;
                for d in 0..n {
                    y[d] += if (s >> d) & 1 == 1 { 0.25 * h } else { -0.25 * h };
                }
                acc += w.eval_checked(&y[..n])?;
            }
            node_mass.push(acc / corners as f64 * vol);
        }
        let mut cell_weight = Vec::with_capacity(grid.cell_count());
        for c in 0..grid.cell_count() {
            cell_weight.push(if w.is_unit() { 1.0 } else { w.eval_checked(&grid.cell_center(c)[..n])? });
        }
        Ok(Self { grid, node_mass, cell_weight })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn node_mass(&self) -> &[f64] {
        &self.node_mass
    }

    pub fn cell_weight(&self) -> &[f64] {
        &self.cell_weight
    }

    pub fn subcell_mass(&self, cell: usize) -> f64 {
        self.cell_weight[cell] * self.grid.cell_volume() / self.grid.corners_per_cell() as f64
    }

    /// Masses of all sub-cells in storage order.
    pub fn subcell_masses(&self) -> Vec<f64> {
        let k = self.grid.corners_per_cell();
        let base = self.grid.cell_volume() / k as f64;
        self.cell_weight
            .iter()
            .flat_map(|&wc| std::iter::repeat(wc * base).take(k))
            .collect()
    }

    /// Weighted inner product `sum f g m_i`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.node_mass).map(|((a, b), m)| a * b * m).sum()
    }

    /// Weighted inner product of vector fields on the sub-cell lattice.
    pub fn inner_vec(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.grid.dim();
        let k = self.grid.corners_per_cell();
        let mut acc = 0.0;
        for (c, &wc) in self.cell_weight.iter().enumerate() {
            let base = c * k * n;
            let s: f64 = u[base..base + k * n].iter().zip(&v[base..base + k * n]).map(|(a, b)| a * b).sum();
            acc += wc * s;
        }
        acc * self.grid.cell_volume() / k as f64
    }

    pub fn lp_norm(&self, f: &[f64], p: f64) -> Result<f64> {
        weighted_lp(f, &self.node_mass, p)
    }

    /// Norm of the pointwise Euclidean length on the sub-cell lattice.
    pub fn lp_norm_vec(&self, v: &[f64], p: f64) -> Result<f64> {
        let n = self.grid.dim();
        let mags: Vec<f64> = v.chunks_exact(n).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        weighted_lp(&mags, &self.subcell_masses(), p)
    }
}

/// `(sum |f_i|^p m_i)^{1/p}`, or `max |f_i|` for `p = inf`.
pub fn weighted_lp(f: &[f64], mass: &[f64], p: f64) -> Result<f64> {
    check_exponent(p)?;
    if p.is_infinite() {
        return Ok(f.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let scale = f.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = f.iter().zip(mass).map(|(v, m)| (v.abs() / scale).powf(p) * m).sum();
    Ok(scale * s.powf(1.0 / p))
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(p));
    }
    Ok(())
}

/// Weighted `L^p` norm of a grid function.
pub fn lp_norm(f: &GridFunction, p: f64, w: &WeightField) -> Result<f64> {
    check_exponent(p)?;
    let measure = GridMeasure::new(*f.grid(), w)?;
    measure.lp_norm(f.values(), p)
}

/// Weighted average of `f` over interior nodes strictly inside `B(center, r)`.
pub fn ball_average(f: &GridFunction, center: &[f64], r: f64, w: &WeightField) -> Result<f64> {
    let grid = f.grid();
    grid.check_dim(center)?;
    let nodes = grid.nodes_in_ball(center, r);
    if nodes.is_empty() {
        return Err(Error::EmptyBall { center: center.to_vec(), radius: r });
    }
    let measure = GridMeasure::new(*grid, w)?;
    let mass = measure.node_mass();
    let (mut num, mut den) = (0.0, 0.0);
    for &i in &nodes {
        num += f.values()[i] * mass[i];
        den += mass[i];
    }
    Ok(num / den)
}

/// Midpoint-lattice quadrature over `B(center, r)` with spacing `r / per_radius`:
/// calls `visit(x)` at lattice points strictly inside the ball and returns the
/// point weight.
pub fn ball_quadrature(center: &[f64], r: f64, per_radius: usize, mut visit: impl FnMut(&[f64])) -> f64 {
    let n = center.len();
    let s = r / per_radius as f64;
    let k = per_radius as i64;
    let r2 = r * r;
    let mut x = [0.0; 3];
    let mut idx = [-k; 3];
    loop {
        let mut d2 = 0.0;
        for d in 0..n {
            let z = (idx[d] as f64 + 0.5) * s;
            x[d] = center[d] + z;
            d2 += z * z;
        }
        if d2 < r2 {
            visit(&x[..n]);
        }
        let mut d = n;
        loop {
            if d == 0 {
                return s.powi(n as i32);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < k {
                break;
            }
            idx[d] = -k;
        }
    }
}

/// `V(y, r) = int_{B(y,r)} w dx`; exact for the unit weight.
pub fn ball_volume(w: &WeightField, center: &[f64], r: f64) -> f64 {
    let n = w.dim();
    if w.is_unit() {
        return unit_ball_volume(n) * r.powi(n as i32);
    }
    let per = if n == 2 { 64 } else { 24 };
    let mut acc = 0.0;
    let cell = ball_quadrature(center, r, per, |x| acc += w.eval(x));
    acc * cell
}

pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 / 3.0 * std::f64::consts::PI,
        _ => unreachable!("dimension {n}"),
    }
}

/// Volume-growth summary of a weighted measure.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MeasureProfile {
    /// Largest doubling ratio `V(y,2r)/V(y,r)` (rescaled from the sampled radius pairs).
    pub doubling: f64,
    /// Smallest local growth exponent over centres and consecutive radii.
    pub lower_exponent: f64,
    /// Largest local growth exponent.
    pub upper_exponent: f64,
    /// Log-log fit of all `(r, V)` samples pooled over centres.
    pub pooled: DecayFit,
}

pub fn measure_profile(w: &WeightField, centers: &[Vec<f64>], radii: &[f64]) -> Result<MeasureProfile> {
    if radii.len() < 2 || radii.windows(2).any(|p| !(p[1] > p[0])) || radii[0] <= 0.0 {
        return Err(Error::InvalidArgument("radii must be positive, increasing, at least two".into()));
    }
    if centers.is_empty() {
        return Err(Error::InvalidArgument("no centres".into()));
    }
    let mut doubling: f64 = 1.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in centers {
        if c.len() != w.dim() {
            return Err(Error::DimensionMismatch { expected: w.dim(), got: c.len() });
        }
        let vols: Vec<f64> = radii.iter().map(|&r| ball_volume(w, c, r)).collect();
        if vols.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::ZeroWeight);
        }
        for k in 1..radii.len() {
            let scale = (radii[k] / radii[k - 1]).ln();
            let growth = (vols[k] / vols[k - 1]).ln() / scale;
            lo = lo.min(growth);
            hi = hi.max(growth);
            doubling = doubling.max((growth * std::f64::consts::LN_2).exp());
        }
        xs.extend_from_slice(radii);
        ys.extend(vols);
    }
    let pooled = fit_power_law(&xs, &ys)?;
    Ok(MeasureProfile { doubling, lower_exponent: lo, upper_exponent: hi, pooled })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(l: f64, h: f64) -> Grid {
        Grid::new(2, l, h).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(4, 1.0, 0.5).is_err());
        assert!(Grid::new(2, 1.0, 0.3).is_err());
        assert!(Grid::new(2, 1.0, -0.5).is_err());
        assert!(Grid::new(2, 1.0, 2.0).is_err());
        let g = grid2(1.0, 1.0);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn node_layout_is_row_major() {
        let g = grid2(1.0, 0.25);
        assert_eq!(g.nodes_per_axis(), 9);
        assert_eq!(g.len(), 49);
        assert_eq!(g.node_point(0)[..2], [-0.75, -0.75]);
        assert_eq!(g.node_point(1)[..2], [-0.75, -0.5]);
        assert_eq!(g.node_point(7)[..2], [-0.5, -0.75]);
        assert_eq!(g.node_index(&g.node_multi_index(33)), 33);
        assert_eq!(g.nearest_node(&[0.01, -0.02]), 24);
    }

    #[test]
    fn cell_corners_mark_boundary() {
        let g = grid2(1.0, 0.5);
        // 3x3 interior nodes, 4x4 cells; cell 0 touches only the corner node (1,1).
        let c = g.cell_corners(0);
        assert_eq!(&c[..4], &[BOUNDARY, BOUNDARY, BOUNDARY, 0]);
        let c = g.cell_corners(5);
        assert_eq!(&c[..4], &[0, 3, 1, 4]);
    }

    #[test]
    fn ball_average_of_odd_function_vanishes() {
        let g = grid2(2.0, 1.0 / 16.0);
        let f = GridFunction::from_fn(g, |x| x[0]);
        let u = WeightField::unit(2);
        assert!(ball_average(&f, &[0.0, 0.0], 1.0, &u).unwrap().abs() < 1e-14);
        let c = GridFunction::from_fn(g, |_| 3.25);
        assert_eq!(ball_average(&c, &[0.3, 0.1], 0.7, &u).unwrap(), 3.25);
        assert!(matches!(
            ball_average(&c, &[0.03, 0.03], 0.01, &u),
            Err(Error::EmptyBall { .. })
        ));
    }

    #[test]
    fn lp_norm_of_constant() {
        let g = grid2(1.0, 1.0 / 32.0);
        let f = GridFunction::from_fn(g, |_| 1.0);
        let u = WeightField::unit(2);
        let n2 = lp_norm(&f, 2.0, &u).unwrap();
        assert!((n2 - 2.0).abs() < 2.0 * 2.0 / 32.0);
        assert_eq!(lp_norm(&f, f64::INFINITY, &u).unwrap(), 1.0);
        assert!(lp_norm(&f, 0.5, &u).is_err());
    }

    #[test]
    fn binary_and_csv_round_trip_bit_exact() {
        let g = Grid::new(3, 0.75, 0.25).unwrap();
        let f = GridFunction::from_fn(g, |x| (x[0] * 1.1).sin() / 3.0 + x[1] * x[2] * 1e-17);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let back = GridFunction::read_binary(&buf[..]).unwrap();
        assert_eq!(back, f);
        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        let back = GridFunction::read_csv(&csv[..]).unwrap();
        assert!(back.values().iter().zip(f.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.grid(), f.grid());
    }

    #[test]
    fn resampling_is_exact_for_multilinear_functions() {
        let coarse = grid2(1.0, 0.25);
        let fine = grid2(1.0, 0.125);
        // Vanishes on the boundary and is bilinear on each coarse cell in the
        // interior band, so refinement must reproduce it at coarse nodes.
        let f = GridFunction::from_fn(coarse, |x| (1.0 - x[0].abs()) * (1.0 - x[1].abs()));
        let g = f.resample(fine);
        for i in 0..fine.len() {
            let x = fine.node_point(i);
            let expected = (1.0 - x[0].abs()) * (1.0 - x[1].abs());
            assert!((g.values()[i] - expected).abs() < 1e-14, "{x:?}");
        }
    }

    #[test]
    fn ball_quadrature_counts_disk_area() {
        let mut count = 0usize;
        let w = ball_quadrature(&[0.3, -0.2], 2.0, 64, |_| count += 1);
        let area = count as f64 * w;
        assert!((area / (4.0 * std::f64::consts::PI) - 1.0).abs() < 5e-3);
    }
}

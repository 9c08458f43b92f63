//! Deterministic solves on anisotropic tensor-product grids.
//!
//! The operator is the conservation-form second-order finite difference
//! discretization with the coefficient sampled at cell-face midpoints. Grids
//! are vertex centred with `2^l_j - 1` interior nodes in direction `j`;
//! Dirichlet boundary nodes are not stored. Up to three spatial directions
//! are supported; unused directions have extent one and no couplings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::MultiIndex;
use crate::model::{Field, ProblemSpec};

/// Maximum spatial dimension handled by the tensor-grid kernels.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Tridiagonal/banded direct solve for small grids, multigrid otherwise.
    #[default]
    Auto,
    Direct,
    Multigrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    /// Relative residual `|f - Au|_2 / |f|_2` at which V-cycles stop.
    pub tolerance: f64,
    pub max_cycles: usize,
    /// Grids with fewer unknowns than this are solved directly under `Auto`.
    pub direct_threshold: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kind: SolverKind::Auto,
            pre_sweeps: 2,
            post_sweeps: 2,
            tolerance: 1e-10,
            max_cycles: 100,
            direct_threshold: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!("solver tolerance {} must lie in (0, 1)", self.tolerance)));
        }
        if self.max_cycles == 0 {
            return Err(Error::Config("solver max_cycles must be positive".into()));
        }
        if self.pre_sweeps + self.post_sweeps == 0 {
            return Err(Error::Config("multigrid needs at least one smoothing sweep".into()));
        }
        Ok(())
    }
}

/// Discrete solution on the grid indexed by `multi_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub multi_index: MultiIndex,
    /// Interior extents `2^l_j - 1`, one per spatial direction.
    pub dims: Vec<usize>,
    /// Nodal values, direction 0 varying fastest.
    pub nodal_values: Vec<f64>,
    pub cost_units: f64,
    pub solver_residual: f64,
    /// V-cycles used; zero for direct solves.
    pub cycles: usize,
}

impl GridSolution {
    pub fn unknowns(&self) -> usize {
        self.nodal_values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// `2^{d l}` for an isotropic scalar level.
    FullGrid,
    /// `2^{|l|_1}` for a multi-index.
    PerIndex,
}

/// Idealized work of one solve: `2^{|l|_1}`. For `FullGrid` the index is
/// read as isotropic and `2^{d l_1}` is returned.
pub fn cost_model(ell: &MultiIndex, mode: CostMode) -> f64 {
    match mode {
        CostMode::PerIndex => 2f64.powi(ell.norm1() as i32),
        CostMode::FullGrid => 2f64.powi(ell.dim() as i32 * ell.levels()[0]),
    }
}

type Dims = [usize; MAX_DIM];

fn extents(ell: &MultiIndex) -> Result<Dims> {
    if ell.dim() > MAX_DIM {
        return Err(Error::Config(format!(
            "spatial dimension {} exceeds the supported maximum of {MAX_DIM}",
            ell.dim()
        )));
    }
    let mut dims = [1usize; MAX_DIM];
    for (j, &l) in ell.levels().iter().enumerate() {
        if !(0..=24).contains(&l) {
            return Err(Error::Argument(format!("grid level {l} in direction {j} is out of range")));
        }
        dims[j] = (1usize << l) - 1;
    }
    Ok(dims)
}

#[inline]
fn flat(dims: &Dims, i0: usize, i1: usize, i2: usize) -> usize {
    i0 + dims[0] * (i1 + dims[1] * i2)
}

/// Evaluates a separable field on the tensor grid `coords[0] x coords[1] x ...`.
fn tensor_field(field: &Field, coords: &[Vec<f64>; MAX_DIM], dims: &Dims, d: usize, out: &mut [f64], weight: f64) {
    let pre = weight * field.prefactor();
    if pre == 0.0 {
        return;
    }
    let tables: Vec<Vec<f64>> = (0..MAX_DIM)
        .map(|k| {
            if k < d {
                coords[k].iter().map(|&x| field.factor(x)).collect()
            } else {
                vec![1.0]
            }
        })
        .collect();
    for i2 in 0..dims[2] {
        let f2 = pre * tables[2][i2];
        for i1 in 0..dims[1] {
            let f12 = f2 * tables[1][i1];
            let row = flat(dims, 0, i1, i2);
            for (o, &f0) in out[row..row + dims[0]].iter_mut().zip(&tables[0]) {
                *o += f12 * f0;
            }
        }
    }
}

/// `a(x, y)` on the tensor grid.
fn coefficient_on(spec: &ProblemSpec, y: &[f64], coords: &[Vec<f64>; MAX_DIM], dims: &Dims) -> Vec<f64> {
    let n = dims.iter().product();
    let mut out = vec![0.0; n];
    tensor_field(&spec.a0, coords, dims, spec.d, &mut out, 1.0);
    for (mode, &yj) in spec.modes.iter().zip(y) {
        if yj != 0.0 {
            tensor_field(mode, coords, dims, spec.d, &mut out, yj);
        }
    }
    out
}

fn node_coords(dims: &Dims, d: usize) -> [Vec<f64>; MAX_DIM] {
    std::array::from_fn(|k| {
        if k < d {
            let h = 1.0 / (dims[k] + 1) as f64;
            (1..=dims[k]).map(|i| i as f64 * h).collect()
        } else {
            vec![0.0]
        }
    })
}

/// Five/seven point operator `Au = diag u - sum_j (west_j u_{-j} + east_j u_{+j})`.
/// Couplings towards Dirichlet boundary nodes are stored as zero.
#[derive(Debug, Clone)]
struct Stencil {
    dims: Dims,
    d: usize,
    diag: Vec<f64>,
    west: [Vec<f64>; MAX_DIM],
    east: [Vec<f64>; MAX_DIM],
}

impl Stencil {
    fn assemble(spec: &ProblemSpec, y: &[f64], dims: Dims) -> Result<Self> {
        let d = spec.d;
        let n: usize = dims.iter().product();
        let nodes = node_coords(&dims, d);
        let mut diag = vec![0.0; n];
        let mut west: [Vec<f64>; MAX_DIM] = std::array::from_fn(|_| vec![]);
        let mut east: [Vec<f64>; MAX_DIM] = std::array::from_fn(|_| vec![]);
        for j in 0..d {
            // faces in direction j sit at (i + 1/2) h_j, i = 0..=n_j
            let h = 1.0 / (dims[j] + 1) as f64;
            let mut fdims = dims;
            fdims[j] += 1;
            let mut fcoords = nodes.clone();
            fcoords[j] = (0..fdims[j]).map(|i| (i as f64 + 0.5) * h).collect();
            let faces = coefficient_on(spec, y, &fcoords, &fdims);
            if let Some(pos) = faces.iter().position(|&a| !(a > 0.0)) {
                return Err(Error::Domain(format!(
                    "coefficient is not positive (a = {}) at a face in direction {j}, flat face {pos}",
                    faces[pos]
                )));
            }
            let inv_h2 = 1.0 / (h * h);
            let mut w = vec![0.0; n];
            let mut e = vec![0.0; n];
            for i2 in 0..dims[2] {
                for i1 in 0..dims[1] {
                    for i0 in 0..dims[0] {
                        let idx = flat(&dims, i0, i1, i2);
                        let ii = [i0, i1, i2];
                        let lo = ii;
                        let mut hi = ii;
                        hi[j] += 1;
                        let cw = faces[flat(&fdims, lo[0], lo[1], lo[2])] * inv_h2;
                        let ce = faces[flat(&fdims, hi[0], hi[1], hi[2])] * inv_h2;
                        diag[idx] += cw + ce;
                        if ii[j] > 0 {
                            w[idx] = cw;
                        }
                        if ii[j] + 1 < dims[j] {
                            e[idx] = ce;
                        }
                    }
                }
            }
            west[j] = w;
            east[j] = e;
        }
        Ok(Stencil { dims, d, diag, west, east })
    }

    fn len(&self) -> usize {
        self.diag.len()
    }

    /// Off-diagonal part `sum_j (west_j u_{-j} + east_j u_{+j})` at one node.
    #[inline]
    fn neighbours(&self, u: &[f64], i0: usize, i1: usize, i2: usize, idx: usize) -> f64 {
        let dims = &self.dims;
        let ii = [i0, i1, i2];
        let strides = [1, dims[0], dims[0] * dims[1]];
        let mut s = 0.0;
        for j in 0..self.d {
            if ii[j] > 0 {
                s += self.west[j][idx] * u[idx - strides[j]];
            }
            if ii[j] + 1 < dims[j] {
                s += self.east[j][idx] * u[idx + strides[j]];
            }
        }
        s
    }

    fn residual(&self, u: &[f64], f: &[f64], r: &mut [f64]) {
        let dims = self.dims;
        for i2 in 0..dims[2] {
            for i1 in 0..dims[1] {
                for i0 in 0..dims[0] {
                    let idx = flat(&dims, i0, i1, i2);
                    r[idx] = f[idx] - (self.diag[idx] * u[idx] - self.neighbours(u, i0, i1, i2, idx));
                }
            }
        }
    }

    /// One red-black Gauss-Seidel sweep (both colours).
    fn smooth(&self, u: &mut [f64], f: &[f64]) {
        let dims = self.dims;
        for colour in 0..2 {
            for i2 in 0..dims[2] {
                for i1 in 0..dims[1] {
                    let start = (colour + i1 + i2) % 2;
                    for i0 in (start..dims[0]).step_by(2) {
                        let idx = flat(&dims, i0, i1, i2);
                        u[idx] = (f[idx] + self.neighbours(u, i0, i1, i2, idx)) / self.diag[idx];
                    }
                }
            }
        }
    }

    /// Largest dimension ordered slowest so the band is as narrow as possible.
    fn band_order(&self) -> ([usize; MAX_DIM], usize) {
        let mut order = [0, 1, 2];
        order.sort_by_key(|&k| self.dims[k]);
        let bandwidth = self.dims[order[0]] * self.dims[order[1]];
        (order, bandwidth)
    }

    fn band_work(&self) -> f64 {
        let (_, b) = self.band_order();
        self.len() as f64 * (b * b) as f64
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Banded Cholesky factorization of the symmetric stencil operator.
struct BandedCholesky {
    n: usize,
    b: usize,
    /// `l[i * (b + 1) + k]` holds `L(i, i - k)`.
    l: Vec<f64>,
    /// Map from band ordering to natural node index.
    perm: Vec<usize>,
}

impl BandedCholesky {
    fn factor(op: &Stencil) -> Result<Self> {
        let (order, b) = op.band_order();
        let dims = op.dims;
        let pd = [dims[order[0]], dims[order[1]], dims[order[2]]];
        let n = op.len();
        let natural_strides = [1, dims[0], dims[0] * dims[1]];
        let mut perm = vec![0; n];
        let mut inv = vec![0; n];
        for p2 in 0..pd[2] {
            for p1 in 0..pd[1] {
                for p0 in 0..pd[0] {
                    let p = p0 + pd[0] * (p1 + pd[1] * p2);
                    let mut ii = [0; MAX_DIM];
                    ii[order[0]] = p0;
                    ii[order[1]] = p1;
                    ii[order[2]] = p2;
                    let idx = flat(&dims, ii[0], ii[1], ii[2]);
                    perm[p] = idx;
                    inv[idx] = p;
                }
            }
        }
        let w = b + 1;
        let mut a = vec![0.0; n * w];
        for p in 0..n {
            let idx = perm[p];
            a[p * w] = op.diag[idx];
            for j in 0..op.d {
                if op.west[j][idx] != 0.0 {
                    let q = inv[idx - natural_strides[j]];
                    debug_assert!(q < p && p - q <= b);
                    a[p * w + (p - q)] = -op.west[j][idx];
                }
            }
        }
        // in-place band Cholesky
        for i in 0..n {
            let jmin = i.saturating_sub(b);
            for j in jmin..=i {
                let mut sum = a[i * w + (i - j)];
                let kmin = jmin.max(j.saturating_sub(b));
                for k in kmin..j {
                    sum -= a[i * w + (i - k)] * a[j * w + (j - k)];
                }
                if j == i {
                    if !(sum > 0.0) {
                        return Err(Error::Domain("operator is not positive definite".into()));
                    }
                    a[i * w] = sum.sqrt();
                } else {
                    a[i * w + (i - j)] = sum / a[j * w];
                }
            }
        }
        Ok(BandedCholesky { n, b, l: a, perm })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        let mut z: Vec<f64> = self.perm.iter().map(|&idx| rhs[idx]).collect();
        for i in 0..n {
            let mut s = z[i];
            for k in i.saturating_sub(b)..i {
                s -= self.l[i * w + (i - k)] * z[k];
            }
            z[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n.min(i + b + 1) {
                s -= self.l[k * w + (k - i)] * z[k];
            }
            z[i] = s / self.l[i * w];
        }
        let mut out = vec![0.0; n];
        for (p, &idx) in self.perm.iter().enumerate() {
            out[idx] = z[p];
        }
        out
    }
}

/// Full-weighting restriction along `axis` (`n_f = 2 n_c + 1`).
fn restrict_axis(src: &[f64], dims: Dims, axis: usize) -> (Vec<f64>, Dims) {
    let mut cd = dims;
    cd[axis] = (dims[axis] - 1) / 2;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let mut out = vec![0.0; cd.iter().product()];
    for c2 in 0..cd[2] {
        for c1 in 0..cd[1] {
            for c0 in 0..cd[0] {
                let mut fi = [c0, c1, c2];
                fi[axis] = 2 * fi[axis] + 1;
                let idx = flat(&dims, fi[0], fi[1], fi[2]);
                out[flat(&cd, c0, c1, c2)] = 0.25 * src[idx - stride] + 0.5 * src[idx] + 0.25 * src[idx + stride];
            }
        }
    }
    (out, cd)
}

/// Linear interpolation along `axis` from `n_c` to `2 n_c + 1` nodes.
fn prolong_axis(src: &[f64], cd: Dims, axis: usize) -> (Vec<f64>, Dims) {
    let mut fd = cd;
    fd[axis] = 2 * cd[axis] + 1;
    let cstride = [1, cd[0], cd[0] * cd[1]][axis];
    let mut out = vec![0.0; fd.iter().product()];
    for f2 in 0..fd[2] {
        for f1 in 0..fd[1] {
            for f0 in 0..fd[0] {
                let fi = [f0, f1, f2];
                let k = fi[axis];
                let mut ci = fi;
                let v = if k % 2 == 1 {
                    ci[axis] = k / 2;
                    src[flat(&cd, ci[0], ci[1], ci[2])]
                } else {
                    let right = k / 2;
                    let mut acc = 0.0;
                    ci[axis] = right.min(cd[axis].saturating_sub(1));
                    let base = flat(&cd, ci[0], ci[1], ci[2]);
                    if right < cd[axis] {
                        acc += 0.5 * src[base];
                    }
                    if right >= 1 {
                        let left = if right < cd[axis] { base - cstride } else { base };
                        acc += 0.5 * src[left];
                    }
                    acc
                };
                out[flat(&fd, f0, f1, f2)] = v;
            }
        }
    }
    (out, fd)
}

struct Level {
    op: Stencil,
    /// Directions coarsened when moving to the next level.
    coarsened: Vec<usize>,
}

/// Grids at or below this many unknowns are factorized directly inside the
/// multigrid hierarchy.
const COARSE_DIRECT: usize = 64;

struct Multigrid {
    levels: Vec<Level>,
    coarse: BandedCholesky,
}

impl Multigrid {
    fn build(spec: &ProblemSpec, y: &[f64], ell: &MultiIndex) -> Result<Self> {
        let d = spec.d;
        let mut current: Vec<i32> = ell.levels().to_vec();
        let mut levels = vec![];
        loop {
            let dims = extents(&MultiIndex::new(current.clone()))?;
            let op = Stencil::assemble(spec, y, dims)?;
            let top = *current.iter().max().unwrap();
            if op.len() <= COARSE_DIRECT || top <= 1 {
                let coarse = BandedCholesky::factor(&op)?;
                levels.push(Level { op, coarsened: vec![] });
                return Ok(Multigrid { levels, coarse });
            }
            // semi-coarsen only the finest directions
            let coarsened: Vec<usize> = (0..d).filter(|&j| current[j] == top).collect();
            for &j in &coarsened {
                current[j] -= 1;
            }
            levels.push(Level { op, coarsened });
        }
    }

    fn vcycle(&self, k: usize, u: &mut [f64], f: &[f64], pre: usize, post: usize) {
        let level = &self.levels[k];
        if k + 1 == self.levels.len() {
            u.copy_from_slice(&self.coarse.solve(f));
            return;
        }
        let op = &level.op;
        for _ in 0..pre {
            op.smooth(u, f);
        }
        let mut r = vec![0.0; op.len()];
        op.residual(u, f, &mut r);
        let mut dims = op.dims;
        let mut rc = r;
        for &axis in &level.coarsened {
            let (next, nd) = restrict_axis(&rc, dims, axis);
            rc = next;
            dims = nd;
        }
        let mut ec = vec![0.0; rc.len()];
        self.vcycle(k + 1, &mut ec, &rc, pre, post);
        for &axis in level.coarsened.iter().rev() {
            let (next, nd) = prolong_axis(&ec, dims, axis);
            ec = next;
            dims = nd;
        }
        for (ui, ei) in u.iter_mut().zip(&ec) {
            *ui += ei;
        }
        for _ in 0..post {
            op.smooth(u, f);
        }
    }
}

fn rhs_on(spec: &ProblemSpec, dims: &Dims) -> Vec<f64> {
    let coords = node_coords(dims, spec.d);
    let mut f = vec![0.0; dims.iter().product()];
    tensor_field(&spec.f, &coords, dims, spec.d, &mut f, 1.0);
    f
}

/// Solves the discrete problem on the grid `ell` for parameter `y`.
pub fn solve(spec: &ProblemSpec, ell: &MultiIndex, y: &[f64], cfg: &SolverConfig) -> Result<GridSolution> {
    if ell.dim() != spec.d {
        return Err(Error::Argument(format!(
            "multi-index {ell} has {} components, problem has d = {}",
            ell.dim(),
            spec.d
        )));
    }
    if !ell.is_nonnegative() {
        return Err(Error::Argument(format!(
            "multi-index {ell} has a negative component; its value is zero by convention and must not be solved"
        )));
    }
    spec.check_stochastic_point(y)?;
    let dims = extents(ell)?;
    let n: usize = dims.iter().product();
    let mut sol = GridSolution {
        multi_index: ell.clone(),
        dims: dims[..spec.d].to_vec(),
        nodal_values: vec![],
        cost_units: 0.0,
        solver_residual: 0.0,
        cycles: 0,
    };
    if n == 0 {
        return Ok(sol);
    }
    let f = rhs_on(spec, &dims);
    let fnorm = norm2(&f);
    let op = Stencil::assemble(spec, y, dims)?;
    let use_direct = match cfg.kind {
        SolverKind::Direct => true,
        SolverKind::Multigrid => false,
        SolverKind::Auto => spec.d == 1 || (n < cfg.direct_threshold && op.band_work() <= 5e7),
    };
    let mut r = vec![0.0; n];
    if fnorm == 0.0 {
        sol.nodal_values = vec![0.0; n];
        sol.cost_units = n as f64;
        return Ok(sol);
    }
    if use_direct {
        let u = BandedCholesky::factor(&op)?.solve(&f);
        op.residual(&u, &f, &mut r);
        sol.solver_residual = norm2(&r) / fnorm;
        sol.nodal_values = u;
        sol.cost_units = n as f64;
        return Ok(sol);
    }
    cfg.validate()?;
    let mg = Multigrid::build(spec, y, ell)?;
    let mut u = vec![0.0; n];
    let mut history = Vec::new();
    loop {
        mg.vcycle(0, &mut u, &f, cfg.pre_sweeps, cfg.post_sweeps);
        op.residual(&u, &f, &mut r);
        let rel = norm2(&r) / fnorm;
        history.push(rel);
        if rel <= cfg.tolerance {
            break;
        }
        if history.len() >= cfg.max_cycles || !rel.is_finite() {
            return Err(Error::Solver { history });
        }
    }
    sol.cycles = history.len();
    sol.solver_residual = *history.last().unwrap();
    sol.cost_units = (n * sol.cycles) as f64;
    sol.nodal_values = u;
    Ok(sol)
}

/// Tensor trapezoid approximation of `int g u dx` from interior nodal values.
pub fn functional_value(spec: &ProblemSpec, sol: &GridSolution) -> f64 {
    if sol.nodal_values.is_empty() {
        return 0.0;
    }
    let mut dims = [1usize; MAX_DIM];
    dims[..sol.dims.len()].copy_from_slice(&sol.dims);
    assert_eq!(dims.iter().product::<usize>(), sol.nodal_values.len(), "solution shape mismatch");
    let coords = node_coords(&dims, spec.d);
    let mut g = vec![0.0; sol.nodal_values.len()];
    tensor_field(&spec.g, &coords, &dims, spec.d, &mut g, 1.0);
    let cell: f64 = sol.dims.iter().map(|&n| 1.0 / (n + 1) as f64).product();
    cell * g.iter().zip(&sol.nodal_values).map(|(gi, ui)| gi * ui).sum::<f64>()
}

/// Functional value and cost units of one grid solve; grids without interior
/// nodes contribute zero at zero cost.
pub fn functional(spec: &ProblemSpec, ell: &MultiIndex, y: &[f64], cfg: &SolverConfig) -> Result<(f64, f64)> {
    let sol = solve(spec, ell, y, cfg)?;
    Ok((functional_value(spec, &sol), sol.cost_units))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }

    #[test]
    fn quadratic_is_reproduced_exactly_in_1d() {
        let spec = ProblemSpec::poisson_constant(1).unwrap();
        let sol = solve(&spec, &MultiIndex::from([3]), &[0.0], &SolverConfig::default()).unwrap();
        assert_eq!(sol.dims, vec![7]);
        for (i, u) in sol.nodal_values.iter().enumerate() {
            let x = (i + 1) as f64 / 8.0;
            assert!((u - x * (1.0 - x) / 2.0).abs() < 1e-15, "node {i}");
        }
    }

    #[test]
    fn empty_grid_has_zero_functional() {
        let spec = ProblemSpec::poisson_constant(1).unwrap();
        let (p, cost) = functional(&spec, &MultiIndex::from([0]), &[0.0], &SolverConfig::default()).unwrap();
        assert_eq!((p, cost), (0.0, 0.0));
        let spec = ProblemSpec::builtin(2, 3, 0.9).unwrap();
        let (p, _) = functional(&spec, &MultiIndex::from([0, 5]), &[0.1, 0.2, 0.3], &SolverConfig::default()).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn negative_index_is_rejected() {
        let spec = ProblemSpec::poisson_constant(2).unwrap();
        assert!(matches!(
            solve(&spec, &MultiIndex::from([-1, 2]), &[0.0], &SolverConfig::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn poisson_functional_converges_to_one_twelfth() {
        let spec = ProblemSpec::poisson_constant(1).unwrap();
        for l in 1..10 {
            let (p, _) = functional(&spec, &MultiIndex::from([l]), &[0.0], &SolverConfig::default()).unwrap();
            // trapezoid of x(1-x)/2: 1/12 - h^2/12
            let h = 2f64.powi(-l);
            assert!((p - (1.0 / 12.0 - h * h / 12.0)).abs() < 1e-12, "l={l}: {p}");
        }
    }

    #[test]
    fn manufactured_2d_nodal_error_is_second_order() {
        let spec = ProblemSpec::manufactured_sine(2).unwrap();
        let mut errs = vec![];
        for l in 2..=6 {
            let sol = solve(&spec, &MultiIndex::from([l, l]), &[0.0], &SolverConfig::default()).unwrap();
            let n = sol.dims[0];
            let h = 1.0 / (n + 1) as f64;
            let mut err: f64 = 0.0;
            for i1 in 0..n {
                for i0 in 0..n {
                    let exact = (PI * (i0 + 1) as f64 * h).sin() * (PI * (i1 + 1) as f64 * h).sin();
                    err = err.max((sol.nodal_values[i0 + n * i1] - exact).abs());
                }
            }
            assert!(err <= 4f64.powi(-l), "l={l}: {err}");
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.8..=2.2).contains(&order), "{order}");
        }
    }

    #[test]
    fn functional_order_on_manufactured_problems() {
        let cfg = SolverConfig::default();
        // the 1D sine solution superconverges (nodal and quadrature errors
        // cancel at second order), so 1D uses the quadratic solution
        for (d, range) in [(1usize, 3..=7), (2, 2..=6)] {
            let spec = if d == 1 {
                ProblemSpec::poisson_constant(1).unwrap()
            } else {
                ProblemSpec::manufactured_sine(d).unwrap()
            };
            let exact = spec.exact_functional().unwrap();
            let (xs, ys): (Vec<f64>, Vec<f64>) = range
                .map(|l| {
                    let (p, _) = functional(&spec, &MultiIndex::isotropic(d, l), &[0.0], &cfg).unwrap();
                    (l as f64, (p - exact).abs().log2())
                })
                .unzip();
            let order = -ls_slope(&xs, &ys);
            assert!((1.8..=2.2).contains(&order), "d={d}: {order}");
        }
    }

    #[test]
    fn multigrid_matches_direct() {
        let spec = ProblemSpec::builtin(2, 4, 0.9).unwrap();
        let y = [0.3, -0.4, 0.1, 0.5];
        let mg_cfg = SolverConfig {
            kind: SolverKind::Multigrid,
            ..SolverConfig::default()
        };
        let direct_cfg = SolverConfig {
            kind: SolverKind::Direct,
            ..SolverConfig::default()
        };
        for ell in [[5, 5], [2, 7], [7, 1], [6, 4]] {
            let ell = MultiIndex::from(ell);
            let a = solve(&spec, &ell, &y, &mg_cfg).unwrap();
            let b = solve(&spec, &ell, &y, &direct_cfg).unwrap();
            assert!(a.solver_residual <= 1e-10);
            assert!(a.cycles < 30, "{ell}: {} cycles", a.cycles);
            let pa = functional_value(&spec, &a);
            let pb = functional_value(&spec, &b);
            assert!((pa - pb).abs() <= 1e-10 * pb.abs(), "{ell}: {pa} vs {pb}");
        }
    }

    #[test]
    fn multigrid_in_three_dimensions() {
        let spec = ProblemSpec::builtin(3, 2, 0.9).unwrap();
        let y = [0.5, -0.5];
        let mg_cfg = SolverConfig {
            kind: SolverKind::Multigrid,
            ..SolverConfig::default()
        };
        for ell in [[4, 4, 4], [2, 5, 3], [1, 1, 6]] {
            let ell = MultiIndex::from(ell);
            let a = solve(&spec, &ell, &y, &mg_cfg).unwrap();
            let b = solve(&spec, &ell, &y, &SolverConfig { kind: SolverKind::Direct, ..mg_cfg.clone() }).unwrap();
            let (pa, pb) = (functional_value(&spec, &a), functional_value(&spec, &b));
            assert!((pa - pb).abs() <= 1e-10 * pb.abs(), "{ell}: {pa} vs {pb}");
        }
    }

    #[test]
    fn multigrid_cost_is_linear_in_unknowns() {
        let spec = ProblemSpec::builtin(2, 4, 0.9).unwrap();
        let cfg = SolverConfig {
            kind: SolverKind::Multigrid,
            ..SolverConfig::default()
        };
        let y = [0.2, 0.1, -0.3, 0.4];
        let per_unknown: Vec<f64> = (4..=8)
            .map(|l| {
                let sol = solve(&spec, &MultiIndex::from([l, l]), &y, &cfg).unwrap();
                sol.cost_units / sol.unknowns() as f64
            })
            .collect();
        let lo = per_unknown.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = per_unknown.iter().cloned().fold(0.0, f64::max);
        assert!(hi <= 2.0 * lo, "{per_unknown:?}");
    }

    #[test]
    fn solves_are_deterministic() {
        let spec = ProblemSpec::builtin(2, 3, 0.9).unwrap();
        let y = [0.11, -0.27, 0.4];
        let ell = MultiIndex::from([3, 4]);
        let a = functional(&spec, &ell, &y, &SolverConfig::default()).unwrap();
        let b = functional(&spec, &ell, &y, &SolverConfig::default()).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
    }

    #[test]
    fn cost_model_examples() {
        assert_eq!(cost_model(&MultiIndex::from([2, 3]), CostMode::PerIndex), 32.0);
        assert_eq!(cost_model(&MultiIndex::isotropic(2, 3), CostMode::FullGrid), 64.0);
        assert_eq!(cost_model(&MultiIndex::zeros(3), CostMode::PerIndex), 1.0);
    }

    #[test]
    fn transfer_operators_are_adjoint_up_to_scale() {
        let dims: Dims = [7, 3, 1];
        let fine: Vec<f64> = (0..21).map(|i| (i as f64 * 0.37).sin()).collect();
        let coarse: Vec<f64> = (0..9).map(|i| (i as f64 * 1.3).cos()).collect();
        let (r, cd) = restrict_axis(&fine, dims, 0);
        assert_eq!(cd, [3, 3, 1]);
        let (p, fd) = prolong_axis(&coarse, cd, 0);
        assert_eq!(fd, dims);
        let lhs: f64 = r.iter().zip(&coarse).map(|(a, b)| a * b).sum();
        let rhs: f64 = fine.iter().zip(&p).map(|(a, b)| a * b).sum();
        assert!((2.0 * lhs - rhs).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn discrete_maximum_principle(
                y in prop::collection::vec(-0.5f64..=0.5, 4),
                l0 in 1i32..=5,
                l1 in 1i32..=5,
            ) {
                let spec = ProblemSpec::builtin(2, 4, 0.9).unwrap();
                let sol = solve(&spec, &MultiIndex::from([l0, l1]), &y, &SolverConfig::default()).unwrap();
                prop_assert!(sol.nodal_values.iter().all(|&u| u >= 0.0));
            }
        }
    }
}

//! Uniform pixel grids, fields on them, and the discrete order-`m` gradient.
//!
//! Nodes sit at pixel centers `x = (i + 0.5) h`, `y = (j + 0.5) h` and are
//! stored row-major (`index = j * nx + i`).

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symtensor::{binomial, frobenius_inner, SymTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, h: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("grid must be non-empty, got {nx}x{ny}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("pixel size must be positive, got {h}")));
        }
        Ok(Self { nx, ny, h })
    }

    /// Square grid of `n x n` unit pixels.
    pub fn pixels(n: usize) -> Self {
        Self { nx: n, ny: n, h: 1.0 }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    /// World coordinates of the pixel center `(i, j)`.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h]
    }

    /// Width and height of the pixel rectangle in world units.
    pub fn extent(&self) -> [f64; 2] {
        [self.nx as f64 * self.h, self.ny as f64 * self.h]
    }

    /// Smallest side length that supports order-`m` stencils.
    pub fn min_side(m: usize) -> usize {
        4 * m + 1
    }

    pub fn require_order(&self, m: usize) -> Result<()> {
        let min = Self::min_side(m);
        if self.nx < min || self.ny < min {
            return Err(Error::GridTooSmall { nx: self.nx, ny: self.ny, m, min });
        }
        Ok(())
    }

    fn same_as(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch(format!(
                "grids differ: {}x{} (h={}) vs {}x{} (h={})",
                self.nx, self.ny, self.h, other.nx, other.ny, other.h
            )));
        }
        Ok(())
    }
}

/// Real values on the nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "field of {} values on a {}x{} grid",
                data.len(),
                grid.nx,
                grid.ny
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Format(format!("non-finite value at node {pos}")));
        }
        Ok(Self { grid, data })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, data: vec![value; grid.len()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x, y)` at pixel centers.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let [x, y] = grid.center(i, j);
                data.push(f(x, y));
            }
        }
        Self { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.grid.index(i, j);
        self.data[k] = value;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Discrete L² inner product `Σ h² a b`.
    pub fn dot(&self, other: &ScalarField) -> Result<f64> {
        self.grid.same_as(&other.grid)?;
        let h2 = self.grid.h * self.grid.h;
        Ok(h2 * self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Discrete L² norm `sqrt(Σ h² a²)`.
    pub fn norm_l2(&self) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        (h2 * self.data.iter().map(|a| a * a).sum::<f64>()).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.same_as(&other.grid)?;
        Ok(Self { grid: self.grid, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }
}

/// Boolean values on the nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    grid_nx: usize,
    grid_ny: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(grid: &Grid, value: bool) -> Self {
        Self { grid_nx: grid.nx, grid_ny: grid.ny, data: vec![value; grid.len()] }
    }

    pub fn from_vec(grid: &Grid, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask of {} values on a {}x{} grid",
                data.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(Self { grid_nx: grid.nx, grid_ny: grid.ny, data })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.grid_nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.grid_ny
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[j * self.grid_nx + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        let k = j * self.grid_nx + i;
        self.data[k] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    fn check_shape(&self, other: &Mask) -> Result<()> {
        if self.grid_nx != other.grid_nx || self.grid_ny != other.grid_ny {
            return Err(Error::ShapeMismatch(format!(
                "masks {}x{} and {}x{}",
                self.grid_nx, self.grid_ny, other.grid_nx, other.grid_ny
            )));
        }
        Ok(())
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        self.check_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    /// Clears every pixel set in `other`.
    pub fn subtract(&mut self, other: &Mask) -> Result<()> {
        self.check_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a &= !b;
        }
        Ok(())
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Values of an order-`m` symmetric tensor at every node, stored as
/// `m + 1` compressed components per node.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid,
    order: usize,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: Grid, order: usize) -> Self {
        Self { grid, order, data: vec![0.0; grid.len() * (order + 1)] }
    }

    pub fn from_raw(grid: Grid, order: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() * (order + 1) {
            return Err(Error::ShapeMismatch(format!(
                "tensor field of order {order} needs {} values, got {}",
                grid.len() * (order + 1),
                data.len()
            )));
        }
        Ok(Self { grid, order, data })
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Compressed components at node `idx`.
    #[inline]
    pub fn node(&self, idx: usize) -> &[f64] {
        let w = self.order + 1;
        &self.data[idx * w..(idx + 1) * w]
    }

    pub fn at(&self, i: usize, j: usize) -> SymTensor {
        SymTensor::new(self.node(self.grid.index(i, j)).to_vec())
            .expect("tensor field nodes have at least two components")
    }

    /// Bilinear interpolation of the components at world point `p`.
    ///
    /// `p` must lie within the hull of the pixel centers.
    pub fn interpolate(&self, p: [f64; 2]) -> Result<SymTensor> {
        let g = self.grid;
        let fx = p[0] / g.h - 0.5;
        let fy = p[1] / g.h - 0.5;
        if fx < 0.0 || fy < 0.0 || fx > (g.nx - 1) as f64 || fy > (g.ny - 1) as f64 {
            return Err(Error::Config(format!("point ({}, {}) lies outside the node hull", p[0], p[1])));
        }
        let i0 = (fx.floor() as usize).min(g.nx.saturating_sub(2));
        let j0 = (fy.floor() as usize).min(g.ny.saturating_sub(2));
        let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
        let w = [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty];
        let nodes = [g.index(i0, j0), g.index(i0 + 1, j0), g.index(i0, j0 + 1), g.index(i0 + 1, j0 + 1)];
        let mut comps = vec![0.0; self.order + 1];
        for (wk, &n) in w.iter().zip(&nodes) {
            for (c, v) in comps.iter_mut().zip(self.node(n)) {
                *c += wk * v;
            }
        }
        SymTensor::new(comps)
    }

    /// Multiplicity-weighted inner product `Σ h² A(y)·B(y)`.
    pub fn dot(&self, other: &TensorField) -> Result<f64> {
        self.grid.same_as(&other.grid)?;
        if self.order != other.order {
            return Err(Error::OrderMismatch { left: self.order, right: other.order });
        }
        let w = self.order + 1;
        let mult: Vec<f64> = (0..w).map(|c| binomial(self.order, c)).collect();
        let mut s = 0.0;
        for (a, b) in self.data.chunks_exact(w).zip(other.data.chunks_exact(w)) {
            for c in 0..w {
                s += mult[c] * a[c] * b[c];
            }
        }
        Ok(s * self.grid.h * self.grid.h)
    }
}

/// Boundary treatment of the discrete derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Closure {
    /// Central stencils everywhere; values outside the grid are zero. This
    /// imposes `u = ∂u/∂n = ... = ∂^{m-1}u/∂n^{m-1} = 0` on the boundary.
    Clamped,
    /// Central stencils where they fit, one-sided second-order stencils near
    /// the edges. No assumption on values outside the grid.
    OneSided,
}

const MAX_TAPS: usize = 5;

#[derive(Debug, Clone, Copy)]
struct Taps {
    n: usize,
    idx: [usize; MAX_TAPS],
    w: [f64; MAX_TAPS],
}

/// Finite-difference weights for the `d`-th derivative at `x0` from the
/// given nodes (Fornberg's recursion).
pub fn fd_weights(x0: f64, nodes: &[f64], d: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > d, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; d + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(d);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[d]).collect()
}

/// 1D stencil for the `d`-th derivative at node `i` of an `n`-node line.
fn line_taps(i: usize, n: usize, d: usize, h: f64, closure: Closure) -> Taps {
    let mut taps = Taps { n: 0, idx: [0; MAX_TAPS], w: [0.0; MAX_TAPS] };
    if d == 0 {
        taps.n = 1;
        taps.idx[0] = i;
        taps.w[0] = 1.0;
        return taps;
    }
    let half = d.div_ceil(2);
    let fits = i >= half && i + half < n;
    let (start, len): (isize, usize) = match closure {
        Closure::Clamped => (i as isize - half as isize, 2 * half + 1),
        Closure::OneSided if fits => (i as isize - half as isize, 2 * half + 1),
        Closure::OneSided => {
            let len = d + 2;
            let s = (i as isize - half as isize).clamp(0, n as isize - len as isize);
            (s, len)
        }
    };
    let nodes: Vec<f64> = (0..len).map(|k| (start + k as isize) as f64).collect();
    let w = fd_weights(i as f64, &nodes, d);
    let scale = h.powi(d as i32);
    for (k, wk) in w.into_iter().enumerate() {
        let pos = start + k as isize;
        if wk.abs() < 1e-13 || pos < 0 || pos >= n as isize {
            continue;
        }
        taps.idx[taps.n] = pos as usize;
        taps.w[taps.n] = wk / scale;
        taps.n += 1;
    }
    taps
}

/// The discrete order-`m` gradient `u ↦ ∇^m u` on a fixed grid, with its
/// exact adjoint.
///
/// Component `j` is `∂^m u / ∂x^{m-j} ∂y^j`, built as a tensor product of
/// second-order 1D stencils. The adjoint is taken with respect to
/// `⟨u, w⟩ = Σ h² u w` and `⟨A, B⟩ = Σ h² A·B`, so it carries the binomial
/// multiplicities of the compressed storage.
#[derive(Debug, Clone)]
pub struct DerivOp {
    grid: Grid,
    order: usize,
    closure: Closure,
    // [d][i]: x-stencils for derivative order d at column i
    tx: Vec<Vec<Taps>>,
    ty: Vec<Vec<Taps>>,
    mult: Vec<f64>,
}

impl DerivOp {
    pub fn new(grid: Grid, order: usize, closure: Closure) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("derivative order must be at least 1".into()));
        }
        grid.require_order(order)?;
        let tx =
            (0..=order).map(|d| (0..grid.nx).map(|i| line_taps(i, grid.nx, d, grid.h, closure)).collect()).collect();
        let ty =
            (0..=order).map(|d| (0..grid.ny).map(|j| line_taps(j, grid.ny, d, grid.h, closure)).collect()).collect();
        let mult = (0..=order).map(|c| binomial(order, c)).collect();
        Ok(Self { grid, order, closure, tx, ty, mult })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn closure(&self) -> Closure {
        self.closure
    }

    /// `out[node * (m+1) + c] = (∇^m u)_c(node)`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let (nx, ny, m) = (self.grid.nx, self.grid.ny, self.order);
        let w = m + 1;
        debug_assert_eq!(u.len(), nx * ny);
        debug_assert_eq!(out.len(), nx * ny * w);
        for j in 0..ny {
            for i in 0..nx {
                let node = j * nx + i;
                for c in 0..w {
                    let sx = &self.tx[m - c][i];
                    let sy = &self.ty[c][j];
                    let mut s = 0.0;
                    for q in 0..sy.n {
                        let row = sy.idx[q] * nx;
                        let mut t = 0.0;
                        for p in 0..sx.n {
                            t += sx.w[p] * u[row + sx.idx[p]];
                        }
                        s += sy.w[q] * t;
                    }
                    out[node * w + c] = s;
                }
            }
        }
    }

    /// `out = D* t`; overwrites `out`.
    pub fn adjoint_into(&self, t: &[f64], out: &mut [f64]) {
        let (nx, ny, m) = (self.grid.nx, self.grid.ny, self.order);
        let w = m + 1;
        debug_assert_eq!(out.len(), nx * ny);
        out.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..ny {
            for i in 0..nx {
                let node = j * nx + i;
                for c in 0..w {
                    let val = self.mult[c] * t[node * w + c];
                    if val == 0.0 {
                        continue;
                    }
                    let sx = &self.tx[m - c][i];
                    let sy = &self.ty[c][j];
                    for q in 0..sy.n {
                        let row = sy.idx[q] * nx;
                        let vq = sy.w[q] * val;
                        for p in 0..sx.n {
                            out[row + sx.idx[p]] += sx.w[p] * vq;
                        }
                    }
                }
            }
        }
    }

    /// Diagonal of `D* diag(weight) D`, with `weight` given per node.
    pub fn weighted_gram_diagonal(&self, weight: &[f64]) -> Vec<f64> {
        let (nx, ny, m) = (self.grid.nx, self.grid.ny, self.order);
        let mut diag = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let node = j * nx + i;
                for c in 0..=m {
                    let val = self.mult[c] * weight[node];
                    let sx = &self.tx[m - c][i];
                    let sy = &self.ty[c][j];
                    for q in 0..sy.n {
                        let row = sy.idx[q] * nx;
                        for p in 0..sx.n {
                            let wt = sy.w[q] * sx.w[p];
                            diag[row + sx.idx[p]] += val * wt * wt;
                        }
                    }
                }
            }
        }
        diag
    }

    pub fn apply(&self, u: &ScalarField) -> Result<TensorField> {
        self.grid.same_as(&u.grid())?;
        let mut out = vec![0.0; self.grid.len() * (self.order + 1)];
        self.apply_into(u.data(), &mut out);
        TensorField::from_raw(self.grid, self.order, out)
    }

    pub fn adjoint(&self, t: &TensorField) -> Result<ScalarField> {
        self.grid.same_as(&t.grid())?;
        if t.order() != self.order {
            return Err(Error::OrderMismatch { left: t.order(), right: self.order });
        }
        let mut out = vec![0.0; self.grid.len()];
        self.adjoint_into(t.raw(), &mut out);
        Ok(ScalarField { grid: self.grid, data: out })
    }
}

/// `∇^m u` with one-sided stencils near the boundary.
pub fn deriv_m(u: &ScalarField, m: usize) -> Result<TensorField> {
    DerivOp::new(u.grid(), m, Closure::OneSided)?.apply(u)
}

/// Exact adjoint of [`deriv_m`].
pub fn deriv_m_adjoint(t: &TensorField) -> Result<ScalarField> {
    DerivOp::new(t.grid(), t.order(), Closure::OneSided)?.adjoint(t)
}

/// `∇^m u` for a clamped field (zero outside the grid).
pub fn deriv_m_clamped(u: &ScalarField, m: usize) -> Result<TensorField> {
    DerivOp::new(u.grid(), m, Closure::Clamped)?.apply(u)
}

/// Per-node `|T(y)|²`.
pub fn frobenius_sq_field(t: &TensorField) -> ScalarField {
    let g = t.grid();
    let m = t.order();
    let mult: Vec<f64> = (0..=m).map(|c| binomial(m, c)).collect();
    let data = t.raw().chunks_exact(m + 1).map(|n| n.iter().zip(&mult).map(|(x, k)| k * x * x).sum()).collect();
    ScalarField { grid: g, data }
}

/// Per-node `|T(y)|²` computed through [`frobenius_inner`]; slower reference
/// used by tests.
pub fn frobenius_sq_at(t: &TensorField, i: usize, j: usize) -> f64 {
    let a = t.at(i, j);
    frobenius_inner(&a, &a).expect("same order")
}

#[derive(Debug, Clone, Copy)]
struct Block {
    dx: usize,
    dy: usize,
    ex: usize,
    ey: usize,
    offset: usize,
}

/// Compact order-`m` gradient used by the smoother.
///
/// Component `c` is the tensor product of the `(m−c)`-th forward difference
/// in x and the `c`-th in y, each on `d+1` consecutive nodes. It is evaluated
/// at every stencil position that touches the grid, with zero values outside
/// (`m` ghost layers), so `D*D` is the standard compact clamped operator: the
/// five-point Laplacian for `m = 1`, the thirteen-point biharmonic for
/// `m = 2`. Odd-order components live half a pixel off the nodes.
#[derive(Debug, Clone)]
pub struct CompactDeriv {
    grid: Grid,
    order: usize,
    blocks: Vec<Block>,
    // forward-difference weights scaled by 1/h^d, indexed by d
    w: Vec<Vec<f64>>,
    mult: Vec<f64>,
    len: usize,
    // padded field followed by one block of row differences
    scratch: RefCell<Vec<f64>>,
}

impl CompactDeriv {
    pub fn new(grid: Grid, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("derivative order must be at least 1".into()));
        }
        grid.require_order(order)?;
        let mut blocks = Vec::with_capacity(order + 1);
        let mut offset = 0;
        for c in 0..=order {
            let (dx, dy) = (order - c, c);
            let (ex, ey) = (grid.nx + dx, grid.ny + dy);
            blocks.push(Block { dx, dy, ex, ey, offset });
            offset += ex * ey;
        }
        let w = (0..=order)
            .map(|d| {
                let scale = grid.h.powi(d as i32);
                (0..=d)
                    .map(|r| {
                        let sign = if (d - r).is_multiple_of(2) { 1.0 } else { -1.0 };
                        sign * binomial(d, r) / scale
                    })
                    .collect()
            })
            .collect();
        let mult = (0..=order).map(|c| binomial(order, c)).collect();
        let (px, py) = (grid.nx + 2 * order, grid.ny + 2 * order);
        let scratch = RefCell::new(vec![0.0; px * py + py * (grid.nx + order)]);
        Ok(Self { grid, order, blocks, w, mult, len: offset, scratch })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of evaluation points over all components.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Multiplicity of each evaluation point in the Frobenius sum.
    pub fn multiplicities(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (c, b) in self.blocks.iter().enumerate() {
            out[b.offset..b.offset + b.ex * b.ey].fill(self.mult[c]);
        }
        out
    }

    /// Coefficient at each evaluation point: the mean of the nodal values
    /// nearest to the stencil center, clamped to the grid.
    pub fn sample_weights(&self, v: &ScalarField) -> Result<Vec<f64>> {
        self.grid.same_as(&v.grid())?;
        let (nx, ny) = (self.grid.nx as isize, self.grid.ny as isize);
        let near = |k: isize, d: usize, n: isize| -> [usize; 2] {
            let lo = (k + (d as isize) / 2).clamp(0, n - 1) as usize;
            let hi = (k + (d as isize + 1) / 2).clamp(0, n - 1) as usize;
            [lo, hi]
        };
        let mut out = vec![0.0; self.len];
        for b in &self.blocks {
            for ey in 0..b.ey {
                let ys = near(ey as isize - b.dy as isize, b.dy, ny);
                for ex in 0..b.ex {
                    let xs = near(ex as isize - b.dx as isize, b.dx, nx);
                    let mut s = 0.0;
                    for &y in &ys {
                        for &x in &xs {
                            s += v.get(x, y);
                        }
                    }
                    out[b.offset + ey * b.ex + ex] = 0.25 * s;
                }
            }
        }
        Ok(out)
    }

    fn padded_dims(&self) -> (usize, usize) {
        (self.grid.nx + 2 * self.order, self.grid.ny + 2 * self.order)
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len);
        let m = self.order;
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let (px, py) = self.padded_dims();
        let mut scratch = self.scratch.borrow_mut();
        let (pad, tmp) = scratch.split_at_mut(px * py);
        pad.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..ny {
            pad[(j + m) * px + m..(j + m) * px + m + nx].copy_from_slice(&u[j * nx..(j + 1) * nx]);
        }
        for b in &self.blocks {
            let (wx, wy) = (&self.w[b.dx], &self.w[b.dy]);
            // x-differences on every padded row
            let shift = m - b.dx;
            for yy in 0..py {
                let src = &pad[yy * px + shift..(yy + 1) * px];
                let dst = &mut tmp[yy * b.ex..(yy + 1) * b.ex];
                for (ex, d) in dst.iter_mut().enumerate() {
                    *d = wx.iter().zip(&src[ex..]).map(|(w, v)| w * v).sum();
                }
            }
            // y-differences of the rows above
            let shift = m - b.dy;
            let dst = &mut out[b.offset..b.offset + b.ex * b.ey];
            for ey in 0..b.ey {
                let row = &mut dst[ey * b.ex..(ey + 1) * b.ex];
                row.iter_mut().for_each(|r| *r = 0.0);
                for (q, wq) in wy.iter().enumerate() {
                    let src = &tmp[(ey + shift + q) * b.ex..(ey + shift + q + 1) * b.ex];
                    for (r, v) in row.iter_mut().zip(src) {
                        *r += wq * v;
                    }
                }
            }
        }
    }

    /// `out = D* t` with respect to the multiplicity-weighted sum; overwrites
    /// `out`.
    pub fn adjoint_into(&self, t: &[f64], out: &mut [f64]) {
        let m = self.order;
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let (px, py) = self.padded_dims();
        let mut scratch = self.scratch.borrow_mut();
        let (pad, tmp) = scratch.split_at_mut(px * py);
        pad.iter_mut().for_each(|x| *x = 0.0);
        for (c, b) in self.blocks.iter().enumerate() {
            let (wx, wy) = (&self.w[b.dx], &self.w[b.dy]);
            let tmp = &mut tmp[..py * b.ex];
            tmp.iter_mut().for_each(|x| *x = 0.0);
            let shift = m - b.dy;
            let src = &t[b.offset..b.offset + b.ex * b.ey];
            for ey in 0..b.ey {
                let row = &src[ey * b.ex..(ey + 1) * b.ex];
                for (q, wq) in wy.iter().enumerate() {
                    let wq = wq * self.mult[c];
                    let dst = &mut tmp[(ey + shift + q) * b.ex..(ey + shift + q + 1) * b.ex];
                    for (d, v) in dst.iter_mut().zip(row) {
                        *d += wq * v;
                    }
                }
            }
            let shift = m - b.dx;
            for yy in 0..py {
                let src = &tmp[yy * b.ex..(yy + 1) * b.ex];
                let dst = &mut pad[yy * px + shift..(yy + 1) * px];
                for (p, wp) in wx.iter().enumerate() {
                    for (d, v) in dst[p..].iter_mut().zip(src) {
                        *d += wp * v;
                    }
                }
            }
        }
        for j in 0..ny {
            out[j * nx..(j + 1) * nx].copy_from_slice(&pad[(j + m) * px + m..(j + m) * px + m + nx]);
        }
    }

    /// Diagonal of `D* diag(weight) D` for per-evaluation-point weights.
    pub fn weighted_gram_diagonal(&self, weight: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.grid.nx as isize, self.grid.ny as isize);
        let mut diag = vec![0.0; self.grid.len()];
        for (c, b) in self.blocks.iter().enumerate() {
            let (wx, wy) = (&self.w[b.dx], &self.w[b.dy]);
            for ey in 0..b.ey {
                let y0 = ey as isize - b.dy as isize;
                for ex in 0..b.ex {
                    let val = self.mult[c] * weight[b.offset + ey * b.ex + ex];
                    let x0 = ex as isize - b.dx as isize;
                    for (q, wq) in wy.iter().enumerate() {
                        let y = y0 + q as isize;
                        if y < 0 || y >= ny {
                            continue;
                        }
                        for (p, wp) in wx.iter().enumerate() {
                            let x = x0 + p as isize;
                            if x >= 0 && x < nx {
                                diag[(y * nx + x) as usize] += val * (wp * wq).powi(2);
                            }
                        }
                    }
                }
            }
        }
        diag
    }

    /// `Σ h² mult · weight · (Du)²`.
    pub fn weighted_energy(&self, u: &ScalarField, weight: &[f64]) -> Result<f64> {
        self.grid.same_as(&u.grid())?;
        let mut du = vec![0.0; self.len];
        self.apply_into(u.data(), &mut du);
        let mut s = 0.0;
        for (c, b) in self.blocks.iter().enumerate() {
            let range = b.offset..b.offset + b.ex * b.ey;
            let part: f64 = du[range.clone()].iter().zip(&weight[range]).map(|(d, w)| w * d * d).sum();
            s += self.mult[c] * part;
        }
        Ok(s * self.grid.h * self.grid.h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fornberg_reproduces_classic_stencils() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w, vec![1.0, -2.0, 1.0]);
        let w = fd_weights(0.0, &[0.0, 1.0, 2.0], 1);
        assert!((w[0] + 1.5).abs() < 1e-14 && (w[1] - 2.0).abs() < 1e-14 && (w[2] + 0.5).abs() < 1e-14);
        let w = fd_weights(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 3);
        let want = [-0.5, 1.0, 0.0, -1.0, 0.5];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn quadratic_hessian_is_exact() {
        let g = Grid::new(12, 10, 0.1).unwrap();
        let u = ScalarField::from_fn(g, |x, _| 0.5 * x * x);
        let t = deriv_m(&u, 2).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = t.at(i, j);
                assert!((c.comps()[0] - 1.0).abs() < 1e-9, "{:?}", c);
                assert!(c.comps()[1].abs() < 1e-9 && c.comps()[2].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constants_have_zero_derivatives() {
        for m in 1..=3 {
            let g = Grid::new(4 * m + 1, 4 * m + 3, 0.5).unwrap();
            let t = deriv_m(&ScalarField::constant(g, 3.25), m).unwrap();
            assert!(t.raw().iter().all(|x| x.abs() < 1e-10), "m={m}");
        }
    }

    #[test]
    fn exact_on_degree_m_plus_one_everywhere() {
        for m in 1..=3 {
            let g = Grid::new(13, 14, 0.25).unwrap();
            // x^a y^b with a + b = m + 1
            for a in 0..=m + 1 {
                let b = m + 1 - a;
                let u = ScalarField::from_fn(g, |x, y| x.powi(a as i32) * y.powi(b as i32));
                let t = deriv_m(&u, m).unwrap();
                for j in 0..g.ny {
                    for i in 0..g.nx {
                        let [x, y] = g.center(i, j);
                        for c in 0..=m {
                            let (dx, dy) = (m - c, c);
                            let exact = if dx <= a && dy <= b {
                                let fa: f64 = ((a - dx + 1)..=a).map(|k| k as f64).product();
                                let fb: f64 = ((b - dy + 1)..=b).map(|k| k as f64).product();
                                fa * fb * x.powi((a - dx) as i32) * y.powi((b - dy) as i32)
                            } else {
                                0.0
                            };
                            let got = t.at(i, j).comps()[c];
                            assert!(
                                (got - exact).abs() < 1e-8 * (1.0 + exact.abs()),
                                "m={m} a={a} c={c} ({i},{j}) {got} vs {exact}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn too_small_grid_rejected() {
        let g = Grid::new(8, 20, 1.0).unwrap();
        assert!(matches!(deriv_m(&ScalarField::zeros(g), 2), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn adjoint_identity_both_closures() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for closure in [Closure::OneSided, Closure::Clamped] {
            for m in 1..=3 {
                let g = Grid::new(17, 14, 0.3).unwrap();
                let op = DerivOp::new(g, m, closure).unwrap();
                let u = ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0));
                let traw: Vec<f64> = (0..g.len() * (m + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
                let t = TensorField::from_raw(g, m, traw).unwrap();
                let lhs = op.apply(&u).unwrap().dot(&t).unwrap();
                let rhs = u.dot(&op.adjoint(&t).unwrap()).unwrap();
                assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{closure:?} m={m}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn gram_diagonal_matches_probe() {
        let g = Grid::new(9, 9, 0.7).unwrap();
        let op = DerivOp::new(g, 2, Closure::Clamped).unwrap();
        let weight: Vec<f64> = (0..g.len()).map(|k| 0.5 + (k % 3) as f64).collect();
        let diag = op.weighted_gram_diagonal(&weight);
        let mut e = vec![0.0; g.len()];
        let mut t = vec![0.0; g.len() * 3];
        let mut out = vec![0.0; g.len()];
        for k in [0, 10, 40, 80] {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[k] = 1.0;
            op.apply_into(&e, &mut t);
            for (n, chunk) in t.chunks_exact_mut(3).enumerate() {
                chunk.iter_mut().for_each(|x| *x *= weight[n]);
            }
            op.adjoint_into(&t, &mut out);
            assert!((out[k] - diag[k]).abs() < 1e-12 * diag[k]);
        }
    }

    #[test]
    fn frobenius_field_examples() {
        let g = Grid::new(9, 9, 0.2).unwrap();
        let u = ScalarField::from_fn(g, |x, y| 0.5 * (x * x + y * y));
        let t = deriv_m(&u, 2).unwrap();
        let f = frobenius_sq_field(&t);
        assert!(f.data().iter().all(|v| (v - 2.0).abs() < 1e-9));
        assert_eq!(f.get(3, 4), frobenius_sq_at(&t, 3, 4));
        let z = frobenius_sq_field(&TensorField::zeros(g, 3));
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolation_at_corner_averages_neighbors() {
        let g = Grid::new(5, 5, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |x, y| x + 2.0 * y);
        let t = deriv_m(&u, 1).unwrap();
        let c = t.interpolate([2.0, 2.0]).unwrap();
        assert!((c.comps()[0] - 1.0).abs() < 1e-12 && (c.comps()[1] - 2.0).abs() < 1e-12);
        assert!(t.interpolate([0.1, 2.0]).is_err());
    }

    // direct evaluation of the compact stencils with explicit bounds checks
    fn compact_reference(op: &CompactDeriv, u: &ScalarField) -> Vec<f64> {
        let g = op.grid();
        let m = op.order();
        let fwd = |d: usize| -> Vec<f64> {
            (0..=d)
                .map(|r| if (d - r).is_multiple_of(2) { 1.0 } else { -1.0 } * binomial(d, r) / g.h.powi(d as i32))
                .collect()
        };
        let mut out = Vec::new();
        for c in 0..=m {
            let (dx, dy) = (m - c, c);
            let (wx, wy) = (fwd(dx), fwd(dy));
            for ey in 0..g.ny + dy {
                for ex in 0..g.nx + dx {
                    let mut s = 0.0;
                    for (q, wq) in wy.iter().enumerate() {
                        for (p, wp) in wx.iter().enumerate() {
                            let x = ex as isize - dx as isize + p as isize;
                            let y = ey as isize - dy as isize + q as isize;
                            if x >= 0 && y >= 0 && (x as usize) < g.nx && (y as usize) < g.ny {
                                s += wp * wq * u.get(x as usize, y as usize);
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
        out
    }

    #[test]
    fn compact_operator_matches_reference_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for m in 1..=3 {
            let g = Grid::new(4 * m + 2, 4 * m + 5, 0.3).unwrap();
            let op = CompactDeriv::new(g, m).unwrap();
            let u = ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0));
            let mut du = vec![0.0; op.len()];
            op.apply_into(u.data(), &mut du);
            let want = compact_reference(&op, &u);
            for (a, b) in du.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
            let t: Vec<f64> = (0..op.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut dt = vec![0.0; g.len()];
            op.adjoint_into(&t, &mut dt);
            let mult = op.multiplicities();
            let lhs: f64 = du.iter().zip(&t).zip(&mult).map(|((a, b), w)| a * b * w).sum();
            let rhs: f64 = u.data().iter().zip(&dt).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
            // repeated application is unaffected by the adjoint's scratch use
            let mut again = vec![0.0; op.len()];
            op.apply_into(u.data(), &mut again);
            assert_eq!(again, du);
        }
    }

    #[test]
    fn compact_first_order_gram_is_five_point_laplacian() {
        let g = Grid::new(7, 6, 0.5).unwrap();
        let op = CompactDeriv::new(g, 1).unwrap();
        let u = ScalarField::from_fn(g, |x, y| (x * 0.7).sin() + y * y);
        let mut du = vec![0.0; op.len()];
        op.apply_into(u.data(), &mut du);
        let mut lap = vec![0.0; g.len()];
        op.adjoint_into(&du, &mut lap);
        let at = |i: isize, j: isize| {
            if i < 0 || j < 0 || i >= 7 || j >= 6 {
                0.0
            } else {
                u.get(i as usize, j as usize)
            }
        };
        for j in 0..6isize {
            for i in 0..7isize {
                let want = (4.0 * at(i, j) - at(i - 1, j) - at(i + 1, j) - at(i, j - 1) - at(i, j + 1)) / 0.25;
                assert!((lap[g.index(i as usize, j as usize)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compact_gram_diagonal_matches_probing() {
        let g = Grid::new(9, 10, 0.7).unwrap();
        for m in 1..=2 {
            let op = CompactDeriv::new(g, m).unwrap();
            let v = ScalarField::from_fn(g, |x, y| if x > y { 0.1 } else { 1.0 });
            let w = op.sample_weights(&v).unwrap();
            let diag = op.weighted_gram_diagonal(&w);
            for k in [0, 13, 44, g.len() - 1] {
                let mut e = vec![0.0; g.len()];
                e[k] = 1.0;
                let mut de = vec![0.0; op.len()];
                op.apply_into(&e, &mut de);
                de.iter_mut().zip(&w).for_each(|(d, wi)| *d *= wi);
                let mut back = vec![0.0; g.len()];
                op.adjoint_into(&de, &mut back);
                assert!((back[k] - diag[k]).abs() < 1e-9 * diag[k]);
            }
        }
    }
}

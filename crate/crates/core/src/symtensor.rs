//! Symmetric tensors over R² and the thin-stripe polarization tensor.
//!
//! An order-`m` symmetric tensor in two dimensions has only `m + 1`
//! independent entries: the value of an entry depends only on how many of its
//! indices are equal to 2. [`SymTensor`] stores exactly those values; every
//! inner product carries the binomial multiplicity `C(m, j)` of the entries it
//! stands for, so Frobenius norms agree with the full `2^m` hypermatrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit vectors are accepted within this distance of norm one.
pub const UNIT_TOL: f64 = 1e-12;

/// Binomial coefficient as a float; exact for the small orders used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Rotates `v` by +90 degrees: `(x, y) -> (-y, x)`.
#[inline]
pub fn perp(v: [f64; 2]) -> [f64; 2] {
    [-v[1], v[0]]
}

/// Fails unless `v` has unit length within [`UNIT_TOL`].
pub fn check_unit(v: [f64; 2]) -> Result<()> {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnitVector(v[0], v[1]));
    }
    Ok(())
}

/// Returns the unit vector at polar angle `theta`.
#[inline]
pub fn unit(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

/// Flips `v` so that its polar angle lies in `[0, pi)`.
///
/// Directions of segments are only defined up to sign; this picks one
/// representative so outputs are reproducible.
pub fn canonical_direction(v: [f64; 2]) -> [f64; 2] {
    if v[1] < 0.0 || (v[1] == 0.0 && v[0] < 0.0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Order-`m` symmetric tensor over R² in compressed form.
///
/// `comps[j]` is the common value of all `C(m, j)` hypermatrix entries whose
/// multi-index contains `j` indices equal to 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymTensor {
    comps: Vec<f64>,
}

impl SymTensor {
    /// Builds a tensor from its `m + 1` compressed components.
    pub fn new(comps: Vec<f64>) -> Result<Self> {
        if comps.len() < 2 {
            return Err(Error::Config(format!("a symmetric tensor needs at least 2 components, got {}", comps.len())));
        }
        Ok(Self { comps })
    }

    pub fn zeros(order: usize) -> Self {
        assert!(order >= 1, "tensor order must be at least 1");
        Self { comps: vec![0.0; order + 1] }
    }

    /// Order-1 tensor (a vector).
    pub fn vector(v: [f64; 2]) -> Self {
        Self { comps: v.to_vec() }
    }

    /// Order-2 tensor from the entries of a symmetric 2x2 matrix.
    pub fn matrix(xx: f64, xy: f64, yy: f64) -> Self {
        Self { comps: vec![xx, xy, yy] }
    }

    /// The `m`-fold symmetric outer product `v ⊗ ... ⊗ v`.
    pub fn outer_power(v: [f64; 2], order: usize) -> Self {
        assert!(order >= 1, "tensor order must be at least 1");
        let comps = (0..=order).map(|j| v[0].powi((order - j) as i32) * v[1].powi(j as i32)).collect();
        Self { comps }
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.comps.len() - 1
    }

    #[inline]
    pub fn comps(&self) -> &[f64] {
        &self.comps
    }

    #[inline]
    pub fn comps_mut(&mut self) -> &mut [f64] {
        &mut self.comps
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        let m = self.order();
        self.comps.iter().enumerate().map(|(j, c)| binomial(m, j) * c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|&c| c == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { comps: self.comps.iter().map(|c| c * s).collect() }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &SymTensor) -> Result<()> {
        check_orders(self, other)?;
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            *a += s * b;
        }
        Ok(())
    }

    /// Entry of the full hypermatrix at `index` (entries are 0 or 1 for the
    /// two coordinate directions).
    pub fn entry(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.order());
        let twos = index.iter().filter(|&&i| i == 1).count();
        self.comps[twos]
    }

    /// Expands to the full `2^m` hypermatrix, index bits read from the first
    /// tensor slot (most significant) to the last.
    pub fn expand(&self) -> Vec<f64> {
        let m = self.order();
        (0..1usize << m).map(|bits| self.comps[bits.count_ones() as usize]).collect()
    }

    /// Compresses a full hypermatrix by reading one representative entry per
    /// index class. The input is assumed symmetric.
    pub fn from_expanded(full: &[f64], order: usize) -> Result<Self> {
        if full.len() != 1usize << order {
            return Err(Error::ShapeMismatch(format!(
                "hypermatrix of order {order} needs {} entries, got {}",
                1usize << order,
                full.len()
            )));
        }
        // representative: the last j slots hold index 2
        let comps = (0..=order).map(|j| full[(1usize << j) - 1]).collect();
        Self::new(comps)
    }

    /// The 2x2 matrix `[[xx, xy], [xy, yy]]` of an order-2 tensor.
    pub fn as_matrix(&self) -> Result<[f64; 3]> {
        if self.order() != 2 {
            return Err(Error::OrderMismatch { left: self.order(), right: 2 });
        }
        Ok([self.comps[0], self.comps[1], self.comps[2]])
    }
}

fn check_orders(a: &SymTensor, b: &SymTensor) -> Result<()> {
    if a.order() != b.order() {
        return Err(Error::OrderMismatch { left: a.order(), right: b.order() });
    }
    Ok(())
}

/// Frobenius inner product `A · B = Σ_j C(m, j) a_j b_j`.
pub fn frobenius_inner(a: &SymTensor, b: &SymTensor) -> Result<f64> {
    check_orders(a, b)?;
    let m = a.order();
    Ok(a.comps.iter().zip(&b.comps).enumerate().map(|(j, (x, y))| binomial(m, j) * x * y).sum())
}

/// Orthonormal basis `E^1, ..., E^{m+1}` of order-`m` symmetric tensors
/// adapted to a direction `tau`.
///
/// `E^h` is the normalized symmetrization of `h - 1` copies of `tau⊥` and
/// `m - h + 1` copies of `tau`, so `E^1 = tau^{⊗m}` and
/// `E^{m+1} = (tau⊥)^{⊗m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasis {
    pub tau: [f64; 2],
    pub order: usize,
    pub elements: Vec<SymTensor>,
}

impl TensorBasis {
    pub fn new(tau: [f64; 2], order: usize) -> Result<Self> {
        check_unit(tau)?;
        if order == 0 {
            return Err(Error::Config("tensor order must be at least 1".into()));
        }
        let p = perp(tau);
        let elements = (0..=order).map(|k| symmetrized_power(tau, p, order, k)).collect();
        Ok(Self { tau, order, elements })
    }

    /// `E^h` with the one-based numbering used throughout (`1 ..= m + 1`).
    pub fn element(&self, h: usize) -> &SymTensor {
        &self.elements[h - 1]
    }
}

/// Normalized sum over the `C(m, k)` distinct tensor products holding `k`
/// copies of `p` and `m - k` copies of `t`.
fn symmetrized_power(t: [f64; 2], p: [f64; 2], m: usize, k: usize) -> SymTensor {
    let scale = 1.0 / binomial(m, k).sqrt();
    let comps = (0..=m)
        .map(|j| {
            // representative index: a = m - j slots equal to 1, b = j equal to 2;
            // r of the p-factors sit on 2-slots, k - r on 1-slots
            let (a, b) = (m - j, j);
            let lo = k.saturating_sub(a);
            let hi = k.min(b);
            let mut s = 0.0;
            for r in lo..=hi {
                s += binomial(b, r)
                    * binomial(a, k - r)
                    * p[1].powi(r as i32)
                    * t[1].powi((b - r) as i32)
                    * p[0].powi((k - r) as i32)
                    * t[0].powi((a + r - k) as i32);
            }
            s * scale
        })
        .collect();
    SymTensor { comps }
}

/// Builds the adapted basis for `tau`; see [`TensorBasis`].
pub fn basis(tau: [f64; 2], order: usize) -> Result<TensorBasis> {
    TensorBasis::new(tau, order)
}

/// Polarization tensor of a thin stripe with direction `tau` and inclusion
/// contrast `kappa`, acting on order-`m` symmetric tensors.
///
/// It is diagonal in the basis of [`TensorBasis`]: eigenvalue 1 on
/// `E^1..E^m` and `1 / kappa` on `E^{m+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polarization {
    basis: TensorBasis,
    kappa: f64,
}

impl Polarization {
    /// `kappa` must lie in `(0, 1)`.
    pub fn new(tau: [f64; 2], kappa: f64, order: usize) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::Config(format!("contrast kappa must lie in (0, 1), got {kappa}")));
        }
        Ok(Self { basis: TensorBasis::new(tau, order)?, kappa })
    }

    pub fn tau(&self) -> [f64; 2] {
        self.basis.tau
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn order(&self) -> usize {
        self.basis.order
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.basis
    }

    /// Eigenvalue attached to `E^h`.
    pub fn eigenvalue(&self, h: usize) -> f64 {
        if h == self.basis.order + 1 {
            1.0 / self.kappa
        } else {
            1.0
        }
    }

    fn check(&self, e: &SymTensor) -> Result<()> {
        if e.order() != self.order() {
            return Err(Error::OrderMismatch { left: e.order(), right: self.order() });
        }
        Ok(())
    }

    /// Coordinates `E · E^h` of `e` in the adapted basis.
    pub fn coordinates(&self, e: &SymTensor) -> Result<Vec<f64>> {
        self.check(e)?;
        self.basis.elements.iter().map(|b| frobenius_inner(e, b)).collect()
    }

    /// `M E = Σ_{n ≤ m} (E·E^n) E^n + (1/κ)(E·E^{m+1}) E^{m+1}`.
    pub fn apply(&self, e: &SymTensor) -> Result<SymTensor> {
        let coords = self.coordinates(e)?;
        let mut out = SymTensor::zeros(self.order());
        for (h, (c, b)) in coords.iter().zip(&self.basis.elements).enumerate() {
            out.axpy(self.eigenvalue(h + 1) * c, b)?;
        }
        Ok(out)
    }

    /// `M E · E`, evaluated from the basis coordinates.
    pub fn quadratic_form(&self, e: &SymTensor) -> Result<f64> {
        let coords = self.coordinates(e)?;
        Ok(coords.iter().enumerate().map(|(h, c)| self.eigenvalue(h + 1) * c * c).sum())
    }

    /// Symmetric bilinear form `M A · B`.
    pub fn bilinear(&self, a: &SymTensor, b: &SymTensor) -> Result<f64> {
        frobenius_inner(&self.apply(a)?, b)
    }
}

pub fn apply_m(p: &Polarization, e: &SymTensor) -> Result<SymTensor> {
    p.apply(e)
}

pub fn quadratic_form(p: &Polarization, e: &SymTensor) -> Result<f64> {
    p.quadratic_form(e)
}

/// Eigen-decomposition of a symmetric 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen2 {
    /// Algebraically larger eigenvalue.
    pub hi: f64,
    /// Algebraically smaller eigenvalue.
    pub lo: f64,
    /// Unit eigenvector of `hi`; the eigenvector of `lo` is its perpendicular.
    pub v_hi: [f64; 2],
}

/// Closed-form eigen-decomposition of `[[a, b], [b, c]]`.
pub fn sym_eigen2(a: f64, b: f64, c: f64) -> SymEigen2 {
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let rad = half_diff.hypot(b);
    // principal axis angle of the larger eigenvalue
    let theta = if rad == 0.0 { 0.0 } else { 0.5 * b.atan2(half_diff) };
    let v_hi = canonical_direction(unit(theta));
    SymEigen2 { hi: mean + rad, lo: mean - rad, v_hi }
}

/// Maximizer of `τ ↦ M(τ)H·H` over the unit circle for an order-2 `H`.
///
/// With eigenpairs `(λ₁, τ̂)`, `(λ₂, τ̂⊥)` ordered by `|λ₁| ≤ |λ₂|`, the
/// maximum is `λ₁² + λ₂²/κ` and is attained at `τ = ±τ̂`. When
/// `|λ₁| = |λ₂|` the direction perpendicular to the eigenvector of the
/// algebraically larger eigenvalue is returned (`(1, 0)` for multiples of
/// the identity). The returned direction has polar angle in `[0, π)`.
pub fn optimal_direction_m2(h: &SymTensor, kappa: f64) -> Result<(f64, [f64; 2])> {
    let [a, b, c] = h.as_matrix()?;
    if h.is_zero() {
        return Err(Error::ZeroTensor);
    }
    let eig = sym_eigen2(a, b, c);
    let scale = eig.hi.abs().max(eig.lo.abs());
    let tie = (eig.hi.abs() - eig.lo.abs()).abs() <= 1e-12 * scale;
    let (l1, l2, tau_hat) = if tie {
        if (eig.hi - eig.lo).abs() <= 1e-12 * scale {
            (eig.lo, eig.hi, [1.0, 0.0])
        } else {
            (eig.lo, eig.hi, canonical_direction(perp(eig.v_hi)))
        }
    } else if eig.lo.abs() < eig.hi.abs() {
        (eig.lo, eig.hi, canonical_direction(perp(eig.v_hi)))
    } else {
        (eig.hi, eig.lo, eig.v_hi)
    };
    Ok((l1 * l1 + l2 * l2 / kappa, tau_hat))
}

/// Kernel matrix `U_ij = Σ_{k,h} T_{ikh} T_{khj}` of an order-3 tensor,
/// returned as `[U_11, U_12, U_22]`.
pub fn kernel_matrix_m3(t: &SymTensor) -> Result<[f64; 3]> {
    if t.order() != 3 {
        return Err(Error::OrderMismatch { left: t.order(), right: 3 });
    }
    let mut u = [[0.0; 2]; 2];
    for (i, row) in u.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..2 {
                for h in 0..2 {
                    s += t.entry(&[i, k, h]) * t.entry(&[k, h, j]);
                }
            }
            *cell = s;
        }
    }
    Ok([u[0][0], u[0][1], u[1][1]])
}

/// Unit eigenvector of the kernel matrix belonging to its eigenvalue of
/// largest magnitude (polar angle in `[0, π)`).
pub fn dominant_direction_m3(t: &SymTensor) -> Result<[f64; 2]> {
    let [a, b, c] = kernel_matrix_m3(t)?;
    if t.is_zero() {
        return Err(Error::ZeroTensor);
    }
    let eig = sym_eigen2(a, b, c);
    if eig.hi.abs() >= eig.lo.abs() {
        Ok(eig.v_hi)
    } else {
        Ok(canonical_direction(perp(eig.v_hi)))
    }
}

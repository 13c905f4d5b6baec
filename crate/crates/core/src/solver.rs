//! Solvers for the regularization PDE
//! `u + α(-1)^m (∇·)^m (v ∇^m u) = f` with clamped boundary conditions, the
//! diffusion equation `-∇·(D∇u) + μu = 0`, and the energies they minimize.

use crate::error::{Error, Result};
use crate::grid::{CompactDeriv, Grid, ScalarField};

/// Default relative residual target for CG.
pub const DEFAULT_CG_TOL: f64 = 1e-10;

/// Default iteration cap: `20 sqrt(nx ny)`, but never below 1000.
pub fn default_max_iter(grid: &Grid) -> usize {
    ((20.0 * (grid.len() as f64).sqrt()) as usize).max(1000)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator.
///
/// `x` holds the initial guess on entry and the solution on exit.
pub fn pcg(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let n = b.len();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport { iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = diag.iter().map(|&d| 1.0 / d).collect();
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for k in 0..n {
        r[k] = b[k] - ap[k];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
    if res <= tol {
        return Ok(CgReport { iterations: 0, relative_residual: res });
    }
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite { iteration: it, curvature: pap });
        }
        let alpha = rz / pap;
        let mut rr = 0.0;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
            rr += r[k] * r[k];
        }
        res = rr.sqrt() / b_norm;
        if res <= tol {
            return Ok(CgReport { iterations: it, relative_residual: res });
        }
        let mut rz_new = 0.0;
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
            rz_new += r[k] * z[k];
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: res })
}

/// Data of the smoothing problem `(I + α D*VD) u = f`.
#[derive(Debug, Clone)]
pub struct SmootherProblem {
    pub f: ScalarField,
    pub v: ScalarField,
    pub alpha: f64,
    pub m: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl SmootherProblem {
    /// Problem with `v ≡ 1` and default solver settings.
    pub fn new(f: ScalarField, alpha: f64, m: usize) -> Self {
        let g = f.grid();
        Self {
            v: ScalarField::constant(g, 1.0),
            f,
            alpha,
            m,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iter: default_max_iter(&g),
        }
    }

    pub fn with_coefficient(mut self, v: ScalarField) -> Self {
        self.v = v;
        self
    }

    pub fn with_tolerance(mut self, tol: f64, max_iter: usize) -> Self {
        self.cg_tol = tol;
        self.cg_max_iter = max_iter;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(1..=3).contains(&self.m) {
            return Err(Error::Config(format!("order m must be 1, 2 or 3, got {}", self.m)));
        }
        if self.v.grid() != self.f.grid() {
            return Err(Error::ShapeMismatch("coefficient and data grids differ".into()));
        }
        if let Some(bad) = self.v.data().iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::Config(format!("coefficient values must lie in (0, 1], found {bad}")));
        }
        Ok(())
    }
}

/// Matrix-free `A = I + α D*VD` with the compact clamped order-`m` gradient.
#[derive(Debug, Clone)]
pub struct SmootherOperator {
    deriv: CompactDeriv,
    weight: Vec<f64>,
    alpha: f64,
    scratch: Vec<f64>,
}

impl SmootherOperator {
    pub fn new(v: &ScalarField, alpha: f64, m: usize) -> Result<Self> {
        let g = v.grid();
        let deriv = CompactDeriv::new(g, m)?;
        let weight = deriv.sample_weights(v)?;
        let scratch = vec![0.0; deriv.len()];
        Ok(Self { deriv, weight, alpha, scratch })
    }

    pub fn grid(&self) -> Grid {
        self.deriv.grid()
    }

    pub fn deriv(&self) -> &CompactDeriv {
        &self.deriv
    }

    /// Coefficient sampled at the evaluation points of [`Self::deriv`].
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// `out = A u`.
    pub fn apply(&mut self, u: &[f64], out: &mut [f64]) {
        self.deriv.apply_into(u, &mut self.scratch);
        for (c, &vk) in self.scratch.iter_mut().zip(&self.weight) {
            *c *= vk;
        }
        self.deriv.adjoint_into(&self.scratch, out);
        for (o, &uk) in out.iter_mut().zip(u) {
            *o = uk + self.alpha * *o;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.deriv.weighted_gram_diagonal(&self.weight).into_iter().map(|d| 1.0 + self.alpha * d).collect()
    }
}

/// Unique solution of `(I + α D*VD) u = f`, i.e. the minimizer of
/// [`functional_j`] over clamped fields.
pub fn solve_smoother(p: &SmootherProblem) -> Result<ScalarField> {
    solve_smoother_from(p, None).map(|(u, _)| u)
}

/// As [`solve_smoother`], optionally warm-started, also returning CG
/// statistics.
pub fn solve_smoother_from(p: &SmootherProblem, initial: Option<&ScalarField>) -> Result<(ScalarField, CgReport)> {
    p.validate()?;
    let g = p.f.grid();
    let mut op = SmootherOperator::new(&p.v, p.alpha, p.m)?;
    let diag = op.diagonal();
    let mut x = match initial {
        Some(u0) if u0.grid() == g => u0.data().to_vec(),
        Some(_) => return Err(Error::ShapeMismatch("initial guess grid differs".into())),
        None => vec![0.0; g.len()],
    };
    let report = pcg(&mut |a, b| op.apply(a, b), &diag, p.f.data(), &mut x, p.cg_tol, p.cg_max_iter)?;
    Ok((ScalarField::new(g, x)?, report))
}

/// `J(u, v) = ½ Σh²(u − f)² + (α/2) Σh² v |∇^m u|²`, using the compact
/// clamped gradient of the smoother.
pub fn functional_j(u: &ScalarField, v: &ScalarField, f: &ScalarField, alpha: f64, m: usize) -> Result<f64> {
    let g = u.grid();
    if v.grid() != g || f.grid() != g {
        return Err(Error::ShapeMismatch("functional arguments live on different grids".into()));
    }
    let op = CompactDeriv::new(g, m)?;
    let reg = op.weighted_energy(u, &op.sample_weights(v)?)?;
    let fit: f64 = u.data().iter().zip(f.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * g.h * g.h * fit + 0.5 * alpha * reg)
}

/// `J_ε = J + 2βε · n_stripes`.
#[allow(clippy::too_many_arguments)]
pub fn functional_j_eps(
    u: &ScalarField,
    v: &ScalarField,
    f: &ScalarField,
    alpha: f64,
    m: usize,
    n_stripes: usize,
    beta: f64,
    eps: f64,
) -> Result<f64> {
    Ok(functional_j(u, v, f, alpha, m)? + 2.0 * beta * eps * n_stripes as f64)
}

/// Data of `-∇·(D∇u) + μu = 0` with Dirichlet values on the outer ring of
/// nodes.
#[derive(Debug, Clone)]
pub struct DiffusionProblem {
    pub d: ScalarField,
    pub mu: ScalarField,
    /// Only the values on the outermost ring of nodes are used.
    pub g: ScalarField,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl DiffusionProblem {
    pub fn new(d: ScalarField, mu: ScalarField, g: ScalarField) -> Self {
        let grid = d.grid();
        Self { d, mu, g, cg_tol: DEFAULT_CG_TOL, cg_max_iter: default_max_iter(&grid) }
    }

    fn validate(&self) -> Result<()> {
        let grid = self.d.grid();
        if self.mu.grid() != grid || self.g.grid() != grid {
            return Err(Error::ShapeMismatch("diffusion fields live on different grids".into()));
        }
        if grid.nx < 3 || grid.ny < 3 {
            return Err(Error::GridTooSmall { nx: grid.nx, ny: grid.ny, m: 1, min: 3 });
        }
        if let Some(bad) = self.d.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Config(format!("diffusion coefficient must be positive, found {bad}")));
        }
        if let Some(bad) = self.mu.data().iter().find(|&&x| !(x >= 0.0)) {
            return Err(Error::Config(format!("absorption must be non-negative, found {bad}")));
        }
        Ok(())
    }
}

/// Harmonic mean of two face-adjacent diffusivities.
#[inline]
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Five-point flux-form solve with harmonic-mean face diffusivities.
pub fn solve_diffusion(p: &DiffusionProblem) -> Result<ScalarField> {
    p.validate()?;
    let grid = p.d.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let h2 = grid.h * grid.h;
    let d = p.d.data();
    let mu = p.mu.data();
    let boundary = |i: usize, j: usize| i == 0 || j == 0 || i == nx - 1 || j == ny - 1;

    // unknowns: interior nodes, numbered row-major
    let (ix, iy) = (nx - 2, ny - 2);
    let n = ix * iy;
    let unk = |i: usize, j: usize| (j - 1) * ix + (i - 1);
    let nbrs = |i: usize, j: usize| [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)];

    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = grid.index(i, j);
            let mut s = mu[k] * h2;
            for (a, b) in nbrs(i, j) {
                let kn = grid.index(a, b);
                let df = harmonic_mean(d[k], d[kn]);
                s += df;
                if boundary(a, b) {
                    rhs[unk(i, j)] += df * p.g.data()[kn];
                }
            }
            diag[unk(i, j)] = s;
        }
    }
    let mut apply = |x: &[f64], out: &mut [f64]| {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let k = grid.index(i, j);
                let u = unk(i, j);
                let mut s = diag[u] * x[u];
                for (a, b) in nbrs(i, j) {
                    if !boundary(a, b) {
                        let kn = grid.index(a, b);
                        s -= harmonic_mean(d[k], d[kn]) * x[unk(a, b)];
                    }
                }
                out[u] = s;
            }
        }
    };
    // start from the mean boundary value
    let ring: Vec<f64> = (0..grid.len())
        .filter(|&k| {
            let (i, j) = grid.coords(k);
            boundary(i, j)
        })
        .map(|k| p.g.data()[k])
        .collect();
    let g_mean = ring.iter().sum::<f64>() / ring.len() as f64;
    let mut x = vec![g_mean; n];
    let diag_copy = diag.clone();
    pcg(&mut apply, &diag_copy, &rhs, &mut x, p.cg_tol, p.cg_max_iter)?;

    let mut out = p.g.data().to_vec();
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            out[grid.index(i, j)] = x[unk(i, j)];
        }
    }
    ScalarField::new(grid, out)
}

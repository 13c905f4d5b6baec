//! Brute-force validation: direct perturbed solves against the predicted
//! topological gradient, manufactured-solution convergence studies,
//! direction sweeps for the polarization tensor, and ground-truth scoring of
//! detections on synthetic qPAT phantoms.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{detect, DetectionResult, DetectorConfig};
use crate::error::{Error, Result};
use crate::grid::{Closure, DerivOp, Grid, ScalarField};
use crate::qpat::{add_noise, detection_image, forward, make_phantom, Phantom, PhantomSpec};
use crate::solver::{functional_j, solve_diffusion, solve_smoother_from, DiffusionProblem, SmootherProblem};
use crate::stripes::{Stripe, StripeSet};
use crate::symtensor::{optimal_direction_m2, unit, Polarization, SymTensor};

/// Setup for checking `J(u_ε, v_ε) − J(u, v) ≈ 2ε³α(κ−1) M∇^m u(y)·∇^m u(y)`.
///
/// The data is given as a function on the square `[0, side]²`; each ε level
/// samples it on its own grid with pixel size `h = resolution · ε²`.
pub struct AsymptoticsSetup<'a> {
    pub f: &'a dyn Fn(f64, f64) -> f64,
    pub side: f64,
    pub y: [f64; 2],
    pub tau: [f64; 2],
    pub alpha: f64,
    pub kappa: f64,
    pub m: usize,
    /// `h / ε²`; at most 1/4.
    pub resolution: f64,
    pub cg_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsRow {
    pub eps: f64,
    pub h: f64,
    pub nodes: usize,
    pub measured_dj: f64,
    pub predicted_dj: f64,
    pub ratio: f64,
    /// `M∇^m u(y)·∇^m u(y)` on this level.
    pub polarization_energy: f64,
    /// Pixel count of the stripe footprint times `h²`.
    pub raster_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub alpha: f64,
    pub kappa: f64,
    pub m: usize,
    pub y: [f64; 2],
    pub tau: [f64; 2],
    pub rows: Vec<AsymptoticsRow>,
}

impl AsymptoticsReport {
    pub fn eps_list(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eps).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ratio).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wr = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            wr.serialize(r)?;
        }
        let bytes = wr.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Runs one perturbed/unperturbed solve pair per ε.
pub fn validate_topo_gradient(setup: &AsymptoticsSetup<'_>, eps_list: &[f64]) -> Result<AsymptoticsReport> {
    if setup.resolution > 0.25 || !(setup.resolution > 0.0) {
        return Err(Error::Config(format!("stripe not resolved: h/eps^2 = {} exceeds 1/4", setup.resolution)));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("eps list must be strictly decreasing".into()));
    }
    if !(setup.kappa > 0.0 && setup.kappa < 1.0) {
        return Err(Error::Config(format!("kappa must lie in (0, 1), got {}", setup.kappa)));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        rows.push(asymptotics_level(setup, eps)?);
    }
    Ok(AsymptoticsReport { alpha: setup.alpha, kappa: setup.kappa, m: setup.m, y: setup.y, tau: setup.tau, rows })
}

fn asymptotics_level(setup: &AsymptoticsSetup<'_>, eps: f64) -> Result<AsymptoticsRow> {
    let h_target = setup.resolution * eps * eps;
    // even pixel count so the domain center is a pixel corner
    let n = (setup.side / h_target).ceil() as usize;
    let n = n + n % 2;
    let h = setup.side / n as f64;
    if h > 0.25 * eps * eps * (1.0 + 1e-12) {
        return Err(Error::Config(format!("stripe not resolved at eps = {eps}")));
    }
    let grid = Grid::new(n, n, h)?;
    // snap y to the nearest pixel corner so the footprint is symmetric
    let y = [(setup.y[0] / h).round() * h, (setup.y[1] / h).round() * h];
    let f = ScalarField::from_fn(grid, |x, yy| (setup.f)(x, yy));

    let base = SmootherProblem::new(f.clone(), setup.alpha, setup.m).with_tolerance(setup.cg_tol, 50 * n.max(200));
    let (u, _) = solve_smoother_from(&base, None)?;
    let v = base.v.clone();

    let mut set = StripeSet::new(grid);
    let footprint = set.insert(Stripe::new(y, setup.tau, eps)?)?;
    let v_eps = set.coefficient_field(setup.kappa);
    let perturbed = base.clone().with_coefficient(v_eps.clone());
    let (u_eps, _) = solve_smoother_from(&perturbed, Some(&u))?;

    let j0 = functional_j(&u, &v, &f, setup.alpha, setup.m)?;
    let j1 = functional_j(&u_eps, &v_eps, &f, setup.alpha, setup.m)?;
    let measured = j1 - j0;

    let grad = DerivOp::new(grid, setup.m, Closure::Clamped)?.apply(&u)?;
    let at_y = grad.interpolate(y)?;
    let pol = Polarization::new(setup.tau, setup.kappa, setup.m)?;
    let q = pol.quadratic_form(&at_y)?;
    let predicted = 2.0 * eps.powi(3) * setup.alpha * (setup.kappa - 1.0) * q;
    let ratio = if predicted != 0.0 { measured / predicted } else { f64::NAN };
    Ok(AsymptoticsRow {
        eps,
        h,
        nodes: grid.len(),
        measured_dj: measured,
        predicted_dj: predicted,
        ratio,
        polarization_energy: q,
        raster_area: footprint.count() as f64 * h * h,
    })
}

/// Default smooth data for the asymptotics check.
pub fn default_smooth_data(x: f64, y: f64) -> f64 {
    (2.0 * x + y).sin() + 0.5 * (x - 2.0 * y).cos() + 0.3 * (PI * x).sin() * (PI * y).sin()
}

/// Standard asymptotics check: [`default_smooth_data`] on `[0, 0.5]²`, a
/// horizontal stripe at the center, `m = 1`, `α = 10⁻³`, `κ = 1/4`, and
/// `h = ε²/4`. The small `α` keeps the clamped boundary layers, of width
/// about `√α`, away from the stripe.
pub fn default_setup() -> AsymptoticsSetup<'static> {
    AsymptoticsSetup {
        f: &default_smooth_data,
        side: 0.5,
        y: [0.25, 0.25],
        tau: [1.0, 0.0],
        alpha: 1e-3,
        kappa: 0.25,
        m: 1,
        resolution: 0.25,
        cg_tol: 1e-10,
    }
}

/// ε levels of the standard check.
pub const DEFAULT_EPS: [f64; 3] = [0.2, 0.1, 0.05];

/// Manufactured problems with known solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceKind {
    /// `u − αΔu = f`, `u* = sin(πx) sin(πy)`.
    SmootherM1,
    /// `u + αΔ²u = f`, `u* = (x(1−x)y(1−y))²`.
    SmootherM2,
    /// `−(Du')' + μu = 0` with a diffusivity jump at `x = 1/2`.
    DiffusionTwoSlab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error: f64,
    /// `log2(e(2h) / e(h))`, absent on the first row.
    pub order: Option<f64>,
}

/// Discrete L² errors of the manufactured problem at each pixel size.
///
/// For the clamped smoother of order `m` the boundary sits `(m+1)/2` pixels
/// outside the outermost nodes, so `N` nodes cover the unit square with
/// `h = 1/(N−1+m+1)`; rows report that actual `h`. For the diffusion problem
/// the outer ring of pixel centers carries the Dirichlet data and `h = 1/N`.
pub fn convergence_study(kind: ConvergenceKind, h_list: &[f64]) -> Result<Vec<ConvergenceRow>> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let (h, error) = match kind {
            ConvergenceKind::SmootherM1 => smoother_error(1, h)?,
            ConvergenceKind::SmootherM2 => smoother_error(2, h)?,
            ConvergenceKind::DiffusionTwoSlab => two_slab_error(h)?,
        };
        let order = rows.last().map(|prev| (prev.error / error).log2() / (prev.h / h).log2());
        rows.push(ConvergenceRow { h, error, order });
    }
    Ok(rows)
}

const MMS_ALPHA_M1: f64 = 0.1;
const MMS_ALPHA_M2: f64 = 0.01;

type PlaneFn = Box<dyn Fn(f64, f64) -> f64>;

fn smoother_error(m: usize, h: f64) -> Result<(f64, f64)> {
    // the effective clamped boundary sits (m+1)/2 pixels outside the first
    // and last nodes
    let b = 0.5 * (m as f64 + 1.0);
    let n = (1.0 / h - 2.0 * b).round() as usize + 1;
    let h = 1.0 / ((n - 1) as f64 + 2.0 * b);
    let grid = Grid::new(n, n, h)?;
    // physical coordinate of a node: world + (b − 1/2)h
    let shift = (b - 0.5) * h;
    let (alpha, exact, forcing): (f64, PlaneFn, PlaneFn) = match m {
        1 => {
            let a = MMS_ALPHA_M1;
            (
                a,
                Box::new(|x, y| (PI * x).sin() * (PI * y).sin()),
                Box::new(move |x, y| (1.0 + 2.0 * a * PI * PI) * (PI * x).sin() * (PI * y).sin()),
            )
        }
        2 => {
            let a = MMS_ALPHA_M2;
            let p = |t: f64| t * t * (1.0 - t) * (1.0 - t);
            let p2 = |t: f64| 2.0 - 12.0 * t + 12.0 * t * t;
            (
                a,
                Box::new(move |x, y| p(x) * p(y)),
                Box::new(move |x, y| p(x) * p(y) + a * (24.0 * p(y) + 2.0 * p2(x) * p2(y) + 24.0 * p(x))),
            )
        }
        _ => return Err(Error::Config(format!("no manufactured smoother solution for m = {m}"))),
    };
    let f = ScalarField::from_fn(grid, |x, y| forcing(x + shift, y + shift));
    let problem = SmootherProblem::new(f, alpha, m).with_tolerance(1e-12, 200_000);
    let (u, _) = solve_smoother_from(&problem, None)?;
    let want = ScalarField::from_fn(grid, |x, y| exact(x + shift, y + shift));
    Ok((h, u.zip_map(&want, |a, b| a - b)?.norm_l2()))
}

/// Analytic 1D solution of `−(D u')' + μ u = 0` on `[0, 1]` with `D = d1`
/// for `x < x0`, `D = d2` beyond, `u(0) = a`, `u(1) = b`.
#[derive(Debug, Clone, Copy)]
pub struct TwoSlab {
    pub d1: f64,
    pub d2: f64,
    pub mu: f64,
    pub x0: f64,
    coef: [f64; 4],
}

impl TwoSlab {
    pub fn new(d1: f64, d2: f64, mu: f64, x0: f64, a: f64, b: f64) -> Self {
        let k1 = (mu / d1).sqrt();
        let k2 = (mu / d2).sqrt();
        // u = c0 e^{k1 x} + c1 e^{-k1 x} (left), c2 e^{k2 (x-1)} + c3 e^{-k2 (x-1)} (right)
        let e = |k: f64, x: f64| (k * x).exp();
        let mut mat = [
            [1.0, 1.0, 0.0, 0.0, a],
            [0.0, 0.0, 1.0, 1.0, b],
            [e(k1, x0), e(-k1, x0), -e(k2, x0 - 1.0), -e(-k2, x0 - 1.0), 0.0],
            [d1 * k1 * e(k1, x0), -d1 * k1 * e(-k1, x0), -d2 * k2 * e(k2, x0 - 1.0), d2 * k2 * e(-k2, x0 - 1.0), 0.0],
        ];
        let coef = solve4(&mut mat);
        Self { d1, d2, mu, x0, coef }
    }

    pub fn value(&self, x: f64) -> f64 {
        let k1 = (self.mu / self.d1).sqrt();
        let k2 = (self.mu / self.d2).sqrt();
        let c = self.coef;
        if x < self.x0 {
            c[0] * (k1 * x).exp() + c[1] * (-k1 * x).exp()
        } else {
            c[2] * (k2 * (x - 1.0)).exp() + c[3] * (-k2 * (x - 1.0)).exp()
        }
    }

    /// Flux `D u'` (continuous across `x0`).
    pub fn flux(&self, x: f64) -> f64 {
        let k1 = (self.mu / self.d1).sqrt();
        let k2 = (self.mu / self.d2).sqrt();
        let c = self.coef;
        if x < self.x0 {
            self.d1 * k1 * (c[0] * (k1 * x).exp() - c[1] * (-k1 * x).exp())
        } else {
            self.d2 * k2 * (c[2] * (k2 * (x - 1.0)).exp() - c[3] * (-k2 * (x - 1.0)).exp())
        }
    }
}

fn solve4(a: &mut [[f64; 5]; 4]) -> [f64; 4] {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for row in 0..4 {
            if row != col {
                let pivot = a[col];
                let fac = a[row][col] / pivot[col];
                for (v, p) in a[row].iter_mut().zip(pivot).skip(col) {
                    *v -= fac * p;
                }
            }
        }
    }
    [a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]]
}

/// Default two-slab configuration: `D` jumps from 1 to 10 at `x = 1/2`.
pub fn default_two_slab() -> TwoSlab {
    TwoSlab::new(1.0, 10.0, 4.0, 0.5, 0.2, 1.0)
}

/// Builds the 2D problem whose solution is the two-slab profile, on a grid
/// with `n` pixel columns and rows of size `1/n`.
pub fn two_slab_problem(slab: &TwoSlab, n: usize) -> Result<DiffusionProblem> {
    let h = 1.0 / n as f64;
    let grid = Grid::new(n, n, h)?;
    let d = ScalarField::from_fn(grid, |x, _| if x < slab.x0 { slab.d1 } else { slab.d2 });
    let mu = ScalarField::constant(grid, slab.mu);
    let g = ScalarField::from_fn(grid, |x, _| slab.value(x));
    let mut p = DiffusionProblem::new(d, mu, g);
    p.cg_tol = 1e-13;
    p.cg_max_iter = 100_000;
    Ok(p)
}

/// Relative mismatch of the discrete flux `D u_x` measured one pixel to each
/// side of the interface, along the middle row.
pub fn two_slab_flux_mismatch(slab: &TwoSlab, n: usize) -> Result<f64> {
    let p = two_slab_problem(slab, n)?;
    let u = solve_diffusion(&p)?;
    let g = u.grid();
    let j = g.ny / 2;
    // interface between columns k-1 and k
    let k = (slab.x0 / g.h).round() as usize;
    let left = slab.d1 * (u.get(k - 1, j) - u.get(k - 2, j)) / g.h;
    let right = slab.d2 * (u.get(k + 1, j) - u.get(k, j)) / g.h;
    Ok((left - right).abs() / left.abs().max(right.abs()))
}

fn two_slab_error(h: f64) -> Result<(f64, f64)> {
    let slab = default_two_slab();
    let n = (1.0 / h).round() as usize;
    let p = two_slab_problem(&slab, n)?;
    let u = solve_diffusion(&p)?;
    let g = u.grid();
    let mut s = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let [x, _] = g.center(i, j);
            if (x - slab.x0).abs() < 0.1 {
                continue;
            }
            let e = u.get(i, j) - slab.value(x);
            s += e * e;
        }
    }
    Ok((g.h, (s * g.h * g.h).sqrt()))
}

/// Maximum of `τ ↦ M(τ)T·T` over `n_angles` equally spaced angles in
/// `[0, π)`; the form is even in `τ`, so this covers the whole circle.
/// Returns `(angle, value)` of the first best sample.
pub fn tau_sweep(t: &SymTensor, kappa: f64, n_angles: usize) -> Result<(f64, f64)> {
    if n_angles < 360 {
        return Err(Error::Config(format!("sweep needs at least 360 angles, got {n_angles}")));
    }
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..n_angles {
        let theta = PI * k as f64 / n_angles as f64;
        let q = Polarization::new(unit(theta), kappa, t.order())?.quadratic_form(t)?;
        if q > best.1 {
            best = (theta, q);
        }
    }
    Ok(best)
}

/// Minimum over the same sweep as [`tau_sweep`].
pub fn tau_sweep_min(t: &SymTensor, kappa: f64, n_angles: usize) -> Result<f64> {
    let mut lo = f64::INFINITY;
    for k in 0..n_angles {
        let theta = PI * k as f64 / n_angles as f64;
        lo = lo.min(Polarization::new(unit(theta), kappa, t.order())?.quadratic_form(t)?);
    }
    Ok(lo)
}

/// Angular distance between two undirected directions, in `[0, π/2]`.
pub fn axis_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Outcome of one randomized tensor check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub samples: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Randomized checks of the polarization tensor: bounds, eigenstructure,
/// bilinear symmetry, and the order-2 maximizer.
pub fn tensor_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.push(check_bounds(&mut rng, 10_000)?);
    out.push(check_eigenstructure(&mut rng, 100)?);
    out.push(check_symmetry(&mut rng, 1_000)?);
    let (value, angle) = check_optimal_m2(&mut rng, 100)?;
    out.push(value);
    out.push(angle);
    Ok(out)
}

fn random_tensor(rng: &mut ChaCha8Rng, m: usize) -> SymTensor {
    SymTensor::new((0..=m).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("m >= 1")
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 2] {
    unit(rng.random_range(0.0..2.0 * PI))
}

/// Worst violation of `|E|²(1 − 1e-9) ≤ M E·E ≤ |E|²/κ (1 + 1e-9)`,
/// relative to `|E|²`.
pub fn check_bounds(rng: &mut ChaCha8Rng, samples: usize) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for _ in 0..samples {
        let m = rng.random_range(1..=3);
        let kappa = rng.random_range(0.01..=0.49);
        let e = random_tensor(rng, m);
        let n2 = e.norm_sq();
        let q = Polarization::new(random_unit(rng), kappa, m)?.quadratic_form(&e)?;
        let lo = n2 * (1.0 - 1e-9);
        let hi = n2 / kappa * (1.0 + 1e-9);
        if !(q >= lo && q <= hi) {
            passed = false;
        }
        worst = worst.max((lo - q).max(q - hi).max(0.0) / n2);
    }
    Ok(CheckOutcome { name: "polarization bounds".into(), samples, worst, tolerance: 0.0, passed })
}

/// Worst residual `|M E^h − μ_h E^h|` over random `(τ, κ, m)`.
pub fn check_eigenstructure(rng: &mut ChaCha8Rng, samples: usize) -> Result<CheckOutcome> {
    let tol = 1e-12;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let m = rng.random_range(1..=3);
        let kappa = rng.random_range(0.01..=0.49);
        let p = Polarization::new(random_unit(rng), kappa, m)?;
        for h in 1..=m + 1 {
            let e = p.basis().element(h).clone();
            let mut r = p.apply(&e)?;
            r.axpy(-p.eigenvalue(h), &e)?;
            // residual measured relative to the eigenvalue
            worst = worst.max(r.norm() / p.eigenvalue(h));
        }
    }
    Ok(CheckOutcome {
        name: "polarization eigenstructure".into(),
        samples,
        worst,
        tolerance: tol,
        passed: worst <= tol,
    })
}

/// Worst `|M A·B − M B·A| / (|A||B|)`.
pub fn check_symmetry(rng: &mut ChaCha8Rng, samples: usize) -> Result<CheckOutcome> {
    let tol = 1e-12;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let m = rng.random_range(1..=3);
        let kappa = rng.random_range(0.01..=0.49);
        let p = Polarization::new(random_unit(rng), kappa, m)?;
        let a = random_tensor(rng, m);
        let b = random_tensor(rng, m);
        let d = (p.bilinear(&a, &b)? - p.bilinear(&b, &a)?).abs();
        worst = worst.max(d / (a.norm() * b.norm()));
    }
    Ok(CheckOutcome { name: "bilinear symmetry".into(), samples, worst, tolerance: tol, passed: worst <= tol })
}

/// Sweep maximum vs `λ₁² + λ₂²/κ` (relative) and sweep argmax vs `τ̂`
/// (degrees) for random order-2 tensors with `|λ₁| < |λ₂|`.
pub fn check_optimal_m2(rng: &mut ChaCha8Rng, samples: usize) -> Result<(CheckOutcome, CheckOutcome)> {
    let kappas = [0.01, 0.1, 0.25];
    let (mut worst_val, mut worst_ang): (f64, f64) = (0.0, 0.0);
    let mut done = 0;
    while done < samples {
        let h = random_tensor(rng, 2);
        let [a, b, c] = h.as_matrix()?;
        let eig = crate::symtensor::sym_eigen2(a, b, c);
        if (eig.hi.abs() - eig.lo.abs()).abs() < 1e-3 * eig.hi.abs().max(eig.lo.abs()) {
            continue;
        }
        let kappa = kappas[done % kappas.len()];
        let (value, tau_hat) = optimal_direction_m2(&h, kappa)?;
        let (angle, best) = tau_sweep(&h, kappa, 3600)?;
        worst_val = worst_val.max((best - value).abs() / value);
        let hat_angle = tau_hat[1].atan2(tau_hat[0]);
        worst_ang = worst_ang.max(axis_gap(angle, hat_angle).to_degrees());
        done += 1;
    }
    Ok((
        CheckOutcome {
            name: "order-2 optimum value".into(),
            samples,
            worst: worst_val,
            tolerance: 1e-6,
            passed: worst_val <= 1e-6,
        },
        CheckOutcome {
            name: "order-2 optimum direction (deg)".into(),
            samples,
            worst: worst_ang,
            tolerance: 0.1,
            passed: worst_ang <= 0.1,
        },
    ))
}

/// How well segment midpoints match the true jump set of a phantom, with
/// distances in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpScore {
    pub segments: usize,
    pub within2: f64,
    pub within3: f64,
    /// Per shape, the number of midpoints within 2 px of its boundary.
    pub hits: Vec<usize>,
}

/// Scores `stripes`, given in pixel units, against `phantom`.
pub fn score_against_phantom(phantom: &Phantom, stripes: &[Stripe]) -> JumpScore {
    let h = phantom.grid().h;
    let mids: Vec<[f64; 2]> = stripes.iter().map(|s| [s.center[0] * h, s.center[1] * h]).collect();
    let frac = |tol: f64| {
        let n = mids.iter().filter(|&&c| phantom.jump_distance(c) / h <= tol).count();
        if mids.is_empty() {
            0.0
        } else {
            n as f64 / mids.len() as f64
        }
    };
    let hits =
        phantom.shapes.iter().map(|s| mids.iter().filter(|&&c| s.boundary_distance(c) / h <= 2.0).count()).collect();
    JumpScore { segments: mids.len(), within2: frac(2.0), within3: frac(3.0), hits }
}

/// Simulates `spec`, adds the noise level of the given Table-1 test, runs
/// that test's algorithm and scores the result.
pub fn qpat_detection(spec: &PhantomSpec, test: u8, m: usize, seed: u64) -> Result<(DetectionResult, JumpScore)> {
    let phantom = make_phantom(spec)?;
    let data = forward(&phantom, &spec.illumination)?;
    let data = add_noise(&data, DetectorConfig::table1_noise_percent(test), seed)?;
    let image = detection_image(&data)?;
    let cfg = DetectorConfig::table1(test, m, 1.0)?;
    let result = detect(&image, &cfg, DetectorConfig::table1_algorithm(test))?;
    let score = score_against_phantom(&phantom, result.stripes());
    Ok((result, score))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_examples() {
        let (angle, best) = tau_sweep(&SymTensor::matrix(1.0, 0.0, 2.0), 0.25, 3600).unwrap();
        assert!((best - 17.0).abs() < 1e-12);
        assert!(axis_gap(angle, 0.0) < 1e-12);
        let iso = SymTensor::matrix(3.0, 0.0, 3.0);
        let (_, hi) = tau_sweep(&iso, 0.1, 720).unwrap();
        let lo = tau_sweep_min(&iso, 0.1, 720).unwrap();
        assert!(hi - lo <= 1e-10 * hi);
        assert!(tau_sweep(&iso, 0.1, 100).is_err());
    }

    #[test]
    fn sweep_respects_upper_bound_for_order_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let t = random_tensor(&mut rng, 3);
            let (_, best) = tau_sweep(&t, 0.05, 720).unwrap();
            assert!(best <= t.norm_sq() / 0.05 * (1.0 + 1e-10));
        }
    }

    #[test]
    fn two_slab_profile_is_consistent() {
        let s = default_two_slab();
        assert!((s.value(0.0) - 0.2).abs() < 1e-12);
        assert!((s.value(1.0) - 1.0).abs() < 1e-12);
        let x0 = s.x0;
        assert!((s.value(x0 - 1e-12) - s.value(x0 + 1e-12)).abs() < 1e-9);
        assert!((s.flux(x0 - 1e-12) - s.flux(x0 + 1e-12)).abs() < 1e-9);
        // -(D u')' + mu u = 0 by finite differences away from x0
        let x = 0.3;
        let d = 1e-4;
        let upp = (s.value(x + d) - 2.0 * s.value(x) + s.value(x - d)) / (d * d);
        assert!((-s.d1 * upp + s.mu * s.value(x)).abs() < 1e-5);
    }

    #[test]
    fn symmetric_critical_point_has_vanishing_leading_term() {
        let f = |x: f64, y: f64| (4.0 * PI * (x - 0.125)).cos() * (4.0 * PI * (y - 0.125)).cos();
        let setup = AsymptoticsSetup { f: &f, side: 0.25, y: [0.125, 0.125], ..default_setup() };
        let r = validate_topo_gradient(&setup, &[0.08, 0.056]).unwrap();
        for row in &r.rows {
            assert!(row.predicted_dj.abs() < 1e-12 * row.eps.powi(3));
        }
        let scaled: Vec<f64> = r.rows.iter().map(|w| w.measured_dj.abs() / w.eps.powi(3)).collect();
        assert!(scaled[1] < scaled[0], "{scaled:?}");
    }

    #[test]
    fn near_unit_contrast_is_linear() {
        let at = |kappa: f64| {
            let setup = AsymptoticsSetup { kappa, ..default_setup() };
            validate_topo_gradient(&setup, &[0.1]).unwrap().rows[0].clone()
        };
        let (a, b) = (at(0.999), at(0.998));
        assert!(a.measured_dj < 0.0 && b.measured_dj < 0.0);
        assert!((b.measured_dj / a.measured_dj - 2.0).abs() < 1e-2);
        assert!((a.ratio - 1.0).abs() < 0.1);
    }

    #[test]
    fn unresolved_stripe_is_rejected() {
        let f = |x: f64, y: f64| x + y;
        let setup = AsymptoticsSetup {
            f: &f,
            side: 1.0,
            y: [0.5, 0.5],
            tau: [1.0, 0.0],
            alpha: 0.1,
            kappa: 0.25,
            m: 1,
            resolution: 0.5,
            cg_tol: 1e-10,
        };
        assert!(matches!(validate_topo_gradient(&setup, &[0.2]), Err(Error::Config(_))));
    }

    #[test]
    fn jump_score_counts_distances_to_the_true_edges() {
        use crate::qpat::{Illumination, Shape, Target};
        let spec = PhantomSpec {
            nx: 40,
            ny: 40,
            h: 0.5,
            mu0: 0.01,
            d0: 1.0,
            gamma: 1.0,
            illumination: Illumination::default(),
            shapes: vec![Shape::Disk { target: Target::Mu, center: [10.0, 10.0], radius: 5.0, value: 0.02 }],
        };
        let p = make_phantom(&spec).unwrap();
        // the disk edge sits 10 px from its centre at (20, 20) in pixel units
        let at = |x: f64| Stripe::new([x, 20.0], [0.0, 1.0], 1.0).unwrap();
        let s = score_against_phantom(&p, &[at(31.5), at(32.5), at(20.0), at(8.5)]);
        assert_eq!(s.segments, 4);
        assert_eq!(s.hits, vec![2]);
        assert!((s.within2 - 0.5).abs() < 1e-12);
        assert!((s.within3 - 0.75).abs() < 1e-12);
    }
}

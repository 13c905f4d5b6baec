//! Greedy stripe insertion driven by the topological gradient.
//!
//! Each algorithm smooths the data once, then repeatedly picks the admissible
//! pixel with the largest indicator, inserts a stripe there and removes a
//! neighborhood of it from the admissible region, until the indicator drops
//! below the threshold. The update variant re-solves the smoother with the
//! stripe coefficient after every batch of `s` insertions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{deriv_m, Grid, Mask, ScalarField, TensorField};
use crate::solver::{default_max_iter, solve_smoother_from, SmootherProblem, DEFAULT_CG_TOL};
use crate::stripes::{admissible_region, dilate, segments_to_json, write_segments_csv, Stripe, StripeSet};
use crate::symtensor::{canonical_direction, dominant_direction_m3, optimal_direction_m2, perp, sym_eigen2, SymTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionPolicy {
    /// Segment along the direction maximizing `M(τ)∇^m u·∇^m u`, i.e.
    /// perpendicular to the dominant variation.
    #[default]
    Lemma,
    /// Segment along the dominant eigenvector.
    PaperText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `|∇^m u|²`.
    #[default]
    GradNorm,
    /// `λ₁² + λ₂²/κ` of the Hessian with `|λ₁| ≤ |λ₂|`.
    EigenM2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Fixed `v ≡ 1`.
    NoUpdate,
    /// Fixed `v ≡ 1`, Hessian-eigenvalue indicator.
    EigenM2,
    /// Coefficient updates every `s` insertions.
    WithUpdate,
}

/// Detector parameters. Lengths (`eps`, `delta0`, `rho0`) are in the units
/// of the grid spacing `h` of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub m: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub beta: f64,
    pub eps: f64,
    pub delta0: f64,
    pub rho0: f64,
    pub s: usize,
    pub direction_policy: DirectionPolicy,
    pub criterion: Criterion,
    /// Permits coefficient updates for `m = 3`.
    pub allow_m3_updates: bool,
    pub cg_tol: f64,
    /// `None` uses [`default_max_iter`].
    pub cg_max_iter: Option<usize>,
    /// Optional cap on the number of inserted segments.
    pub max_segments: Option<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            m: 2,
            alpha: 0.1,
            kappa: 0.01,
            beta: 1.1029e-4,
            eps: 1.0,
            delta0: 12.0,
            rho0: 1.0,
            s: 50,
            direction_policy: DirectionPolicy::Lemma,
            criterion: Criterion::GradNorm,
            allow_m3_updates: false,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iter: None,
            max_segments: None,
        }
    }
}

impl DetectorConfig {
    /// Parameter sets of the five qPAT experiments on a grid of spacing `h`:
    /// `ε = ρ₀ = h`, `δ₀ = 12h`, `κ = 0.01`.
    pub fn table1(test: u8, m: usize, h: f64) -> Result<Self> {
        let (alpha, beta, criterion, s) = match (test, m) {
            (1, 1) => (0.1, 0.0072, Criterion::GradNorm, 50),
            (1, 2) => (0.1, 1.1029e-4, Criterion::GradNorm, 50),
            (1, 3) => (0.1, 6.4453e-5, Criterion::GradNorm, 50),
            (2, 2) => (0.1, 9.5803e-5, Criterion::EigenM2, 50),
            (3, 1) => (0.1, 0.0072, Criterion::GradNorm, 40),
            (3, 2) => (0.1, 1.1029e-4, Criterion::GradNorm, 50),
            (4, 2) => (1.0, 9.288e-4, Criterion::GradNorm, 50),
            (5, 1) => (1.0, 0.0724, Criterion::GradNorm, 50),
            (5, 2) => (1.0, 0.0020, Criterion::GradNorm, 50),
            (5, 3) => (1.0, 0.0015, Criterion::GradNorm, 50),
            _ => return Err(Error::Config(format!("no parameter set for test {test} with m = {m}"))),
        };
        let cfg =
            Self { m, alpha, kappa: 0.01, beta, eps: h, delta0: 12.0 * h, rho0: h, s, criterion, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Algorithm used by a test of [`Self::table1`].
    pub fn table1_algorithm(test: u8) -> Algorithm {
        match test {
            2 => Algorithm::EigenM2,
            3 => Algorithm::WithUpdate,
            _ => Algorithm::NoUpdate,
        }
    }

    /// Noise level, in percent of the mean signal, of a test of
    /// [`Self::table1`].
    pub fn table1_noise_percent(test: u8) -> f64 {
        match test {
            4 => 0.1,
            5 => 2.0,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(1..=3).contains(&self.m) {
            return bad(format!("order m must be 1, 2 or 3, got {}", self.m));
        }
        if !(self.kappa > 0.0 && self.kappa < 0.5) {
            return bad(format!("kappa must lie in (0, 1/2), got {}", self.kappa));
        }
        for (name, value) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("eps", self.eps),
            ("rho0", self.rho0),
            ("cg_tol", self.cg_tol),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return bad(format!("{name} must be positive, got {value}"));
            }
        }
        if !(self.delta0 >= 0.0 && self.delta0.is_finite()) {
            return bad(format!("delta0 must be non-negative, got {}", self.delta0));
        }
        if self.s == 0 {
            return bad("update batch s must be at least 1".into());
        }
        if self.criterion == Criterion::EigenM2 && self.m != 2 {
            return bad(format!("the eigenvalue criterion needs m = 2, got m = {}", self.m));
        }
        Ok(())
    }

    fn smoother(&self, f: ScalarField) -> SmootherProblem {
        let iters = self.cg_max_iter.unwrap_or_else(|| default_max_iter(&f.grid()));
        SmootherProblem::new(f, self.alpha, self.m).with_tolerance(self.cg_tol, iters)
    }
}

/// Stopping level of the indicator.
pub fn threshold(cfg: &DetectorConfig) -> f64 {
    let base = cfg.beta / (cfg.alpha * cfg.eps * cfg.eps * (1.0 - cfg.kappa));
    match cfg.criterion {
        Criterion::GradNorm => base * cfg.kappa,
        Criterion::EigenM2 => base,
    }
}

fn eigen_indicator(hess: &[f64], kappa: f64) -> f64 {
    let e = sym_eigen2(hess[0], hess[1], hess[2]);
    let (small, large) = if e.lo.abs() <= e.hi.abs() { (e.lo, e.hi) } else { (e.hi, e.lo) };
    small * small + large * large / kappa
}

fn indicator_from(grad: &TensorField, cfg: &DetectorConfig) -> ScalarField {
    let g = grad.grid();
    let m = grad.order();
    let mult: Vec<f64> = (0..=m).map(|c| crate::symtensor::binomial(m, c)).collect();
    let data = (0..g.len())
        .map(|k| {
            let t = grad.node(k);
            match cfg.criterion {
                Criterion::GradNorm => t.iter().zip(&mult).map(|(x, w)| w * x * x).sum(),
                Criterion::EigenM2 => eigen_indicator(t, cfg.kappa),
            }
        })
        .collect();
    ScalarField::new(g, data).expect("finite gradient")
}

/// Per-node indicator of `u` for the configured criterion.
pub fn indicator_field(u: &ScalarField, cfg: &DetectorConfig) -> Result<ScalarField> {
    cfg.validate()?;
    Ok(indicator_from(&deriv_m(u, cfg.m)?, cfg))
}

/// Segment direction for `T = ∇^m u(y)`, as a unit vector with polar angle
/// in `[0, π)`.
pub fn select_direction(t: &SymTensor, cfg: &DetectorConfig) -> Result<[f64; 2]> {
    if t.is_zero() {
        return Err(Error::ZeroTensor);
    }
    let tau = match (t.order(), cfg.direction_policy) {
        (1, _) => {
            let c = t.comps();
            let n = c[0].hypot(c[1]);
            perp([c[0] / n, c[1] / n])
        }
        (2, DirectionPolicy::Lemma) => optimal_direction_m2(t, cfg.kappa)?.1,
        (2, DirectionPolicy::PaperText) => {
            let [a, b, c] = t.as_matrix()?;
            let e = sym_eigen2(a, b, c);
            if e.hi.abs() >= e.lo.abs() {
                e.v_hi
            } else {
                perp(e.v_hi)
            }
        }
        (3, DirectionPolicy::Lemma) => perp(dominant_direction_m3(t)?),
        (3, DirectionPolicy::PaperText) => dominant_direction_m3(t)?,
        (m, _) => return Err(Error::Config(format!("no direction rule for order {m}"))),
    };
    Ok(canonical_direction(tau))
}

/// One smoother solve performed during detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    /// Number of stripes in the coefficient at solve time.
    pub stripes: usize,
    pub cg_iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub segments: StripeSet,
    pub u_final: ScalarField,
    pub iterations: usize,
    pub threshold_used: f64,
    /// Indicator value at each insertion, followed by the terminating probe
    /// when the run stopped on the threshold.
    pub indicator_trace: Vec<f64>,
    pub solves: Vec<SolveRecord>,
}

impl DetectionResult {
    pub fn stripes(&self) -> &[Stripe] {
        self.segments.stripes()
    }

    pub fn segments_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_segments_csv(self.segments.stripes(), &mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self, cfg: &DetectorConfig, algorithm: Algorithm) -> serde_json::Value {
        serde_json::json!({
            "algorithm": algorithm,
            "config": cfg,
            "iterations": self.iterations,
            "threshold": self.threshold_used,
            "indicator_trace": self.indicator_trace,
            "solves": self.solves,
            "segments": segments_to_json(self.segments.stripes()),
        })
    }

    /// `iteration,indicator,solve` rows; `solve` indexes [`Self::solves`]
    /// and names the smoothed field the indicator was read from.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,indicator,solve\n");
        for (k, v) in self.indicator_trace.iter().enumerate() {
            let solve = self.solves.iter().rposition(|r| r.stripes <= k).unwrap_or(0);
            s.push_str(&format!("{},{:e},{}\n", k + 1, v, solve));
        }
        s
    }
}

/// Runs `algorithm` on data `f`.
pub fn detect(f: &ScalarField, cfg: &DetectorConfig, algorithm: Algorithm) -> Result<DetectionResult> {
    match algorithm {
        Algorithm::NoUpdate => algorithm_no_update(f, cfg),
        Algorithm::EigenM2 => algorithm_eigen_m2(f, cfg),
        Algorithm::WithUpdate => algorithm_with_update(f, cfg),
    }
}

pub fn algorithm_no_update(f: &ScalarField, cfg: &DetectorConfig) -> Result<DetectionResult> {
    cfg.validate()?;
    if cfg.criterion != Criterion::GradNorm {
        return Err(Error::Config("this algorithm uses the gradient-norm criterion".into()));
    }
    greedy(f, cfg, None)
}

pub fn algorithm_eigen_m2(f: &ScalarField, cfg: &DetectorConfig) -> Result<DetectionResult> {
    if cfg.m != 2 {
        return Err(Error::Config(format!("the eigenvalue algorithm needs m = 2, got m = {}", cfg.m)));
    }
    let cfg = DetectorConfig { criterion: Criterion::EigenM2, direction_policy: DirectionPolicy::Lemma, ..cfg.clone() };
    cfg.validate()?;
    greedy(f, &cfg, None)
}

pub fn algorithm_with_update(f: &ScalarField, cfg: &DetectorConfig) -> Result<DetectionResult> {
    cfg.validate()?;
    if cfg.m == 3 && !cfg.allow_m3_updates {
        return Err(Error::Config("coefficient updates for m = 3 are disabled".into()));
    }
    if cfg.criterion != Criterion::GradNorm {
        return Err(Error::Config("this algorithm uses the gradient-norm criterion".into()));
    }
    greedy(f, cfg, Some(cfg.s))
}

/// Index and value of the largest indicator over `region`; the first index
/// wins ties.
fn admissible_argmax(ind: &ScalarField, region: &Mask) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, (&v, &ok)) in ind.data().iter().zip(region.data()).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best
}

fn greedy(f: &ScalarField, cfg: &DetectorConfig, batch: Option<usize>) -> Result<DetectionResult> {
    let grid: Grid = f.grid();
    grid.require_order(cfg.m)?;
    let mut region = admissible_region(&grid, cfg.delta0, None)?;
    let thr = threshold(cfg);
    let base = cfg.smoother(f.clone());
    let (mut u, report) = solve_smoother_from(&base, None)?;
    let mut solves =
        vec![SolveRecord { stripes: 0, cg_iterations: report.iterations, relative_residual: report.relative_residual }];
    let mut set = StripeSet::new(grid);
    let mut trace = Vec::new();

    'outer: loop {
        let grad = deriv_m(&u, cfg.m)?;
        let ind = indicator_from(&grad, cfg);
        let mut inserted = 0;
        loop {
            if cfg.max_segments.is_some_and(|cap| set.len() >= cap) {
                break 'outer;
            }
            let Some((k, value)) = admissible_argmax(&ind, &region) else {
                break 'outer;
            };
            trace.push(value);
            if value < thr {
                break 'outer;
            }
            let (i, j) = grid.coords(k);
            let tau = select_direction(&grad.at(i, j), cfg)?;
            let footprint = set.insert(Stripe::new(grid.center(i, j), tau, cfg.eps)?)?;
            region.subtract(&dilate(&footprint, cfg.rho0, grid.h)?)?;
            inserted += 1;
            if batch.is_some_and(|s| inserted >= s) {
                break;
            }
        }
        // only the update variant reaches this point
        let p = base.clone().with_coefficient(set.coefficient_field(cfg.kappa));
        let (next, report) = solve_smoother_from(&p, Some(&u))?;
        u = next;
        solves.push(SolveRecord {
            stripes: set.len(),
            cg_iterations: report.iterations,
            relative_residual: report.relative_residual,
        });
    }

    Ok(DetectionResult {
        iterations: set.len(),
        segments: set,
        u_final: u,
        threshold_used: thr,
        indicator_trace: trace,
        solves,
    })
}

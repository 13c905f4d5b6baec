//! Synthetic quantitative photoacoustic data: piecewise-constant absorption
//! `μ` and diffusion `D`, the fluence `u` solving `−∇·(D∇u) + μu = 0` with
//! prescribed boundary illumination, and the absorbed energy `E = Γμu`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::solver::{solve_diffusion, DiffusionProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Mu,
    D,
}

/// A shape overriding one coefficient. Coordinates are in world units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Disk { target: Target, center: [f64; 2], radius: f64, value: f64 },
    Rect { target: Target, min: [f64; 2], max: [f64; 2], value: f64 },
}

impl Shape {
    pub fn target(&self) -> Target {
        match self {
            Shape::Disk { target, .. } | Shape::Rect { target, .. } => *target,
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Shape::Disk { value, .. } | Shape::Rect { value, .. } => *value,
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Disk { center, radius, .. } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                dx * dx + dy * dy <= radius * radius
            }
            Shape::Rect { min, max, .. } => p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1],
        }
    }

    /// Distance from `p` to the shape boundary.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        match self {
            Shape::Disk { center, radius, .. } => ((p[0] - center[0]).hypot(p[1] - center[1]) - radius).abs(),
            Shape::Rect { min, max, .. } => {
                let dx = (min[0] - p[0]).max(p[0] - max[0]);
                let dy = (min[1] - p[1]).max(p[1] - max[1]);
                if dx <= 0.0 && dy <= 0.0 {
                    (-dx).min(-dy)
                } else {
                    dx.max(0.0).hypot(dy.max(0.0))
                }
            }
        }
    }

    fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Shape::Disk { center, radius, .. } => {
                ([center[0] - radius, center[1] - radius], [center[0] + radius, center[1] + radius])
            }
            Shape::Rect { min, max, .. } => (*min, *max),
        }
    }
}

/// Constant boundary value on each side of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Illumination {
    pub left: f64,
    pub right: f64,
    pub bottom: f64,
    pub top: f64,
}

impl Default for Illumination {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl Illumination {
    pub fn uniform(g: f64) -> Self {
        Self { left: g, right: g, bottom: g, top: g }
    }

    /// Boundary field: side values on the outer ring, corners averaged.
    pub fn field(&self, grid: Grid) -> ScalarField {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut g = ScalarField::zeros(grid);
        for j in 0..ny {
            for i in 0..nx {
                let mut sum = 0.0;
                let mut n = 0.0;
                for (on, v) in
                    [(i == 0, self.left), (i == nx - 1, self.right), (j == 0, self.bottom), (j == ny - 1, self.top)]
                {
                    if on {
                        sum += v;
                        n += 1.0;
                    }
                }
                if n > 0.0 {
                    g.set(i, j, sum / n);
                }
            }
        }
        g
    }

    pub fn max(&self) -> f64 {
        self.left.max(self.right).max(self.bottom).max(self.top)
    }
}

/// Plain-text description of a phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    /// Pixel size in world units.
    pub h: f64,
    pub mu0: f64,
    pub d0: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub illumination: Illumination,
    /// Applied in order; later shapes override earlier ones.
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

fn one() -> f64 {
    1.0
}

impl PhantomSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.nx, self.ny, self.h)
    }
}

/// The four-circle phantom: two absorption disks (×5, and a small ×2 in the
/// lower left) and two diffusion disks (×3 and ×0.5) on a 130×130 grid,
/// lit from the right and top sides. All values are synthetic.
pub fn default_phantom_spec() -> PhantomSpec {
    let (mu0, d0) = (0.01, 1.0);
    let h = 0.5;
    let disk = |target, cx: f64, cy: f64, r: f64, value| Shape::Disk {
        target,
        center: [cx * h, cy * h],
        radius: r * h,
        value,
    };
    PhantomSpec {
        nx: 130,
        ny: 130,
        h,
        mu0,
        d0,
        gamma: 1.0,
        illumination: Illumination { left: 0.0, right: 1.0, bottom: 0.0, top: 1.0 },
        shapes: vec![
            disk(Target::Mu, 44.0, 32.0, 9.0, 5.0 * mu0),
            disk(Target::Mu, 36.0, 58.0, 5.0, 2.0 * mu0),
            disk(Target::D, 76.0, 106.0, 13.0, 3.0 * d0),
            disk(Target::D, 27.0, 102.0, 16.0, 0.5 * d0),
        ],
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub mu: ScalarField,
    pub d: ScalarField,
    pub shapes: Vec<Shape>,
    pub mu0: f64,
    pub d0: f64,
    pub gamma: f64,
}

impl Phantom {
    /// Phantom from explicit coefficient fields; `μ ≥ 0` and `D > 0`.
    pub fn from_fields(mu: ScalarField, d: ScalarField, gamma: f64) -> Result<Self> {
        if mu.grid() != d.grid() {
            return Err(Error::ShapeMismatch("coefficient grids differ".into()));
        }
        if mu.min() < 0.0 || d.min() <= 0.0 {
            return Err(Error::Config("need mu >= 0 and D > 0".into()));
        }
        Ok(Self { mu0: mu.get(0, 0), d0: d.get(0, 0), mu, d, shapes: Vec::new(), gamma })
    }

    pub fn grid(&self) -> Grid {
        self.mu.grid()
    }

    /// Distance from `p` to the union of all shape boundaries.
    pub fn jump_distance(&self, p: [f64; 2]) -> f64 {
        self.shapes.iter().map(|s| s.boundary_distance(p)).fold(f64::INFINITY, f64::min)
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let grid = spec.grid()?;
    if !(spec.mu0 > 0.0 && spec.d0 > 0.0) {
        return Err(Error::Config("background mu0 and d0 must be positive".into()));
    }
    if !(spec.gamma > 0.0) {
        return Err(Error::Config(format!("gamma must be positive, got {}", spec.gamma)));
    }
    let [wx, wy] = grid.extent();
    for s in &spec.shapes {
        let (lo, hi) = s.bounds();
        if lo[0] < 0.0 || lo[1] < 0.0 || hi[0] > wx || hi[1] > wy || lo[0] > hi[0] || lo[1] > hi[1] {
            return Err(Error::Config(format!("shape outside the domain: {s:?}")));
        }
        let ok = match s.target() {
            Target::Mu => s.value() > 0.0,
            Target::D => s.value() > 0.0,
        };
        if !ok {
            return Err(Error::Config(format!("shape value must be positive: {s:?}")));
        }
    }
    let mut mu = ScalarField::constant(grid, spec.mu0);
    let mut d = ScalarField::constant(grid, spec.d0);
    for s in &spec.shapes {
        let field = match s.target() {
            Target::Mu => &mut mu,
            Target::D => &mut d,
        };
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if s.contains(grid.center(i, j)) {
                    field.set(i, j, s.value());
                }
            }
        }
    }
    Ok(Phantom { mu, d, shapes: spec.shapes.clone(), mu0: spec.mu0, d0: spec.d0, gamma: spec.gamma })
}

#[derive(Debug, Clone)]
pub struct QpatData {
    pub fluence: ScalarField,
    pub energy: ScalarField,
    pub noisy_energy: Option<ScalarField>,
    pub noise_sigma: f64,
}

impl QpatData {
    /// Noisy energy if present, otherwise the clean energy.
    pub fn observed(&self) -> &ScalarField {
        self.noisy_energy.as_ref().unwrap_or(&self.energy)
    }
}

/// Observed energy divided by its maximum, on a unit-pixel grid; the form
/// the detector consumes.
pub fn detection_image(data: &QpatData) -> Result<ScalarField> {
    let e = data.observed();
    let max = e.max();
    if !(max > 0.0) {
        return Err(Error::Config("energy map has no positive values".into()));
    }
    let g = e.grid();
    ScalarField::new(Grid::new(g.nx, g.ny, 1.0)?, e.data().iter().map(|v| v / max).collect())
}

pub fn forward(p: &Phantom, illumination: &Illumination) -> Result<QpatData> {
    let grid = p.grid();
    let problem = DiffusionProblem::new(p.d.clone(), p.mu.clone(), illumination.field(grid));
    let fluence = solve_diffusion(&problem)?;
    let energy = fluence.zip_map(&p.mu, |u, mu| p.gamma * mu * u)?;
    Ok(QpatData { fluence, energy, noisy_energy: None, noise_sigma: 0.0 })
}

/// Adds i.i.d. Gaussian noise with standard deviation `percent/100` times
/// the mean energy.
pub fn add_noise(d: &QpatData, percent: f64, seed: u64) -> Result<QpatData> {
    if !(percent >= 0.0 && percent.is_finite()) {
        return Err(Error::Config(format!("noise percent must be non-negative, got {percent}")));
    }
    let sigma = percent / 100.0 * d.energy.mean();
    let noisy = if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        let data = d.energy.data().iter().map(|e| e + normal.sample(&mut rng)).collect();
        ScalarField::new(d.energy.grid(), data)?
    } else {
        d.energy.clone()
    };
    Ok(QpatData { noisy_energy: Some(noisy), noise_sigma: sigma, ..d.clone() })
}

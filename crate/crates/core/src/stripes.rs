//! Thin stripes `Ω_ε(y, τ)`: the `ε²`-neighborhood of the segment
//! `{y + ρτ : |ρ| ≤ ε}`, their pixel footprints, and the bookkeeping of the
//! admissible region.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask, ScalarField};
use crate::symtensor::check_unit;

/// A segment of half-length `eps` centered at `center` with unit direction
/// `tau`, thickened to half-width `eps²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stripe {
    pub center: [f64; 2],
    pub tau: [f64; 2],
    pub eps: f64,
}

impl Stripe {
    pub fn new(center: [f64; 2], tau: [f64; 2], eps: f64) -> Result<Self> {
        check_unit(tau)?;
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("stripe half-length must be positive, got {eps}")));
        }
        if !(center[0].is_finite() && center[1].is_finite()) {
            return Err(Error::Config("stripe center must be finite".into()));
        }
        Ok(Self { center, tau, eps })
    }

    /// Endpoints `y ± ε τ`.
    pub fn endpoints(&self) -> [[f64; 2]; 2] {
        let [cx, cy] = self.center;
        let [tx, ty] = self.tau;
        [[cx - self.eps * tx, cy - self.eps * ty], [cx + self.eps * tx, cy + self.eps * ty]]
    }

    /// Distance from `p` to the segment.
    pub fn distance_to_segment(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let along = (dx * self.tau[0] + dy * self.tau[1]).clamp(-self.eps, self.eps);
        let ex = dx - along * self.tau[0];
        let ey = dy - along * self.tau[1];
        ex.hypot(ey)
    }

    /// Analytic area `ε³(4 + πε)`.
    pub fn area(&self) -> f64 {
        stripe_area(self.eps)
    }

    /// Area of the rectangular part, `4ε³`.
    pub fn rect_area(&self) -> f64 {
        4.0 * self.eps.powi(3)
    }

    /// Area of the two half-disk caps, `πε⁴`.
    pub fn caps_area(&self) -> f64 {
        PI * self.eps.powi(4)
    }

    /// Footprint half-width on a grid with pixel size `h`.
    pub fn raster_width(&self, h: f64) -> f64 {
        (self.eps * self.eps).max(0.5 * h)
    }
}

/// `|Ω_ε| = ε³(4 + πε)`.
pub fn stripe_area(eps: f64) -> f64 {
    eps.powi(3) * (4.0 + PI * eps)
}

/// Pixels whose centers lie within `max(ε², h/2)` of the segment.
///
/// The `h/2` floor keeps the footprint at least one pixel wide when `ε²` is
/// below the pixel size.
pub fn rasterize(s: &Stripe, g: &Grid) -> Result<Mask> {
    let w = s.raster_width(g.h);
    let [ext_x, ext_y] = g.extent();
    let [a, b] = s.endpoints();
    let (xmin, xmax) = (a[0].min(b[0]) - w, a[0].max(b[0]) + w);
    let (ymin, ymax) = (a[1].min(b[1]) - w, a[1].max(b[1]) + w);
    if xmin < 0.0 || ymin < 0.0 || xmax > ext_x || ymax > ext_y {
        return Err(Error::StripeOutsideGrid(format!(
            "footprint [{xmin}, {xmax}]x[{ymin}, {ymax}] exceeds [0, {ext_x}]x[0, {ext_y}]"
        )));
    }
    let mut mask = Mask::new(g, false);
    let tol = w * (1.0 + 1e-9);
    let i0 = ((xmin / g.h - 0.5).floor().max(0.0)) as usize;
    let i1 = ((xmax / g.h - 0.5).ceil() as usize).min(g.nx - 1);
    let j0 = ((ymin / g.h - 0.5).floor().max(0.0)) as usize;
    let j1 = ((ymax / g.h - 0.5).ceil() as usize).min(g.ny - 1);
    for j in j0..=j1 {
        for i in i0..=i1 {
            if s.distance_to_segment(g.center(i, j)) <= tol {
                mask.set(i, j, true);
            }
        }
    }
    Ok(mask)
}

/// Morphological dilation by the closed disk of radius `r`, evaluated at
/// pixel centers: a pixel is set iff some set pixel lies within distance `r`.
pub fn dilate(mask: &Mask, r: f64, h: f64) -> Result<Mask> {
    if !(r >= 0.0) {
        return Err(Error::Config(format!("dilation radius must be non-negative, got {r}")));
    }
    let (nx, ny) = (mask.nx(), mask.ny());
    let reach = (r / h * (1.0 + 1e-12)).floor() as isize;
    let lim = (r / h) * (r / h) * (1.0 + 1e-12);
    let mut offsets = Vec::new();
    for dj in -reach..=reach {
        for di in -reach..=reach {
            if ((di * di + dj * dj) as f64) <= lim {
                offsets.push((di, dj));
            }
        }
    }
    let mut out = mask.clone();
    for j in 0..ny {
        for i in 0..nx {
            if !mask.get(i, j) {
                continue;
            }
            for &(di, dj) in &offsets {
                let (x, y) = (i as isize + di, j as isize + dj);
                if x >= 0 && y >= 0 && (x as usize) < nx && (y as usize) < ny {
                    out.set(x as usize, y as usize, true);
                }
            }
        }
    }
    Ok(out)
}

/// Pixels farther than `delta0` from the boundary of the pixel rectangle and
/// not in `excluded`.
pub fn admissible_region(g: &Grid, delta0: f64, excluded: Option<&Mask>) -> Result<Mask> {
    if !(delta0 >= 0.0) {
        return Err(Error::Config(format!("delta0 must be non-negative, got {delta0}")));
    }
    let [ext_x, ext_y] = g.extent();
    let mut out = Mask::new(g, false);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let [x, y] = g.center(i, j);
            let d = x.min(ext_x - x).min(y).min(ext_y - y);
            let inside = delta0 == 0.0 || d > delta0 * (1.0 + 1e-12);
            out.set(i, j, inside);
        }
    }
    if let Some(ex) = excluded {
        out.subtract(ex)?;
    }
    if !out.any() {
        return Err(Error::EmptyAdmissibleRegion);
    }
    Ok(out)
}

/// Stripes in insertion order together with the union of their footprints.
#[derive(Debug, Clone, PartialEq)]
pub struct StripeSet {
    grid: Grid,
    stripes: Vec<Stripe>,
    mask: Mask,
}

impl StripeSet {
    pub fn new(grid: Grid) -> Self {
        Self { grid, stripes: Vec::new(), mask: Mask::new(&grid, false) }
    }

    pub fn from_stripes(grid: Grid, stripes: impl IntoIterator<Item = Stripe>) -> Result<Self> {
        let mut set = Self::new(grid);
        for s in stripes {
            set.insert(s)?;
        }
        Ok(set)
    }

    /// Adds a stripe and returns its footprint.
    pub fn insert(&mut self, s: Stripe) -> Result<Mask> {
        let fp = rasterize(&s, &self.grid)?;
        self.mask.union_with(&fp)?;
        self.stripes.push(s);
        Ok(fp)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn stripes(&self) -> &[Stripe] {
        &self.stripes
    }

    pub fn len(&self) -> usize {
        self.stripes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stripes.is_empty()
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// `v = κ` on the footprint union, 1 elsewhere.
    pub fn coefficient_field(&self, kappa: f64) -> ScalarField {
        let data = self.mask.data().iter().map(|&b| if b { kappa } else { 1.0 }).collect();
        ScalarField::new(self.grid, data).expect("mask matches grid")
    }
}

/// One exported segment, in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub y_x: f64,
    pub y_y: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub eps: f64,
}

impl From<&Stripe> for SegmentRecord {
    fn from(s: &Stripe) -> Self {
        Self { y_x: s.center[0], y_y: s.center[1], tau_x: s.tau[0], tau_y: s.tau[1], eps: s.eps }
    }
}

impl SegmentRecord {
    pub fn to_stripe(&self) -> Result<Stripe> {
        Stripe::new([self.y_x, self.y_y], [self.tau_x, self.tau_y], self.eps)
    }
}

/// Writes `y_x,y_y,tau_x,tau_y,eps` rows with a header line. Floats are
/// printed in shortest round-trip form, so reading them back is exact.
pub fn write_segments_csv<W: Write>(stripes: &[Stripe], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for s in stripes {
        wr.serialize(SegmentRecord::from(s))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_segments_csv<R: Read>(r: R) -> Result<Vec<Stripe>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize::<SegmentRecord>() {
        out.push(rec?.to_stripe()?);
    }
    Ok(out)
}

pub fn segments_to_json(stripes: &[Stripe]) -> serde_json::Value {
    serde_json::to_value(stripes.iter().map(SegmentRecord::from).collect::<Vec<_>>()).expect("plain records serialize")
}

pub fn segments_from_json(v: &serde_json::Value) -> Result<Vec<Stripe>> {
    let recs: Vec<SegmentRecord> = serde_json::from_value(v.clone())?;
    recs.iter().map(SegmentRecord::to_stripe).collect()
}

//! Field interchange: row-major CSV matrices, image-row ordering,
//! normalization and box-filter resampling.
//!
//! Images store their top row first while fields index `j` upward, so row
//! `r` of an image holds `j = ny - 1 - r`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// Field values in image order: top row first, left to right.
pub fn to_image_rows(f: &ScalarField) -> Vec<f64> {
    let g = f.grid();
    let mut out = Vec::with_capacity(g.len());
    for r in 0..g.ny {
        let j = g.ny - 1 - r;
        out.extend((0..g.nx).map(|i| f.get(i, j)));
    }
    out
}

/// Inverse of [`to_image_rows`].
pub fn from_image_rows(grid: Grid, rows: &[f64]) -> Result<ScalarField> {
    if rows.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!("{} samples for a {}x{} image", rows.len(), grid.nx, grid.ny)));
    }
    let mut f = ScalarField::zeros(grid);
    for (k, &v) in rows.iter().enumerate() {
        let (i, r) = (k % grid.nx, k / grid.nx);
        f.set(i, grid.ny - 1 - r, v);
    }
    Ok(f)
}

/// Writes the field as an `ny × nx` matrix in image order, one CSV record
/// per row. Values use shortest round-trip formatting.
pub fn write_field_csv<W: Write>(f: &ScalarField, w: W) -> Result<()> {
    let g = f.grid();
    let rows = to_image_rows(f);
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in rows.chunks(g.nx) {
        wr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_field_csv`]; `h` is the pixel size of
/// the resulting grid.
pub fn read_field_csv<R: Read>(r: R, h: f64) -> Result<ScalarField> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut values = Vec::new();
    let mut nx = None;
    let mut ny = 0;
    for rec in rd.records() {
        let rec = rec?;
        if *nx.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Format(format!("ragged row {} in field CSV", ny + 1)));
        }
        for cell in rec.iter() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Format(format!("bad number {cell:?} in field CSV")))?;
            values.push(v);
        }
        ny += 1;
    }
    let nx = nx.ok_or_else(|| Error::Format("empty field CSV".into()))?;
    from_image_rows(Grid::new(nx, ny, h)?, &values)
}

/// Divides by the maximum, mapping a non-negative field into `[0, 1]`.
pub fn normalize_max(f: &ScalarField) -> Result<ScalarField> {
    let max = f.max();
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::Config(format!("cannot normalize a field with maximum {max}")));
    }
    Ok(f.map(|v| v / max))
}

/// Area-weighted box filter onto an `n × n` grid covering the same square.
/// The output grid keeps the physical extent, so its pixel size is
/// `h · nx / n`.
pub fn box_resize(f: &ScalarField, n: usize) -> Result<ScalarField> {
    let g = f.grid();
    if g.nx != g.ny {
        return Err(Error::ShapeMismatch(format!("resize needs a square image, got {}x{}", g.nx, g.ny)));
    }
    if n == 0 {
        return Err(Error::Config("resize target must be positive".into()));
    }
    let scale = g.nx as f64 / n as f64;
    let weights = |o: usize| -> Vec<(usize, f64)> {
        let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
        let mut w = Vec::new();
        let mut k = a.floor() as usize;
        while (k as f64) < b && k < g.nx {
            let lo = a.max(k as f64);
            let hi = b.min((k + 1) as f64);
            if hi > lo {
                w.push((k, (hi - lo) / scale));
            }
            k += 1;
        }
        w
    };
    let taps: Vec<Vec<(usize, f64)>> = (0..n).map(weights).collect();
    let out_grid = Grid::new(n, n, g.h * scale)?;
    let mut out = ScalarField::zeros(out_grid);
    for (oj, wy) in taps.iter().enumerate() {
        for (oi, wx) in taps.iter().enumerate() {
            let mut s = 0.0;
            for &(j, b) in wy {
                for &(i, a) in wx {
                    s += a * b * f.get(i, j);
                }
            }
            out.set(oi, oj, s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(nx: usize, ny: usize) -> ScalarField {
        ScalarField::from_fn(Grid::new(nx, ny, 1.0).unwrap(), |x, y| x + 10.0 * y)
    }

    #[test]
    fn image_rows_put_the_top_first() {
        let f = ramp(3, 2);
        let rows = to_image_rows(&f);
        assert_eq!(rows[0], f.get(0, 1));
        assert_eq!(rows[3], f.get(0, 0));
        let back = from_image_rows(f.grid(), &rows).unwrap();
        assert_eq!(back.data(), f.data());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let f = ScalarField::from_fn(Grid::new(5, 4, 0.3).unwrap(), |x, y| (x * 1.7).sin() / (1.0 + y));
        let mut buf = Vec::new();
        write_field_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        let g = read_field_csv(buf.as_slice(), 0.3).unwrap();
        assert_eq!(g.grid(), f.grid());
        assert_eq!(g.data(), f.data());
        assert!(read_field_csv("1,2\n3\n".as_bytes(), 1.0).is_err());
        assert!(read_field_csv("".as_bytes(), 1.0).is_err());
    }

    #[test]
    fn normalization_hits_one() {
        let f = ramp(4, 4);
        let n = normalize_max(&f).unwrap();
        assert_eq!(n.max(), 1.0);
        assert!(normalize_max(&ScalarField::zeros(Grid::pixels(3))).is_err());
    }

    #[test]
    fn box_resize_averages_blocks_and_keeps_means() {
        let f = ScalarField::from_fn(Grid::pixels(4), |x, y| x * y);
        let r = box_resize(&f, 2).unwrap();
        assert_eq!(r.grid().h, 2.0);
        // block of pixels (0..2, 0..2): values 0,0,0,1 at centers 0.5/1.5
        let block = (0.5 * 0.5 + 1.5 * 0.5 + 0.5 * 1.5 + 1.5 * 1.5) / 4.0;
        assert!((r.get(0, 0) - block).abs() < 1e-12);
        let odd = box_resize(&ScalarField::from_fn(Grid::pixels(7), |x, y| (x - y).cos()), 3).unwrap();
        let src = ScalarField::from_fn(Grid::pixels(7), |x, y| (x - y).cos());
        assert!((odd.mean() - src.mean()).abs() < 1e-12);
    }
}

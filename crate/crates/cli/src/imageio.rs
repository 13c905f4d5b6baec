//! Image and matrix files. Grayscale images map to `[0, 1]` by their bit
//! depth; CSV matrices are read verbatim. Row 0 of a file is the top of
//! the field.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::{DynamicImage, Rgb, RgbImage};
use stripe_core::io::{from_image_rows, read_field_csv, to_image_rows, write_field_csv};
use stripe_core::{Grid, Mask, ScalarField};

use crate::error::{CliError, CliResult};

fn is_csv(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a PGM, PNG or CSV file onto a unit-pixel grid.
pub fn read_field(path: &Path) -> CliResult<ScalarField> {
    if is_csv(path) {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        return Ok(read_field_csv(BufReader::new(file), 1.0)?);
    }
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => CliError::io(path, e),
        source => CliError::Image { path: path.into(), source },
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rows: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        other => other.into_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    };
    Ok(from_image_rows(Grid::new(w, h, 1.0)?, &rows)?)
}

pub fn write_csv(f: &ScalarField, path: &Path) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_field_csv(f, BufWriter::new(file))?;
    Ok(())
}

/// Writes a 16-bit binary PGM (P5, big-endian samples) of `f / scale`,
/// clamped to `[0, 1]`. The encoder in `image` only emits 8-bit graymaps.
pub fn write_pgm16(f: &ScalarField, scale: f64, path: &Path) -> CliResult<()> {
    let g = f.grid();
    let mut bytes = format!("P5\n{} {}\n65535\n", g.nx, g.ny).into_bytes();
    for v in to_image_rows(f) {
        let q = if scale > 0.0 { (v / scale).clamp(0.0, 1.0) } else { 0.0 };
        bytes.extend_from_slice(&((q * 65535.0).round() as u16).to_be_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Colour of drawn segments.
pub const SEGMENT_COLOR: Rgb<u8> = Rgb([230, 25, 25]);

/// Grayscale rendering of `f` (clamped to `[0, 1]`) with the pixels of
/// `mask` painted in [`SEGMENT_COLOR`].
pub fn overlay(f: &ScalarField, mask: &Mask) -> RgbImage {
    let g = f.grid();
    RgbImage::from_fn(g.nx as u32, g.ny as u32, |x, r| {
        let (i, j) = (x as usize, g.ny - 1 - r as usize);
        if mask.get(i, j) {
            SEGMENT_COLOR
        } else {
            let v = (f.get(i, j).clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([v, v, v])
        }
    })
}

pub fn write_png(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| CliError::Image { path: path.into(), source })
}

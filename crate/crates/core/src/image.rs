//! Binary PGM (P5) output for image grids.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Tiles `rows[r][c]` (each an `h x w` image with values in `[0, 1]`) into one
/// grayscale image with a one-pixel white gutter, and encodes it as P5.
pub fn encode_pgm_grid(rows: &[Vec<Vec<f64>>], h: usize, w: usize) -> Result<Vec<u8>> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    if rows.is_empty() || cols == 0 {
        return Err(Error::InvalidArgument("image grid is empty".into()));
    }
    let gw = cols * (w + 1) + 1;
    let gh = rows.len() * (h + 1) + 1;
    let mut px = vec![255u8; gw * gh];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if img.len() != h * w {
                return Err(Error::InvalidArgument(format!(
                    "tile ({r}, {c}) has {} pixels, expected {}",
                    img.len(),
                    h * w
                )));
            }
            for i in 0..h {
                for j in 0..w {
                    let v = (img[i * w + j].clamp(0.0, 1.0) * 255.0).round() as u8;
                    px[(r * (h + 1) + 1 + i) * gw + c * (w + 1) + 1 + j] = v;
                }
            }
        }
    }
    let mut out = format!("P5\n{gw} {gh}\n255\n").into_bytes();
    out.extend(px);
    Ok(out)
}

pub fn save_pgm_grid(path: &Path, rows: &[Vec<Vec<f64>>], h: usize, w: usize) -> Result<()> {
    let bytes = encode_pgm_grid(rows, h, w)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

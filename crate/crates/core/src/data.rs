//! Source datasets: synthetic image generators and an IDX reader.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeded_rng;

pub const IDX_UBYTE_3D_MAGIC: u32 = 0x0000_0803;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// One to three axis-aligned Gaussian bumps.
    GaussBlobs,
    /// Rectangles and crosses, box-smoothed.
    Sprites,
}

/// Fixed-shape grayscale images with values in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        let dim = height * width;
        if dim == 0 || pixels.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} pixels do not form whole {height}x{width} images",
                pixels.len()
            )));
        }
        Ok(Dataset { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.pixels.chunks_exact(self.dim())
    }

    /// Stacks the selected images into a `[rows, dim]` tensor.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Tensor<S> {
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&p| S::lit(p)));
        }
        Tensor::new(vec![indices.len(), self.dim()], data).expect("whole images")
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }

    /// First `n` images (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            height: self.height,
            width: self.width,
            pixels: self.pixels[..n * self.dim()].to_vec(),
        }
    }

    /// Disjoint train / eval split: the last `round(len * eval_fraction)` images
    /// go to the eval side.
    pub fn split(&self, eval_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::InvalidArgument(format!(
                "eval fraction must lie in [0, 1), got {eval_fraction}"
            )));
        }
        let n_eval = (self.len() as f64 * eval_fraction).round() as usize;
        let cut = (self.len() - n_eval) * self.dim();
        let part = |p: &[f64]| Dataset {
            height: self.height,
            width: self.width,
            pixels: p.to_vec(),
        };
        Ok((part(&self.pixels[..cut]), part(&self.pixels[cut..])))
    }
}

/// `n` square images of side `side`, reproducible from `seed`.
pub fn generate_synthetic(kind: SyntheticKind, n: usize, side: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    if !(4..=32).contains(&side) {
        return Err(Error::InvalidArgument(format!("image side must lie in [4, 32], got {side}")));
    }
    let mut rng = seeded_rng(seed);
    let mut pixels = Vec::with_capacity(n * side * side);
    for _ in 0..n {
        let img = match kind {
            SyntheticKind::GaussBlobs => blobs(side, &mut rng),
            SyntheticKind::Sprites => sprites(side, &mut rng),
        };
        pixels.extend(img);
    }
    Dataset::new(side, side, pixels)
}

fn blobs(side: usize, rng: &mut impl Rng) -> Vec<f64> {
    let s = side as f64;
    let mut img = vec![0.0; side * side];
    let count = rng.random_range(1..=3);
    for _ in 0..count {
        let cy = rng.random_range(0.0..s);
        let cx = rng.random_range(0.0..s);
        let sy = rng.random_range(0.08 * s..0.3 * s);
        let sx = rng.random_range(0.08 * s..0.3 * s);
        let amp = rng.random_range(0.4..1.0);
        for r in 0..side {
            for c in 0..side {
                let dy = (r as f64 + 0.5 - cy) / sy;
                let dx = (c as f64 + 0.5 - cx) / sx;
                img[r * side + c] += amp * (-0.5 * (dy * dy + dx * dx)).exp();
            }
        }
    }
    img.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    img
}

fn sprites(side: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut mask = vec![0.0; side * side];
    let lo = (side / 4).max(2);
    let hi = (side * 3 / 4).max(lo + 1);
    let h = rng.random_range(lo..hi);
    let w = rng.random_range(lo..hi);
    let top = rng.random_range(0..=side - h);
    let left = rng.random_range(0..=side - w);
    if rng.random_bool(0.5) {
        for r in top..top + h {
            for c in left..left + w {
                mask[r * side + c] = 1.0;
            }
        }
    } else {
        let (mr, mc) = (top + h / 2, left + w / 2);
        for r in top..top + h {
            mask[r * side + mc] = 1.0;
        }
        for c in left..left + w {
            mask[mr * side + c] = 1.0;
        }
    }
    // 3x3 box blur
    let mut img = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let mut acc = 0.0f64;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < side && (cc as usize) < side {
                        acc += mask[rr as usize * side + cc as usize];
                    }
                }
            }
            img[r * side + c] = (acc / 9.0).clamp(0.0, 1.0);
        }
    }
    img
}

/// Reads an unsigned-byte 3-D IDX file (`count x rows x cols`), scaling pixels to `[0, 1]`.
pub fn load_idx(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes)
}

pub fn parse_idx(bytes: &[u8]) -> Result<Dataset> {
    let truncated = |offset: usize, what: &str| Error::Format {
        format: "IDX",
        offset,
        detail: format!("file ends inside {what}"),
    };
    let mut cur = bytes;
    let magic = cur.read_u32::<BigEndian>().map_err(|_| truncated(0, "the magic number"))?;
    if magic != IDX_UBYTE_3D_MAGIC {
        return Err(Error::Format {
            format: "IDX",
            offset: 0,
            detail: format!("magic {magic:#010x}, expected {IDX_UBYTE_3D_MAGIC:#010x}"),
        });
    }
    let mut dims = [0usize; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        *d = cur
            .read_u32::<BigEndian>()
            .map_err(|_| truncated(4 + 4 * k, "the dimension header"))? as usize;
    }
    let [count, rows, cols] = dims;
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            format: "IDX",
            offset: 8,
            detail: format!("degenerate image shape {rows}x{cols}"),
        });
    }
    let need = count * rows * cols;
    let mut raw = Vec::with_capacity(need);
    let got = cur.take(need as u64).read_to_end(&mut raw)?;
    if got < need {
        return Err(truncated(16 + got, "the pixel data"));
    }
    Dataset::new(rows, cols, raw.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Random mini-batch indices drawn without replacement within a batch.
pub fn sample_batch(len: usize, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
    if batch >= len {
        let mut all: Vec<usize> = (0..len).collect();
        all.shuffle(rng);
        return all;
    }
    rand::seq::index::sample(rng, len, batch).into_vec()
}

//! Random Hadamard transform: `y = H_n · diag(signs) · x / √n` with `H_n` the
//! Sylvester Hadamard matrix, evaluated by an in-place fast Walsh-Hadamard
//! butterfly in `O(n log n)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::TensorView;

/// Matches the 16-element quantization block.
pub const DEFAULT_HADAMARD_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct HadamardConfig {
    size: usize,
    signs: Vec<f64>,
}

impl HadamardConfig {
    /// Random ±1 signs drawn from `seed`.
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        check_size(size)?;
        let mut rng = substream(seed, 0);
        let signs = (0..size)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(Self { size, signs })
    }

    /// Explicit sign vector; every entry must be ±1.
    pub fn with_signs(signs: Vec<f64>) -> Result<Self> {
        check_size(signs.len())?;
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidArgument("Hadamard signs must be ±1".into()));
        }
        Ok(Self {
            size: signs.len(),
            signs,
        })
    }

    /// All-plus signs: the plain normalized Walsh-Hadamard transform.
    pub fn identity_signs(size: usize) -> Result<Self> {
        Self::with_signs(vec![1.0; size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn normalization(&self) -> f64 {
        1.0 / (self.size as f64).sqrt()
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "Hadamard size must be a power of two, got {n}"
        )));
    }
    Ok(())
}

/// Unnormalized in-place Walsh-Hadamard transform in Sylvester order.
pub fn fwht(buf: &mut [f64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for chunk in buf.chunks_exact_mut(2 * h) {
            let (a, b) = chunk.split_at_mut(h);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let (u, v) = (*x, *y);
                *x = u + v;
                *y = u - v;
            }
        }
        h *= 2;
    }
}

fn check_len(len: usize, cfg: &HadamardConfig) -> Result<()> {
    if len != cfg.size {
        return Err(Error::Shape(format!(
            "Hadamard transform of size {} applied to {len} values",
            cfg.size
        )));
    }
    Ok(())
}

pub fn rht_forward(x: &[f32], cfg: &HadamardConfig) -> Result<Vec<f32>> {
    check_len(x.len(), cfg)?;
    let mut buf: Vec<f64> = x.iter().zip(&cfg.signs).map(|(&v, &s)| v as f64 * s).collect();
    fwht(&mut buf);
    let k = cfg.normalization();
    Ok(buf.into_iter().map(|v| (v * k) as f32).collect())
}

pub fn rht_inverse(y: &[f32], cfg: &HadamardConfig) -> Result<Vec<f32>> {
    check_len(y.len(), cfg)?;
    let mut buf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    fwht(&mut buf);
    let k = cfg.normalization();
    Ok(buf
        .into_iter()
        .zip(&cfg.signs)
        .map(|(v, &s)| (v * k * s) as f32)
        .collect())
}

/// A tensor transformed segment-wise along its last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedTensor {
    pub tensor: TensorView,
    /// Trailing elements of each row shorter than one segment; copied
    /// through unchanged.
    pub untransformed_tail: usize,
}

fn map_rows(
    x: &TensorView,
    cfg: &HadamardConfig,
    f: fn(&[f32], &HadamardConfig) -> Result<Vec<f32>>,
) -> Result<TransformedTensor> {
    let n = cfg.size;
    let row_len = x.row_len();
    let tail = row_len % n;
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let row = x.row(r);
        for seg in row[..row_len - tail].chunks_exact(n) {
            out.extend(f(seg, cfg)?);
        }
        out.extend_from_slice(&row[row_len - tail..]);
    }
    Ok(TransformedTensor {
        tensor: TensorView::new(out, x.shape().to_vec())?,
        untransformed_tail: tail,
    })
}

/// Applies the transform to every `size`-long segment of every row.
pub fn rht_rows(x: &TensorView, cfg: &HadamardConfig) -> Result<TransformedTensor> {
    map_rows(x, cfg, rht_forward)
}

pub fn rht_rows_inverse(x: &TensorView, cfg: &HadamardConfig) -> Result<TransformedTensor> {
    map_rows(x, cfg, rht_inverse)
}

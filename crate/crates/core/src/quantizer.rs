//! Tensor and block scale computation, per-block quantization with candidate
//! selection, and dequantization.
//!
//! A tensor is split into rows along its last axis and each row into blocks
//! of `block_size` elements; the last block of a row is zero padded. Each
//! block stores one scale byte and `block_size` element codes. For adaptive
//! formats the scale byte's top bit marks blocks stored with the integer
//! codebook, whose values are rescaled by `align_descale` on decode.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::container::bitpack;
use crate::error::{Error, Result};
use crate::formats::{floor_log2, Codebook, FormatId, FormatSpec, RoundMode, Selection, FOUR_SIX_RESCALE};
use crate::rng::substream;
use crate::tensor::TensorView;

/// Knobs shared by every quantization call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantOptions {
    pub mode: RoundMode,
    /// Seed of the per-block random streams (stochastic mode only).
    pub seed: u64,
    /// Factor in `(0, 1]` applied to the element maximum when deriving block
    /// scales. `16/17` leaves room for E4M3 rounding the scale down, so
    /// stochastic rounding never has to clip.
    pub scale_unbias: f64,
}

impl Default for QuantOptions {
    fn default() -> Self {
        Self {
            mode: RoundMode::Nearest,
            seed: 0,
            scale_unbias: 1.0,
        }
    }
}

impl QuantOptions {
    pub fn nearest() -> Self {
        Self::default()
    }

    pub fn stochastic(seed: u64) -> Self {
        Self {
            mode: RoundMode::Stochastic,
            seed,
            ..Self::default()
        }
    }

    pub fn with_scale_unbias(mut self, f: f64) -> Self {
        self.scale_unbias = f;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale_unbias > 0.0 && self.scale_unbias <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "scale_unbias must lie in (0, 1], got {}",
                self.scale_unbias
            )));
        }
        Ok(())
    }
}

/// `16/17`, the gradient-quantization scale factor.
pub const GRADIENT_SCALE_UNBIAS: f64 = 16.0 / 17.0;

/// Outcome of quantizing one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockQuantResult {
    pub codes: Vec<u8>,
    pub scale_byte: u8,
    /// The second candidate won: integer codes for adaptive formats, the
    /// max-4 scaling for four-over-six. Ties keep the first candidate.
    pub alternate: bool,
    /// Sum of squared dequantization errors over the block.
    pub sq_error: f64,
    /// `(first, second)` candidate errors; the second is absent for
    /// single-candidate formats.
    pub candidate_errors: (f64, Option<f64>),
}

impl BlockQuantResult {
    fn zero(block_size: usize, sq_error: f64) -> Self {
        Self {
            codes: vec![0; block_size],
            scale_byte: 0,
            alternate: false,
            sq_error,
            candidate_errors: (sq_error, None),
        }
    }

    /// Whether the block is stored as scaled integers (indicator bit set).
    pub fn chose_int(&self, spec: &FormatSpec) -> bool {
        spec.is_adaptive() && self.alternate
    }

    pub fn mean_error(&self) -> f64 {
        self.sq_error / self.codes.len() as f64
    }
}

/// Quantized tensor: one scale byte per block plus bit-packed element codes,
/// every row padded to whole blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub format: FormatId,
    pub shape: Vec<usize>,
    pub alpha: f32,
    pub scale_bytes: Vec<u8>,
    pub packed_codes: Vec<u8>,
}

impl QuantizedTensor {
    pub fn spec(&self) -> &'static FormatSpec {
        self.format.spec()
    }

    pub fn row_len(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn rows(&self) -> usize {
        self.shape[..self.shape.len() - 1].iter().product()
    }

    pub fn blocks_per_row(&self) -> usize {
        self.row_len().div_ceil(self.spec().block_size)
    }

    pub fn n_blocks(&self) -> usize {
        self.rows() * self.blocks_per_row()
    }

    /// Number of stored codes, padding included.
    pub fn n_codes(&self) -> usize {
        self.n_blocks() * self.spec().block_size
    }

    pub fn codes(&self) -> Vec<u8> {
        bitpack::unpack(&self.packed_codes, self.spec().element_bits(), self.n_codes())
    }

    pub fn block_codes(&self, block: usize) -> Vec<u8> {
        let spec = self.spec();
        let bits = spec.element_bits();
        let bs = spec.block_size;
        // Blocks are a multiple of 8 codes, so each starts on a byte boundary.
        let start = block * bs * bits as usize / 8;
        bitpack::unpack(&self.packed_codes[start..], bits, bs)
    }

    /// Whether block `block` carries the integer indicator bit.
    pub fn block_is_int(&self, block: usize) -> bool {
        self.spec().is_adaptive() && self.scale_bytes[block] & 0x80 != 0
    }

    /// Structural and semantic checks: section sizes, decodable scales, and
    /// no indicator bits on formats that do not define one.
    pub fn validate(&self) -> Result<()> {
        crate::tensor::check_shape(&self.shape)?;
        let spec = self.spec();
        if self.scale_bytes.len() != self.n_blocks() {
            return Err(Error::Corrupt(format!(
                "expected {} scale bytes, found {}",
                self.n_blocks(),
                self.scale_bytes.len()
            )));
        }
        let code_bytes = bitpack::packed_len(self.n_codes(), spec.element_bits());
        if self.packed_codes.len() != code_bytes {
            return Err(Error::Corrupt(format!(
                "expected {code_bytes} code bytes, found {}",
                self.packed_codes.len()
            )));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::Corrupt(format!("tensor scale {}", self.alpha)));
        }
        for (i, &b) in self.scale_bytes.iter().enumerate() {
            let v = spec
                .scale_type
                .decode(b)
                .map_err(|e| Error::Corrupt(format!("block {i}: {e}")))?;
            if v.sign_bit && !spec.is_adaptive() {
                return Err(Error::Corrupt(format!(
                    "block {i}: scale byte {b:#04x} has its sign bit set in a {} tensor",
                    spec.name()
                )));
            }
        }
        Ok(())
    }
}

/// Per-call bookkeeping returned next to the quantized tensor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuantStats {
    pub blocks: usize,
    pub alternate_blocks: usize,
    /// Squared error summed over real (unpadded) elements.
    pub sq_error: f64,
    pub elements: usize,
}

impl QuantStats {
    pub fn mse(&self) -> f64 {
        self.sq_error / self.elements as f64
    }

    pub fn alternate_rate(&self) -> f64 {
        self.alternate_blocks as f64 / self.blocks as f64
    }
}

/// Tensor-wide scale α. MX formats and all-zero tensors use 1.
pub fn tensor_scale(x: &TensorView, spec: &FormatSpec) -> f32 {
    tensor_scale_from_max(x.max_abs(), spec)
}

pub fn tensor_scale_from_max(max_abs: f32, spec: &FormatSpec) -> f32 {
    if spec.is_mx() || max_abs == 0.0 {
        return 1.0;
    }
    let alpha = (max_abs as f64 / (spec.fp_max * spec.tensor_scale_ceiling)) as f32;
    // Extremely small tensors could underflow f32.
    if alpha > 0.0 {
        alpha
    } else {
        f32::MIN_POSITIVE
    }
}

/// The dequantized value of one element. Shared by the quantizer's error
/// computation and by `dequantize`, so both see identical bits.
#[inline]
pub fn dequant_value(element: f64, scale: f64, alpha: f32, align: f64) -> f32 {
    (element * scale * alpha as f64 * align) as f32
}

fn sq_err(vals: &[f32], deq: impl Iterator<Item = f32>) -> f64 {
    vals.iter()
        .zip(deq)
        .map(|(&v, d)| {
            let e = d as f64 - v as f64;
            e * e
        })
        .sum()
}

struct Candidate {
    codes: Vec<u8>,
    err: f64,
}

/// Quantizes `vals` with elements `vals / step` rounded onto `book`, where
/// `step = α · Δ · align` split as in `dequant_value`.
fn candidate(
    vals: &[f32],
    book: &Codebook,
    scale: f64,
    alpha: f32,
    align: f64,
    mode: RoundMode,
    rng: &mut ChaCha8Rng,
) -> Candidate {
    let step = alpha as f64 * scale;
    let max = book.max();
    let codes: Vec<u8> = vals
        .iter()
        .map(|&v| {
            let xbar = (v as f64 / step / align).clamp(-max, max);
            book.round(xbar, mode, rng)
        })
        .collect();
    let err = sq_err(
        vals,
        codes.iter().map(|&c| dequant_value(book.decode(c), scale, alpha, align)),
    );
    Candidate { codes, err }
}

/// Quantizes a single block. `vals.len()` must equal the block size; the
/// caller zero-pads partial blocks.
pub fn quantize_block(
    vals: &[f32],
    alpha: f32,
    spec: &FormatSpec,
    opts: &QuantOptions,
    rng: &mut ChaCha8Rng,
) -> Result<BlockQuantResult> {
    if vals.len() != spec.block_size {
        return Err(Error::Shape(format!(
            "{} blocks hold {} values, got {}",
            spec.name(),
            spec.block_size,
            vals.len()
        )));
    }
    opts.validate()?;
    let bmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs() as f64));
    let energy: f64 = vals.iter().map(|&v| (v as f64) * (v as f64)).sum();
    if bmax == 0.0 {
        return Ok(BlockQuantResult::zero(spec.block_size, 0.0));
    }
    let book = spec.primary_codebook();
    let mode = opts.mode;
    let target = bmax / (alpha as f64 * spec.fp_max * opts.scale_unbias);

    if spec.is_mx() {
        let emax = floor_log2(spec.fp_max);
        let e = (floor_log2(bmax / (alpha as f64 * opts.scale_unbias)) - emax).clamp(-127, 127);
        let scale = 2f64.powi(e);
        let c = candidate(vals, book, scale, alpha, 1.0, mode, rng);
        return Ok(BlockQuantResult {
            codes: c.codes,
            scale_byte: (e + 127) as u8,
            alternate: false,
            sq_error: c.err,
            candidate_errors: (c.err, None),
        });
    }

    let st = spec.scale_type;
    let byte = st.encode(target, false)?;
    let scale = st.decode(byte)?.magnitude;
    if scale == 0.0 {
        return Ok(BlockQuantResult::zero(spec.block_size, energy));
    }
    let first = candidate(vals, book, scale, alpha, 1.0, mode, rng);

    let second = match spec.selection {
        Selection::Single => None,
        Selection::IntFloat => {
            let int_book = spec.int_codebook.as_ref().expect("adaptive formats carry INT");
            let c = candidate(vals, int_book, scale, alpha, spec.align_descale, mode, rng);
            Some((c, byte | 0x80))
        }
        Selection::FourSix => {
            let byte4 = st.encode(target * FOUR_SIX_RESCALE, false)?;
            let scale4 = st.decode(byte4)?.magnitude;
            let c = candidate(vals, book, scale4, alpha, 1.0, mode, rng);
            Some((c, byte4))
        }
    };

    Ok(match second {
        Some((alt, alt_byte)) if alt.err < first.err => BlockQuantResult {
            codes: alt.codes,
            scale_byte: alt_byte,
            alternate: true,
            sq_error: alt.err,
            candidate_errors: (first.err, Some(alt.err)),
        },
        Some((alt, _)) => BlockQuantResult {
            codes: first.codes,
            scale_byte: byte,
            alternate: false,
            sq_error: first.err,
            candidate_errors: (first.err, Some(alt.err)),
        },
        None => BlockQuantResult {
            codes: first.codes,
            scale_byte: byte,
            alternate: false,
            sq_error: first.err,
            candidate_errors: (first.err, None),
        },
    })
}

/// Dequantizes one block result as `dequantize` would.
pub fn dequantize_block(r: &BlockQuantResult, spec: &FormatSpec, alpha: f32) -> Result<Vec<f32>> {
    let sv = spec.scale_type.decode(r.scale_byte)?;
    let (book, align) = match (sv.sign_bit, spec.indicator_codebook()) {
        (false, _) => (spec.primary_codebook(), 1.0),
        (true, Some(int)) => (int, spec.align_descale),
        (true, None) => {
            return Err(Error::Corrupt(format!(
                "scale byte {:#04x} has its sign bit set in a {} block",
                r.scale_byte,
                spec.name()
            )))
        }
    };
    Ok(r.codes
        .iter()
        .map(|&c| dequant_value(book.decode(c), sv.magnitude, alpha, align))
        .collect())
}

/// Quantizes with the tensor scale derived from `x`.
pub fn quantize(x: &TensorView, spec: &FormatSpec, opts: &QuantOptions) -> Result<QuantizedTensor> {
    Ok(quantize_with_stats(x, spec, opts)?.0)
}

/// Quantizes and reports block selection counts and the realised error.
pub fn quantize_with_stats(
    x: &TensorView,
    spec: &FormatSpec,
    opts: &QuantOptions,
) -> Result<(QuantizedTensor, QuantStats)> {
    let alpha = tensor_scale(x, spec);
    quantize_with_alpha(x, spec, opts, alpha)
}

/// Quantizes with a caller-chosen tensor scale.
pub fn quantize_with_alpha(
    x: &TensorView,
    spec: &FormatSpec,
    opts: &QuantOptions,
    alpha: f32,
) -> Result<(QuantizedTensor, QuantStats)> {
    opts.validate()?;
    let bs = spec.block_size;
    let row_len = x.row_len();
    let bpr = row_len.div_ceil(bs);
    let n_blocks = x.rows() * bpr;

    let results: Vec<BlockQuantResult> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let (r, k) = (b / bpr, b % bpr);
            let row = x.row(r);
            let lo = k * bs;
            let hi = (lo + bs).min(row_len);
            let mut block = vec![0.0f32; bs];
            block[..hi - lo].copy_from_slice(&row[lo..hi]);
            let mut rng = substream(opts.seed, b as u64);
            quantize_block(&block, alpha, spec, opts, &mut rng)
        })
        .collect::<Result<_>>()?;

    let bits = spec.element_bits();
    let mut packed = vec![0u8; bitpack::packed_len(n_blocks * bs, bits)];
    let block_bytes = bs * bits as usize / 8;
    packed
        .par_chunks_mut(block_bytes)
        .zip(results.par_iter())
        .for_each(|(dst, r)| bitpack::pack_into(&r.codes, bits, dst));

    let stats = QuantStats {
        blocks: n_blocks,
        alternate_blocks: results.iter().filter(|r| r.alternate).count(),
        sq_error: results.iter().map(|r| r.sq_error).sum(),
        elements: x.len(),
    };
    let q = QuantizedTensor {
        format: spec.id,
        shape: x.shape().to_vec(),
        alpha,
        scale_bytes: results.iter().map(|r| r.scale_byte).collect(),
        packed_codes: packed,
    };
    Ok((q, stats))
}

/// Reconstructs real values from a quantized tensor.
pub fn dequantize(q: &QuantizedTensor) -> Result<TensorView> {
    q.validate()?;
    let spec = q.spec();
    let bs = spec.block_size;
    let row_len = q.row_len();
    let bpr = q.blocks_per_row();
    let codes = q.codes();
    let mut out = Vec::with_capacity(q.rows() * row_len);
    for r in 0..q.rows() {
        for k in 0..bpr {
            let b = r * bpr + k;
            let sv = spec.scale_type.decode(q.scale_bytes[b])?;
            let (book, align) = if sv.sign_bit {
                (spec.indicator_codebook().unwrap(), spec.align_descale)
            } else {
                (spec.primary_codebook(), 1.0)
            };
            let n = bs.min(row_len - k * bs);
            out.extend(
                codes[b * bs..b * bs + n]
                    .iter()
                    .map(|&c| dequant_value(book.decode(c), sv.magnitude, q.alpha, align)),
            );
        }
    }
    TensorView::new(out, q.shape.clone())
}

/// Quantize then dequantize, returning the reconstruction and stats.
pub fn fake_quantize(x: &TensorView, spec: &FormatSpec, opts: &QuantOptions) -> Result<(TensorView, QuantStats)> {
    let (q, stats) = quantize_with_stats(x, spec, opts)?;
    Ok((dequantize(&q)?, stats))
}

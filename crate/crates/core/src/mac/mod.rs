//! Bit-accurate functional model of the 16-element IF4 and NVFP4
//! multiply-accumulate blocks.
//!
//! Pipeline, per block pair:
//!
//! 1. Decode each 4-bit operand to fixed point with one fractional bit:
//!    FP4 through a lookup table, INT4 by a one-bit left shift.
//! 2. Multiply operand pairs into binary16 products.
//! 3. In parallel, multiply the two scale magnitudes into a binary32
//!    unified scale and apply range alignment: ×1 (FP·FP), ×6/7 (mixed),
//!    ×36/49 (INT·INT), all in binary32.
//! 4. Scale each product (binary16 × binary32 → binary32).
//! 5. Accumulate left to right into the binary32 accumulator.
//!
//! The tensor scale α is outside the block datapath.

pub mod softfloat;

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::formats::{Codebook, FormatId, ScaleType};
use crate::rng::substream;
use softfloat::{add_f32, f16, mul_f16, mul_f16_f32, mul_f32, ulp_f32};

pub const MAC_WIDTH: usize = 16;

/// binary32 range-alignment factor for one FP4 and one INT4 operand.
pub const ALIGN_MIXED: f32 = 6.0 / 7.0;
/// binary32 range-alignment factor for two INT4 operands.
pub const ALIGN_INT_INT: f32 = 36.0 / 49.0;

/// FP4 E2M1 magnitudes in units of 0.5.
const FP4_LUT_HALVES: [i8; 8] = [0, 1, 2, 3, 4, 6, 8, 12];

/// Operand decoding mode of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperandKind {
    Fp4,
    Int4,
}

/// Fixed-point operand with one fractional bit, stored as the count of
/// halves. Q3.1 covers FP4 (±6); IF4 widens to Q4.1 for INT4 (±8).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedHalf(pub i8);

impl FixedHalf {
    pub fn to_f32(self) -> f32 {
        self.0 as f32 * 0.5
    }
}

pub fn decode_fp4_lut(code: u8) -> FixedHalf {
    let mag = FP4_LUT_HALVES[(code & 0x7) as usize];
    FixedHalf(if code & 0x8 != 0 { -mag } else { mag })
}

pub fn decode_int4_shift(code: u8) -> FixedHalf {
    // Sign-extend the nibble, then shift left to gain the fractional bit.
    let v = (((code & 0xF) << 4) as i8) >> 4;
    FixedHalf(v << 1)
}

fn decode(code: u8, kind: OperandKind) -> FixedHalf {
    match kind {
        OperandKind::Fp4 => decode_fp4_lut(code),
        OperandKind::Int4 => decode_int4_shift(code),
    }
}

/// Every intermediate value of one MAC invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct MacTrace {
    pub w_kind: OperandKind,
    pub a_kind: OperandKind,
    pub decoded_w: [FixedHalf; MAC_WIDTH],
    pub decoded_a: [FixedHalf; MAC_WIDTH],
    pub products: [f16; MAC_WIDTH],
    pub unified_scale: f32,
    pub aligned_scale: f32,
    pub scaled_products: [f32; MAC_WIDTH],
    pub accumulator_in: f32,
    pub accumulator: f32,
}

impl MacTrace {
    /// One line per stage with hexadecimal bit patterns, for diffing
    /// against a hardware testbench.
    pub fn dump(&self) -> String {
        fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
            xs.iter().map(f).collect::<Vec<_>>().join(" ")
        }
        let mut s = String::new();
        let _ = writeln!(s, "decoded_w {}", join(&self.decoded_w, |v| format!("{:02x}", v.0 as u8)));
        let _ = writeln!(s, "decoded_a {}", join(&self.decoded_a, |v| format!("{:02x}", v.0 as u8)));
        let _ = writeln!(s, "products {}", join(&self.products, |v| format!("{:04x}", v.to_bits())));
        let _ = writeln!(s, "unified_scale {:08x}", self.unified_scale.to_bits());
        let _ = writeln!(s, "aligned_scale {:08x}", self.aligned_scale.to_bits());
        let _ = writeln!(s, "scaled_products {}", join(&self.scaled_products, |v| format!("{:08x}", v.to_bits())));
        let _ = writeln!(s, "acc_in {:08x}", self.accumulator_in.to_bits());
        let _ = writeln!(s, "acc_out {:08x}", self.accumulator.to_bits());
        s
    }
}

fn run(
    w_codes: &[u8; MAC_WIDTH],
    a_codes: &[u8; MAC_WIDTH],
    w_kind: OperandKind,
    a_kind: OperandKind,
    w_scale: f32,
    a_scale: f32,
    acc: f32,
) -> (f32, MacTrace) {
    let decoded_w = w_codes.map(|c| decode(c, w_kind));
    let decoded_a = a_codes.map(|c| decode(c, a_kind));
    let mut products = [f16::ZERO; MAC_WIDTH];
    for i in 0..MAC_WIDTH {
        products[i] = mul_f16(
            f16::from_f32(decoded_w[i].to_f32()),
            f16::from_f32(decoded_a[i].to_f32()),
        );
    }
    let unified_scale = mul_f32(w_scale, a_scale);
    let aligned_scale = match (w_kind, a_kind) {
        (OperandKind::Fp4, OperandKind::Fp4) => unified_scale,
        (OperandKind::Int4, OperandKind::Int4) => mul_f32(unified_scale, ALIGN_INT_INT),
        _ => mul_f32(unified_scale, ALIGN_MIXED),
    };
    let scaled_products = products.map(|p| mul_f16_f32(p, aligned_scale));
    let accumulator = scaled_products.iter().fold(acc, |s, &p| add_f32(s, p));
    (
        accumulator,
        MacTrace {
            w_kind,
            a_kind,
            decoded_w,
            decoded_a,
            products,
            unified_scale,
            aligned_scale,
            scaled_products,
            accumulator_in: acc,
            accumulator,
        },
    )
}

fn ue4m3(byte: u8) -> Result<(f32, OperandKind)> {
    let v = ScaleType::UE4M3.decode(byte)?;
    let kind = if v.sign_bit {
        OperandKind::Int4
    } else {
        OperandKind::Fp4
    };
    Ok((v.magnitude as f32, kind))
}

/// IF4 block MAC. Each scale byte's top bit selects how that operand block
/// is decoded.
pub fn mac_if4(
    w_codes: &[u8; MAC_WIDTH],
    a_codes: &[u8; MAC_WIDTH],
    w_scale_byte: u8,
    a_scale_byte: u8,
    acc: f32,
) -> Result<(f32, MacTrace)> {
    let (ws, wk) = ue4m3(w_scale_byte)?;
    let (as_, ak) = ue4m3(a_scale_byte)?;
    Ok(run(w_codes, a_codes, wk, ak, ws, as_, acc))
}

/// NVFP4 block MAC: LUT decode only, no alignment. A set sign bit on either
/// scale byte is rejected.
pub fn mac_nvfp4(
    w_codes: &[u8; MAC_WIDTH],
    a_codes: &[u8; MAC_WIDTH],
    w_scale_byte: u8,
    a_scale_byte: u8,
    acc: f32,
) -> Result<(f32, MacTrace)> {
    for b in [w_scale_byte, a_scale_byte] {
        if b & 0x80 != 0 {
            return Err(Error::Corrupt(format!(
                "NVFP4 scale byte {b:#04x} has its sign bit set"
            )));
        }
    }
    let ws = ScaleType::E4M3.decode(w_scale_byte)?.magnitude as f32;
    let as_ = ScaleType::E4M3.decode(a_scale_byte)?.magnitude as f32;
    Ok(run(w_codes, a_codes, OperandKind::Fp4, OperandKind::Fp4, ws, as_, acc))
}

/// Reference dot product: each operand dequantized exactly in `f64` with
/// the quantizer's semantics (α = 1), then summed in `f64`. Also returns
/// `Σ|w_i·a_i|`, the cancellation-free magnitude of the sum.
pub fn oracle_dot(
    w_codes: &[u8; MAC_WIDTH],
    a_codes: &[u8; MAC_WIDTH],
    w_scale_byte: u8,
    a_scale_byte: u8,
    format: FormatId,
) -> Result<(f64, f64)> {
    let spec = format.spec();
    if spec.element_bits() != 4 || spec.block_size != MAC_WIDTH || spec.is_mx() {
        return Err(Error::InvalidArgument(format!(
            "{} is not a 16-element 4-bit E4M3-scaled format",
            spec.name()
        )));
    }
    let operand = |codes: &[u8; MAC_WIDTH], byte: u8| -> Result<Vec<f64>> {
        let sv = spec.scale_type.decode(byte)?;
        let (book, align): (&Codebook, f64) = match (sv.sign_bit, spec.indicator_codebook()) {
            (false, _) => (spec.primary_codebook(), 1.0),
            (true, Some(int)) => (int, spec.align_descale),
            (true, None) => return Err(Error::Corrupt(format!("scale byte {byte:#04x}"))),
        };
        Ok(codes.iter().map(|&c| book.decode(c) * sv.magnitude * align).collect())
    };
    let w = operand(w_codes, w_scale_byte)?;
    let a = operand(a_codes, a_scale_byte)?;
    let dot = w.iter().zip(&a).map(|(x, y)| x * y).sum();
    let mag = w.iter().zip(&a).map(|(x, y)| (x * y).abs()).sum();
    Ok((dot, mag))
}

/// Unit roundoffs in the worst-case error of one block: three roundings
/// on each term (unified scale, alignment, product scaling) plus sixteen
/// sequential additions.
pub const ERROR_BOUND_UNITS: f64 = 20.0;

/// Summary of a randomized MAC-versus-oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MacVerifyReport {
    pub blocks: usize,
    pub seed: u64,
    /// Blocks whose oracle magnitude exceeds `1e-3 · Σ|contributions|`.
    pub checked: usize,
    pub max_rel_error: f64,
    pub rel_failures: usize,
    /// Blocks whose error exceeds the binary32 forward-error bound
    /// `ERROR_BOUND_UNITS · 2⁻²⁴ · Σ|w_i·a_i|`.
    pub bound_failures: usize,
    /// Error in units of `ulp32(max scaled product)`: quantiles 50/90/99/100.
    pub ulp_quantiles: [f64; 4],
    pub fp_only_blocks: usize,
    pub fp_only_mismatches: usize,
}

impl MacVerifyReport {
    pub fn passed(&self) -> bool {
        self.rel_failures == 0 && self.bound_failures == 0 && self.fp_only_mismatches == 0
    }

    pub fn to_text(&self) -> String {
        format!(
            "blocks={} seed={} checked={} max_rel_error={:.3e} rel_failures={} bound_failures={} \
             ulp_p50={:.2} ulp_p90={:.2} ulp_p99={:.2} ulp_max={:.2} fp_only_blocks={} fp_only_mismatches={} result={}\n",
            self.blocks,
            self.seed,
            self.checked,
            self.max_rel_error,
            self.rel_failures,
            self.bound_failures,
            self.ulp_quantiles[0],
            self.ulp_quantiles[1],
            self.ulp_quantiles[2],
            self.ulp_quantiles[3],
            self.fp_only_blocks,
            self.fp_only_mismatches,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Random IF4 block pair: uniformly random non-excluded codes, scale
/// magnitudes from the normal E4M3 range, and a random indicator per side.
pub fn random_if4_block<R: Rng + ?Sized>(rng: &mut R) -> ([u8; MAC_WIDTH], [u8; MAC_WIDTH], u8, u8) {
    let code = |rng: &mut R| loop {
        let c: u8 = rng.random_range(0..16);
        if c != 0x8 {
            break c;
        }
    };
    let mut w = [0u8; MAC_WIDTH];
    let mut a = [0u8; MAC_WIDTH];
    for i in 0..MAC_WIDTH {
        w[i] = code(rng);
        a[i] = code(rng);
    }
    let scale = |rng: &mut R| -> u8 {
        let mag: u8 = rng.random_range(0x08..=0x7E);
        if rng.random::<bool>() {
            mag | 0x80
        } else {
            mag
        }
    };
    let ws = scale(rng);
    let as_ = scale(rng);
    (w, a, ws, as_)
}

/// Runs `blocks` random IF4 MACs against the oracle. Every fourth block
/// has both indicator bits cleared and is also run through the NVFP4 MAC,
/// which must agree bit for bit.
pub fn verify(blocks: usize, seed: u64) -> Result<MacVerifyReport> {
    let mut rng = substream(seed, 0);
    let mut checked = 0;
    let mut max_rel = 0.0f64;
    let mut rel_failures = 0;
    let mut bound_failures = 0;
    let mut ulps = Vec::with_capacity(blocks);
    let mut fp_only = 0;
    let mut fp_mismatch = 0;
    for i in 0..blocks {
        let (w, a, mut ws, mut as_) = random_if4_block(&mut rng);
        if i % 4 == 0 {
            ws &= 0x7F;
            as_ &= 0x7F;
        }
        let (got, trace) = mac_if4(&w, &a, ws, as_, 0.0)?;
        let (want, mag) = oracle_dot(&w, &a, ws, as_, FormatId::If4)?;
        let err = (got as f64 - want).abs();
        let max_contrib = trace.scaled_products.iter().fold(0.0f32, |m, p| m.max(p.abs()));
        let ulp = ulp_f32(max_contrib) as f64;
        let in_ulps = if max_contrib == 0.0 { 0.0 } else { err / ulp };
        if err > ERROR_BOUND_UNITS * f32::EPSILON as f64 / 2.0 * mag {
            bound_failures += 1;
        }
        ulps.push(in_ulps);
        if want.abs() > 1e-3 * mag {
            checked += 1;
            let rel = err / want.abs();
            max_rel = max_rel.max(rel);
            if rel > 1e-3 {
                rel_failures += 1;
            }
        }
        if ws & 0x80 == 0 && as_ & 0x80 == 0 {
            fp_only += 1;
            let (nv, _) = mac_nvfp4(&w, &a, ws, as_, 0.0)?;
            if nv.to_bits() != got.to_bits() {
                fp_mismatch += 1;
            }
        }
    }
    ulps.sort_by(f64::total_cmp);
    let q = |p: f64| -> f64 {
        if ulps.is_empty() {
            return 0.0;
        }
        ulps[((ulps.len() - 1) as f64 * p).round() as usize]
    };
    Ok(MacVerifyReport {
        blocks,
        seed,
        checked,
        max_rel_error: max_rel,
        rel_failures,
        bound_failures,
        ulp_quantiles: [q(0.5), q(0.9), q(0.99), q(1.0)],
        fp_only_blocks: fp_only,
        fp_only_mismatches: fp_mismatch,
    })
}

//! Scalar element types, scale types and format definitions.

mod codebook;
mod scale;
mod spec;

use std::fmt::Write as _;

use rand::Rng;

pub use codebook::{CodeLayout, Codebook, RoundMode};
pub use scale::{e4m3_round, ScaleKind, ScaleType, ScaleValue, SignBitRole, E4M3_MAX, E4M3_MIN_SUBNORMAL};
pub(crate) use scale::floor_log2;
pub use spec::{builtin_format, FormatId, FormatSpec, Selection, FOUR_SIX_CEILING, FOUR_SIX_RESCALE};

use crate::error::Result;

pub fn decode_scalar(code: u8, book: &Codebook) -> f64 {
    book.decode(code)
}

pub fn round_to_codebook<R: Rng + ?Sized>(x: f64, book: &Codebook, mode: RoundMode, rng: &mut R) -> u8 {
    book.round(x, mode, rng)
}

pub fn encode_scale(value: f64, st: ScaleType, indicator: bool) -> Result<u8> {
    st.encode(value, indicator)
}

fn all_codebooks() -> Vec<Codebook> {
    vec![
        Codebook::e2m0(),
        Codebook::e2m1(),
        Codebook::e2m3(),
        Codebook::e3m2(),
        Codebook::int3(),
        Codebook::int4(),
        Codebook::int6(),
    ]
}

/// Plain-text listing of every element codebook and scale encoding, one
/// line per code with its bit pattern and exact value.
pub fn reference_document() -> String {
    let mut out = String::new();
    out.push_str("# Element codebooks\n");
    for book in all_codebooks() {
        let layout = match book.layout() {
            CodeLayout::SignMagnitude => "sign-magnitude",
            CodeLayout::TwosComplement => "two's complement",
        };
        let _ = writeln!(
            out,
            "\n## {} ({} bits, {}, max {}, excluded {:?})",
            book.name(),
            book.bits(),
            layout,
            book.max(),
            book.excluded_codes()
        );
        let width = book.bits() as usize;
        for code in 0..(1u8 << book.bits()) {
            let tag = if book.excluded_codes().contains(&code) {
                "  excluded"
            } else {
                ""
            };
            let _ = writeln!(out, "{code:0width$b}  {:>8}{tag}", book.decode(code));
        }
    }
    out.push_str("\n# Scale encodings\n");
    for st in [ScaleType::E4M3, ScaleType::UE4M3] {
        let _ = writeln!(
            out,
            "\n## {} (sign bit: {:?})",
            st.name(),
            st.sign_bit_role()
        );
        for byte in 0u8..=0x7F {
            match st.decode(byte) {
                Ok(v) => {
                    let _ = writeln!(out, "{byte:08b}  {:e}", v.magnitude);
                }
                Err(_) => {
                    let _ = writeln!(out, "{byte:08b}  NaN");
                }
            }
        }
    }
    let _ = writeln!(out, "\n## UE8M0\n");
    for byte in 0u8..=0xFF {
        match ScaleType::UE8M0.decode(byte) {
            Ok(_) => {
                let _ = writeln!(out, "{byte:08b}  2^{}", byte as i32 - 127);
            }
            Err(_) => {
                let _ = writeln!(out, "{byte:08b}  NaN");
            }
        }
    }
    out
}

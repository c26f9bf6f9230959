//! 8-bit block scale encodings.
//!
//! E4M3 here is the OCP "fn" variant: bias 7, no infinities, a single NaN
//! pattern per sign (`S.1111.111`), finite range up to 448 and subnormals
//! down to 2^-9. UE4M3 shares the magnitude grid but gives the sign bit a new
//! job: it flags blocks whose elements are stored as scaled integers.
//! UE8M0 is a bare biased exponent.

use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const E4M3_MAX: f64 = 448.0;
pub const E4M3_MIN_SUBNORMAL: f64 = 1.0 / 512.0;
const E4M3_NAN: u8 = 0x7F;
const UE8M0_NAN: u8 = 0xFF;
const SIGN: u8 = 0x80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScaleKind {
    E4M3,
    UE4M3,
    UE8M0,
}

/// What the top bit of a scale byte means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignBitRole {
    NumericSign,
    FormatIndicator,
    Absent,
}

/// A decoded scale byte.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleValue {
    pub magnitude: f64,
    /// The raw top bit. For UE4M3 this is the INT indicator; for E4M3 a set
    /// bit means a negative scale, which no quantizer in this crate emits.
    pub sign_bit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScaleType {
    pub kind: ScaleKind,
}

fn e4m3_table() -> &'static [f64; 127] {
    static TABLE: OnceLock<[f64; 127]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; 127];
        for (code, slot) in t.iter_mut().enumerate() {
            *slot = decode_e4m3_magnitude(code as u8);
        }
        t
    })
}

fn decode_e4m3_magnitude(bits: u8) -> f64 {
    let e = ((bits >> 3) & 0x0F) as i32;
    let m = (bits & 0x07) as f64;
    if e == 0 {
        m / 8.0 * 2f64.powi(-6)
    } else {
        (1.0 + m / 8.0) * 2f64.powi(e - 7)
    }
}

/// Round a non-negative value onto the E4M3 magnitude grid, nearest-even,
/// saturating at 448. Returns the 7-bit magnitude code.
pub fn e4m3_round(value: f64) -> u8 {
    let table = e4m3_table();
    if value >= E4M3_MAX {
        return 0x7E;
    }
    // First code strictly above `value`; the answer is it or its predecessor.
    let hi = table.partition_point(|&m| m <= value);
    if hi == 0 {
        return 0;
    }
    let lo = hi - 1;
    if table[lo] == value || hi >= table.len() {
        return lo as u8;
    }
    let dl = value - table[lo];
    let dh = table[hi] - value;
    if dl < dh || (dl == dh && lo % 2 == 0) {
        lo as u8
    } else {
        hi as u8
    }
}

impl ScaleType {
    pub const E4M3: Self = Self {
        kind: ScaleKind::E4M3,
    };
    pub const UE4M3: Self = Self {
        kind: ScaleKind::UE4M3,
    };
    pub const UE8M0: Self = Self {
        kind: ScaleKind::UE8M0,
    };

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScaleKind::E4M3 => "E4M3",
            ScaleKind::UE4M3 => "UE4M3",
            ScaleKind::UE8M0 => "UE8M0",
        }
    }

    pub fn max_value(&self) -> f64 {
        match self.kind {
            ScaleKind::E4M3 | ScaleKind::UE4M3 => E4M3_MAX,
            ScaleKind::UE8M0 => 2f64.powi(127),
        }
    }

    pub fn min_subnormal(&self) -> f64 {
        match self.kind {
            ScaleKind::E4M3 | ScaleKind::UE4M3 => E4M3_MIN_SUBNORMAL,
            ScaleKind::UE8M0 => 2f64.powi(-127),
        }
    }

    pub fn sign_bit_role(&self) -> SignBitRole {
        match self.kind {
            ScaleKind::E4M3 => SignBitRole::NumericSign,
            ScaleKind::UE4M3 => SignBitRole::FormatIndicator,
            ScaleKind::UE8M0 => SignBitRole::Absent,
        }
    }

    pub fn is_power_of_two(&self) -> bool {
        self.kind == ScaleKind::UE8M0
    }

    /// Encodes a non-negative scale. E4M3-family values round to nearest even
    /// and saturate at 448; UE8M0 keeps the exponent of the largest power of
    /// two not above `value`, clamped to `[-127, 127]`.
    pub fn encode(&self, value: f64, indicator: bool) -> Result<u8> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidScale(value));
        }
        if indicator && self.sign_bit_role() != SignBitRole::FormatIndicator {
            return Err(Error::IndicatorUnsupported(self.name()));
        }
        match self.kind {
            ScaleKind::E4M3 => Ok(e4m3_round(value)),
            ScaleKind::UE4M3 => Ok(e4m3_round(value) | if indicator { SIGN } else { 0 }),
            ScaleKind::UE8M0 => {
                let e = if value == 0.0 {
                    -127
                } else {
                    floor_log2(value).clamp(-127, 127)
                };
                Ok((e + 127) as u8)
            }
        }
    }

    /// Decodes a scale byte. NaN encodings are errors.
    pub fn decode(&self, byte: u8) -> Result<ScaleValue> {
        match self.kind {
            ScaleKind::E4M3 | ScaleKind::UE4M3 => {
                let mag = byte & !SIGN;
                if mag == E4M3_NAN {
                    return Err(Error::NanScale(byte));
                }
                Ok(ScaleValue {
                    magnitude: e4m3_table()[mag as usize],
                    sign_bit: byte & SIGN != 0,
                })
            }
            ScaleKind::UE8M0 => {
                if byte == UE8M0_NAN {
                    return Err(Error::NanScale(byte));
                }
                Ok(ScaleValue {
                    magnitude: 2f64.powi(byte as i32 - 127),
                    sign_bit: false,
                })
            }
        }
    }

    /// Encode then decode: the value actually used by the quantizer.
    pub fn quantize(&self, value: f64) -> Result<f64> {
        Ok(self.decode(self.encode(value, false)?)?.magnitude)
    }

    /// Every finite non-negative magnitude this type can hold, ascending.
    pub fn grid(&self) -> Vec<f64> {
        match self.kind {
            ScaleKind::E4M3 | ScaleKind::UE4M3 => e4m3_table().to_vec(),
            ScaleKind::UE8M0 => (-127..=127).map(|e| 2f64.powi(e)).collect(),
        }
    }
}

/// Exact `floor(log2(v))` for positive finite `v`, read from the bit pattern.
pub(crate) fn floor_log2(v: f64) -> i32 {
    debug_assert!(v > 0.0 && v.is_finite());
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7FF) as i32;
    if exp == 0 {
        // f64 subnormal
        let mant = bits & ((1u64 << 52) - 1);
        -1074 + (63 - mant.leading_zeros() as i32)
    } else {
        exp - 1023
    }
}

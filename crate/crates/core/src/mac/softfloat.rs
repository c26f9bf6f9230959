//! The handful of IEEE-754 operations the MAC datapath needs.
//!
//! binary32 arithmetic is Rust's native `f32`, which is correctly rounded
//! (round-to-nearest-even) on every supported target. binary16 storage and
//! rounding come from the `half` crate.

pub use half::f16;

/// binary16 product of two binary16 operands, rounded to nearest even.
pub fn mul_f16(a: f16, b: f16) -> f16 {
    // The f64 product of two binary16 values is exact (22 significant bits).
    f16::from_f64(a.to_f64() * b.to_f64())
}

/// binary16 × binary32 → binary32, rounded once.
pub fn mul_f16_f32(a: f16, b: f32) -> f32 {
    a.to_f32() * b
}

pub fn mul_f32(a: f32, b: f32) -> f32 {
    a * b
}

pub fn add_f32(a: f32, b: f32) -> f32 {
    a + b
}

/// Distance from `x` to the next binary32 of larger magnitude.
pub fn ulp_f32(x: f32) -> f32 {
    let a = x.abs();
    if a == f32::INFINITY || a.is_nan() {
        return f32::NAN;
    }
    f32::from_bits(a.to_bits() + 1) - a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f16_product_is_rounded() {
        // 1.0009765625 = 1 + 2^-10 (one ulp above 1); its square needs
        // 21 bits and rounds to 1 + 2^-9.
        let a = f16::from_f32(1.0 + 2f32.powi(-10));
        assert_eq!(mul_f16(a, a).to_f32(), 1.0 + 2f32.powi(-9));
    }

    #[test]
    fn ulp_values() {
        assert_eq!(ulp_f32(1.0), 2f32.powi(-23));
        assert_eq!(ulp_f32(-42.0), 2f32.powi(-18));
        assert_eq!(ulp_f32(0.0), f32::from_bits(1));
    }

    #[test]
    fn alignment_constants_are_correctly_rounded() {
        // 6/7 and 36/49 rounded to binary32, checked against exact integer
        // arithmetic: the stored value v = m·2^e must satisfy
        // |v·den − num| ≤ ½ ulp · den.
        for (num, den) in [(6u64, 7u64), (36, 49)] {
            let v = num as f32 / den as f32;
            let bits = v.to_bits();
            let m = ((bits & 0x7F_FFFF) | 0x80_0000) as u128;
            let e = ((bits >> 23) & 0xFF) as i32 - 150; // v = m · 2^e, e < 0
            let scale = 1u128 << (-e);
            // |m·den − num·2^-e| ≤ 2^-1 · den  ⇔  |2·m·den − 2·num·scale| ≤ den
            let lhs = (2 * m * den as u128) as i128 - (2 * num as u128 * scale) as i128;
            assert!(lhs.unsigned_abs() <= den as u128, "{num}/{den}");
        }
    }
}

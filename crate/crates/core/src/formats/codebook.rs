//! Element codebooks: the ordered magnitudes an element code can take, the
//! bit layout of a signed code, and rounding onto the grid.

use rand::Rng;

/// How the sign is carried inside an element code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeLayout {
    /// Top bit is the sign; the remaining bits index `magnitudes`.
    /// The code with sign set and index 0 is negative zero.
    SignMagnitude,
    /// Two's complement integer; the most negative code is never produced.
    TwosComplement,
}

/// Rounding applied when mapping a real onto a codebook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundMode {
    /// Round to nearest, ties to the even magnitude index.
    #[default]
    Nearest,
    /// Pick a neighbour with probability proportional to proximity, so the
    /// expected decoded value equals the input.
    Stochastic,
}

/// The set of representable magnitudes of one element type together with
/// its code mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    name: &'static str,
    magnitudes: Vec<f64>,
    bits: u32,
    layout: CodeLayout,
}

impl Codebook {
    /// A sign-magnitude minifloat with `exp_bits` exponent bits, `man_bits`
    /// mantissa bits, IEEE-style bias and subnormals, and no Inf/NaN codes.
    pub fn minifloat(name: &'static str, exp_bits: u32, man_bits: u32) -> Self {
        let bias = (1i32 << (exp_bits - 1)) - 1;
        let man_scale = (1u32 << man_bits) as f64;
        let mut magnitudes = Vec::with_capacity(1 << (exp_bits + man_bits));
        for e in 0..(1u32 << exp_bits) {
            for m in 0..(1u32 << man_bits) {
                let frac = m as f64 / man_scale;
                let v = if e == 0 {
                    frac * 2f64.powi(1 - bias)
                } else {
                    (1.0 + frac) * 2f64.powi(e as i32 - bias)
                };
                magnitudes.push(v);
            }
        }
        Self {
            name,
            magnitudes,
            bits: exp_bits + man_bits + 1,
            layout: CodeLayout::SignMagnitude,
        }
    }

    /// A symmetric two's complement integer of `bits` total width covering
    /// `±(2^(bits-1) - 1)`.
    pub fn integer(name: &'static str, bits: u32) -> Self {
        let max = (1u32 << (bits - 1)) - 1;
        Self {
            name,
            magnitudes: (0..=max).map(f64::from).collect(),
            bits,
            layout: CodeLayout::TwosComplement,
        }
    }

    pub fn e2m1() -> Self {
        Self::minifloat("E2M1", 2, 1)
    }

    pub fn e2m0() -> Self {
        Self::minifloat("E2M0", 2, 0)
    }

    pub fn e2m3() -> Self {
        Self::minifloat("E2M3", 2, 3)
    }

    pub fn e3m2() -> Self {
        Self::minifloat("E3M2", 3, 2)
    }

    pub fn int3() -> Self {
        Self::integer("INT3", 3)
    }

    pub fn int4() -> Self {
        Self::integer("INT4", 4)
    }

    pub fn int6() -> Self {
        Self::integer("INT6", 6)
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Non-negative magnitudes in strictly increasing order, starting at 0.
    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    /// Total code width including the sign.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn has_sign_bit(&self) -> bool {
        true
    }

    pub fn layout(&self) -> CodeLayout {
        self.layout
    }

    pub fn is_float(&self) -> bool {
        self.layout == CodeLayout::SignMagnitude
    }

    pub fn max(&self) -> f64 {
        *self.magnitudes.last().expect("codebook is never empty")
    }

    pub fn min_nonzero(&self) -> f64 {
        self.magnitudes[1]
    }

    fn mask(&self) -> u8 {
        ((1u16 << self.bits) - 1) as u8
    }

    fn sign_bit(&self) -> u8 {
        1 << (self.bits - 1)
    }

    /// Raw codes that the encoder never emits: negative zero for floats, the
    /// most negative value for integers. Both happen to be the lone sign bit.
    pub fn excluded_codes(&self) -> Vec<u8> {
        vec![self.sign_bit()]
    }

    /// Number of distinct finite values reachable through non-excluded codes.
    pub fn usable_values(&self) -> usize {
        2 * (self.magnitudes.len() - 1) + 1
    }

    /// Builds a code from a sign and magnitude index. A zero magnitude is
    /// always encoded with a clear sign.
    pub fn encode(&self, negative: bool, index: usize) -> u8 {
        debug_assert!(index < self.magnitudes.len());
        let negative = negative && index != 0;
        match self.layout {
            CodeLayout::SignMagnitude => {
                if negative {
                    self.sign_bit() | index as u8
                } else {
                    index as u8
                }
            }
            CodeLayout::TwosComplement => {
                let v = if negative { -(index as i16) } else { index as i16 };
                (v as u8) & self.mask()
            }
        }
    }

    /// Splits a code into `(negative, magnitude index)`. The excluded integer
    /// code yields index `len(magnitudes)`, one past the table.
    pub fn split(&self, code: u8) -> (bool, usize) {
        let code = code & self.mask();
        let negative = code & self.sign_bit() != 0;
        match self.layout {
            CodeLayout::SignMagnitude => (negative, (code & !self.sign_bit()) as usize),
            CodeLayout::TwosComplement => {
                let v = self.signed_int(code);
                (negative, v.unsigned_abs() as usize)
            }
        }
    }

    /// Two's complement interpretation of a code (integer layouts only).
    pub fn signed_int(&self, code: u8) -> i8 {
        let shift = 8 - self.bits;
        (((code & self.mask()) << shift) as i8) >> shift
    }

    /// Decodes any code in the bit domain. Negative zero decodes to 0 and the
    /// excluded integer code to its two's complement value.
    pub fn decode(&self, code: u8) -> f64 {
        match self.layout {
            CodeLayout::SignMagnitude => {
                let (negative, idx) = self.split(code);
                let m = self.magnitudes[idx];
                if negative && m != 0.0 {
                    -m
                } else {
                    m
                }
            }
            CodeLayout::TwosComplement => f64::from(self.signed_int(code)),
        }
    }

    /// Index `i` such that `magnitudes[i] <= a <= magnitudes[i + 1]`, with `a`
    /// already clamped to the codebook range.
    fn bracket(&self, a: f64) -> usize {
        let p = self.magnitudes.partition_point(|&m| m <= a);
        p.saturating_sub(1).min(self.magnitudes.len() - 2)
    }

    /// Nearest magnitude index, ties to the even index.
    pub fn nearest_index(&self, a: f64) -> usize {
        let a = a.abs().min(self.max());
        let lo = self.bracket(a);
        let hi = lo + 1;
        let dl = a - self.magnitudes[lo];
        let dh = self.magnitudes[hi] - a;
        if dl < dh {
            lo
        } else if dh < dl {
            hi
        } else if lo.is_multiple_of(2) {
            lo
        } else {
            hi
        }
    }

    /// Stochastic magnitude index: rounds up with probability
    /// `(a - lo) / (hi - lo)`.
    pub fn stochastic_index<R: Rng + ?Sized>(&self, a: f64, rng: &mut R) -> usize {
        let a = a.abs().min(self.max());
        let lo = self.bracket(a);
        let hi = lo + 1;
        let (ml, mh) = (self.magnitudes[lo], self.magnitudes[hi]);
        if a == ml {
            return lo;
        }
        if a == mh {
            return hi;
        }
        let p_up = (a - ml) / (mh - ml);
        let u: f64 = rng.random();
        if u < p_up {
            hi
        } else {
            lo
        }
    }

    /// Rounds `x` onto the codebook and returns its code. Magnitudes beyond
    /// the codebook maximum saturate; callers are expected to clamp first.
    pub fn round<R: Rng + ?Sized>(&self, x: f64, mode: RoundMode, rng: &mut R) -> u8 {
        let idx = match mode {
            RoundMode::Nearest => self.nearest_index(x),
            RoundMode::Stochastic => self.stochastic_index(x, rng),
        };
        self.encode(x.is_sign_negative(), idx)
    }

    /// Round-to-nearest shorthand that needs no RNG.
    pub fn round_nearest(&self, x: f64) -> u8 {
        self.encode(x.is_sign_negative(), self.nearest_index(x))
    }

    /// All codes in the bit domain that are not excluded.
    pub fn valid_codes(&self) -> impl Iterator<Item = u8> + '_ {
        let excluded = self.sign_bit();
        (0..=self.mask()).filter(move |&c| c != excluded)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn e2m1_values() {
        assert_eq!(
            Codebook::e2m1().magnitudes(),
            &[0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0]
        );
    }

    #[test]
    fn reconstructed_grids() {
        assert_eq!(Codebook::e2m0().magnitudes(), &[0.0, 1.0, 2.0, 4.0]);
        let e2m3 = Codebook::e2m3();
        assert_eq!(e2m3.magnitudes().len(), 32);
        assert_eq!(e2m3.max(), 7.5);
        assert_eq!(e2m3.min_nonzero(), 0.125);
        let e3m2 = Codebook::e3m2();
        assert_eq!(e3m2.max(), 28.0);
        assert_eq!(e3m2.min_nonzero(), 0.0625);
        assert_eq!(Codebook::int3().max(), 3.0);
        assert_eq!(Codebook::int6().max(), 31.0);
    }

    #[test]
    fn magnitudes_strictly_increasing() {
        for book in [
            Codebook::e2m1(),
            Codebook::e2m0(),
            Codebook::e2m3(),
            Codebook::e3m2(),
            Codebook::int3(),
            Codebook::int4(),
            Codebook::int6(),
        ] {
            assert_eq!(book.magnitudes()[0], 0.0);
            assert!(book.magnitudes().windows(2).all(|w| w[0] < w[1]), "{}", book.name());
        }
    }

    #[test]
    fn decode_examples() {
        let fp4 = Codebook::e2m1();
        assert_eq!(fp4.decode(0b0111), 6.0);
        assert_eq!(fp4.decode(0b1111), -6.0);
        let nz = fp4.decode(0b1000);
        assert_eq!(nz, 0.0);
        assert!(nz.is_sign_positive());
        let int4 = Codebook::int4();
        assert_eq!(int4.decode(0b0111), 7.0);
        assert_eq!(int4.decode(0b1001), -7.0);
        assert_eq!(int4.decode(0b1000), -8.0);
    }

    #[test]
    fn usable_value_counts() {
        let distinct = |b: &Codebook| {
            let mut v: Vec<f64> = b.valid_codes().map(|c| b.decode(c)).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.len()
        };
        assert_eq!(distinct(&Codebook::e2m1()), 15);
        assert_eq!(distinct(&Codebook::int4()), 15);
        assert_eq!(Codebook::e2m1().usable_values(), 15);
        assert_eq!(Codebook::int4().usable_values(), 15);
        assert_eq!(Codebook::int4().excluded_codes(), vec![0b1000]);
        assert_eq!(Codebook::e2m1().excluded_codes(), vec![0b1000]);
    }

    #[test]
    fn nearest_ties_to_even_index() {
        let fp4 = Codebook::e2m1();
        assert_eq!(fp4.decode(fp4.round_nearest(5.0)), 4.0);
        assert_eq!(fp4.decode(fp4.round_nearest(2.5)), 2.0);
        assert_eq!(fp4.decode(fp4.round_nearest(1.75)), 2.0);
        assert_eq!(fp4.decode(fp4.round_nearest(0.25)), 0.0);
        assert_eq!(fp4.decode(fp4.round_nearest(-5.1)), -6.0);
        let int4 = Codebook::int4();
        assert_eq!(int4.decode(int4.round_nearest(2.5)), 2.0);
        assert_eq!(int4.decode(int4.round_nearest(3.5)), 4.0);
        assert_eq!(int4.decode(int4.round_nearest(-6.5)), -6.0);
    }

    #[test]
    fn negative_zero_never_emitted() {
        let fp4 = Codebook::e2m1();
        assert_eq!(fp4.round_nearest(-0.1), 0);
        let int4 = Codebook::int4();
        assert_eq!(int4.round_nearest(-0.2), 0);
    }

    #[test]
    fn round_trip_all_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for book in [
            Codebook::e2m1(),
            Codebook::e2m0(),
            Codebook::e2m3(),
            Codebook::e3m2(),
            Codebook::int3(),
            Codebook::int4(),
            Codebook::int6(),
        ] {
            for c in book.valid_codes() {
                let v = book.decode(c);
                // Zero has two codes only in float layouts, and negative zero is excluded.
                assert_eq!(book.round_nearest(v), c, "{} code {c:#x}", book.name());
                assert_eq!(book.round(v, RoundMode::Stochastic, &mut rng), c);
            }
        }
    }

    #[test]
    fn stochastic_midpoint_is_fair() {
        let fp4 = Codebook::e2m1();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let ups = (0..n)
            .filter(|_| fp4.decode(fp4.round(2.5, RoundMode::Stochastic, &mut rng)) == 3.0)
            .count();
        let p = ups as f64 / n as f64;
        // SE of a fair coin at 1e5 trials is ~0.0016.
        assert!((p - 0.5).abs() < 4.0 * 0.0016, "p = {p}");
    }
}

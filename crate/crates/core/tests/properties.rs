mod common;

use adablock::formats::{FormatId, FOUR_SIX_CEILING, FOUR_SIX_RESCALE};
use adablock::quantizer::{dequant_value, quantize_block, tensor_scale, GRADIENT_SCALE_UNBIAS};
use adablock::rng::substream;
use adablock::{dequantize, quantize, QuantOptions, TensorView};
use common::{bits_equal, gaussian_block, outlier_block, uniform_block};
use proptest::prelude::*;

fn block_error(id: FormatId, block: &[f32], alpha: f32, opts: &QuantOptions) -> f64 {
    let mut rng = substream(opts.seed, 0);
    quantize_block(block, alpha, id.spec(), opts, &mut rng).unwrap().sq_error
}

fn block_kind() -> impl Strategy<Value = u8> {
    0u8..3
}

fn make_block(kind: u8, n: usize, seed: u64) -> Vec<f32> {
    match kind {
        0 => gaussian_block(n, seed, 0),
        1 => uniform_block(n, seed, 0),
        _ => outlier_block(n, seed, 0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn adaptive_never_loses_to_its_float_baseline(
        kind in block_kind(),
        seed in any::<u64>(),
        alpha_exp in -12i32..4,
    ) {
        let alpha = 2f32.powi(alpha_exp);
        let opts = QuantOptions::nearest();
        let pairs = [
            (FormatId::If4, FormatId::Nvfp4),
            (FormatId::If4Bs8, FormatId::Nvfp4Bs8),
            (FormatId::If3, FormatId::Nvfp3),
            (FormatId::If6E2m3, FormatId::Nvfp6E2m3),
            (FormatId::If6E3m2, FormatId::Nvfp6E3m2),
            (FormatId::Nvfp4FourSix, FormatId::Nvfp4),
            (FormatId::Nvfp4Bs8FourSix, FormatId::Nvfp4Bs8),
        ];
        for (adaptive, base) in pairs {
            let b = make_block(kind, adaptive.spec().block_size, seed);
            let e_a = block_error(adaptive, &b, alpha, &opts);
            let e_b = block_error(base, &b, alpha, &opts);
            prop_assert!(e_a <= e_b, "{adaptive} {e_a} > {base} {e_b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zero_padding_is_neutral(idx in 0usize..23, len in 1usize..70, seed in any::<u64>()) {
        let id = FormatId::ALL[idx];
        let spec = id.spec();
        let padded_len = len.div_ceil(spec.block_size) * spec.block_size;
        let v = gaussian_block(len, seed, 0);
        let mut p = v.clone();
        p.resize(padded_len, 0.0);
        let opts = QuantOptions::stochastic(seed);
        let q = quantize(&TensorView::from_row(v).unwrap(), spec, &opts).unwrap();
        let qp = quantize(&TensorView::from_row(p).unwrap(), spec, &opts).unwrap();
        prop_assert_eq!(&q.scale_bytes, &qp.scale_bytes);
        prop_assert_eq!(&q.packed_codes, &qp.packed_codes);
        let d = dequantize(&q).unwrap();
        let dp = dequantize(&qp).unwrap();
        prop_assert!(bits_equal(d.data(), &dp.data()[..len]));
        prop_assert!(dp.data()[len..].iter().all(|&z| z == 0.0));
    }

    #[test]
    fn block_scales_stay_within_ceiling(
        idx in 0usize..23,
        seed in any::<u64>(),
        mag in -30i32..30,
        stochastic in any::<bool>(),
    ) {
        let id = FormatId::ALL[idx];
        let spec = id.spec();
        let v: Vec<f32> = outlier_block(4 * spec.block_size, seed, 1)
            .into_iter()
            .map(|x| x * 2f32.powi(mag))
            .collect();
        let x = TensorView::from_row(v).unwrap();
        let opts = if stochastic {
            QuantOptions::stochastic(seed).with_scale_unbias(GRADIENT_SCALE_UNBIAS)
        } else {
            QuantOptions::nearest()
        };
        let q = quantize(&x, spec, &opts).unwrap();
        for &b in &q.scale_bytes {
            let s = spec.scale_type.decode(b).unwrap().magnitude;
            if spec.is_mx() {
                prop_assert!(s.is_finite());
            } else if spec.is_four_six() {
                // The max-4 rescale still fits below the E4M3 maximum, so it
                // never saturates.
                let bound = FOUR_SIX_CEILING * FOUR_SIX_RESCALE / opts.scale_unbias;
                prop_assert!(bound < spec.scale_max);
                prop_assert!(s <= spec.scale_type.quantize(bound).unwrap());
            } else {
                prop_assert!(s <= spec.tensor_scale_ceiling);
            }
        }
        let max_in = x.max_abs();
        let max_out = dequantize(&q).unwrap().max_abs();
        let alpha = tensor_scale(&x, spec) as f64;
        if !spec.is_mx() {
            // Reconstructions never exceed the representable tensor range.
            prop_assert!((max_out as f64) <= spec.fp_max * spec.scale_max * alpha * (1.0 + 1e-6));
        }
        prop_assert!(max_out.is_finite() && max_in.is_finite());
    }

    #[test]
    fn indicator_bit_selects_the_integer_codebook(idx in 0usize..23, seed in any::<u64>()) {
        let id = FormatId::ALL[idx];
        let spec = id.spec();
        let x = TensorView::from_row(outlier_block(8 * spec.block_size, seed, 2)).unwrap();
        let q = quantize(&x, spec, &QuantOptions::nearest()).unwrap();
        let y = dequantize(&q).unwrap();
        for b in 0..q.n_blocks() {
            let sv = spec.scale_type.decode(q.scale_bytes[b]).unwrap();
            prop_assert_eq!(sv.sign_bit, q.block_is_int(b));
            if !spec.is_adaptive() && !spec.is_mx() {
                prop_assert!(!sv.sign_bit);
            }
            let (book, align) = if sv.sign_bit {
                (spec.int_codebook.as_ref().unwrap(), spec.align_descale)
            } else {
                (spec.primary_codebook(), 1.0)
            };
            let bs = spec.block_size;
            let want: Vec<f32> = q
                .block_codes(b)
                .iter()
                .map(|&c| dequant_value(book.decode(c), sv.magnitude, q.alpha, align))
                .collect();
            prop_assert!(bits_equal(&want, &y.data()[b * bs..(b + 1) * bs]));
        }
    }
}

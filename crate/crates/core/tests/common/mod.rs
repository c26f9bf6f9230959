#![allow(dead_code)]

use adablock::quantizer::dequant_value;
use adablock::rng::substream;
use adablock::{FormatSpec, TensorView};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;

/// A tensor every element of which lies on `spec`'s grid with `α = 1`.
///
/// Each block gets a scale drawn from the encodable grid (below the tensor
/// ceiling), random valid codes, and one element pinned to the codebook
/// maximum so the quantizer recovers the same scale. Block 0 uses the
/// ceiling itself, which pins `α` to 1.
pub fn grid_tensor(spec: &FormatSpec, rows: usize, row_len: usize, seed: u64) -> TensorView {
    let mut rng = substream(seed, 7);
    let bs = spec.block_size;
    let ceiling = spec.tensor_scale_ceiling;
    let scales: Vec<f64> = if spec.is_mx() {
        (-20..=20).map(|e| 2f64.powi(e)).collect()
    } else {
        spec.scale_type
            .grid()
            .into_iter()
            .filter(|&s| s > 0.0 && s <= ceiling)
            .collect()
    };
    let bpr = row_len.div_ceil(bs);
    let mut data = Vec::with_capacity(rows * row_len);
    for r in 0..rows {
        let mut row = Vec::with_capacity(bpr * bs);
        for k in 0..bpr {
            let scale = if r == 0 && k == 0 && !spec.is_mx() {
                ceiling
            } else {
                *scales.choose(&mut rng).unwrap()
            };
            let use_int = spec.indicator_codebook().is_some() && rng.random::<bool>();
            let (book, align) = match spec.indicator_codebook() {
                Some(int) if use_int => (int, spec.align_descale),
                _ => (spec.primary_codebook(), 1.0),
            };
            let valid: Vec<u8> = book.valid_codes().collect();
            let mut codes: Vec<u8> = (0..bs).map(|_| *valid.choose(&mut rng).unwrap()).collect();
            let top = book.encode(rng.random::<bool>(), book.magnitudes().len() - 1);
            let n = bs.min(row_len - k * bs);
            codes[rng.random_range(0..n)] = top;
            row.extend(codes.iter().map(|&c| dequant_value(book.decode(c), scale, 1.0, align)));
        }
        row.truncate(row_len);
        data.extend(row);
    }
    TensorView::new(data, vec![rows, row_len]).unwrap()
}

pub fn gaussian_block(n: usize, seed: u64, index: u64) -> Vec<f32> {
    let mut rng = substream(seed, index);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn uniform_block(n: usize, seed: u64, index: u64) -> Vec<f32> {
    let mut rng = substream(seed, index);
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Gaussian block with one entry scaled up by 10 to 100.
pub fn outlier_block(n: usize, seed: u64, index: u64) -> Vec<f32> {
    let mut v = gaussian_block(n, seed, index);
    let mut rng = substream(seed ^ 0x5eed, index);
    let i = rng.random_range(0..n);
    v[i] *= rng.random_range(10.0f32..100.0);
    v
}

pub fn bits_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}


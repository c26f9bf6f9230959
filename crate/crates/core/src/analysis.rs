//! Experiment runners: Gaussian MSE per format, closed-form dynamic range,
//! per-channel error curves, stochastic-rounding bias, and INT selection
//! rates.
//!
//! Every runner takes an explicit seed and derives one random stream per
//! work item, so results do not depend on the thread count.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{FormatId, FormatSpec};
use crate::quantizer::{
    dequantize, dequantize_block, quantize_block, quantize_with_stats, tensor_scale, QuantOptions,
};
use crate::rng::{derive_seed, substream};
use crate::tensor::TensorView;
use crate::transform::{rht_rows, HadamardConfig};

/// Samples per independently scaled batch in `mse_gaussian`.
pub const MSE_BATCH: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub format: FormatId,
    pub n_samples: usize,
    pub mse: f64,
    pub std_error: f64,
    pub seed: u64,
}

/// Mean squared round-to-nearest error over standard-normal samples. The
/// samples are drawn in rows of `MSE_BATCH`, each with its own tensor scale.
pub fn mse_gaussian(spec: &FormatSpec, n_samples: usize, seed: u64) -> Result<MseReport> {
    if n_samples == 0 || !n_samples.is_multiple_of(spec.block_size) {
        return Err(Error::InvalidArgument(format!(
            "sample count {n_samples} must be a positive multiple of the block size {}",
            spec.block_size
        )));
    }
    let batches = n_samples.div_ceil(MSE_BATCH);
    let sums: Vec<(f64, f64)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let len = MSE_BATCH.min(n_samples - b * MSE_BATCH);
            let mut rng = substream(seed, b as u64);
            let data: Vec<f32> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            let x = TensorView::from_row(data)?;
            let (q, _) = quantize_with_stats(&x, spec, &QuantOptions::nearest())?;
            let y = dequantize(&q)?;
            Ok(x.data().iter().zip(y.data()).fold((0.0, 0.0), |(s, s2), (&a, &b)| {
                let e = (b as f64 - a as f64).powi(2);
                (s + e, s2 + e * e)
            }))
        })
        .collect::<Result<_>>()?;
    let (s, s2) = sums.iter().fold((0.0, 0.0), |(a, b), &(c, d)| (a + c, b + d));
    let n = n_samples as f64;
    let mse = s / n;
    let var = (s2 / n - mse * mse).max(0.0);
    Ok(MseReport {
        format: spec.id,
        n_samples,
        mse,
        std_error: (var / n).sqrt(),
        seed,
    })
}

pub fn mse_csv(reports: &[MseReport]) -> String {
    let mut out = String::from("format,n_samples,mse,mse_x1e3,std_error,seed\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{:.6e},{:.3},{:.3e},{}",
            r.format,
            r.n_samples,
            r.mse,
            r.mse * 1e3,
            r.std_error,
            r.seed
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicRange {
    /// Largest magnitude before the tensor scale.
    pub max: f64,
    /// Smallest non-zero magnitude before the tensor scale.
    pub min: f64,
    /// `(max / min)` relative to NVFP4; infinite for MX formats.
    pub relative: f64,
}

fn raw_range(spec: &FormatSpec) -> (f64, f64) {
    let mut elem_min = spec.primary_codebook().min_nonzero();
    if let Some(int) = spec.indicator_codebook() {
        elem_min = elem_min.min(int.min_nonzero() * spec.align_descale);
    }
    let st = spec.scale_type;
    (
        spec.fp_max * spec.tensor_scale_ceiling,
        elem_min * st.min_subnormal(),
    )
}

/// Closed-form representable range of a format.
pub fn dynamic_range(spec: &FormatSpec) -> DynamicRange {
    let (max, min) = raw_range(spec);
    let relative = if spec.is_mx() {
        f64::INFINITY
    } else {
        let (nmax, nmin) = raw_range(FormatId::Nvfp4.spec());
        (max / min) / (nmax / nmin)
    };
    DynamicRange { max, min, relative }
}

pub fn range_csv(specs: &[&FormatSpec]) -> String {
    let mut out = String::from("format,max,min,relative_percent\n");
    for s in specs {
        let r = dynamic_range(s);
        let rel = if r.relative.is_finite() {
            format!("{:.1}", r.relative * 100.0)
        } else {
            "inf".into()
        };
        let _ = writeln!(out, "{},{:e},{:e},{}", s.name(), r.max, r.min, rel);
    }
    out
}

/// Per-row quantization error of a rank-2 tensor under several formats.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMse {
    pub formats: Vec<FormatId>,
    /// `per_channel[f][r]`: MSE of row `r` under format `f`, in row order.
    pub per_channel: Vec<Vec<f64>>,
}

impl ChannelMse {
    /// Each format's curve sorted by increasing error.
    pub fn sorted(&self) -> Vec<Vec<f64>> {
        self.per_channel
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_by(f64::total_cmp);
                c
            })
            .collect()
    }

    /// One row per rank, one column per format, each column sorted.
    pub fn to_csv(&self) -> String {
        let sorted = self.sorted();
        let mut out = String::from("rank");
        for f in &self.formats {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
        let n = sorted.first().map_or(0, Vec::len);
        for i in 0..n {
            let _ = write!(out, "{i}");
            for c in &sorted {
                let _ = write!(out, ",{:.6e}", c[i]);
            }
            out.push('\n');
        }
        out
    }
}

pub fn channel_mse(x: &TensorView, specs: &[&FormatSpec]) -> Result<ChannelMse> {
    if x.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "channel MSE needs a rank-2 tensor, got shape {:?}",
            x.shape()
        )));
    }
    let cols = x.row_len();
    let mut per_channel = Vec::with_capacity(specs.len());
    for spec in specs {
        let (q, _) = quantize_with_stats(x, spec, &QuantOptions::nearest())?;
        let y = dequantize(&q)?;
        per_channel.push(
            (0..x.rows())
                .map(|r| {
                    x.row(r)
                        .iter()
                        .zip(y.row(r))
                        .map(|(&a, &b)| (b as f64 - a as f64).powi(2))
                        .sum::<f64>()
                        / cols as f64
                })
                .collect(),
        );
    }
    Ok(ChannelMse {
        formats: specs.iter().map(|s| s.id).collect(),
        per_channel,
    })
}

/// Mean signed change of each value under repeated stochastic quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasCurve {
    /// Original values, ascending.
    pub values: Vec<f32>,
    /// `mean(dequantized − original)` per value.
    pub bias: Vec<f64>,
    /// Standard error of each mean.
    pub std_error: Vec<f64>,
    /// Largest magnitude in each value's block.
    pub block_max: Vec<f32>,
    pub trials: usize,
    pub seed: u64,
}

impl BiasCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,mean_error,std_error,block_max\n");
        for i in 0..self.values.len() {
            let _ = writeln!(
                out,
                "{:e},{:e},{:e},{:e}",
                self.values[i], self.bias[i], self.std_error[i], self.block_max[i]
            );
        }
        let _ = writeln!(out, "# trials={} seed={}", self.trials, self.seed);
        out
    }
}

/// Quantizes `values` (one row, blocked as usual) `trials` times with
/// stochastic rounding and records each value's mean signed error.
/// Trial `t` uses seed `derive_seed(seed, t)`, so it reproduces
/// `quantize` with `QuantOptions::stochastic(derive_seed(seed, t))`.
pub fn sr_bias(values: &[f32], spec: &FormatSpec, trials: usize, seed: u64, scale_unbias: f64) -> Result<BiasCurve> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let x = TensorView::from_row(values.to_vec())?;
    let alpha = tensor_scale(&x, spec);
    let bs = spec.block_size;
    let n = values.len();
    let trial_seeds: Vec<u64> = (0..trials as u64).map(|t| derive_seed(seed, t)).collect();

    let per_block: Vec<Vec<(f64, f64, f32)>> = (0..n.div_ceil(bs))
        .into_par_iter()
        .map(|b| {
            let lo = b * bs;
            let hi = (lo + bs).min(n);
            let mut block = vec![0.0f32; bs];
            block[..hi - lo].copy_from_slice(&values[lo..hi]);
            let bmax = block.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let mut acc = vec![(0.0f64, 0.0f64); hi - lo];
            for &ts in &trial_seeds {
                let opts = QuantOptions::stochastic(ts).with_scale_unbias(scale_unbias);
                let mut rng = substream(ts, b as u64);
                let r = quantize_block(&block, alpha, spec, &opts, &mut rng)?;
                let d = dequantize_block(&r, spec, alpha)?;
                for (i, a) in acc.iter_mut().enumerate() {
                    let e = d[i] as f64 - block[i] as f64;
                    a.0 += e;
                    a.1 += e * e;
                }
            }
            let t = trials as f64;
            Ok(acc
                .into_iter()
                .map(|(s, s2)| {
                    let mean = s / t;
                    let var = if trials > 1 {
                        ((s2 - t * mean * mean) / (t - 1.0)).max(0.0)
                    } else {
                        0.0
                    };
                    (mean, (var / t).sqrt(), bmax)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<(f32, f64, f64, f32)> = values
        .iter()
        .zip(per_block.into_iter().flatten())
        .map(|(&v, (m, se, bm))| (v, m, se, bm))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(BiasCurve {
        values: rows.iter().map(|r| r.0).collect(),
        bias: rows.iter().map(|r| r.1).collect(),
        std_error: rows.iter().map(|r| r.2).collect(),
        block_max: rows.iter().map(|r| r.3).collect(),
        trials,
        seed,
    })
}

/// Fraction of blocks an adaptive format stores as integers, optionally
/// after a row-wise random Hadamard transform.
pub fn int_selection_rate(x: &TensorView, spec: &FormatSpec, pre_transform: Option<&HadamardConfig>) -> Result<f64> {
    if !spec.is_adaptive() {
        return Err(Error::NotAdaptive(spec.name()));
    }
    let transformed;
    let input = match pre_transform {
        Some(cfg) => {
            transformed = rht_rows(x, cfg)?.tensor;
            &transformed
        }
        None => x,
    };
    let (_, stats) = quantize_with_stats(input, spec, &QuantOptions::nearest())?;
    Ok(stats.alternate_rate())
}

/// Standard-normal tensor where a `outlier_fraction` of entries are
/// multiplied by `outlier_scale`.
pub fn gaussian_tensor(shape: Vec<usize>, seed: u64, outlier_fraction: f64, outlier_scale: f32) -> Result<TensorView> {
    let n: usize = shape.iter().product();
    let mut rng = substream(seed, u64::MAX);
    let data = (0..n)
        .map(|_| {
            let v: f32 = rng.sample(StandardNormal);
            if outlier_fraction > 0.0 && rng.random::<f64>() < outlier_fraction {
                v * outlier_scale
            } else {
                v
            }
        })
        .collect();
    TensorView::new(data, shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_ranges() {
        let r = dynamic_range(FormatId::Nvfp4.spec());
        assert_eq!((r.max, r.min, r.relative), (6.0 * 448.0, 0.5 * 2f64.powi(-9), 1.0));
        let r = dynamic_range(FormatId::Nvint4.spec());
        assert_eq!((r.max, r.min), (7.0 * 448.0, 2f64.powi(-9)));
        assert!((r.relative - 7.0 / 12.0).abs() < 1e-15);
        let r = dynamic_range(FormatId::Nvfp4FourSix.spec());
        assert_eq!((r.max, r.min), (6.0 * 256.0, 0.5 * 2f64.powi(-9)));
        assert!((r.relative - 4.0 / 7.0).abs() < 1e-15);
        let r = dynamic_range(FormatId::If4.spec());
        assert_eq!((r.max, r.min, r.relative), (6.0 * 448.0, 0.5 * 2f64.powi(-9), 1.0));
        let r = dynamic_range(FormatId::Mxfp4.spec());
        assert_eq!((r.max, r.min), (6.0 * 2f64.powi(127), 0.5 * 2f64.powi(-127)));
        assert!(r.relative.is_infinite());
    }

    #[test]
    fn range_csv_rounding() {
        let csv = range_csv(&[FormatId::Nvfp4FourSix.spec(), FormatId::Nvint4.spec()]);
        assert!(csv.contains(",57.1\n"));
        assert!(csv.contains(",58.3\n"));
    }

    #[test]
    fn mse_needs_whole_blocks() {
        assert!(mse_gaussian(FormatId::Nvfp4.spec(), 17, 0).is_err());
        assert!(mse_gaussian(FormatId::Nvfp4.spec(), 0, 0).is_err());
    }

    #[test]
    fn mse_is_deterministic() {
        let a = mse_gaussian(FormatId::If4.spec(), 1 << 17, 3).unwrap();
        let b = mse_gaussian(FormatId::If4.spec(), 1 << 17, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.mse > 0.0 && a.std_error > 0.0);
    }

    #[test]
    fn identical_rows_identical_channels() {
        let row: Vec<f32> = (0..64).map(|i| ((i * 7919) % 97) as f32 / 13.0 - 3.0).collect();
        let data: Vec<f32> = row.iter().cycle().take(64 * 5).copied().collect();
        let x = TensorView::new(data, vec![5, 64]).unwrap();
        let c = channel_mse(&x, &[FormatId::Nvfp4.spec(), FormatId::If4.spec()]).unwrap();
        for curve in &c.per_channel {
            assert!(curve.iter().all(|&v| v == curve[0]));
        }
    }

    #[test]
    fn channel_mse_rank_check() {
        let x = TensorView::zeros(vec![4]).unwrap();
        assert!(channel_mse(&x, &[FormatId::If4.spec()]).is_err());
    }

    #[test]
    fn representable_values_have_no_bias() {
        // One row whose max is 6·448 (α = 1) and whose other entries are
        // on the grid of that block.
        let mut v = vec![0.0f32; 16];
        v[0] = 2688.0;
        v[1] = -448.0 * 1.5;
        v[2] = 448.0 * 0.5;
        for id in [FormatId::Nvfp4, FormatId::If4, FormatId::Nvfp4FourSix] {
            let c = sr_bias(&v, id.spec(), 50, 1, 1.0).unwrap();
            assert!(c.bias.iter().all(|&b| b == 0.0), "{id}: {:?}", c.bias);
        }
    }

    #[test]
    fn selection_rate_needs_adaptive() {
        let x = TensorView::zeros(vec![16]).unwrap();
        assert!(int_selection_rate(&x, FormatId::Nvfp4.spec(), None).is_err());
    }

    #[test]
    fn outlier_blocks_stay_fp() {
        let mut data = vec![0.0f32; 16 * 8];
        // Outliers of 6·Δ for E4M3-exact Δ; the first fixes α = 1.
        data[0] = 2688.0;
        for b in 1..8 {
            data[b * 16 + b] = 6.0 * (1.0 + b as f32 / 8.0);
        }
        let x = TensorView::new(data, vec![8, 16]).unwrap();
        assert_eq!(int_selection_rate(&x, FormatId::If4.spec(), None).unwrap(), 0.0);
    }
}

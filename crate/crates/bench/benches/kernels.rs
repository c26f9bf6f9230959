use adablock::mac::{mac_if4, random_if4_block};
use adablock::quantizer::quantize_block;
use adablock::rng::substream;
use adablock::transform::{rht_rows, HadamardConfig};
use adablock::{FormatId, QuantOptions, TensorView};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = substream(seed, 0);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn quantize_tensor(c: &mut Criterion) {
    let x = TensorView::new(gaussian(256 * 1024, 1), vec![256, 1024]).unwrap();
    let mut g = c.benchmark_group("quantize");
    g.throughput(Throughput::Elements(x.len() as u64));
    for id in [FormatId::Mxfp4, FormatId::Nvfp4, FormatId::Nvfp4FourSix, FormatId::If4, FormatId::If6E2m3] {
        g.bench_with_input(BenchmarkId::from_parameter(id), &id, |b, &id| {
            b.iter(|| adablock::quantize(&x, id.spec(), &QuantOptions::nearest()).unwrap())
        });
    }
    g.finish();
}

fn quantize_one_block(c: &mut Criterion) {
    let v = gaussian(16, 2);
    let mut rng = substream(0, 0);
    let mut g = c.benchmark_group("quantize_block");
    for (name, opts) in [("nearest", QuantOptions::nearest()), ("stochastic", QuantOptions::stochastic(3))] {
        g.bench_function(name, |b| {
            b.iter(|| quantize_block(&v, 1.0, FormatId::If4.spec(), &opts, &mut rng).unwrap())
        });
    }
    g.finish();
}

fn hadamard(c: &mut Criterion) {
    let x = TensorView::new(gaussian(256 * 1024, 3), vec![256, 1024]).unwrap();
    let mut g = c.benchmark_group("hadamard");
    g.throughput(Throughput::Elements(x.len() as u64));
    for n in [16, 128, 1024] {
        let cfg = HadamardConfig::new(n, 4).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &cfg, |b, cfg| b.iter(|| rht_rows(&x, cfg).unwrap()));
    }
    g.finish();
}

fn mac(c: &mut Criterion) {
    let mut rng = substream(5, 0);
    let blocks: Vec<_> = (0..1024).map(|_| random_if4_block(&mut rng)).collect();
    let mut g = c.benchmark_group("mac");
    g.throughput(Throughput::Elements(blocks.len() as u64));
    g.bench_function("if4_1024_blocks", |b| {
        b.iter(|| {
            blocks
                .iter()
                .fold(0.0f32, |acc, (w, a, ws, as_)| mac_if4(w, a, *ws, *as_, acc).unwrap().0)
        })
    });
    g.finish();
}

criterion_group!(benches, quantize_tensor, quantize_one_block, hadamard, mac);
criterion_main!(benches);

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use efdr::jpeg::{encode_rgb, parse, serialize};
use efdr::metrics::ssim;
use efdr::network::{EfdrModel, ModelConfig, SubbandNorm};
use efdr::pipeline::{coefficients_to_subbands, hide};
use efdr::synth::natural_image;
use efdr::transform::{block_split, dct8x8, secret_to_subbands};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn codec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let file = encode_rgb(&natural_image(&mut rng, 128, 128), 75).unwrap();
    let bytes = serialize(&file).unwrap();
    c.bench_function("jpeg parse 128x128", |b| b.iter(|| parse(black_box(&bytes)).unwrap()));
    c.bench_function("jpeg serialize 128x128", |b| b.iter(|| serialize(black_box(&file)).unwrap()));
}

fn transforms(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = natural_image(&mut rng, 128, 128);
    let blocks = block_split(&img).unwrap();
    c.bench_function("dct8x8 128x128x3", |b| b.iter(|| dct8x8(black_box(&blocks))));
    c.bench_function("secret sub-bands 128x128", |b| b.iter(|| secret_to_subbands(black_box(&img)).unwrap()));
    let other = natural_image(&mut rng, 128, 128);
    c.bench_function("ssim 128x128", |b| b.iter(|| ssim(black_box(&img), black_box(&other)).unwrap()));
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ModelConfig { submodules: 4, dim_attn: 128, dim_mlp: 256, ..ModelConfig::default() };
    let mut model = EfdrModel::<f32>::new(cfg, &mut rng).unwrap();
    model.randomize(&mut rng, 0.1).unwrap();
    let cover = encode_rgb(&natural_image(&mut rng, 64, 64), 75).unwrap();
    let secret = natural_image(&mut rng, 64, 64).quantized_to_u8_levels();
    let (cm, sm) = (coefficients_to_subbands(&cover.coefficients), secret_to_subbands(&secret).unwrap());
    model.norm = SubbandNorm::fit([(&cm, &sm)]).unwrap();
    let (stego, rf) = model.forward(&cm, &sm).unwrap();
    let mut group = c.benchmark_group("network N=4 64x64");
    group.sample_size(10);
    group.bench_function("forward", |b| b.iter(|| model.forward(black_box(&cm), black_box(&sm)).unwrap()));
    group.bench_function("inverse", |b| b.iter(|| model.inverse(black_box(&stego), black_box(&rf)).unwrap()));
    group.bench_function("hide", |b| b.iter(|| hide(black_box(&cover), black_box(&secret), &model).unwrap()));
    group.finish();
}

criterion_group!(benches, codec, transforms, network);
criterion_main!(benches);

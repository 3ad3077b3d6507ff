use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use interseg_core::losses::seg_loss_with_grad;
use interseg_core::mask::{sample_rect_mask, RectSpec};
use interseg_core::metrics::{hd95, symmetric_surface_distances};
use interseg_core::segnet::{backward, forward, forward_cached, Gradients};
use interseg_core::spectrum::{fft2, ifft2};
use interseg_core::ucp::{compose_ucp, Composable};
use interseg_core::{BinaryMask, Grid, LabelField, LayerSpec, MultiGrid, ProbField, SegmenterParams};

const SIZE: usize = 64;

fn random_grid(rng: &mut ChaCha8Rng) -> Grid {
    Grid::from_fn(SIZE, SIZE, |_, _| rng.gen())
}

fn blob(cy: f64, cx: f64, r: f64) -> BinaryMask {
    BinaryMask::from_fn(SIZE, SIZE, |y, x| (y as f64 - cy).hypot(x as f64 - cx) < r)
}

fn spectrum(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_grid(&mut rng);
    c.bench_function("fft2 64x64", |b| b.iter(|| fft2(black_box(&g))));
    let s = fft2(&g);
    c.bench_function("ifft2 64x64", |b| b.iter(|| ifft2(black_box(&s)).unwrap()));
}

fn segmenter(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = SegmenterParams::<f32>::init(LayerSpec::new(1, 2), &mut rng).unwrap();
    let image: MultiGrid = random_grid(&mut rng).into();
    let label = LabelField::from_fn(SIZE, SIZE, 2, |y, x| (y > 20 && x > 20 && y < 40 && x < 44) as u8);
    let weight = BinaryMask::ones(SIZE, SIZE);
    c.bench_function("segmenter forward 64x64", |b| b.iter(|| forward(&params, black_box(&image)).unwrap()));
    c.bench_function("segmenter forward+backward 64x64", |b| {
        b.iter(|| {
            let (prob, cache) = forward_cached(&params, &image).unwrap();
            let (_, grad) = seg_loss_with_grad(&label, &prob, &weight).unwrap();
            let mut grads = Gradients::zeros_like(&params);
            backward(&params, &cache, &grad, &mut grads);
            grads
        })
    });
}

fn metrics(c: &mut Criterion) {
    let (a, b) = (blob(30.0, 30.0, 12.0), blob(34.0, 28.0, 10.0));
    c.bench_function("hd95 64x64 blobs", |bch| bch.iter(|| hd95(black_box(&a), black_box(&b)).unwrap()));
    c.bench_function("surface distances 64x64 blobs", |bch| {
        bch.iter(|| symmetric_surface_distances(black_box(&a), black_box(&b)).unwrap())
    });
}

fn composites(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, u): (MultiGrid, MultiGrid) = (random_grid(&mut rng).into(), random_grid(&mut rng).into());
    let y = LabelField::from_fn(SIZE, SIZE, 2, |r, c| (r + c < 50) as u8).one_hot();
    let p = ProbField::uniform(SIZE, SIZE, 2);
    let mask = sample_rect_mask(SIZE, SIZE, &RectSpec::default(), &mut rng).unwrap();
    c.bench_function("compose_ucp 64x64", |b| {
        b.iter(|| compose_ucp(Composable::new(&x, &y), Composable::new(&u, &p), black_box(&mask), 0.95).unwrap())
    });
}

criterion_group!(benches, spectrum, segmenter, metrics, composites);
criterion_main!(benches);

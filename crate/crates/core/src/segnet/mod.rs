//! A compact two-scale convolutional segmenter with hand-written gradients.
//!
//! ```text
//! x ─conv─relu─► a1 ─pool─conv─relu─► a2 ─conv─relu─► a3 ─up─(+a1)─conv─softmax─► p
//! ```
//!
//! All convolutions are 3×3 with reflect padding. The skip connection is an
//! addition, so the first and third stages share a width.

mod checkpoint;
mod layers;
mod optim;
mod scalar;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{ema_decay_at, poly_lr, Sgd, TeacherStudent};
pub use scalar::{gemm, Layout, Real};

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Grid, MultiGrid, ProbField};

/// Channel widths of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    /// Widths of the full-resolution, half-resolution and decoder stages.
    pub widths: [usize; 3],
    pub classes: usize,
}

impl LayerSpec {
    pub fn new(in_channels: usize, classes: usize) -> Self {
        Self { in_channels, widths: [16, 32, 16], classes }
    }

    pub fn validate(&self) -> Result<()> {
        let [w1, w2, w3] = self.widths;
        if self.in_channels == 0 || w1 == 0 || w2 == 0 || self.classes < 2 {
            return Err(Error::InvalidConfig(format!("degenerate layer spec {self:?}")));
        }
        if w1 != w3 {
            return Err(Error::InvalidConfig(format!(
                "skip connection needs equal encoder/decoder widths, got {w1} and {w3}"
            )));
        }
        Ok(())
    }

    /// (in, out) channels of the four convolutions.
    fn convs(&self) -> [(usize, usize); 4] {
        let [w1, w2, w3] = self.widths;
        [(self.in_channels, w1), (w1, w2), (w2, w3), (w3, self.classes)]
    }

    /// Named parameter blocks in storage order.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        const NAMES: [(&str, &str); 4] = [
            ("enc.weight", "enc.bias"),
            ("mid.weight", "mid.bias"),
            ("dec.weight", "dec.bias"),
            ("head.weight", "head.bias"),
        ];
        let mut offset = 0;
        let mut out = Vec::with_capacity(8);
        for ((cin, cout), (wn, bn)) in self.convs().into_iter().zip(NAMES) {
            let wlen = cout * cin * 9;
            out.push(ParamBlock { name: wn, range: offset..offset + wlen, fan_in: cin * 9 });
            offset += wlen;
            out.push(ParamBlock { name: bn, range: offset..offset + cout, fan_in: cin * 9 });
            offset += cout;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().last().map_or(0, |b| b.range.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub range: Range<usize>,
    pub fan_in: usize,
}

/// Flat parameter vector plus the spec that gives it shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterParams<T: Real> {
    spec: LayerSpec,
    values: Vec<T>,
}

impl<T: Real> SegmenterParams<T> {
    /// Kaiming-normal weights, zero biases, zero head so the initial
    /// prediction is uniform.
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut values = vec![T::ZERO; spec.param_count()];
        for block in spec.blocks() {
            if !block.name.ends_with("weight") || block.name.starts_with("head") {
                continue;
            }
            let normal = Normal::new(0.0, (2.0 / block.fan_in as f64).sqrt()).expect("finite std");
            for v in &mut values[block.range] {
                *v = T::from_f64(normal.sample(rng));
            }
        }
        Ok(Self { spec, values })
    }

    pub fn from_values(spec: LayerSpec, values: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.param_count() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                values.len()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn block(&self, i: usize) -> &[T] {
        let blocks = self.spec.blocks();
        &self.values[blocks[i].range.clone()]
    }

    pub fn cast<U: Real>(&self) -> SegmenterParams<U> {
        SegmenterParams { spec: self.spec, values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }
}

/// Gradient with the same layout as [`SegmenterParams::values`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Real> {
    pub values: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &SegmenterParams<T>) -> Self {
        Self { values: vec![T::ZERO; params.len()] }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }
}

/// Activations retained by the forward pass.
pub struct ForwardCache<T: Real> {
    height: usize,
    width: usize,
    col1: Vec<T>,
    a1: Vec<T>,
    col2: Vec<T>,
    a2: Vec<T>,
    col3: Vec<T>,
    a3: Vec<T>,
    col4: Vec<T>,
    prob: ProbField,
}

impl<T: Real> ForwardCache<T> {
    pub fn prob(&self) -> &ProbField {
        &self.prob
    }

    /// Which hidden units are positive after their ReLU, all layers concatenated.
    /// The network is smooth in its parameters wherever this pattern is constant.
    pub fn active_units(&self) -> Vec<bool> {
        [&self.a1, &self.a2, &self.a3].into_iter().flatten().map(|v| v.to_f64() > 0.0).collect()
    }
}

fn check_input(spec: &LayerSpec, image: &MultiGrid) -> Result<()> {
    let (h, w) = image.dims();
    if image.channels() != spec.in_channels {
        return Err(Error::InvalidGrid(format!(
            "segmenter expects {} input channels, got {}",
            spec.in_channels,
            image.channels()
        )));
    }
    if h % 2 != 0 || w % 2 != 0 || h < 4 || w < 4 {
        return Err(Error::InvalidGrid(format!("segmenter needs even dims of at least 4, got {h}x{w}")));
    }
    Ok(())
}

/// Per-pixel softmax over class-major logits, evaluated in f64.
fn softmax<T: Real>(logits: &[T], classes: usize, h: usize, w: usize) -> ProbField {
    let n = h * w;
    let mut planes = vec![vec![0.0f64; n]; classes];
    let mut z = vec![0.0f64; classes];
    for i in 0..n {
        let mut max = f64::MIN;
        for c in 0..classes {
            z[c] = logits[c * n + i].to_f64();
            max = max.max(z[c]);
        }
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for c in 0..classes {
            planes[c][i] = z[c] / sum;
        }
    }
    let planes = planes.into_iter().map(|p| Grid::from_raw(h, w, p)).collect();
    ProbField::from_raw(MultiGrid::new(planes).expect("equal plane sizes"))
}

pub fn forward_cached<T: Real>(params: &SegmenterParams<T>, image: &MultiGrid) -> Result<(ProbField, ForwardCache<T>)> {
    let spec = params.spec;
    check_input(&spec, image)?;
    let (h, w) = image.dims();
    let (hh, hw) = (h / 2, w / 2);
    let [(c0, c1), (_, c2), (_, c3), (_, classes)] = spec.convs();

    let input: Vec<T> = image.planes().iter().flat_map(|p| p.as_slice().iter().map(|&v| T::from_f64(v))).collect();

    let (mut a1, col1) = layers::conv3x3_forward(&input, c0, c1, (h, w), params.block(0), params.block(1));
    layers::relu_inplace(&mut a1);
    let pooled = layers::avg_pool2(&a1, c1, h, w);
    let (mut a2, col2) = layers::conv3x3_forward(&pooled, c1, c2, (hh, hw), params.block(2), params.block(3));
    layers::relu_inplace(&mut a2);
    let (mut a3, col3) = layers::conv3x3_forward(&a2, c2, c3, (hh, hw), params.block(4), params.block(5));
    layers::relu_inplace(&mut a3);
    let mut merged = layers::upsample2(&a3, c3, hh, hw);
    for (m, &s) in merged.iter_mut().zip(&a1) {
        *m += s;
    }
    let (logits, col4) = layers::conv3x3_forward(&merged, c3, classes, (h, w), params.block(6), params.block(7));
    let prob = softmax(&logits, classes, h, w);

    let cache = ForwardCache { height: h, width: w, col1, a1, col2, a2, col3, a3, col4, prob: prob.clone() };
    Ok((prob, cache))
}

pub fn forward<T: Real>(params: &SegmenterParams<T>, image: &MultiGrid) -> Result<ProbField> {
    forward_cached(params, image).map(|(p, _)| p)
}

/// Accumulates into `grads` the parameter gradient of a loss whose gradient
/// with respect to the output probabilities is `grad_prob` (class-major).
pub fn backward<T: Real>(
    params: &SegmenterParams<T>,
    cache: &ForwardCache<T>,
    grad_prob: &[f64],
    grads: &mut Gradients<T>,
) {
    let spec = params.spec;
    let (h, w) = (cache.height, cache.width);
    let (hh, hw) = (h / 2, w / 2);
    let full = h * w;
    let [(c0, c1), (_, c2), (_, c3), (_, classes)] = spec.convs();
    assert_eq!(grad_prob.len(), classes * full, "probability gradient has the wrong size");

    // Softmax: dz_c = p_c (g_c - Σ_k g_k p_k).
    let mut grad_logits = vec![T::ZERO; classes * full];
    for i in 0..full {
        let dot: f64 = (0..classes).map(|c| grad_prob[c * full + i] * cache.prob.prob(c, i)).sum();
        for c in 0..classes {
            let p = cache.prob.prob(c, i);
            grad_logits[c * full + i] = T::from_f64(p * (grad_prob[c * full + i] - dot));
        }
    }

    let blocks = spec.blocks();
    let (head_w, head_b) = split_pair(&mut grads.values, &blocks[6].range, &blocks[7].range);
    let mut grad_merged =
        layers::conv3x3_backward(&grad_logits, &cache.col4, c3, classes, (h, w), params.block(6), head_w, head_b, true)
            .expect("input gradient requested");

    let mut grad_a3 = layers::upsample2_backward(&grad_merged, c3, hh, hw);
    layers::relu_backward_inplace(&mut grad_a3, &cache.a3);
    let (dec_w, dec_b) = split_pair(&mut grads.values, &blocks[4].range, &blocks[5].range);
    let mut grad_a2 =
        layers::conv3x3_backward(&grad_a3, &cache.col3, c2, c3, (hh, hw), params.block(4), dec_w, dec_b, true)
            .expect("input gradient requested");

    layers::relu_backward_inplace(&mut grad_a2, &cache.a2);
    let (mid_w, mid_b) = split_pair(&mut grads.values, &blocks[2].range, &blocks[3].range);
    let grad_pooled =
        layers::conv3x3_backward(&grad_a2, &cache.col2, c1, c2, (hh, hw), params.block(2), mid_w, mid_b, true)
            .expect("input gradient requested");

    // a1 feeds both the pooling branch and the skip connection.
    let from_pool = layers::avg_pool2_backward(&grad_pooled, c1, h, w);
    for (g, p) in grad_merged.iter_mut().zip(from_pool) {
        *g += p;
    }
    let mut grad_a1 = grad_merged;
    layers::relu_backward_inplace(&mut grad_a1, &cache.a1);
    let (enc_w, enc_b) = split_pair(&mut grads.values, &blocks[0].range, &blocks[1].range);
    layers::conv3x3_backward(&grad_a1, &cache.col1, c0, c1, (h, w), params.block(0), enc_w, enc_b, false);
}

/// Mutable views of two adjacent, ordered ranges.
fn split_pair<'a, T>(values: &'a mut [T], first: &Range<usize>, second: &Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    debug_assert_eq!(first.end, second.start);
    let (a, b) = values[first.start..second.end].split_at_mut(first.len());
    (a, b)
}

/// Forward, evaluate `loss` on the prediction, and back-propagate it.
pub fn loss_and_gradient<T: Real>(
    params: &SegmenterParams<T>,
    image: &MultiGrid,
    loss: impl FnOnce(&ProbField) -> Result<(f64, Vec<f64>)>,
) -> Result<(f64, Gradients<T>)> {
    let (prob, cache) = forward_cached(params, image)?;
    let (value, grad_prob) = loss(&prob)?;
    let mut grads = Gradients::zeros_like(params);
    backward(params, &cache, &grad_prob, &mut grads);
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{argmax_field, BinaryMask, LabelField};
    use crate::losses::{seg_loss_with_grad, weighted_ce, weighted_ce_grad, weighted_dice, weighted_dice_grad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> MultiGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(h, w, |_, _| rng.gen()).into()
    }

    fn randomized(seed: u64, classes: usize) -> SegmenterParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SegmenterParams::<f64>::init(LayerSpec::new(1, classes), &mut rng).unwrap();
        // Non-zero head and biases so every block carries gradient.
        for v in p.values_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        p
    }

    #[test]
    fn parameter_budget() {
        let spec = LayerSpec::new(1, 2);
        assert!(spec.param_count() < 30_000);
        assert_eq!(spec.blocks().len(), 8);
        assert!(LayerSpec { widths: [16, 32, 8], ..spec }.validate().is_err());
    }

    #[test]
    fn zero_head_predicts_uniform() {
        let p = SegmenterParams::<f32>::init(LayerSpec::new(1, 3), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let out = forward(&p, &random_image(2, 8, 8)).unwrap();
        for c in 0..3 {
            assert!(out.plane(c).as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
        assert_eq!(argmax_field(&out), LabelField::background(8, 8, 3));
    }

    #[test]
    fn forward_is_deterministic_and_normalized() {
        let p = randomized(3, 3);
        let x = random_image(4, 8, 8);
        let a = forward(&p, &x).unwrap();
        assert_eq!(a, forward(&p, &x).unwrap());
        for i in 0..a.len() {
            let s: f64 = (0..3).map(|c| a.prob(c, i)).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(ProbField::new(a.as_multigrid().clone()).is_ok());
    }

    #[test]
    fn constant_input_gives_constant_output() {
        let p = randomized(5, 2);
        let out = forward(&p, &Grid::filled(8, 12, 0.4).into()).unwrap();
        let first = out.prob(1, 0);
        assert!(out.plane(1).as_slice().iter().all(|&v| (v - first).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_dims() {
        let p = randomized(6, 2);
        assert!(forward(&p, &random_image(1, 7, 8)).is_err());
        assert!(forward(&p, &random_image(1, 2, 2)).is_err());
        let two: MultiGrid = MultiGrid::new(vec![Grid::zeros(8, 8), Grid::zeros(8, 8)]).unwrap();
        assert!(forward(&p, &two).is_err());
    }

    #[test]
    fn fully_masked_loss_has_zero_gradient() {
        let p = randomized(7, 2);
        let y = LabelField::from_fn(8, 8, 2, |r, _| (r < 4) as u8);
        let none = BinaryMask::zeros(8, 8);
        let (value, grads) =
            loss_and_gradient(&p, &random_image(8, 8, 8), |prob| seg_loss_with_grad(&y, prob, &none)).unwrap();
        assert_eq!(value, 0.0);
        assert!(grads.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        let p = randomized(9, 3);
        let x = random_image(10, 8, 8);
        let y = LabelField::from_fn(8, 8, 3, |r, c| ((r / 3 + c / 3) % 3) as u8);
        let m = BinaryMask::from_fn(8, 8, |r, c| (r + c) % 3 != 0);
        let (_, sum) = loss_and_gradient(&p, &x, |prob| seg_loss_with_grad(&y, prob, &m)).unwrap();
        let (_, ce) =
            loss_and_gradient(&p, &x, |prob| Ok((weighted_ce(&y, prob, &m)?, weighted_ce_grad(&y, prob, &m)?)))
                .unwrap();
        let (_, dice) =
            loss_and_gradient(&p, &x, |prob| Ok((weighted_dice(&y, prob, &m)?, weighted_dice_grad(&y, prob, &m)?)))
                .unwrap();
        for i in 0..sum.values.len() {
            assert!((sum.values[i] - ce.values[i] - dice.values[i]).abs() < 1e-9);
        }
    }
}

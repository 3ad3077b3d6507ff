//! Bidirectional copy-paste between a source image and an unlabeled image.
//!
//! One rectangular mask drives both directions: the "in" composite carries
//! the source inside the mask and the unlabeled image outside it, the "out"
//! composite the other way round. Together the two composites partition the
//! unlabeled image, which is what lets the teacher's predictions on them be
//! stitched back into a second pseudo-label for the unlabeled image.

use crate::error::{check_dims, Result};
use crate::grid::{argmax_field, blend, confidence_mask, BinaryMask, LabelField, MultiGrid, ProbField};
use crate::mask::mask_xor_agreement;

/// Both copy-paste composites with their probability maps, pseudo-labels
/// and confidence weights.
#[derive(Clone, Debug, PartialEq)]
pub struct IntermediatePair {
    pub sample_in: MultiGrid,
    pub sample_out: MultiGrid,
    pub prob_in: ProbField,
    pub prob_out: ProbField,
    pub label_in: LabelField,
    pub label_out: LabelField,
    pub weight_in: BinaryMask,
    pub weight_out: BinaryMask,
    pub mask: BinaryMask,
}

/// Image plus per-pixel class distribution; ground truth enters as a one-hot field.
#[derive(Clone, Copy, Debug)]
pub struct Composable<'a> {
    pub image: &'a MultiGrid,
    pub prob: &'a ProbField,
}

impl<'a> Composable<'a> {
    pub fn new(image: &'a MultiGrid, prob: &'a ProbField) -> Self {
        Self { image, prob }
    }
}

pub fn compose_ucp(
    source: Composable<'_>,
    unlabeled: Composable<'_>,
    mask: &BinaryMask,
    tau: f64,
) -> Result<IntermediatePair> {
    check_dims(source.image.dims(), source.prob.dims())?;
    check_dims(unlabeled.image.dims(), unlabeled.prob.dims())?;
    let inverse = mask.not();

    let sample_in = blend(source.image, unlabeled.image, mask)?;
    let sample_out = blend(source.image, unlabeled.image, &inverse)?;
    let prob_in = blend(source.prob, unlabeled.prob, mask)?;
    let prob_out = blend(source.prob, unlabeled.prob, &inverse)?;

    let src_label = argmax_field(source.prob);
    let unl_label = argmax_field(unlabeled.prob);
    let label_in = blend(&src_label, &unl_label, mask)?;
    let label_out = blend(&src_label, &unl_label, &inverse)?;

    let weight_in = confidence_mask(&prob_in, tau);
    let weight_out = confidence_mask(&prob_out, tau);

    Ok(IntermediatePair {
        sample_in,
        sample_out,
        prob_in,
        prob_out,
        label_in,
        label_out,
        weight_in,
        weight_out,
        mask: mask.clone(),
    })
}

/// Stitches the unlabeled regions of the teacher's predictions on both
/// composites into a single pseudo-label for the unlabeled image.
///
/// Inside the mask the unlabeled content lives in the "out" composite, and
/// outside it in the "in" composite.
pub fn merge_intermediate_pseudolabels(
    pred_on_in: &ProbField,
    pred_on_out: &ProbField,
    mask: &BinaryMask,
    tau: f64,
) -> Result<(LabelField, BinaryMask)> {
    let merged = blend(&argmax_field(pred_on_out), &argmax_field(pred_on_in), mask)?;
    let weight = blend(&confidence_mask(pred_on_out, tau), &confidence_mask(pred_on_in, tau), mask)?;
    Ok((merged, weight))
}

/// Keeps pixels where the direct and merged pseudo-labels agree and both are confident.
pub fn ensemble_weight(
    q_direct: &LabelField,
    q_merged: &LabelField,
    w: &BinaryMask,
    w_mg: &BinaryMask,
) -> Result<BinaryMask> {
    mask_xor_agreement(q_direct, q_merged)?.and(w)?.and(w_mg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::mask::{sample_rect_mask, RectSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, v: f64) -> MultiGrid {
        Grid::from_fn(h, w, |y, x| v + 0.001 * (y * w + x) as f64).into()
    }

    fn prob2(h: usize, w: usize, fg: impl Fn(usize, usize) -> f64) -> ProbField {
        let p1 = Grid::from_fn(h, w, &fg);
        let p0 = Grid::from_fn(h, w, |y, x| 1.0 - fg(y, x));
        ProbField::new(MultiGrid::new(vec![p0, p1]).unwrap()).unwrap()
    }

    #[test]
    fn full_and_empty_masks() {
        let (x, u) = (image(4, 4, 0.1), image(4, 4, 0.5));
        let y = LabelField::from_fn(4, 4, 2, |r, _| (r < 2) as u8).one_hot();
        let p = prob2(4, 4, |_, c| if c < 2 { 0.97 } else { 0.2 });
        let pair =
            compose_ucp(Composable::new(&x, &y), Composable::new(&u, &p), &BinaryMask::ones(4, 4), 0.95).unwrap();
        assert_eq!(pair.sample_in, x);
        assert_eq!(pair.label_in, argmax_field(&y));
        assert_eq!(pair.sample_out, u);
        assert_eq!(pair.label_out, argmax_field(&p));

        let pair =
            compose_ucp(Composable::new(&x, &y), Composable::new(&u, &p), &BinaryMask::zeros(4, 4), 0.95).unwrap();
        assert_eq!(pair.sample_in, u);
        assert_eq!(pair.label_in, argmax_field(&p));
        assert_eq!(pair.sample_out, x);
        assert_eq!(pair.label_out, argmax_field(&y));
    }

    #[test]
    fn weights_follow_mask_for_confident_source() {
        let (x, u) = (image(6, 6, 0.1), image(6, 6, 0.5));
        let y = LabelField::from_fn(6, 6, 2, |r, c| ((r + c) % 3 == 0) as u8).one_hot();
        let uniform = ProbField::uniform(6, 6, 2);
        let m = BinaryMask::from_fn(6, 6, |r, c| (1..4).contains(&r) && (2..5).contains(&c));
        let pair = compose_ucp(Composable::new(&x, &y), Composable::new(&u, &uniform), &m, 0.95).unwrap();
        assert_eq!(pair.weight_in, m);
        assert_eq!(pair.weight_out, m.not());
    }

    #[test]
    fn merge_examples() {
        let a = prob2(2, 2, |r, c| [[0.9, 0.2], [0.6, 0.99]][r][c]);
        let b = prob2(2, 2, |r, c| [[0.1, 0.97], [0.3, 0.01]][r][c]);
        let m = BinaryMask::from_fn(2, 2, |r, c| r == c);

        let (q, w) = merge_intermediate_pseudolabels(&a, &a, &m, 0.95).unwrap();
        assert_eq!(q, argmax_field(&a));
        assert_eq!(w, confidence_mask(&a, 0.95));

        let (q, _) = merge_intermediate_pseudolabels(&a, &b, &BinaryMask::ones(2, 2), 0.95).unwrap();
        assert_eq!(q, argmax_field(&b));

        // Hand case analysis: diagonal pixels come from `b` (the out prediction),
        // off-diagonal pixels from `a` (the in prediction).
        // (0,0): b fg 0.1 -> class 0, max 0.9 -> unconfident
        // (0,1): a fg 0.2 -> class 0, max 0.8 -> unconfident
        // (1,0): a fg 0.6 -> class 1, max 0.6 -> unconfident
        // (1,1): b fg 0.01 -> class 0, max 0.99 -> confident
        let (q, w) = merge_intermediate_pseudolabels(&a, &b, &m, 0.95).unwrap();
        assert_eq!(q.as_slice(), &[0, 0, 1, 0]);
        assert_eq!(w.bits().collect::<Vec<_>>(), vec![false, false, false, true]);
    }

    #[test]
    fn ensemble_examples() {
        let q = LabelField::from_fn(4, 4, 2, |r, _| (r % 2) as u8);
        let ones = BinaryMask::ones(4, 4);
        assert_eq!(ensemble_weight(&q, &q, &ones, &ones).unwrap(), ones);

        let flipped = LabelField::from_fn(4, 4, 2, |r, _| 1 - (r % 2) as u8);
        assert_eq!(ensemble_weight(&q, &flipped, &ones, &ones).unwrap(), BinaryMask::zeros(4, 4));

        let w = BinaryMask::from_bools(4, 4, (0..16).map(|i| i < 10));
        let w_mg = BinaryMask::from_bools(4, 4, (0..16).map(|i| (4..10).contains(&i) || i >= 13));
        let ens = ensemble_weight(&q, &q, &w, &w_mg).unwrap();
        assert_eq!(ens.count_ones(), 6);
    }

    fn random_case(seed: u64) -> (MultiGrid, ProbField, MultiGrid, ProbField, BinaryMask) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (12, 10);
        let x: MultiGrid = Grid::from_fn(h, w, |_, _| rng.gen()).into();
        let u: MultiGrid = Grid::from_fn(h, w, |_, _| rng.gen()).into();
        let y = LabelField::from_fn(h, w, 3, |_, _| rng.gen_range(0..3)).one_hot();
        let raw: Vec<[f64; 3]> = (0..h * w).map(|_| [rng.gen::<f64>(), rng.gen(), rng.gen::<f64>() * 20.0]).collect();
        let planes = (0..3)
            .map(|c| Grid::new(h, w, raw.iter().map(|r| r[c] / (r[0] + r[1] + r[2])).collect()).unwrap())
            .collect();
        let p = ProbField::new(MultiGrid::new(planes).unwrap()).unwrap();
        let m = sample_rect_mask(h, w, &RectSpec::default(), &mut rng).unwrap();
        (x, y, u, p, m)
    }

    proptest! {
        #[test]
        fn composites_partition_the_unlabeled_image(seed in any::<u64>()) {
            let (x, y, u, p, m) = random_case(seed);
            let pair = compose_ucp(Composable::new(&x, &y), Composable::new(&u, &p), &m, 0.95).unwrap();
            prop_assert_eq!(blend(&pair.sample_out, &pair.sample_in, &m).unwrap(), u.clone());
            prop_assert_eq!(blend(&pair.sample_in, &pair.sample_out, &m).unwrap(), x.clone());

            let q = argmax_field(&p);
            let l = argmax_field(&y);
            for i in 0..m.len() {
                let (lin, lout) = (pair.label_in.as_slice()[i], pair.label_out.as_slice()[i]);
                if m.bit(i) {
                    prop_assert_eq!(lin, l.as_slice()[i]);
                    prop_assert_eq!(lout, q.as_slice()[i]);
                } else {
                    prop_assert_eq!(lin, q.as_slice()[i]);
                    prop_assert_eq!(lout, l.as_slice()[i]);
                }
            }
            prop_assert_eq!(argmax_field(&pair.prob_in), pair.label_in.clone());

            // Composing an already-composited field with the same mask changes nothing.
            let again = compose_ucp(
                Composable::new(&pair.sample_in, &pair.prob_in),
                Composable::new(&u, &p),
                &m,
                0.95,
            ).unwrap();
            prop_assert_eq!(again.sample_in, pair.sample_in);
        }

        #[test]
        fn ensemble_never_exceeds_inputs(seed in any::<u64>()) {
            let (_, y, _, p, m) = random_case(seed);
            let (q_mg, w_mg) = merge_intermediate_pseudolabels(&p, &y, &m, 0.5).unwrap();
            let q = argmax_field(&p);
            let w = confidence_mask(&p, 0.5);
            let ens = ensemble_weight(&q, &q_mg, &w, &w_mg).unwrap();
            for i in 0..ens.len() {
                prop_assert!(!ens.bit(i) || (w.bit(i) && w_mg.bit(i)));
            }
        }
    }
}

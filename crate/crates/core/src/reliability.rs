//! Reliability-driven sample selection.
//!
//! Each unlabeled image gets a hardness score, one minus the Dice agreement
//! between the teacher's and the student's pseudo-labels. Easy images enter
//! a bounded FIFO queue under an adaptive threshold γ and later serve as
//! copy-paste sources; the hardest image of each batch gets a targeted
//! composite whose pasted region is the bounding box of the labeled and
//! predicted foreground.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{argmax_field, blend, confidence_mask, BinaryMask, LabelField, MultiGrid, ProbField};
use crate::mask::foreground_union_box;
use crate::metrics::dice;

/// `1 − mean foreground-class Dice` between two label fields. A class that
/// is absent from both counts as perfect agreement.
pub fn hardness(teacher_label: &LabelField, student_label: &LabelField) -> Result<f64> {
    crate::error::check_dims(teacher_label.dims(), student_label.dims())?;
    let classes = teacher_label.classes().max(student_label.classes());
    let mean_dice = (1..classes as u8)
        .map(|c| dice(&teacher_label.class_mask(c), &student_label.class_mask(c)))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / (classes - 1) as f64;
    Ok(1.0 - mean_dice)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReliableEntry {
    pub sample: MultiGrid,
    pub prob: ProbField,
    pub label: LabelField,
    pub hardness: f64,
    /// Index of the originating unlabeled image, for telemetry.
    pub source_id: usize,
}

/// Bounded FIFO of reliable samples with its adaptive admission threshold.
#[derive(Clone, Debug)]
pub struct ReliableQueue {
    entries: VecDeque<ReliableEntry>,
    capacity: usize,
    gamma: f64,
    gamma0: f64,
    delta: f64,
}

impl ReliableQueue {
    pub fn new(capacity: usize, gamma0: f64, delta: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("queue capacity must be positive".into()));
        }
        if !(gamma0 > 0.0 && gamma0.is_finite()) || !(delta > 1.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma0 {gamma0} / delta {delta}")));
        }
        Ok(Self { entries: VecDeque::with_capacity(capacity + 1), capacity, gamma: gamma0, gamma0, delta })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ReliableEntry> {
        self.entries.iter()
    }

    pub fn mean_hardness(&self) -> Option<f64> {
        if self.entries.is_empty() {
            None
        } else {
            Some(self.entries.iter().map(|e| e.hardness).sum::<f64>() / self.entries.len() as f64)
        }
    }

    /// Admits the candidate if its hardness is strictly below γ. When the
    /// queue overflows, the oldest entry leaves and γ drops to the largest
    /// retained hardness (never below γ₀).
    // Negated comparisons reject NaN hardness.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn try_admit(&mut self, candidate: ReliableEntry) -> bool {
        if !(candidate.hardness < self.gamma) {
            return false;
        }
        self.entries.push_back(candidate);
        if self.entries.len() > self.capacity {
            self.entries.pop_front();
            let max = self.entries.iter().map(|e| e.hardness).fold(f64::MIN, f64::max);
            self.gamma = max.max(self.gamma0);
        }
        true
    }

    /// `γ ← max(γ₀, δ·γ)`; called after an iteration that admitted nothing.
    pub fn relax_threshold(&mut self) {
        self.gamma = (self.delta * self.gamma).max(self.gamma0);
    }

    pub fn random_entry<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&ReliableEntry> {
        if self.entries.is_empty() {
            None
        } else {
            self.entries.get(rng.gen_range(0..self.entries.len()))
        }
    }
}

/// Index of the hardest sample; ties go to the lowest index.
pub fn pick_unreliable(hardness: &[f64]) -> Result<usize> {
    let (first, rest) = hardness.split_first().ok_or(Error::EmptyBatch)?;
    let mut best = (0, *first);
    for (i, &h) in rest.iter().enumerate() {
        if h > best.1 {
            best = (i + 1, h);
        }
    }
    Ok(best.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnreliableIntermediate {
    pub sample: MultiGrid,
    pub label: LabelField,
    pub weight: BinaryMask,
    pub mask: BinaryMask,
}

/// Pastes the bounding box of the combined labeled and predicted foreground
/// from the labeled image into the unreliable one (one direction only).
///
/// Inside the box the ground truth supervises every pixel; outside, only
/// confident pixels of the unreliable pseudo-label count.
pub fn build_unreliable_intermediate(
    labeled_image: &MultiGrid,
    labeled_label: &LabelField,
    unreliable_image: &MultiGrid,
    unreliable_prob: &ProbField,
    tau: f64,
) -> Result<UnreliableIntermediate> {
    let pseudo = argmax_field(unreliable_prob);
    let mask = foreground_union_box(&pseudo, labeled_label)?;
    let sample = blend(labeled_image, unreliable_image, &mask)?;
    let label = blend(labeled_label, &pseudo, &mask)?;
    let weight = mask.or(&confidence_mask(unreliable_prob, tau))?;
    Ok(UnreliableIntermediate { sample, label, weight, mask })
}

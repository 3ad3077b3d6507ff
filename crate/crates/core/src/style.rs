//! Low-frequency amplitude mixing for style transfer between images.
//!
//! The labeled image keeps its phase (structure) and receives a convex
//! blend of its own and the unlabeled image's amplitude inside a small
//! centered low-frequency block. The blend ratio is a single scalar drawn
//! per call; in the progress-aware variant its upper bound grows linearly
//! with training progress.

use rand::Rng;

use crate::error::{check_dims, Error, Result};
use crate::grid::{Grid, MultiGrid};
use crate::spectrum::{fft2, ifft2, Spectrum};

/// Centered block of frequency bins eligible for mixing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LowFrequencyBlock {
    pub half_height: usize,
    pub half_width: usize,
}

impl LowFrequencyBlock {
    /// Half-extents `⌈βH⌉ × ⌈βW⌉` around the zero-frequency bin.
    pub fn from_beta(height: usize, width: usize, beta: f64) -> Self {
        Self { half_height: (beta * height as f64).ceil() as usize, half_width: (beta * width as f64).ceil() as usize }
    }

    pub fn contains(&self, spectrum_dims: (usize, usize), y: usize, x: usize) -> bool {
        let (cy, cx) = (spectrum_dims.0 / 2, spectrum_dims.1 / 2);
        y.abs_diff(cy) <= self.half_height && x.abs_diff(cx) <= self.half_width
    }
}

/// Training clock for the progress-aware mixing bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StyleSchedule {
    pub step: usize,
    pub total_steps: usize,
    pub beta: f64,
}

impl StyleSchedule {
    pub fn new(step: usize, total_steps: usize, beta: f64) -> Result<Self> {
        if total_steps == 0 || step > total_steps {
            return Err(Error::InvalidConfig(format!("step {step} of {total_steps}")));
        }
        if !(beta > 0.0 && beta < 0.5) {
            return Err(Error::InvalidConfig(format!("beta {beta} outside (0, 0.5)")));
        }
        Ok(Self { step, total_steps, beta })
    }

    /// Fraction of training completed, in [0, 1].
    pub fn progress(&self) -> f64 {
        self.step as f64 / self.total_steps as f64
    }
}

/// Mixed image together with the ratio that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixup<T> {
    pub image: T,
    pub ratio: f64,
}

/// Blends `ratio` of `unlabeled`'s amplitude into `labeled` inside `block`;
/// everything outside the block and the whole phase come from `labeled`.
pub fn mix_spectra(labeled: &Spectrum, unlabeled: &Spectrum, ratio: f64, block: LowFrequencyBlock) -> Result<Spectrum> {
    check_dims(labeled.dims(), unlabeled.dims())?;
    let dims = labeled.dims();
    let w = dims.1;
    let amplitude = labeled
        .amplitude
        .as_slice()
        .iter()
        .zip(unlabeled.amplitude.as_slice())
        .enumerate()
        .map(|(i, (&a, &b))| if block.contains(dims, i / w, i % w) { ratio * b + (1.0 - ratio) * a } else { a })
        .collect();
    Ok(Spectrum { amplitude: Grid::from_raw(dims.0, w, amplitude), phase: labeled.phase.clone() })
}

/// Amplitude mixing with a fixed ratio; the result is clamped to [0, 1].
pub fn mix_amplitude_with_ratio(
    labeled: &Grid,
    unlabeled: &Grid,
    ratio: f64,
    block: LowFrequencyBlock,
) -> Result<Grid> {
    check_dims(labeled.dims(), unlabeled.dims())?;
    if ratio == 0.0 {
        return Ok(labeled.clone());
    }
    let mixed = mix_spectra(&fft2(labeled), &fft2(unlabeled), ratio, block)?;
    Ok(ifft2(&mixed)?.clamp(0.0, 1.0))
}

fn mix_channels(labeled: &MultiGrid, unlabeled: &MultiGrid, ratio: f64, block: LowFrequencyBlock) -> Result<MultiGrid> {
    if labeled.channels() != unlabeled.channels() {
        return Err(Error::InvalidGrid("channel count mismatch".into()));
    }
    let planes = labeled
        .planes()
        .iter()
        .zip(unlabeled.planes())
        .map(|(a, b)| mix_amplitude_with_ratio(a, b, ratio, block))
        .collect::<Result<Vec<_>>>()?;
    MultiGrid::new(planes)
}

/// Progress-aware mixing: ratio drawn from `U[0, progress]`.
pub fn amplitude_mixup<R: Rng + ?Sized>(
    labeled: &Grid,
    unlabeled: &Grid,
    schedule: &StyleSchedule,
    rng: &mut R,
) -> Result<Mixup<Grid>> {
    let ratio = rng.gen::<f64>() * schedule.progress();
    let block = LowFrequencyBlock::from_beta(labeled.height(), labeled.width(), schedule.beta);
    Ok(Mixup { image: mix_amplitude_with_ratio(labeled, unlabeled, ratio, block)?, ratio })
}

/// Multi-channel [`amplitude_mixup`]; every channel shares one ratio.
pub fn amplitude_mixup_channels<R: Rng + ?Sized>(
    labeled: &MultiGrid,
    unlabeled: &MultiGrid,
    schedule: &StyleSchedule,
    rng: &mut R,
) -> Result<Mixup<MultiGrid>> {
    let ratio = rng.gen::<f64>() * schedule.progress();
    let (h, w) = labeled.dims();
    let block = LowFrequencyBlock::from_beta(h, w, schedule.beta);
    Ok(Mixup { image: mix_channels(labeled, unlabeled, ratio, block)?, ratio })
}

/// Progress-agnostic mixing: ratio drawn from `U[0, 1]`.
pub fn ram_mixup<R: Rng + ?Sized>(labeled: &Grid, unlabeled: &Grid, beta: f64, rng: &mut R) -> Result<Mixup<Grid>> {
    let ratio = rng.gen::<f64>();
    let block = LowFrequencyBlock::from_beta(labeled.height(), labeled.width(), beta);
    Ok(Mixup { image: mix_amplitude_with_ratio(labeled, unlabeled, ratio, block)?, ratio })
}

/// Multi-channel [`ram_mixup`].
pub fn ram_mixup_channels<R: Rng + ?Sized>(
    labeled: &MultiGrid,
    unlabeled: &MultiGrid,
    beta: f64,
    rng: &mut R,
) -> Result<Mixup<MultiGrid>> {
    let ratio = rng.gen::<f64>();
    let (h, w) = labeled.dims();
    let block = LowFrequencyBlock::from_beta(h, w, beta);
    Ok(Mixup { image: mix_channels(labeled, unlabeled, ratio, block)?, ratio })
}

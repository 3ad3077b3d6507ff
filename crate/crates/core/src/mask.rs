//! Copy-paste masks and mask algebra.

use rand::Rng;

use crate::error::{check_dims, Error, Result};
use crate::grid::{BinaryMask, LabelField};

/// Ranges from which the pasted rectangle is drawn.
///
/// `area_fraction` is relative to the full frame; `aspect_ratio` is
/// width / height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectSpec {
    pub area_fraction: (f64, f64),
    pub aspect_ratio: (f64, f64),
}

impl Default for RectSpec {
    fn default() -> Self {
        Self { area_fraction: (0.04, 0.36), aspect_ratio: (0.5, 2.0) }
    }
}

impl RectSpec {
    pub fn validate(&self) -> Result<()> {
        let (alo, ahi) = self.area_fraction;
        let (rlo, rhi) = self.aspect_ratio;
        if !(alo > 0.0 && alo <= ahi && ahi <= 1.0) {
            return Err(Error::InvalidSpec(format!("area fraction range [{alo}, {ahi}]")));
        }
        if !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return Err(Error::InvalidSpec(format!("aspect ratio range [{rlo}, {rhi}]")));
        }
        Ok(())
    }
}

/// Draws a single axis-aligned rectangle of ones, uniformly placed.
pub fn sample_rect_mask<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    spec: &RectSpec,
    rng: &mut R,
) -> Result<BinaryMask> {
    spec.validate()?;
    let (hf, wf) = (height as f64, width as f64);
    let frame = hf * wf;
    let (rlo, rhi) = spec.aspect_ratio;
    // A rectangle of area A and aspect r has sides sqrt(A/r) x sqrt(A*r);
    // it fits iff A/H² <= r <= W²/A, which bounds the admissible area.
    let max_area = (rhi * hf * hf).min(wf * wf / rlo).min(frame);
    let area_lo = spec.area_fraction.0 * frame;
    let area_hi = (spec.area_fraction.1 * frame).min(max_area);
    if area_lo > max_area * (1.0 + 1e-12) {
        return Err(Error::InvalidSpec(format!(
            "area fraction {} cannot fit a {height}x{width} frame with aspect in [{rlo}, {rhi}]",
            spec.area_fraction.0
        )));
    }
    let area = uniform(rng, area_lo.min(area_hi), area_hi);
    let r_min = rlo.max(area / (hf * hf));
    let r_max = rhi.min(wf * wf / area).max(r_min);
    let aspect = uniform(rng, r_min, r_max);

    let rh = ((area / aspect).sqrt().round() as usize).clamp(1, height);
    let rw = ((area * aspect).sqrt().round() as usize).clamp(1, width);
    let top = rng.gen_range(0..=height - rh);
    let left = rng.gen_range(0..=width - rw);
    Ok(BinaryMask::from_fn(height, width, |y, x| (top..top + rh).contains(&y) && (left..left + rw).contains(&x)))
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Tight bounding box of the pixels that are foreground in `a` or `b`.
pub fn foreground_union_box(a: &LabelField, b: &LabelField) -> Result<BinaryMask> {
    check_dims(a.dims(), b.dims())?;
    let (h, w) = a.dims();
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..h {
        for x in 0..w {
            if a.get(y, x) != 0 || b.get(y, x) != 0 {
                let (y0, y1, x0, x1) = bounds.get_or_insert((y, y, x, x));
                *y0 = (*y0).min(y);
                *y1 = (*y1).max(y);
                *x0 = (*x0).min(x);
                *x1 = (*x1).max(x);
            }
        }
    }
    Ok(match bounds {
        None => BinaryMask::zeros(h, w),
        Some((y0, y1, x0, x1)) => BinaryMask::from_fn(h, w, |y, x| (y0..=y1).contains(&y) && (x0..=x1).contains(&x)),
    })
}

/// 1 where both fields assign the same class, 0 where they disagree.
pub fn mask_xor_agreement(a: &LabelField, b: &LabelField) -> Result<BinaryMask> {
    check_dims(a.dims(), b.dims())?;
    let (h, w) = a.dims();
    Ok(BinaryMask::from_bools(h, w, a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x == y)))
}

//! Weak (geometric) and strong (geometric plus photometric) augmentation.
//!
//! A strong view is its weak twin passed through a photometric stage, so
//! both share one geometric draw and stay pixel-aligned.

use rand::Rng;

use crate::grid::{Grid, LabelField, MultiGrid};

const MAX_SMALL_ANGLE: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// Geometric parameters: crop-resize with a small rotation (one resample),
/// then a quarter-turn rotation, then flips.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricDraw {
    /// Side of the crop relative to the frame, in (0, 1].
    pub crop_scale: f64,
    /// Crop-center offsets in [-1, 1], as fractions of the available slack.
    pub crop_offset: (f64, f64),
    /// Radians.
    pub angle: f64,
    pub quarter_turns: u8,
    pub flip_vertical: bool,
    pub flip_horizontal: bool,
}

impl GeometricDraw {
    pub const IDENTITY: Self = Self {
        crop_scale: 1.0,
        crop_offset: (0.0, 0.0),
        angle: 0.0,
        quarter_turns: 0,
        flip_vertical: false,
        flip_horizontal: false,
    };

    /// Quarter turns are limited to 0 or 2 on non-square frames.
    pub fn sample<R: Rng + ?Sized>(dims: (usize, usize), rng: &mut R) -> Self {
        let square = dims.0 == dims.1;
        let turns = rng.gen_range(0..4u8);
        Self {
            crop_scale: rng.gen_range(0.8..=1.0),
            crop_offset: (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)),
            angle: rng.gen_range(-MAX_SMALL_ANGLE..=MAX_SMALL_ANGLE),
            quarter_turns: if square { turns } else { turns & 2 },
            flip_vertical: rng.gen(),
            flip_horizontal: rng.gen(),
        }
    }

    fn resamples(&self) -> bool {
        self.crop_scale != 1.0 || self.angle != 0.0
    }

    /// Source coordinates (continuous, pixel centers at integers) of output
    /// pixel `(y, x)` for the crop/rotation stage.
    fn source(&self, dims: (usize, usize), y: usize, x: usize) -> (f64, f64) {
        let (h, w) = (dims.0 as f64, dims.1 as f64);
        let slack = 1.0 - self.crop_scale;
        let cy = h / 2.0 + self.crop_offset.0 * slack * h / 2.0;
        let cx = w / 2.0 + self.crop_offset.1 * slack * w / 2.0;
        let (v, u) = (y as f64 + 0.5 - h / 2.0, x as f64 + 0.5 - w / 2.0);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let sx = cx + self.crop_scale * (c * u - s * v) - 0.5;
        let sy = cy + self.crop_scale * (s * u + c * v) - 0.5;
        (sy, sx)
    }

    /// Output-to-input index map of the quarter-turn and flip stages.
    fn permute(&self, dims: (usize, usize), y: usize, x: usize) -> (usize, usize) {
        let (h, w) = dims;
        let (y, x) = (if self.flip_vertical { h - 1 - y } else { y }, if self.flip_horizontal { w - 1 - x } else { x });
        // Counter-clockwise quarter turn: out(y, x) = in(x, w - 1 - y).
        match self.quarter_turns % 4 {
            0 => (y, x),
            1 => (x, w - 1 - y),
            2 => (h - 1 - y, w - 1 - x),
            _ => (h - 1 - x, y),
        }
    }

    pub fn apply_grid(&self, g: &Grid) -> Grid {
        let dims = g.dims();
        let resampled = if self.resamples() {
            Grid::from_fn(dims.0, dims.1, |y, x| {
                let (sy, sx) = self.source(dims, y, x);
                bilinear(g, sy, sx)
            })
        } else {
            g.clone()
        };
        Grid::from_fn(dims.0, dims.1, |y, x| {
            let (sy, sx) = self.permute(dims, y, x);
            resampled.get(sy, sx)
        })
    }

    pub fn apply_image(&self, image: &MultiGrid) -> MultiGrid {
        image.map_planes(|p| self.apply_grid(p))
    }

    /// Nearest-neighbour warp of a label field.
    pub fn apply_label(&self, label: &LabelField) -> LabelField {
        let (h, w) = label.dims();
        let resampled = if self.resamples() {
            LabelField::from_fn(h, w, label.classes(), |y, x| {
                let (sy, sx) = self.source((h, w), y, x);
                let yi = sy.round().clamp(0.0, (h - 1) as f64) as usize;
                let xi = sx.round().clamp(0.0, (w - 1) as f64) as usize;
                label.get(yi, xi)
            })
        } else {
            label.clone()
        };
        LabelField::from_fn(h, w, label.classes(), |y, x| {
            let (sy, sx) = self.permute((h, w), y, x);
            resampled.get(sy, sx)
        })
    }
}

/// Bilinear interpolation with edge replication.
fn bilinear(g: &Grid, y: f64, x: f64) -> f64 {
    let (h, w) = g.dims();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = g.get(y0, x0) * (1.0 - fx) + g.get(y0, x1) * fx;
    let bottom = g.get(y1, x0) * (1.0 - fx) + g.get(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Intensity jitter followed by Gaussian blur.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotometricDraw {
    pub brightness: f64,
    pub contrast: f64,
    pub gamma: f64,
    pub blur_sigma: f64,
}

impl PhotometricDraw {
    pub const IDENTITY: Self = Self { brightness: 0.0, contrast: 1.0, gamma: 1.0, blur_sigma: 0.0 };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            brightness: rng.gen_range(-0.2..=0.2),
            contrast: rng.gen_range(0.8..=1.2),
            gamma: rng.gen_range(0.8..=1.25),
            blur_sigma: rng.gen_range(0.0..=1.0),
        }
    }

    pub fn apply_grid(&self, g: &Grid) -> Grid {
        if *self == Self::IDENTITY {
            return g.clone();
        }
        let mean = g.mean();
        let jittered =
            g.map(|v| (self.contrast * (v - mean) + mean + self.brightness).clamp(0.0, 1.0).powf(self.gamma));
        gaussian_blur(&jittered, self.blur_sigma)
    }

    pub fn apply_image(&self, image: &MultiGrid) -> MultiGrid {
        image.map_planes(|p| self.apply_grid(p))
    }
}

/// Separable Gaussian blur with a normalized kernel of radius ⌈3σ⌉ and
/// mirrored borders (edge sample repeated). σ = 0 is the identity.
pub fn gaussian_blur(g: &Grid, sigma: f64) -> Grid {
    if sigma <= 0.0 {
        return g.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let period = 2 * n;
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - 1 - m }) as usize
    };
    let (h, w) = g.dims();
    let rows = Grid::from_fn(h, w, |y, x| {
        kernel.iter().enumerate().map(|(k, &wt)| wt * g.get(y, mirror(x as isize + k as isize - radius, w))).sum()
    });
    Grid::from_fn(h, w, |y, x| {
        kernel.iter().enumerate().map(|(k, &wt)| wt * rows.get(mirror(y as isize + k as isize - radius, h), x)).sum()
    })
}

/// Weakly augmented image and label.
pub fn weak_augment<R: Rng + ?Sized>(image: &MultiGrid, label: &LabelField, rng: &mut R) -> (MultiGrid, LabelField) {
    let draw = GeometricDraw::sample(image.dims(), rng);
    (draw.apply_image(image), draw.apply_label(label))
}

/// Strongly augmented image and label. Consumes the geometric draw first, so
/// with a cloned rng it is the strong twin of [`weak_augment`].
pub fn strong_augment<R: Rng + ?Sized>(image: &MultiGrid, label: &LabelField, rng: &mut R) -> (MultiGrid, LabelField) {
    let (weak, label) = weak_augment(image, label, rng);
    (photometric_augment(&weak, rng), label)
}

/// Photometric stage only.
pub fn photometric_augment<R: Rng + ?Sized>(image: &MultiGrid, rng: &mut R) -> MultiGrid {
    PhotometricDraw::sample(rng).apply_image(image)
}

/// Pixel-aligned weak and strong views of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub weak: MultiGrid,
    pub strong: MultiGrid,
    pub label: LabelField,
}

pub fn augment_pair<R: Rng + ?Sized>(image: &MultiGrid, label: &LabelField, rng: &mut R) -> AugmentedPair {
    let (weak, label) = weak_augment(image, label, rng);
    let strong = photometric_augment(&weak, rng);
    AugmentedPair { weak, strong, label }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, DatasetSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (MultiGrid, LabelField) {
        let spec = DatasetSpec { labeled: 1, unlabeled_per_domain: 0, test_per_domain: 0, ..DatasetSpec::default() };
        let s = generate_dataset(&spec, 4).unwrap().labeled.remove(0);
        (s.image, s.label)
    }

    #[test]
    fn identity_draws_change_nothing() {
        let (img, lab) = sample();
        assert_eq!(GeometricDraw::IDENTITY.apply_image(&img), img);
        assert_eq!(GeometricDraw::IDENTITY.apply_label(&lab), lab);
        assert_eq!(PhotometricDraw::IDENTITY.apply_image(&img), img);
    }

    #[test]
    fn flips_are_involutions() {
        let (img, lab) = sample();
        for (v, h) in [(true, false), (false, true), (true, true)] {
            let d = GeometricDraw { flip_vertical: v, flip_horizontal: h, ..GeometricDraw::IDENTITY };
            assert_eq!(d.apply_image(&d.apply_image(&img)), img);
            assert_eq!(d.apply_label(&d.apply_label(&lab)), lab);
        }
    }

    #[test]
    fn quarter_turn_moves_label_with_image() {
        let (img, lab) = sample();
        let d = GeometricDraw { quarter_turns: 1, ..GeometricDraw::IDENTITY };
        let (ri, rl) = (d.apply_image(&img), d.apply_label(&lab));
        let w = 64;
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(ri.plane(0).get(y, x), img.plane(0).get(x, w - 1 - y));
                assert_eq!(rl.get(y, x), lab.get(x, w - 1 - y));
            }
        }
        let four = GeometricDraw { quarter_turns: 4, ..GeometricDraw::IDENTITY };
        assert_eq!(four.apply_label(&lab), lab);
        // Foreground of the rotated image equals the rotated label exactly.
        let fg = |g: &Grid| g.map(|v| (v > 0.5) as u8 as f64);
        assert_eq!(fg(ri.plane(0)), fg(&d.apply_grid(img.plane(0))));
    }

    #[test]
    fn strong_twin_shares_geometry() {
        let (img, lab) = sample();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = r1.clone();
        let (weak, wl) = weak_augment(&img, &lab, &mut r1);
        let (strong, sl) = strong_augment(&img, &lab, &mut r2);
        assert_eq!(wl, sl);
        assert_eq!(weak.dims(), strong.dims());

        let mut r3 = ChaCha8Rng::seed_from_u64(9);
        let pair = augment_pair(&img, &lab, &mut r3);
        assert_eq!((pair.weak, pair.strong, pair.label), (weak, strong, wl));
    }

    #[test]
    fn blur_preserves_mean() {
        let (img, _) = sample();
        let g = img.plane(0);
        let blurred = gaussian_blur(g, 0.5);
        assert!((blurred.mean() - g.mean()).abs() < 1e-3);
        assert_eq!(gaussian_blur(g, 0.0), *g);
        let flat = Grid::filled(8, 8, 0.4);
        assert!(gaussian_blur(&flat, 1.0).max_abs_diff(&flat) < 1e-15);
    }

    proptest! {
        #[test]
        fn augmentation_keeps_label_classes_and_range(seed in 0u64..500) {
            let (img, lab) = sample();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pair = augment_pair(&img, &lab, &mut rng);
            prop_assert_eq!(pair.label.classes(), lab.classes());
            prop_assert!(pair.strong.plane(0).as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(pair.weak.plane(0).as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

//! 2D discrete Fourier transform with a centered amplitude/phase view.
//!
//! Spectra are stored with the zero-frequency bin at `(H/2, W/2)` so that a
//! block around the center is literally the low-frequency band.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{check_dims, Result};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub amplitude: Grid,
    pub phase: Grid,
}

impl Spectrum {
    pub fn dims(&self) -> (usize, usize) {
        self.amplitude.dims()
    }

    /// Row/column of the zero-frequency bin.
    pub fn dc(&self) -> (usize, usize) {
        let (h, w) = self.dims();
        (h / 2, w / 2)
    }
}

fn transform(h: usize, w: usize, buf: &mut [Complex<f64>], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let rows = planner.plan_fft(w, direction);
    for row in buf.chunks_exact_mut(w) {
        rows.process(row);
    }
    let cols = planner.plan_fft(h, direction);
    let mut column = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        cols.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// Forward transform, unnormalized: `F(u,v) = Σ x(h,w) e^{-j2π(hu/H + wv/W)}`.
pub fn fft2(x: &Grid) -> Spectrum {
    let (h, w) = x.dims();
    let mut buf: Vec<Complex<f64>> = x.as_slice().iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(h, w, &mut buf, FftDirection::Forward);

    let mut amp = vec![0.0; h * w];
    let mut phase = vec![0.0; h * w];
    let (cy, cx) = (h / 2, w / 2);
    for y in 0..h {
        for xx in 0..w {
            let z = buf[y * w + xx];
            let dst = ((y + cy) % h) * w + (xx + cx) % w;
            amp[dst] = z.norm();
            let mut p = z.im.atan2(z.re);
            if p <= -PI {
                p = PI;
            }
            phase[dst] = p;
        }
    }
    Spectrum { amplitude: Grid::from_raw(h, w, amp), phase: Grid::from_raw(h, w, phase) }
}

/// Inverse of [`fft2`]; the imaginary residue is discarded.
pub fn ifft2(s: &Spectrum) -> Result<Grid> {
    check_dims(s.amplitude.dims(), s.phase.dims())?;
    let (h, w) = s.dims();
    let (cy, cx) = (h / 2, w / 2);
    let mut buf = vec![Complex::default(); h * w];
    for y in 0..h {
        for x in 0..w {
            let src = ((y + cy) % h) * w + (x + cx) % w;
            buf[y * w + x] = Complex::from_polar(s.amplitude.as_slice()[src], s.phase.as_slice()[src]);
        }
    }
    transform(h, w, &mut buf, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    Ok(Grid::from_raw(h, w, buf.iter().map(|z| z.re * scale).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N²) evaluation of the DFT at one frequency.
    fn naive_bin(x: &Grid, u: usize, v: usize) -> Complex<f64> {
        let (h, w) = x.dims();
        let mut acc = Complex::new(0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                let angle = -2.0 * PI * ((r * u) as f64 / h as f64 + (c * v) as f64 / w as f64);
                acc += Complex::from_polar(x.get(r, c), angle);
            }
        }
        acc
    }

    #[test]
    fn constant_grid_has_only_dc() {
        let s = fft2(&Grid::filled(6, 8, 0.25));
        let (cy, cx) = s.dc();
        assert_eq!((cy, cx), (3, 4));
        assert!((s.amplitude.get(cy, cx) - 48.0 * 0.25).abs() < 1e-12);
        assert_eq!(s.phase.get(cy, cx), 0.0);
        for y in 0..6 {
            for x in 0..8 {
                if (y, x) != (cy, cx) {
                    assert!(s.amplitude.get(y, x) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matches_naive_dft_on_odd_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Grid::from_fn(5, 7, |_, _| rng.gen());
        let s = fft2(&x);
        let (cy, cx) = s.dc();
        for u in 0..5 {
            for v in 0..7 {
                let z = naive_bin(&x, u, v);
                let (ry, rx) = ((u + cy) % 5, (v + cx) % 7);
                assert!((s.amplitude.get(ry, rx) - z.norm()).abs() < 1e-9);
                if z.norm() > 1e-9 {
                    let d = (s.phase.get(ry, rx) - z.im.atan2(z.re)).rem_euclid(2.0 * PI);
                    assert!(d < 1e-9 || 2.0 * PI - d < 1e-9);
                }
            }
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Grid::from_fn(64, 48, |_, _| rng.gen());
        let s = fft2(&x);
        assert!(ifft2(&s).unwrap().max_abs_diff(&x) < 1e-12);
        let energy: f64 = x.as_slice().iter().map(|v| v * v).sum();
        let spec: f64 = s.amplitude.as_slice().iter().map(|a| a * a).sum::<f64>() / (64.0 * 48.0);
        assert!((energy - spec).abs() / energy < 1e-10);
        assert!(s.amplitude.as_slice().iter().all(|&a| a >= 0.0));
        assert!(s.phase.as_slice().iter().all(|&p| p > -PI && p <= PI));
    }
}

//! Dense building blocks on channel-major activations (`[c][y*W + x]`).

use super::scalar::{gemm, Layout, Real};

/// Reflect-101 index into `[0, n)` for offsets of at most one step outside.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        0
    } else if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

/// Appends row `src` shifted by `dx ∈ {-1, 0, 1}` with reflect-101 edges:
/// element `x` is `src[reflect(x + dx)]`.
#[inline]
fn push_shifted_row<T: Real>(dst: &mut Vec<T>, src: &[T], dx: isize) {
    let w = src.len();
    match dx {
        0 => dst.extend_from_slice(src),
        _ if w == 1 => dst.push(src[0]),
        -1 => {
            dst.push(src[1]);
            dst.extend_from_slice(&src[..w - 1]);
        }
        _ => {
            dst.extend_from_slice(&src[1..]);
            dst.push(src[w - 2]);
        }
    }
}

/// Adjoint of [`push_shifted_row`]: `acc[reflect(x + dx)] += g[x]`.
#[inline]
fn shifted_row_adjoint<T: Real>(acc: &mut [T], g: &[T], dx: isize) {
    let w = acc.len();
    match dx {
        0 => acc.iter_mut().zip(g).for_each(|(a, &v)| *a += v),
        _ if w == 1 => acc[0] += g[0],
        -1 => {
            acc[1] += g[0];
            acc[..w - 1].iter_mut().zip(&g[1..]).for_each(|(a, &v)| *a += v);
        }
        _ => {
            acc[1..].iter_mut().zip(&g[..w - 1]).for_each(|(a, &v)| *a += v);
            acc[w - 2] += g[w - 1];
        }
    }
}

/// Unrolls 3×3 neighbourhoods into a `(in_ch·9) × (h·w)` matrix.
pub(crate) fn im2col<T: Real>(input: &[T], in_ch: usize, (h, w): (usize, usize)) -> Vec<T> {
    let pixels = h * w;
    let mut col = Vec::with_capacity(in_ch * 9 * pixels);
    for c in 0..in_ch {
        let src = &input[c * pixels..(c + 1) * pixels];
        for k in 0..9 {
            let (dy, dx) = (k as isize / 3 - 1, k as isize % 3 - 1);
            for y in 0..h {
                let sy = reflect(y as isize + dy, h);
                push_shifted_row(&mut col, &src[sy * w..(sy + 1) * w], dx);
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto source pixels.
pub(crate) fn col2im<T: Real>(col: &[T], in_ch: usize, (h, w): (usize, usize)) -> Vec<T> {
    let pixels = h * w;
    let mut out = vec![T::ZERO; in_ch * pixels];
    for c in 0..in_ch {
        let dst = &mut out[c * pixels..(c + 1) * pixels];
        for k in 0..9 {
            let (dy, dx) = (k as isize / 3 - 1, k as isize % 3 - 1);
            let block = &col[(c * 9 + k) * pixels..(c * 9 + k + 1) * pixels];
            for y in 0..h {
                let sy = reflect(y as isize + dy, h);
                shifted_row_adjoint(&mut dst[sy * w..(sy + 1) * w], &block[y * w..(y + 1) * w], dx);
            }
        }
    }
    out
}

/// 3×3 convolution with reflect padding. Returns the output and the
/// unrolled input for the backward pass.
pub(crate) fn conv3x3_forward<T: Real>(
    input: &[T],
    in_ch: usize,
    out_ch: usize,
    dims: (usize, usize),
    weight: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<T>) {
    let pixels = dims.0 * dims.1;
    let col = im2col(input, in_ch, dims);
    let mut out = vec![T::ZERO; out_ch * pixels];
    for (o, &b) in bias.iter().enumerate() {
        out[o * pixels..(o + 1) * pixels].fill(b);
    }
    gemm(out_ch, in_ch * 9, pixels, weight, Layout::Normal, &col, Layout::Normal, &mut out, true);
    (out, col)
}

/// Accumulates weight/bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward<T: Real>(
    grad_out: &[T],
    col: &[T],
    in_ch: usize,
    out_ch: usize,
    dims: (usize, usize),
    weight: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let (k, pixels) = (in_ch * 9, dims.0 * dims.1);
    gemm(out_ch, pixels, k, grad_out, Layout::Normal, col, Layout::Transposed, grad_weight, true);
    for (o, gb) in grad_bias.iter_mut().enumerate() {
        *gb += grad_out[o * pixels..(o + 1) * pixels].iter().copied().sum::<T>();
    }
    if !need_input_grad {
        return None;
    }
    let mut grad_col = vec![T::ZERO; k * pixels];
    gemm(k, out_ch, pixels, weight, Layout::Transposed, grad_out, Layout::Normal, &mut grad_col, false);
    Some(col2im(&grad_col, in_ch, dims))
}

pub(crate) fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// Zeroes gradient entries where the (post-ReLU) activation is not positive.
pub(crate) fn relu_backward_inplace<T: Real>(grad: &mut [T], activation: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

/// 2×2 average pooling of `ch` planes of `h × w` (both even).
pub(crate) fn avg_pool2<T: Real>(input: &[T], ch: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::ZERO; ch * oh * ow];
    for c in 0..ch {
        let src = &input[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &src[2 * y * w..(2 * y + 1) * w];
            let r1 = &src[(2 * y + 1) * w..(2 * y + 2) * w];
            for x in 0..ow {
                dst[y * ow + x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Real>(grad_out: &[T], ch: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::ZERO; ch * h * w];
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                out[c * h * w + y * w + x] = grad_out[c * oh * ow + (y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    out
}

/// Nearest-neighbour 2× upsampling of `ch` planes of `h × w`.
pub(crate) fn upsample2<T: Real>(input: &[T], ch: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; ch * oh * ow];
    for c in 0..ch {
        for y in 0..oh {
            for x in 0..ow {
                out[c * oh * ow + y * ow + x] = input[c * h * w + (y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(grad_out: &[T], ch: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::ZERO; ch * h * w];
    for c in 0..ch {
        for y in 0..oh {
            for x in 0..ow {
                out[c * h * w + (y / 2) * w + x / 2] += grad_out[c * oh * ow + y * ow + x];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_padding() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
        assert_eq!(reflect(-1, 1), 0);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x and c.
        let (ch, h, w) = (2, 4, 6);
        let p = h * w;
        let x: Vec<f64> = (0..ch * p).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..ch * 9 * p).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, ch, (h, w)).iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&c, ch, (h, w))).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn im2col_matches_reflected_gather() {
        let (ch, h, w) = (2, 3, 5);
        let x: Vec<f64> = (0..ch * h * w).map(|i| i as f64).collect();
        let col = im2col(&x, ch, (h, w));
        for c in 0..ch {
            for k in 0..9 {
                for y in 0..h {
                    for xx in 0..w {
                        let sy = reflect(y as isize + k as isize / 3 - 1, h);
                        let sx = reflect(xx as isize + k as isize % 3 - 1, w);
                        assert_eq!(col[(c * 9 + k) * h * w + y * w + xx], x[c * h * w + sy * w + sx]);
                    }
                }
            }
        }
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        let (ch, h, w) = (3, 4, 6);
        let x: Vec<f64> = (0..ch * h * w).map(|i| (i as f64 * 0.3).sin()).collect();
        let g: Vec<f64> = (0..ch * h * w / 4).map(|i| (i as f64 * 0.7).cos()).collect();
        let lhs: f64 = avg_pool2(&x, ch, h, w).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(avg_pool2_backward(&g, ch, h, w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let lhs: f64 = upsample2(&g, ch, h / 2, w / 2).iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.iter().zip(upsample2_backward(&x, ch, h / 2, w / 2)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

//! Batched layer kernels with hand-written backward passes.
//!
//! Activations are stored NCHW, contiguous per sample. Layers hold geometry
//! only; parameters live in a [`WeightsHandle`](crate::WeightsHandle) and are
//! passed in as slices. Every backward pass accumulates into its parameter
//! gradients and overwrites the input gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::{matmul, Op, Real};

/// Leading padding of a TensorFlow-style "same" convolution mapping `input`
/// to `output` samples with kernel `k` and stride `s`. Any odd remainder
/// goes to the trailing edge.
pub fn same_pad_before(input: usize, output: usize, k: usize, s: usize) -> usize {
    ((output - 1) * s + k).saturating_sub(input) / 2
}

/// Geometry of one strided convolution window sweep, shared by the forward
/// convolution and the transposed convolution that inverts its shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    pad_h: usize,
    pad_w: usize,
}

impl Window {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize) -> Self {
        let out_h = h.div_ceil(stride);
        let out_w = w.div_ceil(stride);
        Window {
            c,
            h,
            w,
            k,
            stride,
            out_h,
            out_w,
            pad_h: same_pad_before(h, out_h, k, stride),
            pad_w: same_pad_before(w, out_w, k, stride),
        }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output positions `lo..hi` whose tap `t` lands inside `0..extent`.
    #[inline]
    fn valid(t: usize, stride: usize, pad: usize, extent: usize, outputs: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(t).div_ceil(stride);
        let hi = if extent + pad > t {
            (extent + pad - t).div_ceil(stride).min(outputs)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// `cols[(c, ky, kx), (oy, ox)] = x[c, oy*s + ky - pad, ox*s + kx - pad]`.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let ncol = self.cols();
        let s = self.stride;
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                let (y_lo, y_hi) = Self::valid(ky, s, self.pad_h, self.h, self.out_h);
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    let (x_lo, x_hi) = Self::valid(kx, s, self.pad_w, self.w, self.out_w);
                    for (oy, line) in dst.chunks_exact_mut(self.out_w).enumerate() {
                        if oy < y_lo || oy >= y_hi || x_lo == x_hi {
                            line.fill(T::zero());
                            continue;
                        }
                        let iy = oy * s + ky - self.pad_h;
                        let src_row = &plane[iy * self.w..(iy + 1) * self.w];
                        line[..x_lo].fill(T::zero());
                        line[x_hi..].fill(T::zero());
                        let first = x_lo * s + kx - self.pad_w;
                        if s == 1 {
                            line[x_lo..x_hi].copy_from_slice(&src_row[first..first + (x_hi - x_lo)]);
                        } else {
                            for (v, &src) in line[x_lo..x_hi].iter_mut().zip(src_row[first..].iter().step_by(s)) {
                                *v = src;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: scatter-adds columns back into `x`,
    /// which the caller zeroes first.
    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        let ncol = self.cols();
        let s = self.stride;
        for c in 0..self.c {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                let (y_lo, y_hi) = Self::valid(ky, s, self.pad_h, self.h, self.out_h);
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    let (x_lo, x_hi) = Self::valid(kx, s, self.pad_w, self.w, self.out_w);
                    if x_lo == x_hi {
                        continue;
                    }
                    for oy in y_lo..y_hi {
                        let iy = oy * s + ky - self.pad_h;
                        let line = &src[oy * self.out_w + x_lo..oy * self.out_w + x_hi];
                        let dst_row = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let first = x_lo * s + kx - self.pad_w;
                        for (d, &v) in dst_row[first..].iter_mut().step_by(s).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }

    /// Stride-1 convolution as shifted row AXPYs, `y += w ⋆ x`; cheaper than
    /// im2col when there are few output channels.
    fn direct_forward<T: Real>(&self, weight: &[T], out_c: usize, x: &[T], y: &mut [T]) {
        debug_assert_eq!(self.stride, 1);
        let (h, w, k) = (self.h, self.w, self.k);
        for o in 0..out_c {
            let yp = &mut y[o * h * w..(o + 1) * h * w];
            for c in 0..self.c {
                let xp = &x[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    let (y_lo, y_hi) = Self::valid(ky, 1, self.pad_h, h, h);
                    for kx in 0..k {
                        let wv = weight[((o * self.c + c) * k + ky) * k + kx];
                        let (x_lo, x_hi) = Self::valid(kx, 1, self.pad_w, w, w);
                        let first = x_lo + kx - self.pad_w;
                        for oy in y_lo..y_hi {
                            let iy = oy + ky - self.pad_h;
                            let src = &xp[iy * w + first..iy * w + first + (x_hi - x_lo)];
                            let dst = &mut yp[oy * w + x_lo..oy * w + x_hi];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += wv * s);
                        }
                    }
                }
            }
        }
    }

    /// Backward of [`Window::direct_forward`].
    fn direct_backward<T: Real>(
        &self,
        weight: &[T],
        out_c: usize,
        x: &[T],
        dy: &[T],
        dweight: &mut [T],
        mut dx: Option<&mut [T]>,
    ) {
        let (h, w, k) = (self.h, self.w, self.k);
        for o in 0..out_c {
            let dyp = &dy[o * h * w..(o + 1) * h * w];
            for c in 0..self.c {
                let xp = &x[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    let (y_lo, y_hi) = Self::valid(ky, 1, self.pad_h, h, h);
                    for kx in 0..k {
                        let wi = ((o * self.c + c) * k + ky) * k + kx;
                        let wv = weight[wi];
                        let (x_lo, x_hi) = Self::valid(kx, 1, self.pad_w, w, w);
                        let first = x_lo + kx - self.pad_w;
                        let len = x_hi - x_lo;
                        let mut acc = T::zero();
                        for oy in y_lo..y_hi {
                            let iy = oy + ky - self.pad_h;
                            let g = &dyp[oy * w + x_lo..oy * w + x_hi];
                            let src = &xp[iy * w + first..iy * w + first + len];
                            acc += g.iter().zip(src).fold(T::zero(), |a, (&g, &s)| a + g * s);
                            if let Some(dx) = dx.as_deref_mut() {
                                let dst = &mut dx[c * h * w + iy * w + first..c * h * w + iy * w + first + len];
                                dst.iter_mut().zip(g).for_each(|(d, &g)| *d += wv * g);
                            }
                        }
                        dweight[wi] += acc;
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Real>(y: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        y[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_bias_grad<T: Real>(dy: &[T], db: &mut [T], plane: usize) {
    for (c, g) in db.iter_mut().enumerate() {
        *g += dy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
}

/// Stride-1 convolutions with at most this many output channels skip im2col.
const DIRECT_MAX_OUT: usize = 4;

/// Strided 2-D convolution with "same" padding. Weight layout
/// `[out_c, in_c, k, k]`, bias `[out_c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, in_h: usize, in_w: usize) -> Self {
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            in_h,
            in_w,
        }
    }

    fn window(&self) -> Window {
        Window::new(self.in_c, self.in_h, self.in_w, self.k, self.stride)
    }

    pub fn out_h(&self) -> usize {
        self.in_h.div_ceil(self.stride)
    }

    pub fn out_w(&self) -> usize {
        self.in_w.div_ceil(self.stride)
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h() * self.out_w()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_c, self.in_c, self.k, self.k]
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn direct(&self) -> bool {
        self.stride == 1 && self.out_c <= DIRECT_MAX_OUT
    }

    pub fn forward<T: Real>(&self, weight: &[T], bias: &[T], x: &[T], n: usize) -> Vec<T> {
        let win = self.window();
        let (rows, ncol) = (win.rows(), win.cols());
        let mut y = vec![T::zero(); n * self.out_len()];
        if self.direct() {
            for (xs, ys) in x.chunks_exact(self.in_len()).zip(y.chunks_exact_mut(self.out_len())) {
                win.direct_forward(weight, self.out_c, xs, ys);
                add_channel_bias(ys, bias, ncol);
            }
            return y;
        }
        let mut cols = vec![T::zero(); rows * ncol];
        for (xs, ys) in x.chunks_exact(self.in_len()).zip(y.chunks_exact_mut(self.out_len())) {
            win.im2col(xs, &mut cols);
            matmul(Op::N, Op::N, self.out_c, rows, ncol, weight, &cols, ys, false);
            add_channel_bias(ys, bias, ncol);
        }
        y
    }

    /// Accumulates `dweight`/`dbias`; returns the input gradient when asked.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        weight: &[T],
        x: &[T],
        dy: &[T],
        n: usize,
        dweight: &mut [T],
        dbias: &mut [T],
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let win = self.window();
        let (rows, ncol) = (win.rows(), win.cols());
        let mut dx = want_dx.then(|| vec![T::zero(); n * self.in_len()]);
        if self.direct() {
            for s in 0..n {
                let xs = &x[s * self.in_len()..(s + 1) * self.in_len()];
                let dys = &dy[s * self.out_len()..(s + 1) * self.out_len()];
                let dxs = dx.as_mut().map(|d| &mut d[s * self.in_len()..(s + 1) * self.in_len()]);
                win.direct_backward(weight, self.out_c, xs, dys, dweight, dxs);
                accumulate_channel_bias_grad(dys, dbias, ncol);
            }
            return dx;
        }
        let mut cols = vec![T::zero(); rows * ncol];
        let mut dcols = vec![T::zero(); rows * ncol];
        for s in 0..n {
            let xs = &x[s * self.in_len()..(s + 1) * self.in_len()];
            let dys = &dy[s * self.out_len()..(s + 1) * self.out_len()];
            win.im2col(xs, &mut cols);
            matmul(Op::N, Op::T, self.out_c, ncol, rows, dys, &cols, dweight, true);
            accumulate_channel_bias_grad(dys, dbias, ncol);
            if let Some(dx) = dx.as_mut() {
                matmul(Op::T, Op::N, rows, self.out_c, ncol, weight, dys, &mut dcols, false);
                win.col2im(&dcols, &mut dx[s * self.in_len()..(s + 1) * self.in_len()]);
            }
        }
        dx
    }
}

/// Transposed convolution, the shape inverse of a strided "same" [`Conv2d`]:
/// `in_h × in_w` maps to `in_h·stride × in_w·stride`. Weight layout
/// `[in_c, out_c, k, k]`, bias `[out_c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvTranspose2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, in_h: usize, in_w: usize) -> Self {
        ConvTranspose2d {
            in_c,
            out_c,
            k,
            stride,
            in_h,
            in_w,
        }
    }

    fn window(&self) -> Window {
        let w = Window::new(self.out_c, self.out_h(), self.out_w(), self.k, self.stride);
        debug_assert_eq!((w.out_h, w.out_w), (self.in_h, self.in_w));
        w
    }

    pub fn out_h(&self) -> usize {
        self.in_h * self.stride
    }

    pub fn out_w(&self) -> usize {
        self.in_w * self.stride
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h() * self.out_w()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.in_c, self.out_c, self.k, self.k]
    }

    /// Inputs contributing to one output pixel, on average.
    pub fn fan_in(&self) -> usize {
        (self.in_c * self.k * self.k).div_ceil(self.stride * self.stride)
    }

    pub fn forward<T: Real>(&self, weight: &[T], bias: &[T], x: &[T], n: usize) -> Vec<T> {
        let win = self.window();
        let (rows, ncol) = (win.rows(), win.cols());
        let plane = self.out_h() * self.out_w();
        let mut cols = vec![T::zero(); rows * ncol];
        let mut y = vec![T::zero(); n * self.out_len()];
        for (xs, ys) in x.chunks_exact(self.in_len()).zip(y.chunks_exact_mut(self.out_len())) {
            matmul(Op::T, Op::N, rows, self.in_c, ncol, weight, xs, &mut cols, false);
            win.col2im(&cols, ys);
            add_channel_bias(ys, bias, plane);
        }
        y
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        weight: &[T],
        x: &[T],
        dy: &[T],
        n: usize,
        dweight: &mut [T],
        dbias: &mut [T],
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let win = self.window();
        let (rows, ncol) = (win.rows(), win.cols());
        let plane = self.out_h() * self.out_w();
        let mut dcols = vec![T::zero(); rows * ncol];
        let mut dx = want_dx.then(|| vec![T::zero(); n * self.in_len()]);
        for s in 0..n {
            let xs = &x[s * self.in_len()..(s + 1) * self.in_len()];
            let dys = &dy[s * self.out_len()..(s + 1) * self.out_len()];
            win.im2col(dys, &mut dcols);
            matmul(Op::N, Op::T, self.in_c, ncol, rows, xs, &dcols, dweight, true);
            accumulate_channel_bias_grad(dys, dbias, plane);
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[s * self.in_len()..(s + 1) * self.in_len()];
                matmul(Op::N, Op::N, self.in_c, rows, ncol, weight, &dcols, dxs, false);
            }
        }
        dx
    }
}

/// Fully connected layer. Weight layout `[out, in]`, bias `[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.outputs, self.inputs]
    }

    pub fn forward<T: Real>(&self, weight: &[T], bias: &[T], x: &[T], n: usize) -> Vec<T> {
        let mut y = vec![T::zero(); n * self.outputs];
        matmul(Op::N, Op::T, n, self.inputs, self.outputs, x, weight, &mut y, false);
        for row in y.chunks_exact_mut(self.outputs) {
            row.iter_mut().zip(bias).for_each(|(v, &b)| *v += b);
        }
        y
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        weight: &[T],
        x: &[T],
        dy: &[T],
        n: usize,
        dweight: &mut [T],
        dbias: &mut [T],
        want_dx: bool,
    ) -> Option<Vec<T>> {
        matmul(Op::T, Op::N, self.outputs, n, self.inputs, dy, x, dweight, true);
        for row in dy.chunks_exact(self.outputs) {
            dbias.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
        }
        want_dx.then(|| {
            let mut dx = vec![T::zero(); n * self.inputs];
            matmul(Op::N, Op::N, n, self.outputs, self.inputs, dy, weight, &mut dx, false);
            dx
        })
    }
}

pub fn leaky_relu_inplace<T: Real>(x: &mut [T], slope: T) {
    for v in x {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Backward through leaky-relu given its *output*; valid because the slope
/// is positive, so the output keeps the sign of the pre-activation.
pub fn leaky_relu_backward_inplace<T: Real>(dy: &mut [T], y: &[T], slope: T) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = *d * slope;
        }
    }
}

pub fn tanh_inplace<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_backward_inplace<T: Real>(dy: &mut [T], y: &[T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        *d = *d * (T::one() - v * v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-loop convolution used as an independent reference.
    fn naive_conv(layer: &Conv2d, w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let (oh, ow) = (layer.out_h(), layer.out_w());
        let ph = same_pad_before(layer.in_h, oh, layer.k, layer.stride) as isize;
        let pw = same_pad_before(layer.in_w, ow, layer.k, layer.stride) as isize;
        let mut y = vec![0.0; layer.out_len()];
        for o in 0..layer.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..layer.in_c {
                        for ky in 0..layer.k {
                            for kx in 0..layer.k {
                                let iy = (oy * layer.stride + ky) as isize - ph;
                                let ix = (ox * layer.stride + kx) as isize - pw;
                                if iy < 0 || ix < 0 || iy >= layer.in_h as isize || ix >= layer.in_w as isize {
                                    continue;
                                }
                                let wi = ((o * layer.in_c + c) * layer.k + ky) * layer.k + kx;
                                let xi = (c * layer.in_h + iy as usize) * layer.in_w + ix as usize;
                                acc += w[wi] * x[xi];
                            }
                        }
                    }
                    y[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    fn wave(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * f).sin()).collect()
    }

    #[test]
    fn same_padding_values() {
        assert_eq!(same_pad_before(64, 32, 5, 2), 1);
        assert_eq!(same_pad_before(32, 16, 3, 2), 0);
        assert_eq!(same_pad_before(64, 64, 3, 1), 1);
    }

    #[test]
    fn conv_matches_direct_loops() {
        for (k, s, out) in [(5, 2, 3), (3, 2, 3), (3, 1, 6), (3, 1, 1), (5, 1, 2)] {
            let layer = Conv2d::new(2, out, k, s, 8, 8);
            let w = wave(out * 2 * k * k, 0.7);
            let b = wave(out, 1.3);
            let x = wave(layer.in_len(), 0.31);
            let got = layer.forward(&w, &b, &x, 1);
            let want = naive_conv(&layer, &w, &b, &x);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-12, "k={k} s={s}");
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias.
        let conv = Conv2d::new(2, 3, 3, 2, 8, 8);
        let tconv = ConvTranspose2d::new(3, 2, 3, 2, 4, 4);
        let w = wave(3 * 2 * 9, 0.9);
        // conv weight [3,2,3,3] equals transposed weight [in=3, out=2, 3, 3].
        let x = wave(conv.in_len(), 0.21);
        let y = wave(conv.out_len(), 0.47);
        let cx = conv.forward(&w, &[0.0; 3], &x, 1);
        let ty = tconv.forward(&w, &[0.0; 2], &y, 1);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        assert_eq!((tconv.out_h(), tconv.out_w()), (8, 8));
    }

    #[test]
    fn dense_forward_is_affine() {
        let layer = Dense::new(3, 2);
        let w = [1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        let y = layer.forward(&w, &[0.5, -0.5], &[1.0, 1.0, 2.0, 0.0, 1.0, 0.0], 2);
        assert_eq!(y, vec![9.5, 0.5, 2.5, -0.5]);
    }

    #[test]
    fn leaky_relu_of_zero_is_zero() {
        let mut v = vec![0.0f32, -2.0, 3.0];
        leaky_relu_inplace(&mut v, 0.2);
        assert_eq!(v, vec![0.0, -0.4, 3.0]);
    }
}

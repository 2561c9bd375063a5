//! NCHW convolution via per-sample im2col plus GEMM, and dense layers.

use super::tensor::{Gemm, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Output columns `lo..hi` whose input column for kernel tap `kx` is in bounds.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let (s, p, ow) = (self.stride, self.pad, self.out_w());
        let lo = if p > kx { (p - kx).div_ceil(s) } else { 0 };
        let lim = self.in_w + p;
        let hi = if lim > kx {
            ((lim - 1 - kx) / s + 1).min(ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.in_h).then_some(iy as usize)
    }
}

/// Unfold one `[in_ch, h, w]` sample into a `[in_ch * k * k, oh * ow]` matrix.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let plane = oh * ow;
    for ci in 0..g.in_ch {
        let xi = &x[ci * g.in_h * g.in_w..][..g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * plane..][..plane];
                let (lo, hi) = g.col_range(kx);
                for oy in 0..oh {
                    let dst = &mut row[oy * ow..][..ow];
                    let Some(iy) = g.in_row(oy, ky) else {
                        dst.fill(T::zero());
                        continue;
                    };
                    let irow = &xi[iy * g.in_w..][..g.in_w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if s == 1 {
                        dst[lo..hi].copy_from_slice(&irow[lo + kx - p..hi + kx - p]);
                    } else {
                        for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = irow[(lo + j) * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

/// Inverse of [`im2col`], accumulating into `x`.
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let plane = oh * ow;
    for ci in 0..g.in_ch {
        let xi = &mut x[ci * g.in_h * g.in_w..][..g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * plane..][..plane];
                let (lo, hi) = g.col_range(kx);
                for oy in 0..oh {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    let src = &row[oy * ow..][lo..hi];
                    let irow = &mut xi[iy * g.in_w..][..g.in_w];
                    if s == 1 {
                        for (d, &v) in irow[lo + kx - p..hi + kx - p].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in src.iter().enumerate() {
                            irow[(lo + j) * s + kx - p] += v;
                        }
                    }
                }
            }
        }
    }
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

pub fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let plane = g.out_h() * g.out_w();
    let in_len = g.in_ch * g.in_h * g.in_w;
    let kk = g.patch();
    let mut out = vec![T::zero(); g.batch * g.out_ch * plane];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { kk * plane }];
    for n in 0..g.batch {
        let xn = &x[n * in_len..][..in_len];
        let src: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        let o = &mut out[n * g.out_ch * plane..][..g.out_ch * plane];
        let dims = Gemm { m: g.out_ch, k: kk, n: plane, a: (kk, 1), b: (plane, 1), c: (plane, 1) };
        T::gemm(dims, T::one(), w, src, T::zero(), o);
        if let Some(b) = b {
            for (row, &bv) in o.chunks_mut(plane).zip(b) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradient w.r.t. the convolution input.
pub fn conv2d_backward_input<T: Real>(g: &ConvGeom, gout: &[T], w: &[T]) -> Vec<T> {
    let plane = g.out_h() * g.out_w();
    let in_len = g.in_ch * g.in_h * g.in_w;
    let kk = g.patch();
    let mut gx = vec![T::zero(); g.batch * in_len];
    let mut cols = vec![T::zero(); kk * plane];
    for n in 0..g.batch {
        let go = &gout[n * g.out_ch * plane..][..g.out_ch * plane];
        let gxn = &mut gx[n * in_len..][..in_len];
        let dims = Gemm { m: kk, k: g.out_ch, n: plane, a: (1, kk), b: (plane, 1), c: (plane, 1) };
        if g.is_pointwise() {
            T::gemm(dims, T::one(), w, go, T::zero(), gxn);
        } else {
            T::gemm(dims, T::one(), w, go, T::zero(), &mut cols);
            col2im(g, &cols, gxn);
        }
    }
    gx
}

/// Gradients w.r.t. weights and bias.
pub fn conv2d_backward_params<T: Real>(g: &ConvGeom, gout: &[T], x: &[T]) -> (Vec<T>, Vec<T>) {
    let plane = g.out_h() * g.out_w();
    let in_len = g.in_ch * g.in_h * g.in_w;
    let kk = g.patch();
    let mut gw = vec![T::zero(); g.out_ch * kk];
    let mut gb = vec![T::zero(); g.out_ch];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { kk * plane }];
    for n in 0..g.batch {
        let go = &gout[n * g.out_ch * plane..][..g.out_ch * plane];
        let xn = &x[n * in_len..][..in_len];
        let src: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        let dims = Gemm { m: g.out_ch, k: plane, n: kk, a: (plane, 1), b: (1, plane), c: (kk, 1) };
        T::gemm(dims, T::one(), go, src, T::one(), &mut gw);
        for (acc, row) in gb.iter_mut().zip(go.chunks(plane)) {
            *acc += row.iter().copied().sum::<T>();
        }
    }
    (gw, gb)
}

/// `y[n, m] = sum_k x[n, k] * w[m, k] + b[m]`.
pub fn linear_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, n: usize, k: usize, m: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * m];
    T::gemm(Gemm { m: n, k, n: m, a: (k, 1), b: (1, k), c: (m, 1) }, T::one(), x, w, T::zero(), &mut y);
    if let Some(b) = b {
        for row in y.chunks_mut(m) {
            row.iter_mut().zip(b).for_each(|(v, &bv)| *v += bv);
        }
    }
    y
}

pub fn linear_backward_input<T: Real>(gy: &[T], w: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); n * k];
    T::gemm(Gemm { m: n, k: m, n: k, a: (m, 1), b: (k, 1), c: (k, 1) }, T::one(), gy, w, T::zero(), &mut gx);
    gx
}

pub fn linear_backward_params<T: Real>(gy: &[T], x: &[T], n: usize, k: usize, m: usize) -> (Vec<T>, Vec<T>) {
    let mut gw = vec![T::zero(); m * k];
    T::gemm(Gemm { m, k: n, n: k, a: (1, m), b: (k, 1), c: (k, 1) }, T::one(), gy, x, T::zero(), &mut gw);
    let mut gb = vec![T::zero(); m];
    for row in gy.chunks(m) {
        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
    }
    (gw, gb)
}

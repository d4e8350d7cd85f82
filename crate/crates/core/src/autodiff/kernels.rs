//! Forward and backward numeric kernels behind the graph operations.
//!
//! Every routine is a plain function over slices with a fixed loop order so
//! results are bitwise reproducible.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Geometry of a zero-padded "same" 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub height: usize,
    pub width: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, dilation: usize) -> Result<Self> {
        let &[cin, height, width] = input else {
            return Err(Error::shape("conv2d input", "[C, H, W]", input));
        };
        let &[cout, wcin, kh, kw] = weight else {
            return Err(Error::shape("conv2d weight", "[Cout, Cin, k, k]", weight));
        };
        if wcin != cin {
            return Err(Error::shape("conv2d channels", cin, wcin));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel must be square and odd, got {kh}x{kw}"
            )));
        }
        if !(1..=2).contains(&stride) || dilation == 0 {
            return Err(Error::InvalidArgument(format!(
                "unsupported stride {stride} / dilation {dilation}"
            )));
        }
        let pad = dilation * (kh - 1) / 2;
        Ok(Self {
            cin,
            height,
            width,
            cout,
            kernel: kh,
            stride,
            dilation,
            pad,
            out_height: (height - 1) / stride + 1,
            out_width: (width - 1) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    // input coordinate for output index `o` and kernel tap `t`, if in range
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + t * self.dilation) as isize - self.pad as isize;
        (0..extent as isize).contains(&p).then_some(p as usize)
    }
}

fn im2col<T: Real>(g: &ConvGeom, input: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let mut cols = vec![T::zero(); g.col_rows() * plane];
    let k = g.kernel;
    for ic in 0..g.cin {
        let src = &input[ic * g.height * g.width..(ic + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ic * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_height {
                    let Some(iy) = g.source(oy, ky, g.height) else {
                        continue;
                    };
                    let line = &src[iy * g.width..(iy + 1) * g.width];
                    let out = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    for (ox, o) in out.iter_mut().enumerate() {
                        if let Some(ix) = g.source(ox, kx, g.width) {
                            *o = line[ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], grad_in: &mut [T]) {
    let plane = g.out_plane();
    let k = g.kernel;
    for ic in 0..g.cin {
        let dst = &mut grad_in[ic * g.height * g.width..(ic + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ic * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_height {
                    let Some(iy) = g.source(oy, ky, g.height) else {
                        continue;
                    };
                    let line = &mut dst[iy * g.width..(iy + 1) * g.width];
                    let gl = &src[oy * g.out_width..(oy + 1) * g.out_width];
                    for (ox, &v) in gl.iter().enumerate() {
                        if let Some(ix) = g.source(ox, kx, g.width) {
                            line[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(g: &ConvGeom, input: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane = g.out_plane();
    let mut out = vec![T::zero(); g.cout * plane];
    if let Some(b) = bias {
        for (oc, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b[oc]);
        }
    }
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        input
    } else {
        owned = im2col(g, input);
        &owned
    };
    let kdim = g.col_rows();
    T::gemm(
        g.cout,
        kdim,
        plane,
        T::one(),
        weight,
        (kdim, 1),
        cols,
        (plane, 1),
        T::one(),
        &mut out,
        (plane, 1),
    );
    out
}

/// Gradients of a convolution with respect to its input, weight and bias.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let kdim = g.col_rows();
    let weight_grad = want.1.then(|| {
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            input
        } else {
            owned = im2col(g, input);
            &owned
        };
        let mut dw = vec![T::zero(); g.cout * kdim];
        // dW = dY · colsᵀ
        T::gemm(
            g.cout,
            plane,
            kdim,
            T::one(),
            grad_out,
            (plane, 1),
            cols,
            (1, plane),
            T::zero(),
            &mut dw,
            (kdim, 1),
        );
        dw
    });
    let input_grad = want.0.then(|| {
        let mut dcols = vec![T::zero(); kdim * plane];
        // dcols = Wᵀ · dY
        T::gemm(
            kdim,
            g.cout,
            plane,
            T::one(),
            weight,
            (1, kdim),
            grad_out,
            (plane, 1),
            T::zero(),
            &mut dcols,
            (plane, 1),
        );
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![T::zero(); g.cin * g.height * g.width];
            col2im(g, &dcols, &mut dx);
            dx
        }
    });
    let bias_grad = want
        .2
        .then(|| grad_out.chunks(plane).map(|c| c.iter().copied().sum()).collect());
    ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    }
}

/// Source taps for bilinear ×2 upsampling along one axis (half-pixel
/// centers, no corner alignment).
fn upsample_taps<T: Real>(n: usize) -> Vec<(usize, usize, T)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, T::lit(src - i0 as f64))
        })
        .collect()
}

pub fn upsample2x_forward<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let ty = upsample_taps::<T>(h);
    let tx = upsample_taps::<T>(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Real>(grad_out: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let ty = upsample_taps::<T>(h);
    let tx = upsample_taps::<T>(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let g = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (T::one() - ly);
                let bot = v * ly;
                dst[y0 * w + x0] += top * (T::one() - lx);
                dst[y0 * w + x1] += top * lx;
                dst[y1 * w + x0] += bot * (T::one() - lx);
                dst[y1 * w + x1] += bot * lx;
            }
        }
    }
    dx
}

/// Per-position normalization across channels: `(x − μ) / (δ + ε)` with the
/// population standard deviation δ. Returns the output and per-position δ.
pub fn aln_forward<T: Real>(x: &[T], c: usize, hw: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let inv_c = T::one() / T::from_usize(c).expect("channel count");
    let mut y = vec![T::zero(); x.len()];
    let mut deltas = vec![T::zero(); hw];
    for p in 0..hw {
        // shifted by the first channel so identical channels give an exact mean
        let x0 = x[p];
        let mut shift = T::zero();
        for j in 1..c {
            shift += x[j * hw + p] - x0;
        }
        let mean = x0 + shift * inv_c;
        let mut var = T::zero();
        for j in 0..c {
            let d = x[j * hw + p] - mean;
            var += d * d;
        }
        let delta = (var * inv_c).sqrt();
        let s = delta + eps;
        for j in 0..c {
            y[j * hw + p] = (x[j * hw + p] - mean) / s;
        }
        deltas[p] = delta;
    }
    (y, deltas)
}

pub fn aln_backward<T: Real>(y: &[T], deltas: &[T], g: &[T], c: usize, hw: usize, eps: T) -> Vec<T> {
    let cf = T::from_usize(c).expect("channel count");
    let mut dx = vec![T::zero(); y.len()];
    for p in 0..hw {
        let delta = deltas[p];
        let s = delta + eps;
        let mut gsum = T::zero();
        let mut gy = T::zero();
        for j in 0..c {
            gsum += g[j * hw + p];
            gy += g[j * hw + p] * y[j * hw + p];
        }
        let gmean = gsum / cf;
        // the δ-path vanishes when all channels coincide (y ≡ 0 there)
        let coupling = if delta > T::zero() { gy / (cf * delta) } else { T::zero() };
        for j in 0..c {
            let i = j * hw + p;
            dx[i] = (g[i] - gmean) / s - y[i] * coupling;
        }
    }
    dx
}

/// Per-channel normalization over spatial positions, `(x − μ)/√(σ² + ε)`:
/// batch normalization for a batch of one, without affine terms.
pub fn channel_norm_forward<T: Real>(x: &[T], c: usize, hw: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let n = T::from_usize(hw).expect("plane size");
    let mut y = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); c];
    for j in 0..c {
        let plane = &x[j * hw..(j + 1) * hw];
        let mean = plane.iter().copied().sum::<T>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        for (o, &v) in y[j * hw..(j + 1) * hw].iter_mut().zip(plane) {
            *o = (v - mean) * r;
        }
        inv_std[j] = r;
    }
    (y, inv_std)
}

pub fn channel_norm_backward<T: Real>(y: &[T], inv_std: &[T], g: &[T], c: usize, hw: usize) -> Vec<T> {
    let n = T::from_usize(hw).expect("plane size");
    let mut dx = vec![T::zero(); y.len()];
    for j in 0..c {
        let r = inv_std[j];
        let yp = &y[j * hw..(j + 1) * hw];
        let gp = &g[j * hw..(j + 1) * hw];
        let gmean = gp.iter().copied().sum::<T>() / n;
        let gymean = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() / n;
        for ((d, &gi), &yi) in dx[j * hw..(j + 1) * hw].iter_mut().zip(gp).zip(yp) {
            *d = r * (gi - gmean - yi * gymean);
        }
    }
    dx
}

pub fn softmax_rows_forward<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let src = &x[r * cols..(r + 1) * cols];
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let dst = &mut y[r * cols..(r + 1) * cols];
        let mut total = T::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    y
}

pub fn softmax_rows_backward<T: Real>(y: &[T], g: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &g[r * cols..(r + 1) * cols];
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &yi), &gi) in dx[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(gr) {
            *d = yi * (gi - dot);
        }
    }
    dx
}

pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a, (k, 1), b, (n, 1), T::zero(), &mut c, (n, 1));
    c
}

/// `Aᵀ B` for `A: k x m`, `B: k x n`.
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a, (1, m), b, (n, 1), T::zero(), &mut c, (n, 1));
    c
}

/// `A Bᵀ` for `A: m x k`, `B: n x k`.
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), a, (k, 1), b, (1, k), T::zero(), &mut c, (n, 1));
    c
}

pub fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            y[c * rows + r] = x[r * cols + c];
        }
    }
    y
}

//! Forward and backward kernels behind the graph ops.

use super::Real;

/// Geometry of a batched 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub in_len: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_len(&self) -> usize {
        (self.in_len + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.in_channels * self.kernel
    }
}

/// Unfold input windows into `[batch][cin*k][t_out]` columns.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let t_out = g.out_len();
    let rows = g.rows();
    let mut cols = vec![T::zero(); g.batch * rows * t_out];
    for b in 0..g.batch {
        for ci in 0..g.in_channels {
            let src = &x[(b * g.in_channels + ci) * g.in_len..][..g.in_len];
            for kk in 0..g.kernel {
                let dst = &mut cols[(b * rows + ci * g.kernel + kk) * t_out..][..t_out];
                for (t, d) in dst.iter_mut().enumerate() {
                    let pos = (t * g.stride + kk) as isize - g.padding as isize;
                    if pos >= 0 && (pos as usize) < g.in_len {
                        *d = src[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(dcols: &[T], g: &ConvGeom, b: usize, dx: &mut [T]) {
    let t_out = g.out_len();
    for ci in 0..g.in_channels {
        let dst = &mut dx[(b * g.in_channels + ci) * g.in_len..][..g.in_len];
        for kk in 0..g.kernel {
            let src = &dcols[(ci * g.kernel + kk) * t_out..][..t_out];
            for (t, &v) in src.iter().enumerate() {
                let pos = (t * g.stride + kk) as isize - g.padding as isize;
                if pos >= 0 && (pos as usize) < g.in_len {
                    dst[pos as usize] += v;
                }
            }
        }
    }
}

/// Cross-correlation forward. Returns the output and the column buffer
/// reused by the backward pass.
pub fn conv1d_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let t_out = g.out_len();
    let rows = g.rows();
    let cols = im2col(x, g);
    let mut out = vec![T::zero(); g.batch * g.out_channels * t_out];
    for b in 0..g.batch {
        let c_b = &cols[b * rows * t_out..][..rows * t_out];
        let o_b = &mut out[b * g.out_channels * t_out..][..g.out_channels * t_out];
        if let Some(bias) = bias {
            for (co, row) in o_b.chunks_mut(t_out).enumerate() {
                row.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(g.out_channels, rows, t_out, w, (rows, 1), c_b, (t_out, 1), beta, o_b, (t_out, 1));
    }
    (out, cols)
}

/// Gradients of the convolution w.r.t. input (optional), weights and bias.
pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub dbias: Vec<T>,
}

pub fn conv1d_backward<T: Real>(
    dout: &[T],
    w: &[T],
    cols: &[T],
    g: &ConvGeom,
    need_dx: bool,
) -> ConvGrads<T> {
    let t_out = g.out_len();
    let rows = g.rows();
    let mut dw = vec![T::zero(); g.out_channels * rows];
    let mut dbias = vec![T::zero(); g.out_channels];
    let mut dx = need_dx.then(|| vec![T::zero(); g.batch * g.in_channels * g.in_len]);
    let mut dcols = if need_dx { vec![T::zero(); rows * t_out] } else { Vec::new() };
    for b in 0..g.batch {
        let d_b = &dout[b * g.out_channels * t_out..][..g.out_channels * t_out];
        let c_b = &cols[b * rows * t_out..][..rows * t_out];
        for (co, row) in d_b.chunks(t_out).enumerate() {
            dbias[co] += row.iter().copied().sum::<T>();
        }
        // dW += dOut_b · cols_bᵀ
        T::gemm(g.out_channels, t_out, rows, d_b, (t_out, 1), c_b, (1, t_out), T::one(), &mut dw, (rows, 1));
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dOut_b
            T::gemm(rows, g.out_channels, t_out, w, (1, rows), d_b, (t_out, 1), T::zero(), &mut dcols, (t_out, 1));
            col2im_add(&dcols, g, b, dx);
        }
    }
    ConvGrads { dx, dw, dbias }
}

/// Per-channel statistics over the batch and time axes of a `B×C×T` array.
pub fn channel_moments<T: Real>(x: &[T], batch: usize, channels: usize, len: usize) -> (Vec<T>, Vec<T>) {
    let n = T::from_usize(batch * len).unwrap();
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    for c in 0..channels {
        let mut s = T::zero();
        for b in 0..batch {
            s += x[(b * channels + c) * len..][..len].iter().copied().sum::<T>();
        }
        let m = s / n;
        let mut q = T::zero();
        for b in 0..batch {
            for &v in &x[(b * channels + c) * len..][..len] {
                q += (v - m) * (v - m);
            }
        }
        mean[c] = m;
        var[c] = q / n;
    }
    (mean, var)
}

/// Row-wise softmax over contiguous rows of length `len`, max-subtracted.
pub fn softmax_rows<T: Real>(x: &[T], len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(len).zip(out.chunks_mut(len)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d /= z);
    }
    out
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

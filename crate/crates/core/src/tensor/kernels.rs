//! Raw loops behind the graph operations.
//!
//! Convolutions gather one receptive-field patch per output position and take
//! a dot product against a channel-major copy of the kernel, which keeps the
//! inner loops contiguous even for the narrow channel counts used here.

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// Geometry of a `(time, height, width, channel)` convolution with kernel
/// layout `(kt, kh, kw, cin, cout)` and temporal stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub ci: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub co: usize,
    pub stride: usize,
    pub pad_t: usize,
    pub pad_s: usize,
    pub ot: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        input: [usize; 4],
        kernel: [usize; 5],
        stride: usize,
        pad_t: usize,
        pad_s: usize,
    ) -> Result<Self> {
        let [t, h, w, ci] = input;
        let [kt, kh, kw, kci, co] = kernel;
        if stride == 0 {
            return Err(Error::config("convolution stride must be at least 1"));
        }
        if kci != ci {
            return Err(Error::config(format!(
                "kernel expects {kci} input channels, input has {ci}"
            )));
        }
        if kh > h + 2 * pad_s || kw > w + 2 * pad_s || kt > t + 2 * pad_t {
            return Err(Error::config(format!(
                "kernel {kt}x{kh}x{kw} larger than padded input {t}x{h}x{w}"
            )));
        }
        Ok(Self {
            t,
            h,
            w,
            ci,
            kt,
            kh,
            kw,
            co,
            stride,
            pad_t,
            pad_s,
            ot: t + 2 * pad_t - kt + 1,
            oh: (h + 2 * pad_s - kh) / stride + 1,
            ow: (w + 2 * pad_s - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.kt * self.kh * self.kw * self.ci
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.ot, self.oh, self.ow, self.co]
    }

    /// Visit every in-bounds (patch offset, input offset) run of `ci` values
    /// for the output position `(ot, oy, ox)`.
    #[inline]
    fn for_each_tap(&self, ot: usize, oy: usize, ox: usize, mut f: impl FnMut(usize, Option<usize>)) {
        let ci = self.ci;
        let mut p = 0;
        for dt in 0..self.kt {
            let it = (ot + dt) as isize - self.pad_t as isize;
            for dy in 0..self.kh {
                let iy = (oy * self.stride + dy) as isize - self.pad_s as isize;
                for dx in 0..self.kw {
                    let ix = (ox * self.stride + dx) as isize - self.pad_s as isize;
                    let inside = it >= 0
                        && (it as usize) < self.t
                        && iy >= 0
                        && (iy as usize) < self.h
                        && ix >= 0
                        && (ix as usize) < self.w;
                    let src = inside.then(|| {
                        ((it as usize * self.h + iy as usize) * self.w + ix as usize) * ci
                    });
                    f(p, src);
                    p += ci;
                }
            }
        }
    }
}

/// Accumulates in 64-bit whatever `T` is, so 32-bit sums round once.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j].as_f64() * y[j].as_f64();
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x.as_f64() * y.as_f64();
    }
    T::from_f64(s)
}

#[inline]
pub fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `(p, co)` row-major to `(co, p)` row-major.
fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

fn gather<T: Scalar>(g: &ConvGeom, x: &[T], patch: &mut [T], ot: usize, oy: usize, ox: usize) {
    let ci = g.ci;
    g.for_each_tap(ot, oy, ox, |p, src| match src {
        Some(s) => patch[p..p + ci].copy_from_slice(&x[s..s + ci]),
        None => patch[p..p + ci].fill(T::zero()),
    });
}

pub fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], k: &[T]) -> Vec<T> {
    let p = g.patch_len();
    let kt = transpose(k, p, g.co);
    let mut patch = vec![T::zero(); p];
    let mut out = vec![T::zero(); g.ot * g.oh * g.ow * g.co];
    let mut pos = 0;
    for ot in 0..g.ot {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                gather(g, x, &mut patch, ot, oy, ox);
                let row = &mut out[pos * g.co..(pos + 1) * g.co];
                for (o, r) in row.iter_mut().enumerate() {
                    *r = dot(&patch, &kt[o * p..(o + 1) * p]);
                }
                pos += 1;
            }
        }
    }
    out
}

/// Gradients of a convolution with respect to its input and/or kernel.
pub fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    k: &[T],
    gy: &[T],
    want_x: bool,
    want_k: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let p = g.patch_len();
    let ci = g.ci;
    let kt = transpose(k, p, g.co);
    let mut gx = want_x.then(|| vec![T::zero(); x.len()]);
    let mut gkt = want_k.then(|| vec![T::zero(); k.len()]);
    let mut patch = vec![T::zero(); p];
    let mut gpatch = vec![T::zero(); p];
    let mut pos = 0;
    for ot in 0..g.ot {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let gy_row = &gy[pos * g.co..(pos + 1) * g.co];
                pos += 1;
                if gy_row.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                if let Some(gk) = gkt.as_mut() {
                    gather(g, x, &mut patch, ot, oy, ox);
                    for (o, &gv) in gy_row.iter().enumerate() {
                        if gv != T::zero() {
                            axpy(&mut gk[o * p..(o + 1) * p], gv, &patch);
                        }
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    gpatch.fill(T::zero());
                    for (o, &gv) in gy_row.iter().enumerate() {
                        if gv != T::zero() {
                            axpy(&mut gpatch, gv, &kt[o * p..(o + 1) * p]);
                        }
                    }
                    g.for_each_tap(ot, oy, ox, |pp, src| {
                        if let Some(s) = src {
                            for c in 0..ci {
                                gx[s + c] += gpatch[pp + c];
                            }
                        }
                    });
                }
            }
        }
    }
    (gx, gkt.map(|gk| transpose(&gk, g.co, p)))
}

/// Spatial interpolation rule used by [`resample`](super::resample).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    Nearest,
    #[default]
    Bilinear,
}

/// Two-tap interpolation weights along one axis, half-pixel centres.
#[derive(Debug, Clone, Copy)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

pub fn axis_taps(src: usize, dst: usize, mode: ResampleMode) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| match mode {
            ResampleMode::Nearest => {
                let s = (((i as f64 + 0.5) * scale).floor() as usize).min(src - 1);
                Tap {
                    i0: s,
                    i1: s,
                    w0: 1.0,
                    w1: 0.0,
                }
            }
            ResampleMode::Bilinear => {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                let w1 = pos - i0 as f64;
                Tap {
                    i0,
                    i1,
                    w0: 1.0 - w1,
                    w1,
                }
            }
        })
        .collect()
}

/// Precomputed interpolation plan for `batch × h × w × c` inputs.
#[derive(Debug, Clone)]
pub struct ResamplePlan {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl ResamplePlan {
    pub fn new(shape: &[usize], target: (usize, usize), mode: ResampleMode) -> Result<Self> {
        if shape.len() < 3 {
            return Err(Error::config(format!(
                "resample needs an h×w×c tensor, got {shape:?}"
            )));
        }
        let (oh, ow) = target;
        if oh == 0 || ow == 0 {
            return Err(Error::config("resample target dims must be at least 1"));
        }
        let n = shape.len();
        let (h, w, c) = (shape[n - 3], shape[n - 2], shape[n - 1]);
        Ok(Self {
            batch: shape[..n - 3].iter().product(),
            h,
            w,
            c,
            oh,
            ow,
            rows: axis_taps(h, oh, mode),
            cols: axis_taps(w, ow, mode),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.h == self.oh && self.w == self.ow
    }

    fn weights<T: Scalar>(&self, y: usize, x: usize) -> [(usize, usize, T); 4] {
        let r = self.rows[y];
        let c = self.cols[x];
        [
            (r.i0, c.i0, T::from_f64(r.w0 * c.w0)),
            (r.i0, c.i1, T::from_f64(r.w0 * c.w1)),
            (r.i1, c.i0, T::from_f64(r.w1 * c.w0)),
            (r.i1, c.i1, T::from_f64(r.w1 * c.w1)),
        ]
    }

    pub fn forward<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        if self.is_identity() {
            return x.to_vec();
        }
        let c = self.c;
        let mut out = vec![T::zero(); self.batch * self.oh * self.ow * c];
        for b in 0..self.batch {
            let src = &x[b * self.h * self.w * c..(b + 1) * self.h * self.w * c];
            for y in 0..self.oh {
                for xx in 0..self.ow {
                    let o = ((b * self.oh + y) * self.ow + xx) * c;
                    let dst = &mut out[o..o + c];
                    for (sy, sx, wt) in self.weights::<T>(y, xx) {
                        if wt != T::zero() {
                            let s = (sy * self.w + sx) * c;
                            axpy(dst, wt, &src[s..s + c]);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Scalar>(&self, gy: &[T]) -> Vec<T> {
        if self.is_identity() {
            return gy.to_vec();
        }
        let c = self.c;
        let mut gx = vec![T::zero(); self.batch * self.h * self.w * c];
        for b in 0..self.batch {
            let base = b * self.h * self.w * c;
            for y in 0..self.oh {
                for xx in 0..self.ow {
                    let o = ((b * self.oh + y) * self.ow + xx) * c;
                    let g = &gy[o..o + c];
                    for (sy, sx, wt) in self.weights::<T>(y, xx) {
                        if wt != T::zero() {
                            let s = base + (sy * self.w + sx) * c;
                            axpy(&mut gx[s..s + c], wt, g);
                        }
                    }
                }
            }
        }
        gx
    }
}

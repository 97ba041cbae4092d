//! Analytic auxiliary targets from the scene geometry.
//!
//! Both maps are multi-scale: channel group `r` is the base map box-averaged
//! over a `(2r+1)²` cell neighbourhood (clamped at the borders). Segmentation
//! channel `i` is class `i mod 3` at scale `i / 3`; flow channels `2r` and
//! `2r+1` are the horizontal and vertical motion at scale `r`, in target
//! grid cells.

use crate::data::scene::{FrameView, Pose};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn box_mean(base: &[f64], h: usize, w: usize, i: usize, j: usize, r: usize) -> f64 {
    let (i0, i1) = (i.saturating_sub(r), (i + r).min(h - 1));
    let (j0, j1) = (j.saturating_sub(r), (j + r).min(w - 1));
    let mut acc = 0.0;
    for a in i0..=i1 {
        for b in j0..=j1 {
            acc += base[a * w + b];
        }
    }
    acc / ((i1 - i0 + 1) * (j1 - j0 + 1)) as f64
}

fn assemble(bases: &[Vec<f64>], h: usize, w: usize, c: usize, pick: impl Fn(usize) -> (usize, usize)) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let (base, r) = pick(ch);
                data.push(box_mean(&bases[base], h, w, i, j, r) as f32);
            }
        }
    }
    Tensor::new(vec![h, w, c], data)
}

fn cell_centre(i: usize, j: usize, h: usize, w: usize) -> (f64, f64) {
    ((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64)
}

/// One-hot road / marking / background maps sampled at cell centres.
pub fn segmentation_channels(view: &FrameView<'_>, target: [usize; 3]) -> Result<Tensor<f32>> {
    let [h, w, c] = target;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::config("segmentation target dims must be ≥ 1"));
    }
    let mut bases = vec![vec![0.0; h * w]; 3];
    for i in 0..h {
        for j in 0..w {
            let (x, y) = cell_centre(i, j, h, w);
            bases[view.classify(x, y) as usize][i * w + j] = 1.0;
        }
    }
    assemble(&bases, h, w, c, |ch| (ch % 3, ch / 3))
}

/// Motion of each cell-centre scene point from `view` to the `next` pose.
pub fn flow_channels(view: &FrameView<'_>, next: &Pose, target: [usize; 3]) -> Result<Tensor<f32>> {
    let [h, w, c] = target;
    if h == 0 || w == 0 || c == 0 || c % 2 != 0 {
        return Err(Error::config(format!(
            "flow target needs positive dims and an even channel count, got {target:?}"
        )));
    }
    let mut bases = vec![vec![0.0; h * w]; 2];
    for i in 0..h {
        for j in 0..w {
            let (x, y) = cell_centre(i, j, h, w);
            let (du, dv) = view.flow_to(next, x, y);
            bases[0][i * w + j] = du * w as f64;
            bases[1][i * w + j] = dv * h as f64;
        }
    }
    assemble(&bases, h, w, c, |ch| (ch % 2, ch / 2))
}

//! Synthetic driving clips: generation, preprocessing and on-disk datasets.

pub mod container;
mod dataset;
pub mod scene;

use std::collections::BTreeMap;
use std::path::PathBuf;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auxnet::PathId;
use crate::error::{Error, Result};
use crate::mainnet::VehicleState;
use crate::seed;
use crate::tensor::{resample, ResampleMode, Tensor};

pub use dataset::{read_dataset, write_dataset, ClipManifest, Dataset, DatasetIndex};
pub use scene::{ScenarioParams, Trajectory};

/// Where a generated clip came from; enough to rebuild its scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSource {
    pub seed: u64,
    pub params: ScenarioParams,
    pub raw_len: usize,
    /// Raw frame index of every clip frame.
    pub raw_indices: Vec<usize>,
}

impl ClipSource {
    pub fn trajectory(&self) -> Result<Trajectory> {
        Trajectory::new(self.seed, &self.params, self.raw_len)
    }

    /// Raw indices of the last frame and the frame before it.
    pub fn last_pair(&self) -> (usize, usize) {
        let n = self.raw_indices.len();
        let last = self.raw_indices[n - 1];
        let prev = if n >= 2 {
            self.raw_indices[n - 2]
        } else {
            last.saturating_sub(1)
        };
        (prev, last)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    /// Driving sequence the clip was cut from.
    pub sequence: usize,
    /// Contiguous run within the sequence; speed filtering can split one.
    pub segment: usize,
    /// Position within the run.
    pub index: usize,
    /// `N×H×W×3` in `[-1, 1]`.
    pub frames: Tensor<f32>,
    pub states: Vec<VehicleState>,
    /// Auxiliary features keyed by path.
    pub aux: BTreeMap<PathId, Tensor<f32>>,
    pub source: Option<ClipSource>,
    /// Directory the clip was read from, if any.
    pub dir: Option<PathBuf>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Ground truth of the last frame, the prediction target of the clip.
    pub fn target(&self) -> &VehicleState {
        self.states.last().expect("clips are never empty")
    }

    /// Identifies the run of consecutive clips sharing recurrent state.
    pub fn chain_key(&self) -> (usize, usize) {
        (self.sequence, self.segment)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    /// Keep every `downsample`-th raw frame.
    pub downsample: usize,
    /// Frames slower than this (m/s) are dropped.
    pub speed_threshold: f64,
    /// Frames per clip.
    pub clip_len: usize,
    /// Output frame size (height, width).
    pub out_hw: [usize; 2],
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            downsample: 2,
            speed_threshold: 15.0,
            clip_len: 10,
            out_hw: [64, 64],
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample == 0 || self.clip_len == 0 || self.out_hw.contains(&0) {
            return Err(Error::config("prep: downsample, clip_len and out_hw must be ≥ 1"));
        }
        if !(self.speed_threshold >= 0.0) {
            return Err(Error::config("prep: speed_threshold must be ≥ 0"));
        }
        Ok(())
    }
}

/// A raw recording: 8-bit RGB frames with per-frame vehicle state.
#[allow(clippy::len_without_is_empty)]
pub trait RawSource {
    fn len(&self) -> usize;
    fn frame_hw(&self) -> [usize; 2];
    fn state(&self, t: usize) -> VehicleState;
    /// Interleaved RGB bytes of frame `t`.
    fn frame(&self, t: usize) -> Vec<u8>;
    fn source(&self, _raw_indices: &[usize]) -> Option<ClipSource> {
        None
    }
}

/// In-memory raw recording.
#[derive(Debug, Clone)]
pub struct RawFrames {
    pub hw: [usize; 2],
    pub frames: Vec<Vec<u8>>,
    pub states: Vec<VehicleState>,
}

impl RawSource for RawFrames {
    fn len(&self) -> usize {
        self.states.len()
    }
    fn frame_hw(&self) -> [usize; 2] {
        self.hw
    }
    fn state(&self, t: usize) -> VehicleState {
        self.states[t]
    }
    fn frame(&self, t: usize) -> Vec<u8> {
        self.frames[t].clone()
    }
}

/// A synthetic sequence renders frames on demand.
impl RawSource for Trajectory {
    fn len(&self) -> usize {
        Trajectory::len(self)
    }
    fn frame_hw(&self) -> [usize; 2] {
        self.params().render_hw
    }
    fn state(&self, t: usize) -> VehicleState {
        Trajectory::state(self, t)
    }
    fn frame(&self, t: usize) -> Vec<u8> {
        self.render(t)
    }
    fn source(&self, raw_indices: &[usize]) -> Option<ClipSource> {
        Some(ClipSource {
            seed: self.seed(),
            params: self.params().clone(),
            raw_len: Trajectory::len(self),
            raw_indices: raw_indices.to_vec(),
        })
    }
}

/// Map 8-bit pixels linearly onto `[-1, 1]`.
pub fn normalize_pixel(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Downsample in time, drop slow frames, normalize, resize and pack into
/// clips. A clip never spans dropped frames; leftovers shorter than a clip
/// are skipped with a warning.
pub fn preprocess(raw: &dyn RawSource, prep: &PrepConfig, sequence: usize) -> Result<Vec<Clip>> {
    prep.validate()?;
    let [rh, rw] = raw.frame_hw();
    let kept: Vec<usize> = (0..raw.len())
        .step_by(prep.downsample)
        .filter(|&t| raw.state(t).speed >= prep.speed_threshold)
        .collect();
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for t in kept {
        match runs.last_mut() {
            Some(run) if t == run.last().unwrap() + prep.downsample => run.push(t),
            _ => runs.push(vec![t]),
        }
    }
    let n = prep.clip_len;
    let mut clips = Vec::new();
    for (segment, run) in runs.iter().enumerate() {
        let chunks = run.chunks_exact(n);
        if !chunks.remainder().is_empty() {
            warn!(
                "sequence {sequence}: {} frames left over after packing run {segment} into clips of {n}",
                chunks.remainder().len()
            );
        }
        for (index, idx) in chunks.enumerate() {
            let mut frames = Vec::with_capacity(n);
            for &t in idx {
                let bytes = raw.frame(t);
                if bytes.len() != rh * rw * 3 {
                    return Err(Error::data(
                        format!("raw frame {t} has {} bytes, expected {}", bytes.len(), rh * rw * 3),
                        0,
                    ));
                }
                let f = Tensor::new(vec![rh, rw, 3], bytes.into_iter().map(normalize_pixel).collect())?;
                frames.push(resample(&f, (prep.out_hw[0], prep.out_hw[1]), ResampleMode::Bilinear)?);
            }
            clips.push(Clip {
                id: format!("s{sequence:05}_r{segment:02}_c{index:04}"),
                sequence,
                segment,
                index,
                frames: Tensor::stack(&frames)?,
                states: idx.iter().map(|&t| raw.state(t)).collect(),
                aux: BTreeMap::new(),
                source: raw.source(idx),
                dir: None,
            });
        }
    }
    Ok(clips)
}

/// Render one sequence and cut it into clips.
pub fn generate_sequence(
    seed: u64,
    params: &ScenarioParams,
    raw_len: usize,
    prep: &PrepConfig,
    sequence: usize,
) -> Result<Vec<Clip>> {
    let traj = Trajectory::new(seed, params, raw_len)?;
    preprocess(&traj, prep, sequence)
}

/// A single clip whose speeds all clear the filter threshold.
pub fn generate_clip(seed: u64, params: &ScenarioParams, prep: &PrepConfig) -> Result<Clip> {
    let mut p = params.clone();
    p.speed_min = p.speed_min.max(prep.speed_threshold);
    p.speed_max = p.speed_max.max(p.speed_min);
    let raw_len = prep.clip_len * prep.downsample;
    generate_sequence(seed, &p, raw_len, prep, 0)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::usage("generator produced no clip"))
}

/// Sequences `first..first + count`, each seeded from `(seed, sequence)`,
/// rendered in parallel and returned in sequence order.
pub fn generate_split(
    seed: u64,
    params: &ScenarioParams,
    prep: &PrepConfig,
    raw_len: usize,
    first: usize,
    count: usize,
) -> Result<Vec<Clip>> {
    let per_seq: Vec<Result<Vec<Clip>>> = (first..first + count)
        .into_par_iter()
        .map(|s| generate_sequence(seed::derive(seed, s as u64), params, raw_len, prep, s))
        .collect();
    let mut clips = Vec::new();
    for r in per_seq {
        clips.extend(r?);
    }
    Ok(clips)
}

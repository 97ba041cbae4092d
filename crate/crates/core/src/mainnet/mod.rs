//! The main network: a residual 3D CNN whose per-clip feature vector feeds
//! an LSTM and three regression heads (angle, speed, torque). Three stage
//! outputs are exposed as feature taps for mimicking.

pub mod checkpoint;
mod lstm;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use lstm::{init_lstm, lstm_step, LstmState};

/// Mimicking level of a feature tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Middle,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Middle, Level::High];

    pub fn name(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Middle => "middle",
            Level::High => "high",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Level::Low => 'L',
            Level::Middle => 'M',
            Level::High => 'H',
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Level::Low),
            "middle" => Ok(Level::Middle),
            "high" => Ok(Level::High),
            other => Err(Error::config(format!(
                "unknown level {other:?}, expected low, middle or high"
            ))),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Steering angle (rad), speed (m/s) and steering torque (N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub angle: f64,
    pub speed: f64,
    pub torque: f64,
}

impl VehicleState {
    pub fn as_array(&self) -> [f64; 3] {
        [self.angle, self.speed, self.torque]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self {
            angle: v[0],
            speed: v[1],
            torque: v[2],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Per-target z-score statistics; the network predicts normalized values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for TargetStats {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl TargetStats {
    /// Population statistics; a degenerate (constant) target keeps std 1.
    pub fn fit(states: &[VehicleState]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::usage("cannot fit target statistics on zero states"));
        }
        let n = states.len() as f64;
        let mut mean = [0.0; 3];
        for s in states {
            for (m, v) in mean.iter_mut().zip(s.as_array()) {
                *m += v / n;
            }
        }
        let mut std = [0.0; 3];
        for s in states {
            for ((sd, v), m) in std.iter_mut().zip(s.as_array()).zip(mean) {
                *sd += (v - m) * (v - m) / n;
            }
        }
        for sd in &mut std {
            *sd = if *sd > 1e-12 { sd.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, s: &VehicleState) -> [f64; 3] {
        let a = s.as_array();
        std::array::from_fn(|i| (a[i] - self.mean[i]) / self.std[i])
    }

    pub fn denormalize(&self, z: [f64; 3]) -> VehicleState {
        VehicleState::from_array(std::array::from_fn(|i| z[i] * self.std[i] + self.mean[i]))
    }
}

/// Binds one trunk layer (`stem`, `stage1`, ...) to a mimicking level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapBinding {
    pub level: Level,
    pub layer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MainNetConfig {
    /// Frame height and width.
    pub input_hw: [usize; 2],
    /// Frames per clip.
    pub clip_len: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Channel count of each residual stage; stages after the first halve
    /// the spatial size.
    pub block_widths: Vec<usize>,
    /// Residual blocks per stage.
    pub depth: usize,
    /// Temporal extent of the inflated kernels (odd).
    pub temporal_kernel: usize,
    pub fc_dim: usize,
    pub lstm_hidden: usize,
    pub taps: Vec<TapBinding>,
}

impl Default for MainNetConfig {
    fn default() -> Self {
        Self {
            input_hw: [64, 64],
            clip_len: 10,
            stem_width: 8,
            stem_kernel: 4,
            stem_stride: 4,
            block_widths: vec![8, 16, 32],
            depth: 2,
            temporal_kernel: 3,
            fc_dim: 32,
            lstm_hidden: 32,
            taps: vec![
                TapBinding {
                    level: Level::Low,
                    layer: "stage1".into(),
                },
                TapBinding {
                    level: Level::Middle,
                    layer: "stage2".into(),
                },
                TapBinding {
                    level: Level::High,
                    layer: "stage3".into(),
                },
            ],
        }
    }
}

/// One convolution of the trunk. Temporal layers use the configured
/// temporal kernel; the rest are `1×k×k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub temporal: bool,
}

#[derive(Debug, Clone)]
struct BlockSpec {
    conv1: ConvSpec,
    conv2: ConvSpec,
    proj: Option<ConvSpec>,
}

#[derive(Debug, Clone)]
struct StageSpec {
    name: String,
    blocks: Vec<BlockSpec>,
}

/// Dimensions of a trunk layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    /// Temporal receptive radius in frames.
    pub temporal_radius: usize,
}

impl MainNetConfig {
    pub fn layer_names(&self) -> Vec<String> {
        std::iter::once("stem".to_string())
            .chain((1..=self.block_widths.len()).map(|s| format!("stage{s}")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_hw;
        if self.clip_len == 0 {
            return Err(Error::config("clip_len must be at least 1"));
        }
        if h == 0 || w == 0 {
            return Err(Error::config("input_hw must be positive"));
        }
        if self.block_widths.is_empty() || self.block_widths.contains(&0) || self.stem_width == 0 {
            return Err(Error::config("block_widths must be non-empty and positive"));
        }
        if self.depth == 0 || self.fc_dim == 0 || self.lstm_hidden == 0 {
            return Err(Error::config("depth, fc_dim and lstm_hidden must be positive"));
        }
        if self.temporal_kernel == 0 || self.temporal_kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "temporal_kernel must be odd, got {}",
                self.temporal_kernel
            )));
        }
        if self.stem_kernel == 0 || self.stem_stride == 0 || self.stem_kernel > h.min(w) {
            return Err(Error::config("stem kernel must fit the input and stride be ≥ 1"));
        }
        if self.taps.len() != 3 {
            return Err(Error::config(format!(
                "exactly three tap points required, got {}",
                self.taps.len()
            )));
        }
        let names = self.layer_names();
        for level in Level::ALL {
            let bound: Vec<_> = self.taps.iter().filter(|t| t.level == level).collect();
            if bound.len() != 1 {
                return Err(Error::config(format!(
                    "level {level} must be bound exactly once, found {}",
                    bound.len()
                )));
            }
            if !names.contains(&bound[0].layer) {
                return Err(Error::config(format!(
                    "tap layer {:?} does not exist (layers: {names:?})",
                    bound[0].layer
                )));
            }
        }
        let dims = self.layer_dims();
        if let Some((name, _)) = dims.iter().find(|(_, d)| d.h == 0 || d.w == 0) {
            return Err(Error::config(format!("layer {name} collapses to zero size")));
        }
        Ok(())
    }

    fn stem_spec(&self) -> ConvSpec {
        ConvSpec {
            name: "stem".into(),
            cin: 3,
            cout: self.stem_width,
            kernel: self.stem_kernel,
            stride: self.stem_stride,
            pad: 0,
            temporal: true,
        }
    }

    fn stage_specs(&self) -> Vec<StageSpec> {
        let mut cin = self.stem_width;
        let mut stages = Vec::new();
        for (s, &width) in self.block_widths.iter().enumerate() {
            let name = format!("stage{}", s + 1);
            let mut blocks = Vec::new();
            for b in 0..self.depth {
                let stride = if b == 0 && s > 0 { 2 } else { 1 };
                let prefix = format!("{name}.b{b}");
                let block_in = if b == 0 { cin } else { width };
                let conv1 = ConvSpec {
                    name: format!("{prefix}.conv1"),
                    cin: block_in,
                    cout: width,
                    kernel: 3,
                    stride,
                    pad: 1,
                    temporal: b == 0,
                };
                let conv2 = ConvSpec {
                    name: format!("{prefix}.conv2"),
                    cin: width,
                    cout: width,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                    temporal: false,
                };
                let proj = (block_in != width || stride != 1).then(|| ConvSpec {
                    name: format!("{prefix}.proj"),
                    cin: block_in,
                    cout: width,
                    kernel: 1,
                    stride,
                    pad: 0,
                    temporal: false,
                });
                blocks.push(BlockSpec { conv1, conv2, proj });
            }
            cin = width;
            stages.push(StageSpec { name, blocks });
        }
        stages
    }

    /// Every convolution of the trunk in evaluation order.
    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut out = vec![self.stem_spec()];
        for stage in self.stage_specs() {
            for b in stage.blocks {
                out.push(b.conv1);
                out.push(b.conv2);
                out.extend(b.proj);
            }
        }
        out
    }

    pub fn temporal_kernel_of(&self, spec: &ConvSpec) -> usize {
        if spec.temporal {
            self.temporal_kernel
        } else {
            1
        }
    }

    /// Output dims and temporal receptive radius of `stem`, `stage1`, ...
    pub fn layer_dims(&self) -> Vec<(String, LayerDims)> {
        let out_size = |n: usize, k: usize, s: usize, p: usize| {
            if n + 2 * p < k {
                0
            } else {
                (n + 2 * p - k) / s + 1
            }
        };
        let half = (self.temporal_kernel - 1) / 2;
        let stem = self.stem_spec();
        let mut d = LayerDims {
            h: out_size(self.input_hw[0], stem.kernel, stem.stride, 0),
            w: out_size(self.input_hw[1], stem.kernel, stem.stride, 0),
            c: stem.cout,
            temporal_radius: half,
        };
        let mut out = vec![("stem".to_string(), d)];
        for stage in self.stage_specs() {
            for b in &stage.blocks {
                d.h = out_size(d.h, 3, b.conv1.stride, 1);
                d.w = out_size(d.w, 3, b.conv1.stride, 1);
                d.c = b.conv1.cout;
                if b.conv1.temporal {
                    d.temporal_radius += half;
                }
            }
            out.push((stage.name.clone(), d));
        }
        out
    }

    pub fn tap_layer(&self, level: Level) -> &str {
        &self
            .taps
            .iter()
            .find(|t| t.level == level)
            .expect("validated config binds every level")
            .layer
    }

    /// `h × w × c` of the tapped feature at `level`.
    pub fn tap_dims(&self, level: Level) -> LayerDims {
        let layer = self.tap_layer(level);
        self.layer_dims()
            .into_iter()
            .find(|(n, _)| n == layer)
            .map(|(_, d)| d)
            .expect("validated tap layer")
    }

    fn last_dims(&self) -> LayerDims {
        self.layer_dims().last().unwrap().1
    }
}

/// Copy a `k×k×Cin×Cout` kernel `w_t` times along a new leading time axis
/// and divide by `w_t`, so a temporally constant input reproduces the 2D
/// response.
pub fn inflate<T: Scalar>(weights2d: &Tensor<T>, w_t: usize) -> Result<Tensor<T>> {
    if w_t == 0 || w_t.is_multiple_of(2) {
        return Err(Error::config(format!("inflation factor must be odd, got {w_t}")));
    }
    if weights2d.ndim() != 4 {
        return Err(Error::config(format!(
            "inflate expects a k×k×Cin×Cout kernel, got {:?}",
            weights2d.shape()
        )));
    }
    let scale = T::from_f64(w_t as f64);
    let slice: Vec<T> = weights2d.data().iter().map(|&v| v / scale).collect();
    let mut data = Vec::with_capacity(slice.len() * w_t);
    for _ in 0..w_t {
        data.extend_from_slice(&slice);
    }
    let mut shape = vec![w_t];
    shape.extend_from_slice(weights2d.shape());
    Tensor::new(shape, data)
}

/// Sum a `w_t×k×k×Cin×Cout` kernel over time.
pub fn collapse_time<T: Scalar>(weights3d: &Tensor<T>) -> Result<Tensor<T>> {
    if weights3d.ndim() != 5 {
        return Err(Error::config(format!(
            "collapse_time expects a 5D kernel, got {:?}",
            weights3d.shape()
        )));
    }
    let wt = weights3d.shape()[0];
    let inner = weights3d.numel() / wt;
    let mut data = vec![T::zero(); inner];
    for t in 0..wt {
        for (d, &v) in data.iter_mut().zip(&weights3d.data()[t * inner..(t + 1) * inner]) {
            *d += v;
        }
    }
    Tensor::new(weights3d.shape()[1..].to_vec(), data)
}

/// Random 2D convolution weights (`{name}.w` as `k×k×Cin×Cout`, zero
/// `{name}.b`) for every trunk layer.
pub fn init_2d<T: Scalar>(config: &MainNetConfig, seed: u64) -> Result<ParamStore<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    for spec in config.conv_specs() {
        let fan_in = spec.kernel * spec.kernel * spec.cin;
        p.insert(
            format!("{}.w", spec.name),
            fan_in_uniform(&mut rng, &[spec.kernel, spec.kernel, spec.cin, spec.cout], fan_in)?,
        )?;
        p.insert(format!("{}.b", spec.name), Tensor::zeros(&[spec.cout])?)?;
    }
    Ok(p)
}

/// Graph handles produced by [`MainNet::forward`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Normalized `[angle, speed, torque]`.
    pub prediction: Var,
    /// Last-frame slice (`h × w × c`) of each tapped stage.
    pub taps: BTreeMap<Level, Var>,
    /// Compact per-clip feature vector fed to the LSTM.
    pub feature: Var,
    pub h: Var,
    pub c: Var,
}

/// Values of one evaluated forward pass.
#[derive(Debug, Clone)]
pub struct NetOutput<T> {
    pub prediction: VehicleState,
    pub normalized: [f64; 3],
    pub taps: BTreeMap<Level, Tensor<T>>,
    pub feature: Tensor<T>,
    pub lstm_state: LstmState<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MainNet<T> {
    config: MainNetConfig,
    params: ParamStore<T>,
    stats: TargetStats,
}

const HEADS: [&str; 3] = ["head.angle", "head.speed", "head.torque"];

impl<T: Scalar> MainNet<T> {
    /// Seeded build; trunk kernels are inflated from random 2D kernels.
    pub fn build(config: MainNetConfig, seed: u64) -> Result<Self> {
        let w2d = init_2d(&config, seed)?;
        Self::from_2d(config, &w2d, seed)
    }

    /// Inflate the given 2D trunk weights; the non-convolutional layers are
    /// initialized from a stream of `seed` separate from the 2D weights.
    pub fn from_2d(config: MainNetConfig, weights2d: &ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for spec in config.conv_specs() {
            let w = weights2d.get(&format!("{}.w", spec.name))?;
            let expect = [spec.kernel, spec.kernel, spec.cin, spec.cout];
            if w.shape() != expect {
                return Err(Error::config(format!(
                    "2D weight {}.w has shape {:?}, expected {expect:?}",
                    spec.name,
                    w.shape()
                )));
            }
            params.insert(
                format!("{}.w", spec.name),
                inflate(w, config.temporal_kernel_of(&spec))?,
            )?;
            params.insert(
                format!("{}.b", spec.name),
                weights2d.get(&format!("{}.b", spec.name))?.clone(),
            )?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let last = config.last_dims();
        let flat = config.clip_len * last.c;
        params.insert("fc.w", fan_in_uniform(&mut rng, &[flat, config.fc_dim], flat)?)?;
        params.insert("fc.b", Tensor::zeros(&[config.fc_dim])?)?;
        init_lstm(&mut params, &mut rng, "lstm", config.fc_dim + 3, config.lstm_hidden)?;
        for head in HEADS {
            params.insert(
                format!("{head}.w"),
                fan_in_uniform(&mut rng, &[config.lstm_hidden, 1], config.lstm_hidden)?,
            )?;
            params.insert(format!("{head}.b"), Tensor::zeros(&[1])?)?;
        }
        Ok(Self {
            config,
            params,
            stats: TargetStats::default(),
        })
    }

    /// Reassemble from stored parameters (checkpoint loading).
    pub fn from_parts(config: MainNetConfig, params: ParamStore<T>, stats: TargetStats) -> Result<Self> {
        config.validate()?;
        let reference = Self::build(config.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::config("parameter set does not match config"));
        }
        Ok(Self {
            config,
            params,
            stats,
        })
    }

    pub fn config(&self) -> &MainNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn stats(&self) -> &TargetStats {
        &self.stats
    }

    pub fn set_stats(&mut self, stats: TargetStats) {
        self.stats = stats;
    }

    pub fn cast<U: Scalar>(&self) -> MainNet<U> {
        MainNet {
            config: self.config.clone(),
            params: self.params.cast(),
            stats: self.stats,
        }
    }

    /// 2D weights whose inflation reproduces this network's trunk when its
    /// kernels are temporally uniform.
    pub fn collapse_to_2d(&self) -> Result<ParamStore<T>> {
        let mut p = ParamStore::new();
        for spec in self.config.conv_specs() {
            let w = self.params.get(&format!("{}.w", spec.name))?;
            p.insert(format!("{}.w", spec.name), collapse_time(w)?)?;
            p.insert(
                format!("{}.b", spec.name),
                self.params.get(&format!("{}.b", spec.name))?.clone(),
            )?;
        }
        Ok(p)
    }

    fn check_clip(&self, shape: &[usize]) -> Result<()> {
        let [h, w] = self.config.input_hw;
        let expect = [self.config.clip_len, h, w, 3];
        if shape != expect {
            return Err(Error::usage(format!(
                "clip shape {shape:?} does not match config {expect:?}"
            )));
        }
        Ok(())
    }

    /// Trunk over a `T×H×W×3` clip; returns every layer output
    /// (`stem`, `stage1`, ...), each `T×h×w×c`.
    pub fn trunk(&self, g: &mut Graph<T>, clip: Var) -> Result<Vec<(String, Var)>> {
        self.check_clip(g.shape(clip))?;
        let params = &self.params;
        run_trunk(&self.config, g, clip, |g, spec, x| {
            let w = params.bind(g, &format!("{}.w", spec.name))?;
            let b = params.bind(g, &format!("{}.b", spec.name))?;
            let y = g.conv3d(x, w, spec.stride, spec.pad)?;
            g.add_bias(y, b)
        })
    }

    /// Full forward pass. `prev_state` is the normalized previous
    /// prediction (3-vector); `h`, `c` the LSTM state.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        clip: Var,
        prev_state: Var,
        h: Var,
        c: Var,
    ) -> Result<ForwardVars> {
        if g.value(prev_state).numel() != 3 {
            return Err(Error::usage("previous state must have 3 components"));
        }
        let layers = self.trunk(g, clip)?;
        let mut taps = BTreeMap::new();
        for binding in &self.config.taps {
            let v = layers
                .iter()
                .find(|(n, _)| *n == binding.layer)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::config(format!("no layer {}", binding.layer)))?;
            let last = g.index_axis0(v, self.config.clip_len - 1)?;
            taps.insert(binding.level, last);
        }
        let top = layers.last().unwrap().1;
        let pooled = g.spatial_mean(top)?;
        let fc_w = self.params.bind(g, "fc.w")?;
        let fc_b = self.params.bind(g, "fc.b")?;
        let fc = g.dense(pooled, fc_w, fc_b)?;
        let feature = g.relu(fc);
        let lstm_in = g.concat(&[feature, prev_state])?;
        let (h1, c1) = lstm_step(g, &self.params, "lstm", lstm_in, h, c)?;
        let mut outs = Vec::with_capacity(3);
        for head in HEADS {
            let w = self.params.bind(g, &format!("{head}.w"))?;
            let b = self.params.bind(g, &format!("{head}.b"))?;
            outs.push(g.dense(h1, w, b)?);
        }
        let prediction = g.concat(&outs)?;
        Ok(ForwardVars {
            prediction,
            taps,
            feature,
            h: h1,
            c: c1,
        })
    }

    /// Evaluate one clip outside of training. `prev_state` is in physical
    /// units; `None` stands for the zero-initialized start of a sequence.
    pub fn predict(
        &self,
        clip: &Tensor<T>,
        prev_state: Option<&VehicleState>,
        lstm_state: &LstmState<T>,
    ) -> Result<NetOutput<T>> {
        let prev = prev_state
            .map(|s| self.stats.normalize(s))
            .unwrap_or([0.0; 3]);
        self.predict_normalized(clip, prev, lstm_state)
    }

    pub fn predict_normalized(
        &self,
        clip: &Tensor<T>,
        prev: [f64; 3],
        lstm_state: &LstmState<T>,
    ) -> Result<NetOutput<T>> {
        let mut g = Graph::new();
        let x = g.constant(clip.clone());
        let p = g.constant(Tensor::vector(prev.iter().map(|&v| T::from_f64(v)).collect())?);
        let h = g.constant(lstm_state.h.clone());
        let c = g.constant(lstm_state.c.clone());
        let out = self.forward(&mut g, x, p, h, c)?;
        let z = g.value(out.prediction).data();
        let normalized = [z[0].as_f64(), z[1].as_f64(), z[2].as_f64()];
        Ok(NetOutput {
            prediction: self.stats.denormalize(normalized),
            normalized,
            taps: out
                .taps
                .iter()
                .map(|(l, v)| (*l, g.value(*v).clone()))
                .collect(),
            feature: g.value(out.feature).clone(),
            lstm_state: LstmState {
                h: g.value(out.h).clone(),
                c: g.value(out.c).clone(),
            },
        })
    }
}

/// Shared residual structure of the 3D trunk and its 2D reference.
fn run_trunk<T: Scalar>(
    config: &MainNetConfig,
    g: &mut Graph<T>,
    input: Var,
    mut conv: impl FnMut(&mut Graph<T>, &ConvSpec, Var) -> Result<Var>,
) -> Result<Vec<(String, Var)>> {
    let stem = conv(g, &config.stem_spec(), input)?;
    let mut x = g.relu(stem);
    let mut out = vec![("stem".to_string(), x)];
    for stage in config.stage_specs() {
        for block in &stage.blocks {
            let y = conv(g, &block.conv1, x)?;
            let y = g.relu(y);
            let y = conv(g, &block.conv2, y)?;
            let shortcut = match &block.proj {
                Some(p) => conv(g, p, x)?,
                None => x,
            };
            let sum = g.add(y, shortcut)?;
            x = g.relu(sum);
        }
        out.push((stage.name.clone(), x));
    }
    Ok(out)
}

/// 2D reference trunk on a single `H×W×3` frame using `k×k×Cin×Cout`
/// kernels and `conv2d`.
pub fn trunk_2d<T: Scalar>(
    config: &MainNetConfig,
    weights2d: &ParamStore<T>,
    g: &mut Graph<T>,
    frame: Var,
) -> Result<Vec<(String, Var)>> {
    config.validate()?;
    run_trunk(config, g, frame, |g, spec, x| {
        let w = weights2d.bind(g, &format!("{}.w", spec.name))?;
        let b = weights2d.bind(g, &format!("{}.b", spec.name))?;
        let y = g.conv2d(x, w, spec.stride, spec.pad)?;
        g.add_bias(y, b)
    })
}

/// Largest deviation between the 3D trunk on a temporally constant clip and
/// the 2D reference on that frame, over interior frames of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct InflationCheck {
    pub max_err: f64,
    pub frames_compared: usize,
}

pub fn check_inflation<T: Scalar>(
    net: &MainNet<T>,
    weights2d: &ParamStore<T>,
    frame: &Tensor<T>,
) -> Result<InflationCheck> {
    let cfg = net.config();
    let n = cfg.clip_len;
    let clip = Tensor::stack(&vec![frame.clone(); n])?;
    let mut g3 = Graph::new();
    let x3 = g3.constant(clip);
    let layers3 = net.trunk(&mut g3, x3)?;
    let mut g2 = Graph::new();
    let x2 = g2.constant(frame.clone());
    let layers2 = trunk_2d(cfg, weights2d, &mut g2, x2)?;
    let dims = cfg.layer_dims();
    let mut max_err: f64 = 0.0;
    let mut frames = 0;
    for (((name, v3), (_, v2)), (_, d)) in layers3.iter().zip(&layers2).zip(&dims) {
        let r = d.temporal_radius;
        if 2 * r >= n {
            continue;
        }
        let reference = g2.value(*v2);
        for t in r..n - r {
            let slice = g3.value(*v3).index_axis0(t)?;
            let err = slice.max_abs_diff(reference).map_err(|e| {
                Error::config(format!("layer {name}: {e}"))
            })?;
            max_err = max_err.max(err);
            frames += 1;
        }
    }
    if frames == 0 {
        return Err(Error::config(format!(
            "clip_len {n} leaves no interior frame for the trunk's temporal receptive field"
        )));
    }
    Ok(InflationCheck {
        max_err,
        frames_compared: frames,
    })
}

/// Inflation check over `trials` fresh 2D weight sets, each driven by a
/// random frame in [-1, 1]. Reports the worst trial.
pub fn inflation_trials(config: &MainNetConfig, seed: u64, trials: usize) -> Result<InflationCheck> {
    let mut worst = InflationCheck {
        max_err: 0.0,
        frames_compared: 0,
    };
    for i in 0..trials as u64 {
        let s = crate::seed::derive(seed, i);
        let w2 = init_2d::<f32>(config, s)?;
        let net = MainNet::from_2d(config.clone(), &w2, s)?;
        let r = check_inflation(&net, &w2, &random_frame(config, s))?;
        worst.max_err = worst.max_err.max(r.max_err);
        worst.frames_compared += r.frames_compared;
    }
    Ok(worst)
}

/// Inflation check of existing 3D weights against their time-collapsed 2D
/// form. Holds only while every temporal kernel is still constant in time.
pub fn checkpoint_inflation(net: &MainNet<f32>, seed: u64) -> Result<InflationCheck> {
    let w2 = net.collapse_to_2d()?;
    check_inflation(net, &w2, &random_frame(net.config(), seed))
}

fn random_frame(config: &MainNetConfig, seed: u64) -> Tensor<f32> {
    let mut rng = crate::seed::rng(seed, crate::seed::tag("frame"));
    let [h, w] = config.input_hw;
    let data = (0..h * w * 3).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    Tensor::from_parts(vec![h, w, 3], data)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> MainNetConfig {
        MainNetConfig {
            input_hw: [12, 12],
            clip_len: 5,
            stem_width: 3,
            stem_kernel: 3,
            stem_stride: 2,
            block_widths: vec![3, 4],
            depth: 1,
            temporal_kernel: 3,
            fc_dim: 4,
            lstm_hidden: 3,
            taps: vec![
                TapBinding {
                    level: Level::Low,
                    layer: "stem".into(),
                },
                TapBinding {
                    level: Level::Middle,
                    layer: "stage1".into(),
                },
                TapBinding {
                    level: Level::High,
                    layer: "stage2".into(),
                },
            ],
        }
    }

    #[test]
    fn inflate_divides_by_temporal_extent() {
        let w = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![0.6]).unwrap();
        let inflated = inflate(&w, 3).unwrap();
        assert_eq!(inflated.shape(), &[3, 1, 1, 1, 1]);
        for &v in inflated.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        assert_eq!(inflate(&w, 1).unwrap().data(), w.data());
        assert!(matches!(inflate(&w, 2), Err(Error::Config(_))));
    }

    #[test]
    fn inflated_kernel_sums_back_over_time() {
        let w = Tensor::<f64>::from_fn(&[3, 3, 2, 2], |i| (i as f64 - 17.0) * 0.25).unwrap();
        let back = collapse_time(&inflate(&w, 3).unwrap()).unwrap();
        assert_eq!(back.shape(), w.shape());
        for (a, b) in back.data().iter().zip(w.data()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
        }
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = MainNet::<f32>::build(tiny_config(), 5).unwrap();
        let b = MainNet::<f32>::build(tiny_config(), 5).unwrap();
        let c = MainNet::<f32>::build(tiny_config(), 6).unwrap();
        assert!(a.params().bit_eq(b.params()));
        assert!(!a.params().bit_eq(c.params()));
    }

    #[test]
    fn two_tap_points_are_rejected() {
        let mut cfg = tiny_config();
        cfg.taps.pop();
        assert!(matches!(MainNet::<f32>::build(cfg, 0), Err(Error::Config(_))));
        let mut cfg = tiny_config();
        cfg.taps[0].layer = "stage9".into();
        assert!(matches!(MainNet::<f32>::build(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn forward_is_pure_and_exposes_three_taps() {
        let net = MainNet::<f32>::build(tiny_config(), 1).unwrap();
        let clip = Tensor::from_fn(&[5, 12, 12, 3], |i| ((i * 37 % 101) as f32 / 50.0) - 1.0).unwrap();
        let state = LstmState::zeros(3).unwrap();
        let a = net.predict(&clip, None, &state).unwrap();
        let b = net.predict(&clip, None, &state).unwrap();
        assert_eq!(a.normalized, b.normalized);
        assert_eq!(a.lstm_state, b.lstm_state);
        assert_eq!(a.taps.keys().copied().collect::<Vec<_>>(), Level::ALL.to_vec());
        for level in Level::ALL {
            let d = net.config().tap_dims(level);
            assert_eq!(a.taps[&level].shape(), &[d.h, d.w, d.c]);
        }
    }

    #[test]
    fn wrong_clip_shape_is_usage_error() {
        let net = MainNet::<f32>::build(tiny_config(), 1).unwrap();
        let clip = Tensor::zeros(&[4, 12, 12, 3]).unwrap();
        let state = LstmState::zeros(3).unwrap();
        assert!(matches!(net.predict(&clip, None, &state), Err(Error::Usage(_))));
    }

    #[test]
    fn sequence_length_is_preserved_by_every_stage() {
        let net = MainNet::<f64>::build(tiny_config(), 2).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[5, 12, 12, 3], 0.1).unwrap());
        for (_, v) in net.trunk(&mut g, x).unwrap() {
            assert_eq!(g.shape(v)[0], 5);
        }
    }

    #[test]
    fn target_stats_round_trip() {
        let states = [
            VehicleState { angle: 0.1, speed: 20.0, torque: 1.0 },
            VehicleState { angle: -0.3, speed: 25.0, torque: 1.0 },
        ];
        let s = TargetStats::fit(&states).unwrap();
        assert_eq!(s.std[2], 1.0);
        let z = s.normalize(&states[0]);
        let back = s.denormalize(z);
        assert!((back.angle - 0.1).abs() < 1e-12 && (back.speed - 20.0).abs() < 1e-12);
    }
}

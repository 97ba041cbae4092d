//! Two-stage training. Stage 1 fits the steering and multi-task terms;
//! stage 2 adds feature mimicking through freshly created Φ layers.
//!
//! Clips are consumed by `batch_size` lanes. Each lane walks one chain of
//! consecutive clips, carrying the LSTM state and its own previous
//! prediction from clip to clip (both detached), and takes the next chain
//! from a seed-shuffled queue when it runs out. One optimizer step is taken
//! per round of lanes.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::auxnet::{init_phi, phi_transform, psi_transform, MimicPath, PathId, Provider};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{graph_loss, LossBreakdown, LossWeights, MimicTerm, TASKS};
use crate::mainnet::{checkpoint, LstmState, MainNet, MainNetConfig, TargetStats};
use crate::params::ParamStore;
use crate::seed;
use crate::tensor::{GradientMap, Graph, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub initial: f64,
    pub decayed: f64,
    /// Last episode trained at the initial rate.
    pub breakpoint: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-4,
            decayed: 1e-6,
            breakpoint: 30,
        }
    }
}

impl LrSchedule {
    /// Learning rate of a 1-based episode.
    pub fn lr_at(&self, episode: usize) -> f64 {
        if episode <= self.breakpoint {
            self.initial
        } else {
            self.decayed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Total episodes (full passes over the training set).
    pub episodes: usize,
    pub stage1_episodes: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weights: LossWeights,
    /// Mimicking paths enabled in stage 2.
    pub paths: Vec<PathId>,
    /// Set from the run seed rather than read from the config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            episodes: 40,
            stage1_episodes: 30,
            lr: LrSchedule::default(),
            momentum: 0.9,
            weights: LossWeights::default(),
            paths: PathId::all(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if self.stage1_episodes > self.episodes {
            return Err(Error::config(format!(
                "stage1_episodes ({}) exceeds episodes ({})",
                self.stage1_episodes, self.episodes
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.lr.initial >= 0.0 && self.lr.decayed >= 0.0) {
            return Err(Error::config("learning rates must be ≥ 0"));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.paths.iter().find(|p| !seen.insert(**p)) {
            return Err(Error::config(format!("path {dup} enabled twice")));
        }
        self.weights.validate()
    }
}

/// Gradient descent with momentum: `v ← μv + g`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    /// Update in the store's parameter order. A parameter without a
    /// gradient is treated as having a zero gradient. Returns `false`, with
    /// nothing changed, if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradientMap<T>, lr: f64) -> bool {
        if !grads.all_finite() {
            return false;
        }
        let mu = T::from_f64(self.momentum);
        let lr = T::from_f64(lr);
        for (name, p) in params.iter_mut() {
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| Tensor::from_parts(p.shape().to_vec(), vec![T::zero(); p.numel()]));
            match grads.get(name) {
                Some(g) => {
                    for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                        *vi = mu * *vi + gi;
                    }
                }
                None => {
                    for vi in v.data_mut() {
                        *vi = mu * *vi;
                    }
                }
            }
            for (pi, &vi) in p.data_mut().iter_mut().zip(v.data()) {
                *pi -= lr * vi;
            }
        }
        true
    }
}

/// Ψ-transformed auxiliary targets of every clip for a set of paths.
#[derive(Debug, Clone, Default)]
pub struct MimicTargets {
    pub paths: Vec<MimicPath>,
    pub per_clip: Vec<BTreeMap<PathId, Tensor<f32>>>,
}

impl MimicTargets {
    /// Fails with a configuration error if the provider cannot cover some
    /// clip and path.
    pub fn build(provider: &Provider, data: &Dataset, paths: &[MimicPath]) -> Result<Self> {
        for p in paths {
            p.validate()?;
        }
        for clip in &data.clips {
            if let Some(p) = paths.iter().find(|p| !provider.covers(clip, p)) {
                return Err(Error::config(format!(
                    "clip {} has no auxiliary target for path {} ({:?} provider)",
                    clip.id,
                    p.id,
                    provider.kind()
                )));
            }
        }
        let per_clip = data
            .clips
            .iter()
            .map(|clip| {
                let raw = provider.provide(clip, paths)?;
                paths
                    .iter()
                    .map(|p| Ok((p.id, psi_transform(&raw[&p.id], p)?)))
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            paths: paths.to_vec(),
            per_clip,
        })
    }

    pub fn path(&self, id: PathId) -> Option<&MimicPath> {
        self.paths.iter().find(|p| p.id == id)
    }
}

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub stage: u32,
    pub episode: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// The update was skipped because of a non-finite gradient.
    pub aborted: bool,
}

#[derive(Debug, Clone)]
struct Lane {
    chain: usize,
    pos: usize,
    state: LstmState<f32>,
    prev: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    net: MainNet<f32>,
    phi: ParamStore<f32>,
    opt: Sgd<f32>,
    enabled: Vec<MimicPath>,
    targets: Arc<MimicTargets>,
    /// Normalized per-clip targets.
    truth: Vec<[f64; 3]>,
    log: Vec<StepRecord>,
    episode: usize,
    step: usize,
    num_clips: usize,
}

impl Trainer {
    pub fn new(
        net_cfg: MainNetConfig,
        cfg: TrainConfig,
        train: &Dataset,
        targets: Arc<MimicTargets>,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::usage("training set is empty"));
        }
        let mut net = MainNet::build(net_cfg, cfg.seed)?;
        for clip in &train.clips {
            if clip.frames.shape()[0] != net.config().clip_len {
                return Err(Error::config(format!(
                    "clip {} has {} frames, network expects {}",
                    clip.id,
                    clip.frames.shape()[0],
                    net.config().clip_len
                )));
            }
        }
        let stats = TargetStats::fit(&train.targets())?;
        net.set_stats(stats);
        let truth = train.targets().iter().map(|s| stats.normalize(s)).collect();
        let mut t = Self {
            opt: Sgd::new(cfg.momentum),
            cfg,
            net,
            phi: ParamStore::new(),
            enabled: Vec::new(),
            targets,
            truth,
            log: Vec::new(),
            episode: 0,
            step: 0,
            num_clips: train.len(),
        };
        let ids = t.cfg.paths.clone();
        t.set_paths(&ids)?;
        Ok(t)
    }

    /// Choose the mimicking paths; allowed until stage 2 begins.
    pub fn set_paths(&mut self, ids: &[PathId]) -> Result<()> {
        if self.episode > self.cfg.stage1_episodes || !self.phi.is_empty() {
            return Err(Error::usage("paths cannot change once stage 2 has started"));
        }
        if !ids.is_empty() && self.targets.per_clip.len() != self.num_clips {
            return Err(Error::config(format!(
                "auxiliary targets cover {} clips, training set has {}",
                self.targets.per_clip.len(),
                self.num_clips
            )));
        }
        let mut enabled = Vec::new();
        for &id in ids {
            let mut p = *self.targets.path(id).ok_or_else(|| {
                Error::config(format!("enabled path {id} has no auxiliary targets"))
            })?;
            p.beta = self.cfg.weights.beta_of(id.kind);
            enabled.push(p);
        }
        self.cfg.paths = ids.to_vec();
        self.enabled = enabled;
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn net(&self) -> &MainNet<f32> {
        &self.net
    }

    pub fn phi(&self) -> &ParamStore<f32> {
        &self.phi
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn enabled_paths(&self) -> &[MimicPath] {
        &self.enabled
    }

    /// Completed episodes.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn stage_of(&self, episode: usize) -> u32 {
        if episode <= self.cfg.stage1_episodes {
            1
        } else {
            2
        }
    }

    pub fn run_stage1(&mut self, data: &Dataset) -> Result<()> {
        while self.episode < self.cfg.stage1_episodes {
            self.run_episode(data)?;
        }
        Ok(())
    }

    pub fn run_stage2(&mut self, data: &Dataset) -> Result<()> {
        self.run_stage1(data)?;
        while self.episode < self.cfg.episodes {
            self.run_episode(data)?;
        }
        Ok(())
    }

    fn start_stage2(&mut self) -> Result<()> {
        for p in &self.enabled {
            let c = self.net.config().tap_dims(p.id.level).c;
            init_phi(&mut self.phi, p, c, self.cfg.seed)?;
        }
        info!("stage 2: created Φ for {} paths", self.enabled.len());
        Ok(())
    }

    pub fn run_episode(&mut self, data: &Dataset) -> Result<()> {
        if data.len() != self.num_clips {
            return Err(Error::usage("episode dataset differs from the one the trainer was built on"));
        }
        let episode = self.episode + 1;
        let stage = self.stage_of(episode);
        if stage == 2 && self.episode == self.cfg.stage1_episodes {
            self.start_stage2()?;
        }
        let lr = self.cfg.lr.lr_at(episode);
        let chains = data.chains();
        let mut queue: Vec<usize> = (0..chains.len()).collect();
        queue.shuffle(&mut seed::rng(self.cfg.seed, seed::derive(seed::tag("episode"), episode as u64)));
        queue.reverse();
        let hidden = self.net.config().lstm_hidden;
        let mut lanes: Vec<Option<Lane>> = vec![None; self.cfg.batch_size];
        loop {
            for lane in lanes.iter_mut().filter(|l| l.is_none()) {
                if let Some(chain) = queue.pop() {
                    *lane = Some(Lane {
                        chain,
                        pos: 0,
                        state: LstmState::zeros(hidden)?,
                        prev: [0.0; 3],
                    });
                }
            }
            if lanes.iter().all(Option::is_none) {
                break;
            }
            let batch: Vec<(usize, usize)> = lanes
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.as_ref().map(|l| (i, chains[l.chain][l.pos])))
                .collect();
            let outputs = self.train_step(data, &lanes, &batch, stage, episode, lr)?;
            for ((lane_idx, _), (state, pred)) in batch.iter().zip(outputs) {
                let lane = lanes[*lane_idx].as_mut().unwrap();
                lane.state = state;
                lane.prev = pred;
                lane.pos += 1;
                if lane.pos == chains[lane.chain].len() {
                    lanes[*lane_idx] = None;
                }
            }
        }
        self.episode = episode;
        Ok(())
    }

    fn train_step(
        &mut self,
        data: &Dataset,
        lanes: &[Option<Lane>],
        batch: &[(usize, usize)],
        stage: u32,
        episode: usize,
        lr: f64,
    ) -> Result<Vec<(LstmState<f32>, [f64; 3])>> {
        let mut g = Graph::<f32>::new();
        let mut preds = Vec::with_capacity(batch.len());
        let mut truths = Vec::with_capacity(batch.len());
        let mut fwd = Vec::with_capacity(batch.len());
        let mimic_on = stage == 2;
        let mut terms: Vec<MimicTerm<f32>> = if mimic_on {
            self.enabled
                .iter()
                .map(|p| MimicTerm {
                    path: *p,
                    phi: Vec::new(),
                    psi: Vec::new(),
                })
                .collect()
        } else {
            Vec::new()
        };
        for &(lane_idx, clip_idx) in batch {
            let lane = lanes[lane_idx].as_ref().unwrap();
            let clip = &data.clips[clip_idx];
            let x = g.constant(clip.frames.clone());
            let prev = g.constant(Tensor::vector(lane.prev.iter().map(|&v| v as f32).collect())?);
            let h = g.constant(lane.state.h.clone());
            let c = g.constant(lane.state.c.clone());
            let out = self.net.forward(&mut g, x, prev, h, c)?;
            for term in &mut terms {
                let y = phi_transform(&mut g, &self.phi, &term.path, out.taps[&term.path.id.level])?;
                term.phi.push(y);
                term.psi.push(self.targets.per_clip[clip_idx][&term.path.id].clone());
            }
            preds.push(out.prediction);
            truths.push(self.truth[clip_idx]);
            fwd.push(out);
        }
        let alpha = self.cfg.weights.alpha.clone();
        let loss = graph_loss(&mut g, &preds, &truths, &alpha, &terms)?;
        let mut breakdown = loss.breakdown(&g, &alpha, &terms)?;
        if !mimic_on {
            // Stage 1 logs every enabled path with a zero contribution.
            for p in &self.enabled {
                breakdown.mimic.insert(p.id, 0.0);
                breakdown.beta.insert(p.id, p.beta);
            }
        }
        let grads = g.backward(loss.total)?;
        self.step += 1;
        let finite = breakdown.total.is_finite();
        let aborted = !(finite
            && self.opt.step(self.net.params_mut(), &grads, lr)
            && (self.phi.is_empty() || self.opt.step(&mut self.phi, &grads, lr)));
        if aborted {
            warn!(
                "step {}: non-finite loss or gradient, update skipped",
                self.step
            );
        }
        self.log.push(StepRecord {
            step: self.step,
            stage,
            episode,
            lr,
            loss: breakdown,
            aborted,
        });
        Ok(fwd
            .iter()
            .map(|o| {
                let p = g.value(o.prediction).data();
                (
                    LstmState {
                        h: g.value(o.h).clone(),
                        c: g.value(o.c).clone(),
                    },
                    [p[0] as f64, p[1] as f64, p[2] as f64],
                )
            })
            .collect())
    }

    /// Checkpoint holding the network and any Φ parameters.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let stage = if self.episode == 0 { 0 } else { self.stage_of(self.episode) };
        checkpoint::save(dir, &self.net, &self.phi, stage, self.episode)
    }

    /// Metrics CSV: step, stage, lr, steer, multi_<task>, mimic_<path>, total.
    pub fn write_metrics(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let mut header = vec!["step".to_string(), "stage".into(), "lr".into(), "steer".into()];
        header.extend(TASKS.iter().map(|t| format!("multi_{t}")));
        header.extend(self.enabled.iter().map(|p| format!("mimic_{}", p.id)));
        header.push("total".into());
        let io = |e: csv::Error| Error::io(path, e.into());
        w.write_record(&header).map_err(io)?;
        for r in &self.log {
            let mut row = vec![r.step.to_string(), r.stage.to_string(), format!("{:e}", r.lr), r.loss.steer.to_string()];
            row.extend(r.loss.multi.iter().map(|v| v.to_string()));
            row.extend(
                self.enabled
                    .iter()
                    .map(|p| r.loss.mimic.get(&p.id).copied().unwrap_or(0.0).to_string()),
            );
            row.push(r.loss.total.to_string());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Full two-stage run. With `out`, writes `checkpoints/stage1` at the stage
/// boundary, `checkpoints/final` at the end, and `metrics.csv`.
pub fn train(
    net_cfg: MainNetConfig,
    cfg: TrainConfig,
    data: &Dataset,
    targets: Arc<MimicTargets>,
    out: Option<&Path>,
) -> Result<Trainer> {
    let mut t = Trainer::new(net_cfg, cfg, data, targets)?;
    t.run_stage1(data)?;
    if let Some(dir) = out {
        t.save_checkpoint(dir.join("checkpoints").join("stage1"))?;
    }
    t.run_stage2(data)?;
    if let Some(dir) = out {
        t.save_checkpoint(dir.join("checkpoints").join("final"))?;
        t.write_metrics(dir.join("metrics.csv"))?;
    }
    Ok(t)
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{flow_channels, segmentation_channels, AuxKind, MimicPath, PathId};
use crate::data::container::read_tensor;
use crate::data::Clip;
use crate::error::{Error, Result};
use crate::mainnet::Level;
use crate::params::{fan_in_uniform, ParamStore};
use crate::seed;
use crate::tensor::{Graph, Tensor};

/// Source of auxiliary features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// Precomputed sidecar tensors stored with each clip.
    #[default]
    Fixture,
    /// A small CNN with fixed random weights applied to the last frame.
    FrozenRandom,
    /// Analytic segmentation and flow from the scene generator.
    Oracle,
}

/// Fixed-seed convolutional tower per auxiliary network. Level `low`,
/// `middle`, `high` read after the first, second and third stride-2 conv;
/// a 1×1 head emits twice the path's target channels.
#[derive(Debug, Clone)]
pub struct FrozenRandom {
    weights: ParamStore<f32>,
}

const TOWER: [(usize, usize); 3] = [(3, 8), (8, 8), (8, 16)];

fn level_depth(level: Level) -> usize {
    match level {
        Level::Low => 1,
        Level::Middle => 2,
        Level::High => 3,
    }
}

impl FrozenRandom {
    pub fn new(seed: u64, paths: &[MimicPath]) -> Result<Self> {
        let mut weights = ParamStore::new();
        for kind in AuxKind::ALL {
            let mut rng = seed::rng(seed, seed::tag(kind.name()));
            for (i, &(cin, cout)) in TOWER.iter().enumerate() {
                weights.insert(
                    format!("{}.c{i}.w", kind.name()),
                    fan_in_uniform(&mut rng, &[3, 3, cin, cout], 9 * cin)?,
                )?;
                weights.insert(
                    format!("{}.c{i}.b", kind.name()),
                    fan_in_uniform(&mut rng, &[cout], 9 * cin)?,
                )?;
            }
        }
        for path in paths {
            let cin = TOWER[level_depth(path.id.level) - 1].1;
            let mut rng = seed::rng(seed, seed::tag(&format!("head.{}", path.id)));
            weights.insert(
                Self::head(path.id),
                fan_in_uniform(&mut rng, &[1, 1, cin, 2 * path.target[2]], cin)?,
            )?;
        }
        Ok(Self { weights })
    }

    fn head(id: PathId) -> String {
        format!("head.{id}.w")
    }

    /// Features for every path from one `H×W×3` frame.
    pub fn features(&self, frame: &Tensor<f32>, paths: &[MimicPath]) -> Result<BTreeMap<PathId, Tensor<f32>>> {
        let mut g = Graph::new();
        let x = g.constant(frame.clone());
        let mut out = BTreeMap::new();
        for kind in AuxKind::ALL {
            let wanted: Vec<&MimicPath> = paths.iter().filter(|p| p.id.kind == kind).collect();
            let Some(depth) = wanted.iter().map(|p| level_depth(p.id.level)).max() else {
                continue;
            };
            let mut h = x;
            let mut levels = Vec::new();
            for i in 0..depth {
                let w = g.constant(self.weights.get(&format!("{}.c{i}.w", kind.name()))?.clone());
                let b = g.constant(self.weights.get(&format!("{}.c{i}.b", kind.name()))?.clone());
                let y = g.conv2d(h, w, 2, 1)?;
                let y = g.add_bias(y, b)?;
                h = g.relu(y);
                levels.push(h);
            }
            for p in wanted {
                let head = self.weights.get(&Self::head(p.id)).map_err(|_| {
                    Error::config(format!("frozen-random provider was not built for path {}", p.id))
                })?;
                let k = g.constant(head.clone());
                let y = g.conv2d(levels[level_depth(p.id.level) - 1], k, 1, 0)?;
                let y = g.tanh(y);
                out.insert(p.id, g.value(y).clone());
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub enum Provider {
    Fixture,
    FrozenRandom(FrozenRandom),
    Oracle,
}

impl Provider {
    pub fn new(kind: ProviderKind, seed: u64, paths: &[MimicPath]) -> Result<Self> {
        Ok(match kind {
            ProviderKind::Fixture => Provider::Fixture,
            ProviderKind::FrozenRandom => Provider::FrozenRandom(FrozenRandom::new(seed, paths)?),
            ProviderKind::Oracle => Provider::Oracle,
        })
    }

    pub fn kind(&self) -> ProviderKind {
        match self {
            Provider::Fixture => ProviderKind::Fixture,
            Provider::FrozenRandom(_) => ProviderKind::FrozenRandom,
            Provider::Oracle => ProviderKind::Oracle,
        }
    }

    /// Whether features for `path` can be produced for `clip`.
    pub fn covers(&self, clip: &Clip, path: &MimicPath) -> bool {
        match self {
            Provider::Fixture => {
                clip.aux.contains_key(&path.id)
                    || clip
                        .dir
                        .as_ref()
                        .is_some_and(|d| d.join(path.id.sidecar_name()).is_file())
            }
            Provider::FrozenRandom(_) => true,
            Provider::Oracle => clip.source.is_some(),
        }
    }

    /// Auxiliary features `f_jk` of the clip's last frame for each path.
    pub fn provide(&self, clip: &Clip, paths: &[MimicPath]) -> Result<BTreeMap<PathId, Tensor<f32>>> {
        let out = match self {
            Provider::Fixture => {
                let mut out = BTreeMap::new();
                for p in paths {
                    let t = match (clip.aux.get(&p.id), &clip.dir) {
                        (Some(t), _) => t.clone(),
                        (None, Some(dir)) => read_tensor::<f32>(dir.join(p.id.sidecar_name()))?,
                        (None, None) => {
                            return Err(Error::data(
                                format!("clip {} has no {} fixture", clip.id, p.id.sidecar_name()),
                                0,
                            ))
                        }
                    };
                    out.insert(p.id, t);
                }
                out
            }
            Provider::FrozenRandom(net) => {
                let last = clip.frames.index_axis0(clip.len() - 1)?;
                net.features(&last, paths)?
            }
            Provider::Oracle => {
                let src = clip.source.as_ref().ok_or_else(|| {
                    Error::config(format!("clip {} carries no generator source for the oracle", clip.id))
                })?;
                let traj = src.trajectory()?;
                let (prev, last) = src.last_pair();
                let mut out = BTreeMap::new();
                for p in paths {
                    let t = match p.id.kind {
                        AuxKind::Psp => segmentation_channels(&traj.view(last), p.target)?,
                        AuxKind::Flow => flow_channels(&traj.view(prev), &traj.pose(last), p.target)?,
                    };
                    out.insert(p.id, t);
                }
                out
            }
        };
        for p in paths {
            let f = &out[&p.id];
            if f.ndim() != 3 || f.shape()[2] % p.target[2] != 0 {
                return Err(Error::config(format!(
                    "clip {}: feature for {} has dims {:?}, incompatible with target {:?}",
                    clip.id,
                    p.id,
                    f.shape(),
                    p.target
                )));
            }
        }
        Ok(out)
    }
}

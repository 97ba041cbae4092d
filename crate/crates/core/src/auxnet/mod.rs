//! Auxiliary feature providers and the transformation layers that bring
//! main-network taps (Φ) and auxiliary features (Ψ) to common dims.

mod oracle;
mod provider;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mainnet::Level;
use crate::params::{fan_in_uniform, ParamStore};
use crate::seed;
use crate::tensor::{avg_pool_channels, resample, Graph, ResampleMode, Scalar, Tensor, Var};

pub use oracle::{flow_channels, segmentation_channels};
pub use provider::{FrozenRandom, Provider, ProviderKind};

/// Auxiliary network family: scene segmentation or optical flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    Psp,
    Flow,
}

impl AuxKind {
    pub const ALL: [AuxKind; 2] = [AuxKind::Psp, AuxKind::Flow];

    pub fn name(self) -> &'static str {
        match self {
            AuxKind::Psp => "psp",
            AuxKind::Flow => "flow",
        }
    }

    pub fn letter(self) -> char {
        match self {
            AuxKind::Psp => 'P',
            AuxKind::Flow => 'F',
        }
    }
}

/// One (auxiliary network, level) pairing, written `PH`, `FL`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathId {
    pub kind: AuxKind,
    pub level: Level,
}

impl PathId {
    pub fn new(kind: AuxKind, level: Level) -> Self {
        Self { kind, level }
    }

    /// All six paths in table order: PL, PM, PH, FL, FM, FH.
    pub fn all() -> Vec<PathId> {
        AuxKind::ALL
            .iter()
            .flat_map(|&k| Level::ALL.iter().map(move |&l| PathId::new(k, l)))
            .collect()
    }

    /// File name of the per-clip feature sidecar.
    pub fn sidecar_name(&self) -> String {
        format!("aux_{}_{}", self.kind.name(), self.level.name())
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.letter(), self.level.letter())
    }
}

impl FromStr for PathId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        let (Some(k), Some(l), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(Error::config(format!("bad path name {s:?}")));
        };
        let kind = match k {
            'P' => AuxKind::Psp,
            'F' => AuxKind::Flow,
            _ => return Err(Error::config(format!("bad path name {s:?}: network must be P or F"))),
        };
        let level = match l {
            'L' => Level::Low,
            'M' => Level::Middle,
            'H' => Level::High,
            _ => return Err(Error::config(format!("bad path name {s:?}: level must be L, M or H"))),
        };
        Ok(PathId { kind, level })
    }
}

impl Serialize for PathId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PathId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A mimicking path with its target feature dims `h × w × c` and weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimicPath {
    pub id: PathId,
    pub target: [usize; 3],
    pub beta: f64,
}

impl MimicPath {
    pub fn validate(&self) -> Result<()> {
        if self.target.contains(&0) {
            return Err(Error::config(format!("path {}: target dims must be ≥ 1", self.id)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config(format!("path {}: beta must be ≥ 0", self.id)));
        }
        Ok(())
    }

    /// Name of the Φ 1×1 kernel.
    pub fn phi_param(&self) -> String {
        format!("phi.{}.w", self.id)
    }
}

pub const DEFAULT_BETA: f64 = 0.2;

/// Target dims of the six paths for a named preset. `udacity` and
/// `commaai` carry the feature-map sizes of the original networks; `desk` is scaled to
/// the 64×64 render.
pub fn preset(name: &str) -> Result<Vec<MimicPath>> {
    let dims: [[usize; 3]; 6] = match name {
        "udacity" => [
            [30, 30, 16],
            [30, 30, 16],
            [30, 30, 3],
            [32, 40, 16],
            [8, 10, 32],
            [8, 10, 32],
        ],
        "commaai" => [
            [30, 30, 16],
            [30, 30, 16],
            [30, 30, 3],
            [12, 20, 32],
            [12, 20, 32],
            [3, 5, 64],
        ],
        "desk" => [
            [16, 16, 6],
            [8, 8, 6],
            [8, 8, 3],
            [16, 16, 4],
            [8, 8, 4],
            [4, 4, 4],
        ],
        other => {
            return Err(Error::config(format!(
                "unknown path preset {other:?} (known: udacity, commaai, desk)"
            )))
        }
    };
    Ok(PathId::all()
        .into_iter()
        .zip(dims)
        .map(|(id, target)| MimicPath {
            id,
            target,
            beta: DEFAULT_BETA,
        })
        .collect())
}

/// Ψ: average channel groups down to the target channel count, then
/// bilinear resample. Plain tensor code, so nothing here can be trained.
pub fn psi_transform<T: Scalar>(f: &Tensor<T>, path: &MimicPath) -> Result<Tensor<T>> {
    let [h, w, c] = path.target;
    if f.ndim() != 3 {
        return Err(Error::config(format!(
            "path {}: auxiliary feature must be h×w×c, got {:?}",
            path.id,
            f.shape()
        )));
    }
    let src_c = f.shape()[2];
    if !src_c.is_multiple_of(c) {
        return Err(Error::config(format!(
            "path {}: {src_c} source channels cannot be pooled to {c}",
            path.id
        )));
    }
    let pooled = avg_pool_channels(f, src_c / c)?;
    resample(&pooled, (h, w), ResampleMode::Bilinear)
}

/// Fresh Φ kernel for `path` (`1×1×c_tap×c`), seeded per path.
pub fn init_phi<T: Scalar>(
    params: &mut ParamStore<T>,
    path: &MimicPath,
    tap_channels: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = seed::rng(seed::derive(seed, 0xf1), seed::tag(&path.id.to_string()));
    let c = path.target[2];
    params.insert(
        path.phi_param(),
        fan_in_uniform(&mut rng, &[1, 1, tap_channels, c], tap_channels)?,
    )
}

/// Φ: learned 1×1 convolution to the target channels, then bilinear
/// resample to the target size.
pub fn phi_transform<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamStore<T>,
    path: &MimicPath,
    tap: Var,
) -> Result<Var> {
    let kernel = params.get(&path.phi_param())?;
    let shape = g.shape(tap).to_vec();
    if shape.len() != 3 || kernel.shape()[2] != shape[2] || kernel.shape()[3] != path.target[2] {
        return Err(Error::config(format!(
            "path {}: tap {:?} does not fit Φ kernel {:?}",
            path.id,
            shape,
            kernel.shape()
        )));
    }
    let k = params.bind(g, &path.phi_param())?;
    let y = g.conv2d(tap, k, 1, 0)?;
    g.resample(y, (path.target[0], path.target[1]), ResampleMode::Bilinear)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_names_round_trip() {
        for p in PathId::all() {
            assert_eq!(p.to_string().parse::<PathId>().unwrap(), p);
        }
        assert_eq!(PathId::new(AuxKind::Psp, Level::High).to_string(), "PH");
        assert_eq!(
            PathId::new(AuxKind::Flow, Level::Low).sidecar_name(),
            "aux_flow_low"
        );
        assert!("PX".parse::<PathId>().is_err());
    }

    #[test]
    fn psi_is_identity_at_target_dims() {
        let path = MimicPath {
            id: PathId::new(AuxKind::Psp, Level::Low),
            target: [3, 4, 2],
            beta: 0.2,
        };
        let f = Tensor::<f32>::from_fn(&[3, 4, 2], |i| i as f32 * 0.5).unwrap();
        assert!(psi_transform(&f, &path).unwrap().bit_eq(&f));
    }

    #[test]
    fn psi_rejects_indivisible_channels() {
        let path = MimicPath {
            id: PathId::new(AuxKind::Flow, Level::Middle),
            target: [2, 2, 3],
            beta: 0.2,
        };
        let f = Tensor::<f32>::zeros(&[4, 4, 8]).unwrap();
        assert!(matches!(psi_transform(&f, &path), Err(Error::Config(_))));
    }

    #[test]
    fn zero_phi_kernel_gives_zero_output() {
        let path = MimicPath {
            id: PathId::new(AuxKind::Flow, Level::High),
            target: [5, 7, 2],
            beta: 0.2,
        };
        let mut params = ParamStore::<f64>::new();
        params.insert(path.phi_param(), Tensor::zeros(&[1, 1, 3, 2]).unwrap()).unwrap();
        let mut g = Graph::new();
        let tap = g.constant(Tensor::from_fn(&[2, 3, 3], |i| i as f64 - 4.0).unwrap());
        let y = phi_transform(&mut g, &params, &path, tap).unwrap();
        assert_eq!(g.shape(y), &[5, 7, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_preset_is_config_error() {
        assert!(matches!(preset("kitti"), Err(Error::Config(_))));
        assert_eq!(preset("udacity").unwrap().len(), 6);
    }
}

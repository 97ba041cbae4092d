//! Checkpoint directories: one tensor container per parameter (file name =
//! parameter name) and a `manifest.json` with the config, target
//! statistics, optimizer tag and the parameter listing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MainNet, MainNetConfig, TargetStats};
use crate::data::container::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Scalar;

pub const MANIFEST: &str = "manifest.json";
pub const OPTIMIZER_TAG: &str = "sgd-momentum-0.9";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub config: MainNetConfig,
    pub stats: TargetStats,
    pub optimizer: String,
    /// Training stage that produced the checkpoint (1 or 2); 0 for fresh weights.
    pub stage: u32,
    pub episode: usize,
    pub params: Vec<ParamEntry>,
    /// Transformation-layer parameters trained alongside the network.
    #[serde(default)]
    pub extra: Vec<ParamEntry>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub net: MainNet<T>,
    pub extra: ParamStore<T>,
    pub stage: u32,
    pub episode: usize,
}

fn entries<T: Scalar>(p: &ParamStore<T>) -> Vec<ParamEntry> {
    p.iter()
        .map(|(name, t)| ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name == MANIFEST || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(Error::config(format!("parameter name {name:?} is not a valid file name")));
    }
    Ok(())
}

pub fn save<T: Scalar>(
    dir: impl AsRef<Path>,
    net: &MainNet<T>,
    extra: &ParamStore<T>,
    stage: u32,
    episode: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, t) in net.params().iter().chain(extra.iter()) {
        check_name(name)?;
        write_tensor(dir.join(name), t)?;
    }
    let manifest = CheckpointManifest {
        config: net.config().clone(),
        stats: *net.stats(),
        optimizer: OPTIMIZER_TAG.into(),
        stage,
        episode,
        params: entries(net.params()),
        extra: entries(extra),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST);
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::data(format!("missing checkpoint manifest {}", path.display()), 0)
        } else {
            Error::io(&path, e)
        }
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn load_entries<T: Scalar>(dir: &Path, list: &[ParamEntry]) -> Result<ParamStore<T>> {
    let mut p = ParamStore::new();
    for entry in list {
        check_name(&entry.name)?;
        let t = read_tensor::<T>(dir.join(&entry.name))?;
        if t.shape() != entry.shape {
            return Err(Error::data(
                format!(
                    "{}: shape {:?} disagrees with manifest {:?}",
                    entry.name,
                    t.shape(),
                    entry.shape
                ),
                crate::data::container::HEADER_LEN as u64,
            ));
        }
        p.insert(entry.name.clone(), t)?;
    }
    Ok(p)
}

pub fn load<T: Scalar>(dir: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    if m.optimizer != OPTIMIZER_TAG {
        return Err(Error::config(format!("unsupported optimizer tag {:?}", m.optimizer)));
    }
    let params = load_entries(dir, &m.params)?;
    let extra = load_entries(dir, &m.extra)?;
    Ok(Checkpoint {
        net: MainNet::from_parts(m.config, params, m.stats)?,
        extra,
        stage: m.stage,
        episode: m.episode,
    })
}

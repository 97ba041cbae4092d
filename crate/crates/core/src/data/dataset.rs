//! Dataset directories: one subdirectory per clip holding `frames`
//! (f32 `N×H×W×3`), `states` (f64 `N×3`: angle, speed, torque), optional
//! `aux_<network>_<level>` feature containers and `manifest.json`. The root
//! carries `index.json` listing the clips in order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{read_tensor, write_tensor};
use super::{Clip, ClipSource};
use crate::auxnet::PathId;
use crate::error::{Error, Result};
use crate::mainnet::VehicleState;
use crate::tensor::Tensor;

pub const INDEX: &str = "index.json";
pub const CLIP_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn new(clips: Vec<Clip>) -> Self {
        Self { clips }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Clip indices grouped into runs that share recurrent state, each in
    /// temporal order; runs appear in order of first occurrence.
    pub fn chains(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<(usize, usize)> = Vec::new();
        let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, c) in self.clips.iter().enumerate() {
            let key = c.chain_key();
            groups.entry(key).or_insert_with(|| {
                order.push(key);
                Vec::new()
            });
            groups.get_mut(&key).unwrap().push(i);
        }
        order
            .into_iter()
            .map(|k| {
                let mut v = groups.remove(&k).unwrap();
                v.sort_by_key(|&i| self.clips[i].index);
                v
            })
            .collect()
    }

    /// Prediction targets (last-frame states) in clip order.
    pub fn targets(&self) -> Vec<VehicleState> {
        self.clips.iter().map(|c| *c.target()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipDims {
    pub frames: Vec<usize>,
    pub aux: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub angle: String,
    pub speed: String,
    pub torque: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            angle: "rad".into(),
            speed: "m/s".into(),
            torque: "N·m (synthetic: gain × steering rate)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub clip_id: String,
    pub sequence: usize,
    pub segment: usize,
    pub index: usize,
    pub source: Option<ClipSource>,
    pub dims: ClipDims,
    pub units: Units,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub clips: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::data(format!("missing {}", path.display()), 0)
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| {
        Error::data(format!("{}: {e}", path.display()), 0)
    })
}

fn states_tensor(states: &[VehicleState]) -> Result<Tensor<f64>> {
    Tensor::new(
        vec![states.len(), 3],
        states.iter().flat_map(|s| s.as_array()).collect(),
    )
}

pub fn write_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for clip in &data.clips {
        let cdir = dir.join(&clip.id);
        std::fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
        write_tensor(cdir.join("frames"), &clip.frames)?;
        write_tensor(cdir.join("states"), &states_tensor(&clip.states)?)?;
        let mut aux = BTreeMap::new();
        for (path, t) in &clip.aux {
            write_tensor(cdir.join(path.sidecar_name()), t)?;
            aux.insert(path.sidecar_name(), t.shape().to_vec());
        }
        let manifest = ClipManifest {
            clip_id: clip.id.clone(),
            sequence: clip.sequence,
            segment: clip.segment,
            index: clip.index,
            source: clip.source.clone(),
            dims: ClipDims {
                frames: clip.frames.shape().to_vec(),
                aux,
            },
            units: Units::default(),
        };
        write_json(&cdir.join(CLIP_MANIFEST), &manifest)?;
    }
    let index = DatasetIndex {
        clips: data.clips.iter().map(|c| c.id.clone()).collect(),
    };
    write_json(&dir.join(INDEX), &index)
}

/// Load every clip listed in the index, including any aux sidecars.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let index: DatasetIndex = read_json(&dir.join(INDEX))?;
    let mut clips = Vec::with_capacity(index.clips.len());
    for id in &index.clips {
        let cdir = dir.join(id);
        let m: ClipManifest = read_json(&cdir.join(CLIP_MANIFEST))?;
        let frames = read_tensor::<f32>(cdir.join("frames"))?;
        if frames.shape() != m.dims.frames {
            return Err(Error::data(
                format!("{id}: frames {:?} disagree with manifest {:?}", frames.shape(), m.dims.frames),
                0,
            ));
        }
        let st = read_tensor::<f64>(cdir.join("states"))?;
        if st.shape() != [frames.shape()[0], 3] {
            return Err(Error::data(format!("{id}: states must be N×3, got {:?}", st.shape()), 0));
        }
        let states = st
            .data()
            .chunks_exact(3)
            .map(|r| VehicleState::from_array([r[0], r[1], r[2]]))
            .collect();
        let mut aux = BTreeMap::new();
        for path in PathId::all() {
            let name = path.sidecar_name();
            if m.dims.aux.contains_key(&name) {
                aux.insert(path, read_tensor::<f32>(cdir.join(&name))?);
            }
        }
        clips.push(Clip {
            id: m.clip_id,
            sequence: m.sequence,
            segment: m.segment,
            index: m.index,
            frames,
            states,
            aux,
            source: m.source,
            dir: Some(cdir),
        });
    }
    Ok(Dataset { clips })
}

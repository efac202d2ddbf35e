//! Parameter files: a JSON manifest plus one little-endian `f32` blob file.
//!
//! Each tensor occupies its own contiguous byte range of `weights.bin`,
//! listed with offset, length and an FNV-1a checksum in `manifest.json`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";
pub const NETWORK_FILE: &str = "network.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    pub byte_length: u64,
    /// FNV-1a 64 of the entry's bytes, 16 hex digits.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format_version: u32,
    pub blob: String,
    pub entries: Vec<WeightEntry>,
}

fn fnv1a(bytes: &[u8]) -> String {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    format!("{:016x}", h.finish())
}

/// Writes named tensors to `dir`, creating it if needed.
pub fn save_weights<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>, dir: &Path) -> Result<WeightManifest> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    let mut names = HashSet::new();
    for (name, t) in tensors {
        if !names.insert(name.to_string()) {
            return Err(Error::Weights(format!("duplicate tensor name `{name}`")));
        }
        t.ensure_finite(name)?;
        let start = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(WeightEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            byte_offset: start as u64,
            byte_length: (blob.len() - start) as u64,
            checksum: fnv1a(&blob[start..]),
        });
    }
    let manifest = WeightManifest {
        format_version: FORMAT_VERSION,
        blob: BLOB_FILE.into(),
        entries,
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads every tensor in manifest order, verifying layout and checksums.
pub fn load_weights(dir: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: WeightManifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Weights(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut out = Vec::with_capacity(manifest.entries.len());
    let mut end = 0u64;
    for e in &manifest.entries {
        if e.dtype != "f32" {
            return Err(Error::Weights(format!("tensor `{}` has dtype {}", e.name, e.dtype)));
        }
        let expected = e.shape.iter().product::<usize>() as u64 * 4;
        if e.byte_offset < end || e.byte_length != expected || e.byte_offset + e.byte_length > blob.len() as u64 {
            return Err(Error::Weights(format!(
                "tensor `{}` has an invalid byte range {}+{}",
                e.name, e.byte_offset, e.byte_length
            )));
        }
        end = e.byte_offset + e.byte_length;
        let bytes = &blob[e.byte_offset as usize..end as usize];
        if fnv1a(bytes) != e.checksum {
            return Err(Error::Checksum { name: e.name.clone() });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((e.name.clone(), Tensor::from_vec(&e.shape, data)?));
    }
    Ok(out)
}

/// Saves parameters together with the architecture description.
pub fn save_network(net: &Network<f32>, dir: &Path) -> Result<WeightManifest> {
    let params = net.params();
    let manifest = save_weights(params.iter().map(|(_, p)| (p.name.as_str(), &p.value)), dir)?;
    let path = dir.join(NETWORK_FILE);
    fs::write(&path, net.spec().to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Copies every stored tensor into the matching parameter; all must be present.
pub fn apply_weights(net: &mut Network<f32>, tensors: Vec<(String, Tensor<f32>)>) -> Result<()> {
    let mut by_name: HashMap<String, Tensor<f32>> = tensors.into_iter().collect();
    for (_, p) in net.params_mut() {
        let t = by_name
            .remove(&p.name)
            .ok_or_else(|| Error::Weights(format!("missing tensor `{}`", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Weights(format!(
                "tensor `{}` has shape {:?}, network expects {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    if let Some(extra) = by_name.keys().min() {
        log::warn!("ignoring stored tensor `{extra}` with no matching parameter");
    }
    Ok(())
}

/// Rebuilds a network saved by [`save_network`].
pub fn load_network(dir: &Path) -> Result<Network<f32>> {
    let path = dir.join(NETWORK_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut net = Network::new(NetworkSpec::from_json(&text)?, 0)?;
    apply_weights(&mut net, load_weights(dir)?)?;
    Ok(net)
}

/// External tensor name for each internal parameter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NameMap {
    pub pairs: Vec<(String, String)>,
}

impl NameMap {
    /// Maps `tower.layer.weight` and `layer.weight` alike to `layer.weight`,
    /// so a single-tower file initializes every tower.
    pub fn standard(net: &Network<f32>) -> Self {
        let towers: Vec<String> = net.spec().towers.iter().map(|t| format!("{}.", t.input)).collect();
        let pairs = net
            .params()
            .into_iter()
            .map(|(_, p)| {
                let external = if net.spec().is_branched() {
                    towers
                        .iter()
                        .find_map(|t| p.name.strip_prefix(t.as_str()))
                        .unwrap_or(&p.name)
                        .to_string()
                } else {
                    p.name.clone()
                };
                (external, p.name.clone())
            })
            .collect();
        Self { pairs }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, String> = serde_json::from_str(&text)?;
        let pairs = map.into_iter().map(|(internal, external)| (external, internal)).collect();
        let out = Self { pairs };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let mut targets = HashSet::new();
        for (_, internal) in &self.pairs {
            if !targets.insert(internal) {
                return Err(Error::Weights(format!("`{internal}` is mapped more than once")));
            }
        }
        Ok(())
    }

    fn source_for(&self, internal: &str) -> Option<&str> {
        self.pairs.iter().find(|(_, i)| i == internal).map(|(e, _)| e.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainedReport {
    pub loaded: Vec<String>,
    /// Head parameters left at their fresh initialization.
    pub reinitialized: Vec<String>,
}

/// Widens a `[O, 1, kh, kw]` filter bank to `in_ch` identical input channels.
fn replicate_input_channels(t: &Tensor<f32>, in_ch: usize) -> Result<Tensor<f32>> {
    let (o, _, kh, kw) = t.dims4()?;
    let plane = kh * kw;
    let mut data = Vec::with_capacity(o * in_ch * plane);
    for f in 0..o {
        let src = &t.data()[f * plane..(f + 1) * plane];
        for _ in 0..in_ch {
            data.extend_from_slice(src);
        }
    }
    Tensor::from_vec(&[o, in_ch, kh, kw], data)
}

/// Initializes filter stages from an external file.
///
/// Every filter-stage parameter must be mapped with a compatible shape. Head
/// parameters are copied only when `head_reinit` is off and shapes agree;
/// otherwise they keep the network's fresh initialization.
pub fn load_pretrained(dir: &Path, map: &NameMap, net: &mut Network<f32>, head_reinit: bool) -> Result<PretrainedReport> {
    map.validate()?;
    let source: HashMap<String, Tensor<f32>> = load_weights(dir)?.into_iter().collect();
    let mut report = PretrainedReport::default();
    for (stage, p) in net.params_mut() {
        let head = stage == 0;
        if head && head_reinit {
            report.reinitialized.push(p.name.clone());
            continue;
        }
        let found = map.source_for(&p.name).and_then(|ext| source.get(ext).map(|t| (ext, t)));
        let Some((ext, t)) = found else {
            if head {
                report.reinitialized.push(p.name.clone());
                continue;
            }
            return Err(Error::Weights(format!("no pretrained tensor for `{}`", p.name)));
        };
        let target = p.value.shape().to_vec();
        let value = if t.shape() == target.as_slice() {
            t.clone()
        } else if !head
            && t.shape().len() == 4
            && t.shape()[1] == 1
            && target.len() == 4
            && t.shape()[0] == target[0]
            && t.shape()[2..] == target[2..]
        {
            replicate_input_channels(t, target[1])?
        } else if head {
            log::info!("reinitializing `{}`: source shape {:?} vs {:?}", p.name, t.shape(), target);
            report.reinitialized.push(p.name.clone());
            continue;
        } else {
            return Err(Error::Weights(format!(
                "shape mismatch for `{}`: source `{ext}` is {:?}, expected {:?}",
                p.name,
                t.shape(),
                target
            )));
        };
        p.value = value;
        report.loaded.push(p.name.clone());
    }
    Ok(report)
}

pub fn checkpoint_dir(root: &Path, iteration: usize) -> PathBuf {
    root.join(format!("iter_{iteration:08}"))
}

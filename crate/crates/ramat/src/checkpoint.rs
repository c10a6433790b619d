//! Binary containers: an 8-byte magic, a length-prefixed JSON metadata
//! block carrying the config echo and an array manifest (name, shape, byte
//! offset), then raw little-endian f32 payload in manifest order. Used for
//! both checkpoints ("RAMATCK1") and preprocessed datasets ("RAMATDS1").
//! Save/load roundtrips are bit-identical, including RNG state.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::model::ModelParams;
use crate::pipeline::{FilterStats, Scaler};
use crate::reservoir::ReservoirSpec;
use crate::rng::RngState;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RAMATCK1";
pub const DATASET_MAGIC: &[u8; 8] = b"RAMATDS1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    /// Element count.
    len: u64,
}

fn write_container(
    path: &Path,
    magic: &[u8; 8],
    meta: serde_json::Value,
    arrays: &[(String, Vec<usize>, &[f32])],
) -> Result<()> {
    let mut manifest = Vec::with_capacity(arrays.len());
    let mut offset = 0u64;
    for (name, shape, data) in arrays {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Contract(format!(
                "array '{name}': shape {shape:?} vs {} elements",
                data.len()
            )));
        }
        manifest.push(ManifestEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: data.len() as u64,
        });
        offset += 4 * data.len() as u64;
    }
    let mut meta = meta;
    meta.as_object_mut()
        .ok_or_else(|| Error::Contract("container metadata must be a JSON object".into()))?
        .insert("manifest".into(), serde_json::to_value(&manifest)?);
    let meta_bytes = serde_json::to_vec(&meta)?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(magic)?;
    out.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&meta_bytes)?;
    for (_, _, data) in arrays {
        for v in *data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

type Arrays = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

fn read_container(path: &Path, magic: &[u8; 8]) -> Result<(serde_json::Value, Arrays)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut got_magic = [0u8; 8];
    file.read_exact(&mut got_magic)?;
    if &got_magic != magic {
        return Err(Error::Data(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(&got_magic),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)?;
    let meta_len = u64::from_le_bytes(len_bytes) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    file.read_exact(&mut meta_bytes)?;
    let meta: serde_json::Value = serde_json::from_slice(&meta_bytes)?;
    let manifest: Vec<ManifestEntry> = serde_json::from_value(
        meta.get("manifest")
            .cloned()
            .ok_or_else(|| Error::Data("container metadata lacks a manifest".into()))?,
    )?;

    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;

    // Manifest invariants: contiguous, non-overlapping, exact coverage.
    let mut expect_offset = 0u64;
    for entry in &manifest {
        if entry.offset != expect_offset {
            return Err(Error::Data(format!(
                "manifest entry '{}' at offset {}, expected {expect_offset}",
                entry.name, entry.offset
            )));
        }
        let product: usize = entry.shape.iter().product();
        if product as u64 != entry.len {
            return Err(Error::Data(format!(
                "manifest entry '{}': shape {:?} vs len {}",
                entry.name, entry.shape, entry.len
            )));
        }
        expect_offset += 4 * entry.len;
    }
    if expect_offset != payload.len() as u64 {
        return Err(Error::Data(format!(
            "payload has {} bytes, manifest covers {expect_offset}",
            payload.len()
        )));
    }

    let mut arrays = BTreeMap::new();
    for entry in manifest {
        let start = entry.offset as usize;
        let data: Vec<f32> = payload[start..start + 4 * entry.len as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if arrays.insert(entry.name.clone(), (entry.shape, data)).is_some() {
            return Err(Error::Data(format!(
                "duplicate manifest entry '{}'",
                entry.name
            )));
        }
    }
    Ok((meta, arrays))
}

/// Optimizer moment buffers snapshotted into a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimSnapshot {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

/// Everything needed to resume or serve a model: config echo, reservoir
/// matrices, model parameters, scalers, optional optimizer state, and the
/// training RNG position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub channels: Vec<String>,
    pub scalers: Vec<Scaler>,
    pub spec: ReservoirSpec,
    pub params: ModelParams,
    pub optimizer: Option<OptimSnapshot>,
    pub rng: RngState,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    version: u32,
    config: RunConfig,
    channels: Vec<String>,
    scalers: Vec<Scaler>,
    rng: RngState,
    reservoir_input_dim: usize,
    reservoir_seed: u64,
    optimizer_step: Option<u64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "checkpoint".into(),
            version: 1,
            config: self.config.clone(),
            channels: self.channels.clone(),
            scalers: self.scalers.clone(),
            rng: self.rng.clone(),
            reservoir_input_dim: self.spec.input_dim,
            reservoir_seed: self.spec.seed,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let n = self.spec.reservoir_size;
        let mut arrays: Vec<(String, Vec<usize>, &[f32])> = vec![
            (
                "reservoir.w_in".into(),
                vec![n, self.spec.input_dim],
                &self.spec.w_in,
            ),
            ("reservoir.w_res".into(), vec![n, n], &self.spec.w_res),
        ];
        for (name, _, tensor) in self.params.iter() {
            arrays.push((
                format!("param.{name}"),
                tensor.shape().to_vec(),
                tensor.data(),
            ));
        }
        if let Some(opt) = &self.optimizer {
            for (name, buf) in &opt.m {
                arrays.push((format!("optim.m.{name}"), vec![buf.len()], buf));
            }
            for (name, buf) in &opt.v {
                arrays.push((format!("optim.v.{name}"), vec![buf.len()], buf));
            }
        }
        write_container(path, CHECKPOINT_MAGIC, serde_json::to_value(&meta)?, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta_value, mut arrays) = read_container(path, CHECKPOINT_MAGIC)?;
        let mut meta_obj = meta_value;
        meta_obj
            .as_object_mut()
            .expect("container metadata is an object")
            .remove("manifest");
        let meta: CheckpointMeta = serde_json::from_value(meta_obj)?;
        meta.config.validate()?;

        let n = meta.config.reservoir.reservoir_size;
        let (win_shape, w_in) = arrays
            .remove("reservoir.w_in")
            .ok_or_else(|| Error::Data("checkpoint lacks reservoir.w_in".into()))?;
        let (wres_shape, w_res) = arrays
            .remove("reservoir.w_res")
            .ok_or_else(|| Error::Data("checkpoint lacks reservoir.w_res".into()))?;
        if win_shape != [n, meta.reservoir_input_dim] || wres_shape != [n, n] {
            return Err(Error::Config(format!(
                "reservoir matrices {win_shape:?}/{wres_shape:?} do not match config ({n})"
            )));
        }
        let spec = ReservoirSpec {
            input_dim: meta.reservoir_input_dim,
            reservoir_size: n,
            w_in,
            w_res,
            spectral_radius: meta.config.reservoir.spectral_radius,
            leak_rate: meta.config.reservoir.leak_rate,
            input_scale: meta.config.reservoir.input_scale,
            seed: meta.reservoir_seed,
        };

        let mut params = ModelParams::init(&meta.config.model, n, meta.config.seed)?;
        for name in params.names() {
            let key = format!("param.{name}");
            let (shape, data) = arrays
                .remove(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter '{name}'")))?;
            let tensor = params.get_mut(&name)?;
            if shape != tensor.shape() {
                return Err(Error::Config(format!(
                    "parameter '{name}': checkpoint shape {shape:?}, config implies {:?}",
                    tensor.shape()
                )));
            }
            tensor.data_mut().copy_from_slice(&data);
        }

        let optimizer = match meta.optimizer_step {
            Some(step) => {
                let mut m = BTreeMap::new();
                let mut v = BTreeMap::new();
                let names: Vec<String> = arrays.keys().cloned().collect();
                for key in names {
                    let (_, data) = arrays.remove(&key).unwrap();
                    if let Some(name) = key.strip_prefix("optim.m.") {
                        m.insert(name.to_string(), data);
                    } else if let Some(name) = key.strip_prefix("optim.v.") {
                        v.insert(name.to_string(), data);
                    } else {
                        return Err(Error::Data(format!("unexpected array '{key}'")));
                    }
                }
                Some(OptimSnapshot { step, m, v })
            }
            None => None,
        };
        if let Some(stray) = arrays.keys().next() {
            return Err(Error::Data(format!("unexpected array '{stray}'")));
        }

        Ok(Checkpoint {
            config: meta.config,
            channels: meta.channels,
            scalers: meta.scalers,
            spec,
            params,
            optimizer,
            rng: meta.rng,
        })
    }
}

/// Preprocessing bookkeeping persisted with a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub files: usize,
    pub rows_in: usize,
    pub imputed_delay: usize,
    pub dropped_missing: usize,
    pub dropped_iqr: usize,
    pub rows_out: usize,
    pub segments: usize,
    pub m: usize,
    pub k: usize,
}

impl PreprocessSummary {
    pub fn absorb(&mut self, stats: &FilterStats) {
        self.files += 1;
        self.rows_in += stats.rows_in;
        self.imputed_delay += stats.imputed_delay;
        self.dropped_missing += stats.dropped_missing;
        self.dropped_iqr += stats.dropped_iqr;
        self.rows_out += stats.rows_out;
    }
}

/// Preprocessed dataset container: raw-unit supervised pairs, contiguous
/// raw-unit segments for pretraining, and the scalers fitted on this data.
/// Consumers standardize at load time (training with these scalers,
/// eval/predict with the checkpoint's).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub channels: Vec<String>,
    pub t_step: i64,
    pub n_seq: usize,
    pub scalers: Vec<Scaler>,
    pub summary: PreprocessSummary,
    pub segments: Vec<Vec<f32>>,
    pub x: Vec<f32>,
    pub y: Vec<f32>,
    pub m: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    kind: String,
    version: u32,
    channels: Vec<String>,
    t_step: i64,
    n_seq: usize,
    scalers: Vec<Scaler>,
    summary: PreprocessSummary,
    num_segments: usize,
    m: usize,
}

impl DatasetFile {
    pub fn k(&self) -> usize {
        self.channels.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = DatasetMeta {
            kind: "dataset".into(),
            version: 1,
            channels: self.channels.clone(),
            t_step: self.t_step,
            n_seq: self.n_seq,
            scalers: self.scalers.clone(),
            summary: self.summary.clone(),
            num_segments: self.segments.len(),
            m: self.m,
        };
        let k = self.k();
        let mut arrays: Vec<(String, Vec<usize>, &[f32])> = vec![
            ("x".into(), vec![self.m, self.n_seq, k], &self.x),
            ("y".into(), vec![self.m, k], &self.y),
        ];
        for (i, seg) in self.segments.iter().enumerate() {
            arrays.push((format!("segment{i}"), vec![seg.len() / k, k], seg));
        }
        write_container(path, DATASET_MAGIC, serde_json::to_value(&meta)?, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta_value, mut arrays) = read_container(path, DATASET_MAGIC)?;
        let mut meta_obj = meta_value;
        meta_obj
            .as_object_mut()
            .expect("container metadata is an object")
            .remove("manifest");
        let meta: DatasetMeta = serde_json::from_value(meta_obj)?;
        let k = meta.channels.len();
        let (x_shape, x) = arrays
            .remove("x")
            .ok_or_else(|| Error::Data("dataset lacks x".into()))?;
        let (y_shape, y) = arrays
            .remove("y")
            .ok_or_else(|| Error::Data("dataset lacks y".into()))?;
        if x_shape != [meta.m, meta.n_seq, k] || y_shape != [meta.m, k] {
            return Err(Error::Data(format!(
                "dataset tensor shapes x{x_shape:?} y{y_shape:?} do not match metadata"
            )));
        }
        let mut segments = Vec::with_capacity(meta.num_segments);
        for i in 0..meta.num_segments {
            let (shape, data) = arrays
                .remove(&format!("segment{i}"))
                .ok_or_else(|| Error::Data(format!("dataset lacks segment{i}")))?;
            if shape.len() != 2 || shape[1] != k {
                return Err(Error::Data(format!("segment{i} has shape {shape:?}")));
            }
            segments.push(data);
        }
        if let Some(stray) = arrays.keys().next() {
            return Err(Error::Data(format!("unexpected array '{stray}'")));
        }
        Ok(DatasetFile {
            channels: meta.channels,
            t_step: meta.t_step,
            n_seq: meta.n_seq,
            scalers: meta.scalers,
            summary: meta.summary,
            segments,
            x,
            y,
            m: meta.m,
        })
    }

    /// The supervised pairs as a [`crate::pipeline::SequenceDataset`]
    /// (raw units).
    pub fn sequence_dataset(&self) -> crate::pipeline::SequenceDataset {
        crate::pipeline::SequenceDataset {
            n_seq: self.n_seq,
            channels: self.channels.clone(),
            x: self.x.clone(),
            y: self.y.clone(),
            m: self.m,
        }
    }
}

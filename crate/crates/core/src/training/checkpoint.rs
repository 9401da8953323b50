//! Binary checkpoint files.
//!
//! ```text
//! AMVDSN01                 8 bytes of magic, the last two are the version
//! header length            u64, little endian
//! header                   UTF-8 JSON: version, kind, configs, epoch and a
//!                          list of tensors with name, rows, cols and byte
//!                          offset into the blob
//! blob                     little-endian f64 values, tensors in header order
//! ```

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, Pretrained, PretrainedView, TrainConfig};
use crate::error::{CheckpointError, Result};
use crate::model::{LossTerms, ModelConfig, ModelParams};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AMVDSN01";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC_STEM: &[u8] = b"AMVDSN";
const HISTORY: &str = "history";
const KIND_MODEL: &str = "model";
const KIND_PRETRAIN: &str = "pretrain";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    kind: String,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: usize,
    tensors: Vec<TensorEntry>,
    blob_len: u64,
}

struct Decoded {
    header: Header,
    tensors: Vec<(String, Matrix)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn encode(header_base: Header, tensors: &[(String, &Matrix)]) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, m) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            rows: m.rows(),
            cols: m.cols(),
            offset,
        });
        offset += 8 * m.len() as u64;
    }
    let header = Header {
        tensors: entries,
        blob_len: offset,
        ..header_base
    };
    let text = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + text.len() + offset as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    for (_, m) in tensors {
        for x in m.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes next to the target and renames, so a failed write never leaves a
/// partial file under the final name.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn decode(bytes: &[u8]) -> Result<Decoded, CheckpointError> {
    let magic_len = CHECKPOINT_MAGIC.len();
    let stem = &bytes[..bytes.len().min(MAGIC_STEM.len())];
    if stem != &MAGIC_STEM[..stem.len()] {
        return Err(CheckpointError::BadMagic {
            found: bytes[..bytes.len().min(magic_len)].to_vec(),
        });
    }
    if bytes.len() < magic_len {
        return Err(CheckpointError::Truncated(format!(
            "{} bytes, shorter than the magic",
            bytes.len()
        )));
    }
    if &bytes[..magic_len] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Version {
            found: String::from_utf8_lossy(&bytes[MAGIC_STEM.len()..magic_len]).into_owned(),
            expected: String::from_utf8_lossy(&CHECKPOINT_MAGIC[MAGIC_STEM.len()..]).into_owned(),
        });
    }
    if bytes.len() < magic_len + 8 {
        return Err(CheckpointError::Truncated("header length missing".into()));
    }
    let header_len = u64::from_le_bytes(bytes[magic_len..magic_len + 8].try_into().expect("8 bytes"));
    let header_start = magic_len + 8;
    let header_end = (header_start as u64)
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| {
            CheckpointError::Truncated(format!(
                "header declares {header_len} bytes, only {} remain",
                bytes.len() - header_start
            ))
        })? as usize;
    let header: Header =
        serde_json::from_slice(&bytes[header_start..header_end]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: header.version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }

    let mut expected_offset = 0u64;
    for t in &header.tensors {
        if t.offset != expected_offset {
            return Err(CheckpointError::Shape(format!(
                "tensor {} starts at byte {}, expected {expected_offset}",
                t.name, t.offset
            )));
        }
        let size = (t.rows as u64)
            .checked_mul(t.cols as u64)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| CheckpointError::Shape(format!("tensor {} is too large", t.name)))?;
        expected_offset += size;
    }
    if expected_offset != header.blob_len {
        return Err(CheckpointError::Shape(format!(
            "tensor shapes need {expected_offset} bytes, the header declares a {}-byte blob",
            header.blob_len
        )));
    }
    let blob = &bytes[header_end..];
    if (blob.len() as u64) < header.blob_len {
        return Err(CheckpointError::Truncated(format!(
            "blob has {} of {} bytes",
            blob.len(),
            header.blob_len
        )));
    }
    if blob.len() as u64 > header.blob_len {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after the blob",
            blob.len() as u64 - header.blob_len
        )));
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let start = t.offset as usize;
        let data: Vec<f64> = blob[start..start + 8 * t.rows * t.cols]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let m = Matrix::from_vec(t.rows, t.cols, data)
            .map_err(|e| CheckpointError::Shape(format!("tensor {}: {e}", t.name)))?;
        tensors.push((t.name.clone(), m));
    }
    Ok(Decoded { header, tensors })
}

fn read(path: &Path) -> Result<Decoded> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(decode(&bytes)?)
}

fn expect_kind(header: &Header, kind: &str) -> Result<(), CheckpointError> {
    if header.kind != kind {
        return Err(CheckpointError::Header(format!(
            "expected a {kind} checkpoint, found {}",
            header.kind
        )));
    }
    Ok(())
}

fn history_matrix(history: &[LossTerms]) -> Matrix {
    let data = history
        .iter()
        .flat_map(|t| [t.total, t.selfexpr, t.recon, t.reg_c, t.reg_w])
        .collect();
    Matrix::from_vec(history.len(), 5, data).expect("finite history")
}

fn header_base(kind: &str, model_config: &ModelConfig, train_config: &TrainConfig, epoch: usize) -> Header {
    Header {
        version: CHECKPOINT_VERSION,
        kind: kind.into(),
        model_config: model_config.clone(),
        train_config: train_config.clone(),
        epoch,
        tensors: Vec::new(),
        blob_len: 0,
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let history = history_matrix(&ckpt.history);
    let mut tensors: Vec<(String, &Matrix)> = ckpt
        .params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), &t.value))
        .collect();
    tensors.push((HISTORY.into(), &history));
    let bytes = encode(
        header_base(KIND_MODEL, &ckpt.model_config, &ckpt.train_config, ckpt.epoch),
        &tensors,
    )?;
    write_atomic(path.as_ref(), &bytes)
}

fn take(tensors: &mut Vec<(String, Matrix)>, name: &str, shape: (usize, usize)) -> Result<Matrix, CheckpointError> {
    let pos = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| CheckpointError::Shape(format!("tensor {name} is missing")))?;
    let (_, m) = tensors.remove(pos);
    if m.shape() != shape {
        return Err(CheckpointError::Shape(format!(
            "tensor {name} is {}x{}, the config implies {}x{}",
            m.rows(),
            m.cols(),
            shape.0,
            shape.1
        )));
    }
    Ok(m)
}

fn no_leftovers(tensors: &[(String, Matrix)]) -> Result<(), CheckpointError> {
    match tensors.first() {
        Some((name, _)) => Err(CheckpointError::Shape(format!("unexpected tensor {name}"))),
        None => Ok(()),
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let Decoded { header, mut tensors } = read(path.as_ref())?;
    expect_kind(&header, KIND_MODEL)?;
    header
        .model_config
        .validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let n = tensors
        .iter()
        .find(|(name, _)| name == "coefficients")
        .map(|(_, m)| m.rows())
        .ok_or_else(|| CheckpointError::Shape("tensor coefficients is missing".into()))?;
    let mut params = ModelParams::zeros(&header.model_config, n).map_err(|e| CheckpointError::Shape(e.to_string()))?;
    for t in params.tensors_mut() {
        t.value = take(&mut tensors, &t.name, t.value.shape())?;
    }
    let rows = tensors
        .iter()
        .find(|(name, _)| name == HISTORY)
        .map_or(0, |(_, m)| m.rows());
    let hist = take(&mut tensors, HISTORY, (rows, 5))?;
    no_leftovers(&tensors)?;
    let history = (0..hist.rows())
        .map(|r| {
            let row = hist.row(r);
            LossTerms {
                total: row[0],
                selfexpr: row[1],
                recon: row[2],
                reg_c: row[3],
                reg_w: row[4],
            }
        })
        .collect();
    Ok(Checkpoint {
        model_config: header.model_config,
        train_config: header.train_config,
        params,
        epoch: header.epoch,
        history,
    })
}

pub fn save_pretrained(pre: &Pretrained, path: impl AsRef<Path>) -> Result<()> {
    let histories: Vec<Matrix> = pre
        .views
        .iter()
        .map(|v| Matrix::from_vec(1, v.history.len(), v.history.clone()).expect("finite history"))
        .collect();
    let mut tensors: Vec<(String, &Matrix)> = Vec::new();
    for (v, view) in pre.views.iter().enumerate() {
        for (l, w) in view.encoder.iter().enumerate() {
            tensors.push((format!("view{v}.encoder.{l}"), w));
        }
        for (l, w) in view.decoder.iter().enumerate() {
            tensors.push((format!("view{v}.decoder.{l}"), w));
        }
        tensors.push((format!("view{v}.{HISTORY}"), &histories[v]));
    }
    let epochs = pre.views.iter().map(|v| v.history.len()).max().unwrap_or(0);
    let bytes = encode(
        header_base(KIND_PRETRAIN, &pre.model_config, &pre.train_config, epochs),
        &tensors,
    )?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_pretrained(path: impl AsRef<Path>) -> Result<Pretrained> {
    let Decoded { header, mut tensors } = read(path.as_ref())?;
    expect_kind(&header, KIND_PRETRAIN)?;
    let shapes = ModelParams::zeros(&header.model_config, 1).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut views = Vec::with_capacity(shapes.num_views());
    for v in 0..shapes.num_views() {
        let encoder = shapes
            .encoder(v)
            .iter()
            .enumerate()
            .map(|(l, m)| take(&mut tensors, &format!("view{v}.encoder.{l}"), m.shape()))
            .collect::<Result<Vec<_>, _>>()?;
        let decoder = shapes
            .decoder(v)
            .iter()
            .enumerate()
            .map(|(l, m)| take(&mut tensors, &format!("view{v}.decoder.{l}"), m.shape()))
            .collect::<Result<Vec<_>, _>>()?;
        let name = format!("view{v}.{HISTORY}");
        let len = tensors.iter().find(|(n, _)| *n == name).map_or(0, |(_, m)| m.cols());
        let history = take(&mut tensors, &name, (1, len))?.into_vec();
        let best_loss = history.iter().copied().fold(f64::INFINITY, f64::min);
        views.push(PretrainedView {
            encoder,
            decoder,
            history,
            best_loss,
        });
    }
    no_leftovers(&tensors)?;
    Ok(Pretrained {
        model_config: header.model_config,
        train_config: header.train_config,
        views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let a = Matrix::from_rows(&[vec![1.0, -2.5], vec![0.1, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![7.0, 8.0, 9.0]]).unwrap();
        let cfg = ModelConfig {
            view_dims: vec![2],
            hidden_dim: 2,
            encoder_depth: 1,
            lambda1: 0.1,
            lambda2: 0.2,
            lambda3: 0.3,
            weight_reg: Default::default(),
            use_shortcut: true,
            use_consistent_layer: true,
            seed: 0,
        };
        encode(
            header_base("model", &cfg, &TrainConfig::default(), 3),
            &[("a".into(), &a), ("b".into(), &b)],
        )
        .unwrap()
    }

    #[test]
    fn decode_round_trip() {
        let d = decode(&sample()).unwrap();
        assert_eq!(d.tensors[1].1.data(), &[7.0, 8.0, 9.0]);
        assert_eq!(d.header.epoch, 3);
    }

    #[test]
    fn truncation_detected_at_every_length() {
        let bytes = sample();
        for len in 0..bytes.len() {
            match decode(&bytes[..len]) {
                Err(CheckpointError::Truncated(_)) => {}
                Err(CheckpointError::Header(_)) if len > 16 => {}
                other => panic!("length {len}: {:?}", other.map(|_| ())),
            }
        }
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated(_))
        ));
    }

    #[test]
    fn magic_and_version() {
        let mut bytes = sample();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(CheckpointError::BadMagic { .. })));
        let mut bytes = sample();
        bytes[7] = b'2';
        assert!(matches!(decode(&bytes), Err(CheckpointError::Version { .. })));
    }
}

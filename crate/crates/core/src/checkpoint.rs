//! Checkpoint file format.
//!
//! ```text
//! "EVDL" | u32 format_version | u64 header_len | header (canonical JSON)
//!        | f64 payload (little endian) | u32 CRC32 of the payload
//! ```
//!
//! The header lists every tensor with its shape and byte offset into the
//! payload. Keys are sorted so identical models produce identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{Head, ModelCheckpoint, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, RiskMatrix};
use crate::network::{AdamState, Dense, Mlp, NetworkSpec};

pub const MAGIC: &[u8; 4] = b"EVDL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    head: Head,
    epoch_t: u64,
    loss_config: LossConfig,
    risk_matrix: RiskMatrix,
    feature_schema_id: String,
    train_dropout: f64,
    adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

fn push_layers(prefix: &str, layers: &[Dense], tensors: &mut Vec<TensorEntry>, payload: &mut Vec<f64>) {
    for (k, layer) in layers.iter().enumerate() {
        for (part, values, shape) in [
            ("weights", &layer.weights, vec![layer.fan_out, layer.fan_in]),
            ("bias", &layer.bias, vec![layer.fan_out]),
        ] {
            tensors.push(TensorEntry {
                name: format!("{prefix}layer{k}.{part}"),
                shape,
                offset: payload.len() * 8,
                len: values.len(),
            });
            payload.extend_from_slice(values);
        }
    }
}

/// Encodes a checkpoint into its file representation.
pub fn encode_checkpoint(model: &ModelCheckpoint) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::with_capacity(model.network().parameter_count() * 3);
    push_layers("", model.network().layers(), &mut tensors, &mut payload);
    if let Some(adam) = &model.optimizer {
        push_layers("adam.m.", &adam.first_moment, &mut tensors, &mut payload);
        push_layers("adam.v.", &adam.second_moment, &mut tensors, &mut payload);
    }
    let header = Header {
        spec: model.spec().clone(),
        head: model.head,
        epoch_t: model.epoch_t,
        loss_config: model.loss_config,
        risk_matrix: model.risk_matrix,
        feature_schema_id: model.feature_schema_id.clone(),
        train_dropout: model.train_dropout,
        adam_step: model.optimizer.as_ref().map(|a| a.step),
        tensors,
    };
    // Value maps are ordered, which sorts the keys
    let value = serde_json::to_value(&header).map_err(|e| Error::format(e.to_string()))?;
    let header_bytes = serde_json::to_vec(&value).map_err(|e| Error::format(e.to_string()))?;

    let mut payload_bytes = Vec::with_capacity(payload.len() * 8);
    for v in &payload {
        payload_bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(4 + 4 + 8 + header_bytes.len() + payload_bytes.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&model.format_version.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload_bytes);
    out.extend_from_slice(&crc32fast::hash(&payload_bytes).to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(format!("checkpoint truncated while reading {what}"))),
        }
    }
}

fn read_layers(prefix: &str, spec: &NetworkSpec, header: &Header, payload: &[u8]) -> Result<Vec<Dense>> {
    let find = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let entry = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(format!("missing tensor {name}")))?;
        let expected: usize = shape.iter().product();
        if entry.shape != shape || entry.len != expected {
            return Err(Error::format(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        let end = entry.offset.checked_add(entry.len * 8).filter(|&e| e <= payload.len());
        let end = end.ok_or_else(|| Error::format(format!("tensor {name} extends past the payload")))?;
        if entry.offset % 8 != 0 {
            return Err(Error::format(format!("tensor {name} is misaligned")));
        }
        Ok(payload[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    spec.layer_shapes()
        .into_iter()
        .enumerate()
        .map(|(k, (fan_in, fan_out))| {
            Ok(Dense {
                fan_in,
                fan_out,
                weights: find(&format!("{prefix}layer{k}.weights"), &[fan_out, fan_in])?,
                bias: find(&format!("{prefix}layer{k}.bias"), &[fan_out])?,
            })
        })
        .collect()
}

/// Decodes a checkpoint, validating version, shapes, length and checksum.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint format_version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(cur.take(8, "header length")?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len).map_err(|_| Error::format("header length overflows"))?;
    let header: Header = serde_json::from_slice(cur.take(header_len, "header")?)
        .map_err(|e| Error::format(format!("bad checkpoint header: {e}")))?;
    header.spec.validate().map_err(|e| Error::format(e.to_string()))?;

    let remaining = bytes.len() - cur.pos;
    if remaining < 4 {
        return Err(Error::format("checkpoint truncated before checksum"));
    }
    let payload = cur.take(remaining - 4, "payload")?;
    let stored_crc = u32::from_le_bytes(cur.take(4, "checksum")?.try_into().expect("4 bytes"));
    let declared: usize = header.tensors.iter().map(|t| t.len * 8).sum();
    if declared != payload.len() {
        return Err(Error::format(format!(
            "payload holds {} bytes, header declares {declared}",
            payload.len()
        )));
    }
    if crc32fast::hash(payload) != stored_crc {
        return Err(Error::format("checkpoint payload checksum mismatch"));
    }

    let layers = read_layers("", &header.spec, &header, payload)?;
    let network = Mlp::from_layers(header.spec.clone(), layers)?;
    let optimizer = match header.adam_step {
        Some(step) => Some(AdamState {
            step,
            first_moment: read_layers("adam.m.", &header.spec, &header, payload)?,
            second_moment: read_layers("adam.v.", &header.spec, &header, payload)?,
        }),
        None => None,
    };
    if !(0.0..1.0).contains(&header.train_dropout) {
        return Err(Error::format("train_dropout outside [0, 1)"));
    }
    let mut model = ModelCheckpoint::new(network, header.feature_schema_id)
        .with_head(header.head)
        .with_loss_config(header.loss_config)
        .with_risk_matrix(header.risk_matrix);
    model.optimizer = optimizer;
    model.epoch_t = header.epoch_t;
    model.train_dropout = header.train_dropout;
    Ok(model)
}

/// Writes the checkpoint through a sibling temporary file and a rename, so a
/// crash never leaves a half-written file at `path`.
pub fn save_checkpoint(model: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::RngSeed;

    fn model() -> ModelCheckpoint {
        let net = Mlp::init(NetworkSpec::new(3, vec![4, 2]).unwrap(), RngSeed(1)).unwrap();
        let mut m = ModelCheckpoint::new(net, "dense-f64-3").with_risk_matrix(RiskMatrix::sensitive());
        let mut adam = AdamState::new(m.network());
        adam.step = 7;
        adam.first_moment[0].weights[0] = 0.25;
        m.optimizer = Some(adam);
        m.epoch_t = 12;
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = encode_checkpoint(&m).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), m);
        assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn rejects_unknown_version() {
        let mut m = model();
        m.format_version = 999;
        let err = decode_checkpoint(&encode_checkpoint(&m).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Format(ref s) if s.contains("999")), "{err}");
    }

    #[test]
    fn rejects_truncation_and_corruption() {
        let bytes = encode_checkpoint(&model()).unwrap();
        for cut in [0, 3, 10, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 10] ^= 0x40;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Format(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}

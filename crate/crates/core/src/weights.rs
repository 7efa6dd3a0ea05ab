//! Versioned weight container.
//!
//! ```text
//! fog-pipeline-weights
//! version=1
//! channels=AccV
//! ...more key=value lines...
//! tensors=N
//! <empty line>
//! N x { u32 name_len, name, u32 rank, rank x u32 dim, f32 values }
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Integers and floats are little-endian. Loading verifies the checksum,
//! then the version, then every tensor name and shape against the network
//! rebuilt from the stored configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use fog_nn::{NamedTensor, ParamSet};
use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{format_channel_list, parse_channel_list};
use crate::model::{build_graph, ModelConfig, ModelMetadata, TrainedModel};

pub const FORMAT_ID: &str = "fog-pipeline-weights";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("checksum does not match the container contents")]
    ChecksumFailure,
    #[error("container version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },
    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("malformed container: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> WeightsError {
    WeightsError::Malformed(msg.into())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn save_weights(m: &TrainedModel) -> Vec<u8> {
    let c = &m.config;
    let md = &m.metadata;
    let mut header = format!("{FORMAT_ID}\nversion={FORMAT_VERSION}\n");
    let _ = write!(
        header,
        "channels={}\nseed={}\nepochs={}\nbatch_size={}\nlearning_rate={}\nl2_lambda={}\n",
        format_channel_list(&c.channels),
        c.seed,
        c.epochs,
        c.batch_size,
        c.learning_rate,
        c.l2_lambda
    );
    let _ = write!(
        header,
        "epochs_trained={}\nval_accuracy={}\nval_f1={}\ntest_f1={}\ntensors={}\n\n",
        md.epochs_trained,
        opt(md.val_accuracy),
        opt(md.val_f1),
        opt(md.test_f1),
        m.params.len()
    );
    let mut out = header.into_bytes();
    for t in &m.params {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.values.ndim() as u32).to_le_bytes());
        for &d in t.values.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    seal(out)
}

fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    body
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| malformed("unexpected end of tensor data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

fn parse_header(text: &str) -> Result<BTreeMap<&str, &str>, WeightsError> {
    let mut lines = text.lines();
    if lines.next() != Some(FORMAT_ID) {
        return Err(malformed("missing format id"));
    }
    let mut map = BTreeMap::new();
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| malformed(format!("bad header line `{line}`")))?;
        map.insert(k, v);
    }
    Ok(map)
}

fn field<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T, WeightsError> {
    map.get(key)
        .ok_or_else(|| malformed(format!("header lacks `{key}`")))?
        .parse()
        .map_err(|_| malformed(format!("bad value for `{key}`")))
}

fn opt_field(map: &BTreeMap<&str, &str>, key: &str) -> Result<Option<f64>, WeightsError> {
    match map.get(key) {
        Some(&"NA") => Ok(None),
        _ => field(map, key).map(Some),
    }
}

pub fn load_weights(bytes: &[u8]) -> Result<TrainedModel, WeightsError> {
    if bytes.len() < CHECKSUM_LEN {
        return Err(WeightsError::ChecksumFailure);
    }
    let (body, digest) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(WeightsError::ChecksumFailure);
    }
    let split = body
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| malformed("header is not terminated"))?;
    let text = std::str::from_utf8(&body[..split]).map_err(|_| malformed("header is not UTF-8"))?;
    let map = parse_header(text)?;
    let version = map.get("version").copied().unwrap_or("");
    if version != FORMAT_VERSION.to_string() {
        return Err(WeightsError::VersionMismatch {
            found: version.to_string(),
            expected: FORMAT_VERSION,
        });
    }

    let channels = parse_channel_list(map.get("channels").copied().unwrap_or(""))
        .map_err(|e| malformed(e.to_string()))?;
    let config = ModelConfig {
        channels,
        seed: field(&map, "seed")?,
        epochs: field(&map, "epochs")?,
        batch_size: field(&map, "batch_size")?,
        learning_rate: field(&map, "learning_rate")?,
        l2_lambda: field(&map, "l2_lambda")?,
    };
    let metadata = ModelMetadata {
        epochs_trained: field(&map, "epochs_trained")?,
        val_accuracy: opt_field(&map, "val_accuracy")?,
        val_f1: opt_field(&map, "val_f1")?,
        test_f1: opt_field(&map, "test_f1")?,
    };
    let count: usize = field(&map, "tensors")?;
    let expected = build_graph::<f32>(&config)
        .map_err(|e| malformed(e.to_string()))?
        .param_set();
    if count != expected.len() {
        return Err(WeightsError::ShapeMismatch {
            name: "<tensor count>".into(),
            expected: vec![expected.len()],
            found: vec![count],
        });
    }

    let mut cur = Cursor {
        bytes: body,
        pos: split + 2,
    };
    let mut tensors = Vec::with_capacity(count);
    for want in expected.iter() {
        let name_len = cur.u32()?;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| malformed("tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u32()?;
        if rank > 8 {
            return Err(malformed(format!("tensor `{name}` has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| cur.u32())
            .collect::<Result<Vec<_>, _>>()?;
        if name != want.name || dims != want.values.shape() {
            return Err(WeightsError::ShapeMismatch {
                name,
                expected: want.values.shape().to_vec(),
                found: dims,
            });
        }
        let n: usize = dims.iter().product();
        let raw = cur.take(4 * n)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        tensors.push(NamedTensor {
            name,
            values: ArrayD::from_shape_vec(IxDyn(&dims), values).expect("length matches dims"),
        });
    }
    if cur.pos != body.len() {
        return Err(malformed("trailing bytes after the last tensor"));
    }
    Ok(TrainedModel {
        config,
        params: ParamSet::new(tensors),
        metadata,
    })
}

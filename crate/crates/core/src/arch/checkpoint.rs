//! Single-file weight archive: a magic line, a little-endian `u64` header
//! length, a JSON header holding the spec and tensor table, then raw
//! little-endian `f32` weights.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use volsr_nn::{Shape, Tensor};

use super::{Network, NetworkSpec};
use crate::error::io_err;
use crate::{Error, Result};

const MAGIC: &[u8] = b"VOLSR-CHECKPOINT/1\n";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: NetworkSpec,
    tensors: Vec<Entry>,
    #[serde(default)]
    meta: BTreeMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: [usize; 5],
}

/// A network plus free-form metadata (training step, seeds, ...).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub meta: BTreeMap<String, Value>,
}

pub fn save_checkpoint(path: &Path, net: &Network<f32>, meta: &BTreeMap<String, Value>) -> Result<()> {
    let p = net.params();
    let header = Header {
        spec: net.spec().clone(),
        tensors: p
            .ids()
            .map(|id| Entry {
                name: p.name(id).to_string(),
                shape: p.get(id).shape().dims(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 4 * p.numel());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for id in p.ids() {
        for v in p.get(id).data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&buf).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Load and check the weight table against a freshly built network of the
/// stored spec.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("not a volsr checkpoint".into()))?;
    if rest.len() < 8 {
        return Err(bad("truncated header".into()));
    }
    let hlen = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < hlen {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
    let mut payload = &rest[hlen..];
    let mut net = Network::<f32>::build(&header.spec, 0)?;
    let ids: Vec<_> = net.params().ids().collect();
    if ids.len() != header.tensors.len() {
        return Err(bad(format!(
            "spec expects {} tensors, archive has {}",
            ids.len(),
            header.tensors.len()
        )));
    }
    for (id, entry) in ids.into_iter().zip(&header.tensors) {
        let p = net.params();
        let [n, c, d, h, w] = entry.shape;
        let shape = Shape::new(n, c, d, h, w);
        if p.name(id) != entry.name || p.get(id).shape() != shape {
            return Err(bad(format!(
                "tensor `{}` {shape} does not match spec layer `{}` {}",
                entry.name,
                p.name(id),
                p.get(id).shape()
            )));
        }
        let nbytes = 4 * shape.numel();
        if payload.len() < nbytes {
            return Err(bad(format!("truncated data for `{}`", entry.name)));
        }
        let data: Vec<f32> = payload[..nbytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite weight in `{}` at {i}", entry.name)));
        }
        payload = &payload[nbytes..];
        net.params_mut().assign(id, Tensor::from_vec(shape, data)?)?;
    }
    if !payload.is_empty() {
        return Err(bad(format!("{} trailing bytes", payload.len())));
    }
    Ok(Checkpoint {
        network: net,
        meta: header.meta,
    })
}

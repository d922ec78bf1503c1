//! Two-file volume format: a little-endian `f32` payload in `(z, y, x)` order
//! and a JSON sidecar header.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{NormBounds, Volume, NORMALIZATION_KEY};
use crate::error::{io_err, json_err};
use crate::{Error, Result};

const FORMAT: &str = "volsr-volume/1";
const DTYPE: &str = "f32le";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    dims: [usize; 3],
    voxel_size_um: [f64; 3],
    dtype: String,
    data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<NormBounds>,
    #[serde(default)]
    meta: BTreeMap<String, Value>,
}

/// Path of the raw payload belonging to a header path.
pub fn data_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

impl Volume {
    /// Write `<stem>.json` and `<stem>.raw`. `header` should end in `.json`.
    pub fn save(&self, header: &Path) -> Result<()> {
        let raw = data_path(header);
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&raw, &bytes).map_err(io_err(&raw))?;
        let normalization = self
            .meta
            .get(NORMALIZATION_KEY)
            .and_then(|v| serde_json::from_value(v.clone()).ok());
        let h = Header {
            format: FORMAT.into(),
            dims: self.dims,
            voxel_size_um: self.voxel_size_um,
            dtype: DTYPE.into(),
            data_file: raw
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::Invalid(format!("bad volume path {}", header.display())))?
                .to_string(),
            normalization,
            meta: self.meta.clone(),
        };
        let text = serde_json::to_string_pretty(&h).map_err(json_err(header))?;
        fs::write(header, text + "\n").map_err(io_err(header))
    }

    pub fn load(header: &Path) -> Result<Volume> {
        let text = fs::read_to_string(header).map_err(io_err(header))?;
        let h: Header = serde_json::from_str(&text).map_err(json_err(header))?;
        let bad = |reason: String| Error::Format {
            path: header.to_path_buf(),
            reason,
        };
        if h.format != FORMAT || h.dtype != DTYPE {
            return Err(bad(format!("unsupported format {:?} / dtype {:?}", h.format, h.dtype)));
        }
        let raw = header.parent().unwrap_or(Path::new(".")).join(&h.data_file);
        let bytes = fs::read(&raw).map_err(io_err(&raw))?;
        let n: usize = h.dims.iter().product();
        if bytes.len() != n * 4 {
            return Err(bad(format!("payload has {} bytes, dims need {}", bytes.len(), n * 4)));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut meta = h.meta;
        if let Some(b) = h.normalization {
            meta.insert(NORMALIZATION_KEY.into(), serde_json::to_value(b).expect("plain struct"));
        }
        Ok(Volume::new(h.dims, h.voxel_size_um, data)?.with_meta_map(meta))
    }
}

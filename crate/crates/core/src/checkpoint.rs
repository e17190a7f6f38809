//! Flat, versioned checkpoint files.
//!
//! Layout: a UTF-8 header of newline-terminated lines, then raw
//! little-endian `f64` data.
//!
//! ```text
//! SGGCKPT v1
//! meta {json}
//! tensor "name" 4x8 0
//! tensor "other.name" 8 32
//! end
//! <f64 data>
//! ```
//!
//! Tensor names are JSON strings; dimensions are `x`-separated; offsets count
//! `f64` values from the start of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupPartition;
use crate::pipeline::{Mode, ModelConfig, SggModel};

pub const MAGIC: &str = "SGGCKPT v1";

/// Everything needed to rebuild the model and check it against a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub mode: Mode,
    pub predicates: Vec<String>,
    pub object_classes: Vec<String>,
    pub group_sizes: Vec<usize>,
    /// `None` for a single-group model.
    pub mu: Option<f64>,
}

pub fn save_checkpoint(path: &Path, model: &SggModel, meta: &CheckpointMeta) -> Result<()> {
    let mut header = format!(
        "{MAGIC}\nmeta {}\n",
        serde_json::to_string(meta).expect("meta serializes")
    );
    let mut data = Vec::new();
    let mut offset = 0usize;
    for id in model.store.ids() {
        let t = model.store.get(id);
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let name = serde_json::to_string(model.store.name(id)).expect("name serializes");
        header.push_str(&format!("tensor {name} {} {offset}\n", dims.join("x")));
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&data);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    offset: usize,
}

pub fn load_checkpoint(path: &Path) -> Result<(SggModel, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Result<String> {
        line_no += 1;
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| perr(line_no, "truncated header".into()))?;
        *pos += end + 1;
        String::from_utf8(rest[..end].to_vec())
            .map_err(|_| perr(line_no, "header is not UTF-8".into()))
    };

    if next_line(&mut pos)? != MAGIC {
        return Err(perr(1, format!("missing {MAGIC:?} magic line")));
    }
    let meta_line = next_line(&mut pos)?;
    let meta: CheckpointMeta = meta_line
        .strip_prefix("meta ")
        .ok_or_else(|| perr(2, "expected meta line".into()))
        .and_then(|j| serde_json::from_str(j).map_err(|e| perr(2, e.to_string())))?;

    let mut entries = Vec::new();
    let mut line = 2;
    loop {
        let text = next_line(&mut pos)?;
        line += 1;
        if text == "end" {
            break;
        }
        entries.push(parse_entry(&text).map_err(|m| perr(line, m))?);
    }
    let data = &bytes[pos..];
    if data.len() % 8 != 0 {
        return Err(perr(line, "data section is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let partition = GroupPartition::from_sizes(&meta.group_sizes, meta.mu.unwrap_or(f64::INFINITY))?;
    let mut model = SggModel::new(meta.model.clone(), partition, 0)?;
    if entries.len() != model.store.len() {
        return Err(Error::Data(format!(
            "checkpoint holds {} tensors, model has {}",
            entries.len(),
            model.store.len()
        )));
    }
    for e in entries {
        let id = model
            .store
            .id(&e.name)
            .ok_or_else(|| Error::Data(format!("unknown tensor {:?} in checkpoint", e.name)))?;
        if model.store.get(id).shape() != e.dims.as_slice() {
            return Err(Error::Data(format!(
                "tensor {:?} has shape {:?}, model expects {:?}",
                e.name,
                e.dims,
                model.store.get(id).shape()
            )));
        }
        let n: usize = e.dims.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Data(format!("tensor {:?} runs past the data section", e.name)))?;
        model.store.set_values(id, slice)?;
    }
    Ok((model, meta))
}

fn parse_entry(text: &str) -> std::result::Result<Entry, String> {
    let rest = text
        .strip_prefix("tensor ")
        .ok_or_else(|| format!("expected tensor line, got {text:?}"))?;
    let mut de = serde_json::Deserializer::from_str(rest).into_iter::<String>();
    let name = de
        .next()
        .ok_or("missing tensor name")?
        .map_err(|e| e.to_string())?;
    let tail = rest[de.byte_offset()..].trim();
    let mut parts = tail.split(' ');
    let dims = parts
        .next()
        .ok_or("missing dims")?
        .split('x')
        .map(|d| d.parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let offset = parts
        .next()
        .ok_or("missing offset")?
        .parse::<usize>()
        .map_err(|e| e.to_string())?;
    if parts.next().is_some() {
        return Err("trailing fields on tensor line".into());
    }
    Ok(Entry { name, dims, offset })
}

//! Binary checkpoint format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "CVLSTMCK"
//! version    u32      FORMAT_VERSION
//! header     u32 length + UTF-8 JSON of ModelConfig
//! tensors    u32 count, then per tensor: u32 rows, u32 cols, rows*cols f64
//! ```
//!
//! Tensors appear in [`NetworkParams::tensors`] order. Loading rejects any shape that
//! differs from what the header's config prescribes, and any trailing bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ModelConfig, NetworkParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CVLSTMCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(config: &ModelConfig, params: &NetworkParams) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let header = serde_json::to_vec(config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + header.len() + 8 * params.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let shapes = params.tensor_shapes();
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for ((rows, cols), data) in shapes.into_iter().zip(params.tensors()) {
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ModelConfig, NetworkParams)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let expected = config.tensor_shapes();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint v{version} holds {count} tensors, config needs {}",
            expected.len()
        )));
    }
    let mut params = NetworkParams::zeros(&config);
    for (i, (tensor, shape)) in params.tensors_mut().into_iter().zip(&expected).enumerate() {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if (rows, cols) != *shape {
            return Err(Error::Checkpoint(format!(
                "checkpoint v{version} tensor {i} is {rows}x{cols}, config needs {}x{}",
                shape.0, shape.1
            )));
        }
        for x in tensor.iter_mut() {
            *x = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok((config, params))
}

/// Writes atomically: the bytes go to a sibling temp file that is then renamed over `path`.
pub fn save(path: &Path, config: &ModelConfig, params: &NetworkParams) -> Result<()> {
    write_atomic(path, &to_bytes(config, params)?)
}

pub fn load(path: &Path) -> Result<(ModelConfig, NetworkParams)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads and additionally requires the stored architecture to equal `expected`'s
/// (the seed is allowed to differ).
pub fn load_compatible(path: &Path, expected: &ModelConfig) -> Result<(ModelConfig, NetworkParams)> {
    let (config, params) = load(path)?;
    let same_arch = ModelConfig {
        seed: expected.seed,
        ..config.clone()
    } == *expected;
    if !same_arch {
        return Err(Error::Checkpoint(format!(
            "{} was trained with {} x{} layers x{} hidden ({:?} head), config asks for {} x{} x{} ({:?})",
            path.display(),
            config.cell_kind,
            config.num_layers,
            config.hidden_size,
            config.head,
            expected.cell_kind,
            expected.num_layers,
            expected.hidden_size,
            expected.head
        )));
    }
    Ok((config, params))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

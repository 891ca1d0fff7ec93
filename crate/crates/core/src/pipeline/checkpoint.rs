//! Self-describing parameter archive: `UNCK`, version u8, config echo
//! (u32 length + UTF-8), parameter count u32, then per parameter its name
//! (u16 length + UTF-8), rank u8, dims as u32 and little-endian f32 values.

use std::path::Path;

use super::model::CodecModel;
use crate::config::Config;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UNCK";
const VERSION: u8 = 1;
pub const CHECKPOINT_FILE: &str = "model.unck";

pub fn to_bytes(model: &CodecModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let echo = model.config.echo();
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    let p = &model.params;
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    for id in p.ids() {
        let name = p.name(id).as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.shape(id).len() as u8);
        for &d in p.shape(id) {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value(id) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<CodecModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u32()? as usize;
    let echo = r.string(n)?;
    let config = Config::parse(&echo).map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
    let mut model = CodecModel::new(&config).map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "archive has {count} parameters, architecture needs {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = r.string(len)?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if model.params.shape(id) != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{name}: stored shape {shape:?}, expected {:?}",
                model.params.shape(id)
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        *model.params.value_mut(id) = values;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after the last parameter".into()));
    }
    Ok(model)
}

pub fn save(model: &CodecModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint file, or `model.unck` inside a directory.
pub fn load(path: &Path) -> Result<CodecModel> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let bytes = std::fs::read(&file).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", file.display())))?;
    from_bytes(&bytes)
}

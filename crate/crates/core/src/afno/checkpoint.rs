//! AFN1 checkpoint container.
//!
//! ```text
//! "AFN1"
//! u32 version (=1), u32 config_len, config text (key=value lines)
//! u32 n_groups
//! per group: u32 name_len, name (UTF-8), u32 count, count x f32 little-endian
//! ```
//!
//! The config text carries the model architecture plus any extra records
//! the caller attaches (normalization statistics, variable names).

use std::fs;
use std::path::Path;

use crate::kv::KvMap;
use crate::Scalar;

use super::{ModelConfig, ModelError, ModelState};

pub const AFN_MAGIC: &[u8; 4] = b"AFN1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState<f32>,
    /// Everything in the config block, model keys included.
    pub records: KvMap,
}

pub fn encode_checkpoint<T: Scalar>(state: &ModelState<T>, extra: &KvMap) -> Vec<u8> {
    let mut records = extra.clone();
    let model = state.config.to_kv();
    for key in ModelConfig::keys() {
        records.set(key, model.raw(key).expect("model key present"));
    }
    let text = records.to_text();
    let groups = state.groups();
    let mut out = Vec::new();
    out.extend_from_slice(AFN_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
    for (name, values) in groups {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values.iter() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], ModelError> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != AFN_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != VERSION {
        return Err(bad(&format!("version {version} unsupported")));
    }
    let text_len = u32_at(take(4)?) as usize;
    let text = std::str::from_utf8(take(text_len)?).map_err(|_| bad("config is not UTF-8"))?;
    let records = KvMap::parse(text).map_err(|e| bad(&e.to_string()))?;
    let config = ModelConfig::from_kv(&records).map_err(|e| bad(&e.to_string()))?;
    let mut state = ModelState::<f32>::zeros(&config)?;
    let n_groups = u32_at(take(4)?) as usize;
    let mut groups = state.groups_mut();
    if n_groups != groups.len() {
        return Err(bad(&format!("expected {} groups, found {n_groups}", groups.len())));
    }
    for (name, dst) in groups.iter_mut() {
        let name_len = u32_at(take(4)?) as usize;
        let found = std::str::from_utf8(take(name_len)?).map_err(|_| bad("group name is not UTF-8"))?;
        if found != name.as_str() {
            return Err(bad(&format!("expected group {name}, found {found}")));
        }
        let count = u32_at(take(4)?) as usize;
        if count != dst.len() {
            return Err(bad(&format!("group {name}: expected {} values, found {count}", dst.len())));
        }
        for (d, c) in dst.iter_mut().zip(take(4 * count)?.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().unwrap());
        }
    }
    drop(groups);
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    if let Some(g) = state.first_non_finite() {
        return Err(ModelError::NonFiniteGradient(g));
    }
    Ok(Checkpoint { state, records })
}

pub fn write_checkpoint<T: Scalar>(
    state: &ModelState<T>,
    extra: &KvMap,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    fs::write(path, encode_checkpoint(state, extra))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    decode_checkpoint(&fs::read(path)?)
}

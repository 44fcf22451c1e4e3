use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, Setting};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RRNN";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    setting: Setting,
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

/// `"RRNN" | u32 header length | JSON header | little-endian f32 values`.
pub fn save_checkpoint(model: &Model) -> Vec<u8> {
    let s = &model.store;
    let header = Header {
        version: VERSION,
        setting: model.setting,
        config: model.config,
        params: s.ids().map(|id| ParamEntry { name: s.name(id).to_string(), shape: s.shape(id).to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * s.count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in s.flat() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Model, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if header.version != VERSION {
        return Err(ModelError::Checkpoint(format!("version {} unsupported", header.version)));
    }
    let mut model = Model::new(header.setting, header.config)?;
    let s = &mut model.store;
    if header.params.len() != s.len() {
        return Err(bad("parameter list does not match the setting"));
    }
    let mut payload = &bytes[8 + hlen..];
    let ids: Vec<_> = s.ids().collect();
    for (id, entry) in ids.into_iter().zip(&header.params) {
        if entry.name != s.name(id) || entry.shape != s.shape(id) {
            return Err(ModelError::Checkpoint(format!("unexpected parameter {}", entry.name)));
        }
        let n = s.values(id).len();
        if payload.len() < 4 * n {
            return Err(bad("truncated payload"));
        }
        for (i, chunk) in payload[..4 * n].chunks_exact(4).enumerate() {
            s.values_mut(id)[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        payload = &payload[4 * n..];
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(model)
}

pub fn write_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, save_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    load_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        for setting in Setting::ALL {
            let m = Model::new(setting, ModelConfig { seed: 17, ..Default::default() }).unwrap();
            let bytes = save_checkpoint(&m);
            assert_eq!(&bytes[..4], b"RRNN");
            let back = load_checkpoint(&bytes).unwrap();
            assert_eq!(back.store.flat(), m.store.flat());
            assert_eq!(save_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = Model::new(Setting::ImageFpe, ModelConfig::default()).unwrap();
        let bytes = save_checkpoint(&m);
        assert!(load_checkpoint(b"RRIX....").is_err());
        assert!(load_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(load_checkpoint(&longer).is_err());
    }
}

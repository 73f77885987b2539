//! Weight serialization.
//!
//! Layout: magic `LETN`, u32 version, u32 tensor count, then per tensor a
//! u16 name length, the name bytes, a u8 rank, u32 extents, and the raw
//! little-endian f32 payload; a CRC32 of everything after the 8-byte header
//! closes the file. Floats travel as raw bits, so a round trip is bit-exact
//! including negative zero and subnormals. The originating run configuration
//! rides along as a `__config__` pseudo-tensor whose payload is the
//! zero-padded config text.

use std::collections::HashMap;
use std::path::Path;

use tinyseg_core::error::{Error, Result};
use tinyseg_core::params::ParamStore;
use tinyseg_core::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"LETN";
pub const VERSION: u32 = 1;
const CONFIG_KEY: &str = "__config__";
/// Refuse absurd tensor records before allocating for them.
const MAX_NUMEL: usize = 1 << 28;

/// CRC-32 (reflected, polynomial 0xEDB88320), table built on the fly.
fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

fn push_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    if name.len() > u16::MAX as usize {
        return Err(Error::usage(format!("tensor name too long: {name:.32}...")));
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::usage(format!("tensor rank {} too large", shape.len())));
    }
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Config text packed into f32 lanes: four bytes per float, zero padded.
/// The text never contains NUL, so trailing zero bytes are trimmed on read.
fn config_floats(text: &str) -> Vec<f32> {
    let bytes = text.as_bytes();
    bytes
        .chunks(4)
        .map(|c| {
            let mut lane = [0u8; 4];
            lane[..c.len()].copy_from_slice(c);
            f32::from_le_bytes(lane)
        })
        .collect()
}

fn config_text(data: &[f32]) -> Result<String> {
    let mut bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    while bytes.last() == Some(&0) {
        bytes.pop();
    }
    String::from_utf8(bytes)
        .map_err(|_| Error::data("checkpoint config echo is not valid text".to_string()))
}

/// Writes every store entry (weights and running statistics) in insertion
/// order, then the config echo.
pub fn save(path: &Path, store: &ParamStore, config_echo: &str) -> Result<()> {
    let mut body = Vec::new();
    let count = store.len() + 1;
    body.extend_from_slice(&(count as u32).to_le_bytes());
    for (_, e) in store.iter() {
        push_record(&mut body, &e.name, e.tensor.shape(), e.tensor.data())?;
    }
    let cfg = config_floats(config_echo);
    push_record(&mut body, CONFIG_KEY, &[cfg.len()], &cfg)?;

    let mut out = Vec::with_capacity(8 + body.len() + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32(&body).to_le_bytes());
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug)]
pub struct Loaded {
    /// Tensors in file order, config echo excluded.
    pub tensors: Vec<(String, Tensor)>,
    pub config_echo: String,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.pos,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::format(bytes.len(), "file too short".to_string()));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, not a checkpoint".to_string()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let crc_pos = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[crc_pos..].try_into().unwrap());
    let actual = crc32(&bytes[8..crc_pos]);
    if stored != actual {
        return Err(Error::format(
            crc_pos,
            format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
        ));
    }

    let mut cur = Cursor {
        bytes: &bytes[..crc_pos],
        pos: 8,
    };
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::new();
    let mut config_echo = String::new();
    for _ in 0..count {
        let name_pos = cur.pos;
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| Error::format(name_pos, "tensor name is not valid text".to_string()))?
            .to_string();
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = cur.u32("extent")? as usize;
            numel = numel.checked_mul(d).unwrap_or(usize::MAX);
            shape.push(d);
        }
        if numel > MAX_NUMEL {
            return Err(Error::format(
                name_pos,
                format!("tensor {name} implausibly large ({numel} elements)"),
            ));
        }
        let payload = cur.take(4 * numel, "tensor payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if name == CONFIG_KEY {
            config_echo = config_text(&data)?;
        } else {
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
    }
    if cur.pos != cur.bytes.len() {
        return Err(Error::format(
            cur.pos,
            "trailing bytes after final tensor".to_string(),
        ));
    }
    Ok(Loaded {
        tensors,
        config_echo,
    })
}

/// Copies loaded tensors into a freshly built store. Every store entry must
/// be present with its exact shape, and the file must not carry tensors the
/// model lacks; the first offender is named.
pub fn install(store: &mut ParamStore, loaded: &Loaded) -> Result<()> {
    let by_name: HashMap<&str, &Tensor> = loaded
        .tensors
        .iter()
        .map(|(n, t)| (n.as_str(), t))
        .collect();
    let mut wanted: Vec<(String, Vec<usize>)> = Vec::new();
    for (_, e) in store.iter() {
        let Some(t) = by_name.get(e.name.as_str()) else {
            return Err(Error::data(format!(
                "checkpoint is missing tensor {}",
                e.name
            )));
        };
        if t.shape() != e.tensor.shape() {
            return Err(Error::data(format!(
                "checkpoint tensor {} has shape {:?}, model expects {:?}",
                e.name,
                t.shape(),
                e.tensor.shape()
            )));
        }
        wanted.push((e.name.clone(), e.tensor.shape().to_vec()));
    }
    for (name, _) in &loaded.tensors {
        if store.find(name).is_none() {
            return Err(Error::data(format!(
                "checkpoint carries tensor {name} the model does not have"
            )));
        }
    }
    for (name, _) in wanted {
        let t = by_name[name.as_str()].clone();
        let id = store.find(&name).expect("checked above");
        store.get_mut(id).tensor = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::net::build;

    #[test]
    fn crc_matches_the_standard_check_value() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn config_blob_round_trips_any_length() {
        for text in ["", "a", "ab=1\n", "section.key = value\n# comment\n"] {
            let f = config_floats(text);
            assert_eq!(config_text(&f).unwrap(), text);
        }
    }

    #[test]
    fn save_load_install_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig::tiny(3);
        let (_, mut store) = build(&cfg, 77).unwrap();
        // Awkward bit patterns must survive: negative zero, a subnormal, an
        // exactly-representable running statistic.
        {
            let first = store.iter_mut().next().unwrap().1;
            let d = first.tensor.data_mut();
            d[0] = -0.0;
            d[1] = f32::from_bits(1);
        }
        save(&path, &store, "model.preset = tiny\n").unwrap();

        let loaded = load(&path).unwrap();
        assert_eq!(loaded.config_echo, "model.preset = tiny\n");
        let (_, mut fresh) = build(&cfg, 1234).unwrap();
        install(&mut fresh, &loaded).unwrap();
        assert_eq!(store.len(), fresh.len());
        for ((_, a), (_, b)) in store.iter().zip(fresh.iter()) {
            assert_eq!(a.name, b.name);
            let ab: Vec<u32> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "{}", a.name);
        }
    }

    #[test]
    fn corrupted_files_are_rejected_with_positions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (_, store) = build(&ModelConfig::tiny(2), 5).unwrap();
        save(&path, &store, "").unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("byte 0") && err.contains("magic"), "{err}");

        let mut bad = good.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");

        std::fs::write(&path, &good[..good.len() / 2]).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("checksum") || err.contains("truncated"), "{err}");

        let mut bad = good.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        std::fs::write(&path, &bad).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn config_mismatch_names_the_first_offending_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");

        // A checkpoint with extra modules loaded into a plainer model names
        // the first tensor the model lacks.
        let mut rich = ModelConfig::tiny(3);
        let mut plain = rich.clone();
        plain.transformer = false;
        plain.pixel_attention = false;
        let (_, rich_store) = build(&rich, 3).unwrap();
        let (_, mut plain_store) = build(&plain, 3).unwrap();
        save(&path, &rich_store, "").unwrap();
        let err = install(&mut plain_store, &load(&path).unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("et.ln1.gamma"), "{err}");

        // The reverse direction reports the first missing tensor.
        let (_, plain_store) = build(&plain, 3).unwrap();
        save(&path, &plain_store, "").unwrap();
        let (_, mut rich_store) = build(&rich, 3).unwrap();
        let err = install(&mut rich_store, &load(&path).unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing tensor et.ln1.gamma"), "{err}");

        // Same names, different shape.
        rich.num_classes = 4;
        let (_, mut wider) = build(&rich, 3).unwrap();
        let (_, narrow) = build(&ModelConfig::tiny(3), 3).unwrap();
        save(&path, &narrow, "").unwrap();
        let err = install(&mut wider, &load(&path).unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("head.weight") && err.contains("shape"), "{err}");
    }
}

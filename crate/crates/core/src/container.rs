//! Single-file binary container shared by datasets and checkpoints.
//!
//! ```text
//! magic        8 bytes   file-type tag
//! version      u32 LE
//! header_len   u32 LE
//! header       header_len bytes of UTF-8 JSON
//! payload      payload_len bytes
//! ```
//!
//! The JSON header always carries `payload_len` and `payload_crc32`
//! (CRC-32/ISO-HDLC of the payload), so truncation or corruption is
//! detected before anything is decoded.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

pub(crate) struct Container {
    pub header: Value,
    pub payload: Vec<u8>,
}

pub(crate) fn encode(magic: &[u8; 8], version: u32, mut header: Value, payload: &[u8]) -> Result<Vec<u8>> {
    let obj = header
        .as_object_mut()
        .ok_or_else(|| Error::Format("container header must be a JSON object".into()))?;
    obj.insert("payload_len".into(), Value::from(payload.len() as u64));
    obj.insert("payload_crc32".into(), Value::from(crc32fast::hash(payload)));
    let text = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + text.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(payload);
    Ok(out)
}

pub(crate) fn decode(magic: &[u8; 8], supported: u32, bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "not a {} file (bad magic or shorter than the fixed prefix)",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != supported {
        return Err(Error::Format(format!("unsupported version {version}, this build reads {supported}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(Error::Format(format!("header needs {hlen} bytes, file has {}", body.len())));
    }
    let header: Value = serde_json::from_slice(&body[..hlen])?;
    let payload = &body[hlen..];
    let want_len = header.get("payload_len").and_then(Value::as_u64);
    let want_crc = header.get("payload_crc32").and_then(Value::as_u64);
    let (Some(want_len), Some(want_crc)) = (want_len, want_crc) else {
        return Err(Error::Format("header lacks payload_len / payload_crc32".into()));
    };
    let found = crc32fast::hash(payload);
    if payload.len() as u64 != want_len || found as u64 != want_crc {
        return Err(Error::Checksum { expected: want_crc as u32, found });
    }
    Ok(Container { header, payload: payload.to_vec() })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub(crate) fn push_f32(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()
}

pub(crate) fn push_f64(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_f64(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
}

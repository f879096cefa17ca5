//! On-disk container shared by checkpoints and retrieval indexes: a compact
//! JSON manifest line, then a little-endian `u64` byte length and a blob of
//! little-endian `f32` values. The manifest records the blob length and its
//! CRC-32.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

pub(crate) fn write(path: &Path, mut manifest: serde_json::Map<String, Value>, values: &[f32]) -> Result<()> {
    let blob: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    manifest.insert("blob_len".into(), Value::from(blob.len() as u64));
    manifest.insert("blob_crc32".into(), Value::from(crc32fast::hash(&blob)));
    let mut out = serde_json::to_vec(&Value::Object(manifest)).map_err(|e| Error::json("manifest", e))?;
    out.push(b'\n');
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path) -> Result<(serde_json::Map<String, Value>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::Corrupt { path: path.to_path_buf(), reason: reason.to_string() };

    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing manifest terminator"))?;
    let manifest: Value =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::json(format!("{} manifest", path.display()), e))?;
    let Value::Object(manifest) = manifest else {
        return Err(corrupt("manifest is not a JSON object"));
    };
    let rest = &bytes[nl + 1..];
    if rest.len() < 8 {
        return Err(corrupt("truncated blob header"));
    }
    let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let blob = &rest[8..];
    if blob.len() < len {
        return Err(corrupt(&format!("truncated blob: {} of {len} bytes", blob.len())));
    }
    if blob.len() > len {
        return Err(corrupt("trailing bytes after blob"));
    }
    if manifest.get("blob_len").and_then(Value::as_u64) != Some(len as u64) {
        return Err(corrupt("blob length disagrees with manifest"));
    }
    let expected = manifest.get("blob_crc32").and_then(Value::as_u64).ok_or_else(|| corrupt("manifest lacks blob_crc32"))?;
    if crc32fast::hash(blob) as u64 != expected {
        return Err(corrupt("blob checksum mismatch"));
    }
    if len % 4 != 0 {
        return Err(corrupt("blob is not a whole number of f32 values"));
    }
    let values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((manifest, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_faults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let mut m = serde_json::Map::new();
        m.insert("k".into(), Value::from("v\nw"));
        write(&p, m, &[1.5, -2.25, 3.0]).unwrap();
        let (m2, v) = read(&p).unwrap();
        assert_eq!(m2["k"], "v\nw");
        assert_eq!(v, vec![1.5, -2.25, 3.0]);

        let good = fs::read(&p).unwrap();
        let mut flipped = good.clone();
        *flipped.last_mut().unwrap() ^= 0x01;
        fs::write(&p, &flipped).unwrap();
        assert!(matches!(read(&p), Err(Error::Corrupt { reason, .. }) if reason.contains("checksum")));

        fs::write(&p, &good[..good.len() - 3]).unwrap();
        assert!(matches!(read(&p), Err(Error::Corrupt { reason, .. }) if reason.contains("truncated")));
    }
}

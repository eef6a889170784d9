//! Checkpoint container: a small binary format holding a JSON manifest
//! (architecture, array table, integrity hash, optional training config)
//! followed by one raw little-endian f64 blob with all arrays concatenated
//! in layer order.
//!
//! Layout:
//!
//! ```text
//! magic   8 bytes  b"FIMGCKPT"
//! version u32 LE   currently 1
//! mlen    u64 LE   manifest byte length
//! manifest mlen bytes of JSON
//! blob    Σ numel · 8 bytes of f64 LE
//! ```
//!
//! Loading re-validates everything: magic, version, manifest schema, blob
//! length, the SHA-256 recorded in the manifest, and finally the array
//! names/shapes against what the architecture descriptor dictates (via
//! [`NetworkSnapshot::instantiate`]). A checkpoint whose manifest was edited
//! or whose blob was truncated is rejected, not silently reinterpreted.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchDescriptor, Network, NetworkSnapshot, SnapshotEntry};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FIMGCKPT";
const FORMAT_VERSION: u32 = 1;

/// Manifest half of a checkpoint. `train_config` is free-form JSON recorded
/// for provenance; loading never interprets it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub arch: ArchDescriptor,
    pub entries: Vec<EntryMeta>,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntryMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Serialize `net` (weights and running statistics) to `path`.
pub fn save_checkpoint(
    net: &Network,
    path: &Path,
    train_config: Option<serde_json::Value>,
) -> Result<()> {
    save_snapshot(&net.snapshot(), path, train_config)
}

/// Serialize an already-captured snapshot.
pub fn save_snapshot(
    snap: &NetworkSnapshot,
    path: &Path,
    train_config: Option<serde_json::Value>,
) -> Result<()> {
    let mut blob = Vec::with_capacity(snap.entries.iter().map(|e| e.data.len() * 8).sum());
    for e in &snap.entries {
        for v in &e.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        arch: snap.arch.clone(),
        entries: snap
            .entries
            .iter()
            .map(|e| EntryMeta { name: e.name.clone(), shape: e.shape.clone() })
            .collect(),
        sha256: sha256_hex(&blob),
        train_config,
    };
    let mjson = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(mjson.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&mjson).map_err(io)?;
    w.write_all(&blob).map_err(io)?;
    w.flush().map_err(io)
}

/// Read, validate, and instantiate a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(Network, CheckpointManifest)> {
    let snap_manifest = load_snapshot(path)?;
    let net = snap_manifest.0.instantiate()?;
    Ok((net, snap_manifest.1))
}

/// Read and validate a checkpoint without building the live network.
pub fn load_snapshot(path: &Path) -> Result<(NetworkSnapshot, CheckpointManifest)> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}, not a checkpoint",
            path.display(),
            magic
        )));
    }
    let mut vbytes = [0u8; 4];
    read_exact(&mut r, &mut vbytes, path)?;
    let version = u32::from_le_bytes(vbytes);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version}, this build reads {FORMAT_VERSION}",
            path.display()
        )));
    }
    let mut lbytes = [0u8; 8];
    read_exact(&mut r, &mut lbytes, path)?;
    let mlen = u64::from_le_bytes(lbytes) as usize;
    let mut mjson = vec![0u8; mlen];
    read_exact(&mut r, &mut mjson, path)?;
    let manifest: CheckpointManifest = serde_json::from_slice(&mjson)
        .map_err(|e| Error::Checkpoint(format!("{}: manifest: {e}", path.display())))?;
    let total: usize = manifest
        .entries
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    let mut blob = vec![0u8; total * 8];
    read_exact(&mut r, &mut blob, path)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after weight blob",
            path.display()
        )));
    }
    let digest = sha256_hex(&blob);
    if digest != manifest.sha256 {
        return Err(Error::Checkpoint(format!(
            "{}: weight blob hash mismatch (manifest {}, blob {digest})",
            path.display(),
            manifest.sha256
        )));
    }
    let mut entries = Vec::with_capacity(manifest.entries.len());
    let mut off = 0;
    for meta in &manifest.entries {
        let n = meta.shape.iter().product::<usize>();
        let data = blob[off..off + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += n * 8;
        entries.push(SnapshotEntry { name: meta.name.clone(), shape: meta.shape.clone(), data });
    }
    Ok((NetworkSnapshot { arch: manifest.arch.clone(), entries }, manifest))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint(format!("{}: truncated checkpoint", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_convnet, build_mlp};
    use crate::tensor::Tensor;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "fimguard-ckpt-{}-{}",
            std::process::id(),
            name
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join("model.ckpt")
    }

    #[test]
    fn round_trip_preserves_predictions_bit_exactly() {
        let mut net = build_convnet((1, 8, 8), 3, 11);
        let warm = Tensor::from_vec(vec![0.25; 2 * 64], &[2, 1, 8, 8]);
        let _ = net.forward_train(&warm);
        let path = tmpfile("roundtrip");
        save_checkpoint(&net, &path, Some(serde_json::json!({"note": "fixture"}))).unwrap();
        let (net2, manifest) = load_checkpoint(&path).unwrap();
        assert_eq!(manifest.format_version, 1);
        let x = Tensor::from_vec((0..64).map(|v| v as f64 / 63.0).collect(), &[1, 1, 8, 8]);
        assert_eq!(net.predict_proba(&x).data(), net2.predict_proba(&x).data());
        assert_eq!(net.snapshot().weights_hash(), net2.snapshot().weights_hash());
    }

    #[test]
    fn edited_manifest_k_is_rejected() {
        let net = build_mlp(4, &[5], 3, 2);
        let path = tmpfile("edited");
        save_checkpoint(&net, &path, None).unwrap();
        // Surgically flip "k":3 to "k":4 in the manifest JSON. The blob hash
        // still matches, so the failure must come from shape validation.
        let raw = std::fs::read(&path).unwrap();
        let mlen = u64::from_le_bytes(raw[12..20].try_into().unwrap()) as usize;
        let mut mjson = String::from_utf8(raw[20..20 + mlen].to_vec()).unwrap();
        assert!(mjson.contains("\"k\":3"));
        mjson = mjson.replace("\"k\":3", "\"k\":4");
        let mut out = raw[..12].to_vec();
        out.extend_from_slice(&(mjson.len() as u64).to_le_bytes());
        out.extend_from_slice(mjson.as_bytes());
        out.extend_from_slice(&raw[20 + mlen..]);
        std::fs::write(&path, out).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, crate::error::Error::Checkpoint(_)), "got {err:?}");
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let net = build_mlp(4, &[5], 3, 2);
        let path = tmpfile("truncated");
        save_checkpoint(&net, &path, None).unwrap();
        let raw = std::fs::read(&path).unwrap();
        std::fs::write(&path, &raw[..raw.len() - 16]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, crate::error::Error::Checkpoint(_)), "got {err:?}");
        let msg = format!("{err}");
        assert!(msg.contains("truncated"), "message was: {msg}");
    }

    #[test]
    fn corrupted_blob_fails_hash_check() {
        let net = build_mlp(4, &[5], 3, 2);
        let path = tmpfile("corrupt");
        save_checkpoint(&net, &path, None).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        let n = raw.len();
        raw[n - 4] ^= 0xff;
        std::fs::write(&path, raw).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("hash mismatch"), "message was: {msg}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let path = tmpfile("magic");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxxxxxx").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("magic"), "message was: {msg}");
    }

    #[test]
    fn future_version_is_rejected() {
        let net = build_mlp(4, &[], 3, 2);
        let path = tmpfile("version");
        save_checkpoint(&net, &path, None).unwrap();
        let mut raw = std::fs::read(&path).unwrap();
        raw[8] = 2; // version u32 LE lives at bytes 8..12
        std::fs::write(&path, raw).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("version"), "message was: {msg}");
    }
}

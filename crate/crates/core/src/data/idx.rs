//! IDX image/label files (the MNIST container format).
//!
//! Layout, all integers big-endian u32: images are `[2051, count, rows,
//! cols]` followed by `count·rows·cols` raw bytes; labels are `[2049,
//! count]` followed by `count` bytes. Pixels normalize as `byte / 255`,
//! which round-trips exactly (`round(p·255)` recovers the byte).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

fn read_u32_be(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_be_bytes(buf))
}

/// Raw (un-normalized) contents of an IDX image file.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let magic = read_u32_be(&mut r, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::idx(
            path,
            format!("image magic {magic}, expected {IMAGES_MAGIC}"),
        ));
    }
    let count = read_u32_be(&mut r, path)? as usize;
    let rows = read_u32_be(&mut r, path)? as usize;
    let cols = read_u32_be(&mut r, path)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::idx(path, format!("degenerate image dims {rows}x{cols}")));
    }
    let want = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::idx(path, "dimension overflow"))?;
    let mut pixels = vec![0u8; want];
    r.read_exact(&mut pixels).map_err(|e| Error::io(path, e))?;
    Ok((count, rows, cols, pixels))
}

/// Raw contents of an IDX label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let magic = read_u32_be(&mut r, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::idx(
            path,
            format!("label magic {magic}, expected {LABELS_MAGIC}"),
        ));
    }
    let count = read_u32_be(&mut r, path)? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels).map_err(|e| Error::io(path, e))?;
    Ok(labels)
}

/// Load an IDX image/label pair into a normalized 10-class dataset.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (count, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::Dataset(format!(
            "{count} images in {} but {} labels in {}",
            images_path.display(),
            labels.len(),
            labels_path.display()
        )));
    }
    let images: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    LabeledDataset::new(images, labels, (1, rows, cols), 10)
}

/// Write images in IDX layout, de-normalizing by `round(p·255)`.
pub fn write_idx_images(path: &Path, images: &[f64], rows: usize, cols: usize) -> Result<()> {
    assert_eq!(images.len() % (rows * cols), 0, "ragged image buffer");
    let count = images.len() / (rows * cols);
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut header = Vec::with_capacity(16);
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        header.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = images
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write labels in IDX layout.
pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut header = Vec::with_capacity(8);
    for v in [LABELS_MAGIC, labels.len() as u32] {
        header.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = labels
        .iter()
        .map(|&l| {
            assert!(l < 256, "label {l} does not fit a byte");
            l as u8
        })
        .collect();
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "fimguard-idx-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn round_trip_preserves_bytes() {
        let dir = tmpdir();
        let img = dir.join("im.idx");
        let lab = dir.join("lb.idx");
        // All 256 byte values appear.
        let raw: Vec<f64> = (0..256u32)
            .flat_map(|v| std::iter::repeat(v as f64 / 255.0).take(4))
            .collect();
        let labels: Vec<usize> = (0..256).map(|v| v % 10).collect();
        write_idx_images(&img, &raw, 2, 2).unwrap();
        write_idx_labels(&lab, &labels).unwrap();
        let ds = load_mnist_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 256);
        // Byte 255 → exactly 1.0 (spec example) and full round trip.
        assert_eq!(ds.image(255)[0], 1.0);
        for (a, b) in ds.image(7).iter().zip(&raw[7 * 4..8 * 4]) {
            assert_eq!(a, b);
        }
        let (_, _, _, bytes) = read_idx_images(&img).unwrap();
        let expect: Vec<u8> = raw.iter().map(|&p| (p * 255.0).round() as u8).collect();
        assert_eq!(bytes, expect);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tmpdir();
        let img = dir.join("bad.idx");
        let lab = dir.join("lb.idx");
        // Label magic in an image file.
        write_idx_labels(&img, &[0, 1]).unwrap();
        write_idx_labels(&lab, &[0, 1]).unwrap();
        match load_mnist_idx(&img, &lab) {
            Err(Error::IdxFormat { reason, .. }) => assert!(reason.contains("2051")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_io_error() {
        let dir = tmpdir();
        let img = dir.join("trunc.idx");
        let mut bytes = Vec::new();
        for v in [IMAGES_MAGIC, 10, 28, 28] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&[0u8; 100]); // far fewer than 10·28·28
        std::fs::write(&img, bytes).unwrap();
        match read_idx_images(&img) {
            Err(Error::Io { .. }) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_dataset_error() {
        let dir = tmpdir();
        let img = dir.join("im.idx");
        let lab = dir.join("lb.idx");
        write_idx_images(&img, &vec![0.0; 3 * 4], 2, 2).unwrap();
        write_idx_labels(&lab, &[0, 1]).unwrap();
        assert!(matches!(load_mnist_idx(&img, &lab), Err(Error::Dataset(_))));
    }

    #[test]
    fn header_fuzz_never_panics() {
        // Random 16-byte prefixes must come back as errors, not crashes.
        let dir = tmpdir();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for i in 0..200 {
            let p = dir.join(format!("fuzz{i}.idx"));
            let n = rng.gen_range(0..=16);
            let bytes: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
            std::fs::write(&p, bytes).unwrap();
            let _ = read_idx_images(&p).unwrap_err();
            let _ = read_idx_labels(&p).unwrap_err();
        }
    }
}

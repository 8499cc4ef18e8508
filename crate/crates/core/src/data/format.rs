//! Native matrix container.
//!
//! ```text
//! offset  size        field
//! 0       8           magic "LNGMTX\0\0"
//! 8       4           format version (u32)
//! 12      1           cell type code
//! 13      3           reserved, zero
//! 16      8           rows (u64)
//! 24      8           cols (u64)
//! 32      4           manifest length m (u32)
//! 36      m           manifest, UTF-8 JSON object of string → string
//! 36+m    4·rows      labels (u32)
//! ...     4·rows·cols values (f32), row-major
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{CellType, DiseaseLabel, LabeledDataset, Manifest};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: [u8; 8] = *b"LNGMTX\0\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 36;
const FINGERPRINT_KEY: &str = "content_fingerprint";

/// Encodes a dataset. The content fingerprint is added to the written manifest.
pub fn encode(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let mut manifest = ds.manifest.clone();
    manifest.insert(FINGERPRINT_KEY.into(), ds.content_fingerprint());
    let manifest_bytes = serde_json::to_vec(&manifest).map_err(|e| Error::Input(e.to_string()))?;
    let (rows, cols) = ds.x.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + manifest_bytes.len() + 4 * rows * (cols + 1));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[ds.cell_type.code(), 0, 0, 0]);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out.extend_from_slice(&(manifest_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for &l in &ds.labels {
        let l = u32::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit in u32")))?;
        out.extend_from_slice(&l.to_le_bytes());
    }
    for v in ds.x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn save_matrix(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    let path = path.as_ref();
    ds.x.check_finite()?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let bytes = encode(ds)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode(&bytes, path)
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().expect("8 bytes"))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<LabeledDataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("truncated header: expected at least {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if bytes[..8] != MAGIC {
        return Err(Error::format(path, "bad magic bytes; not a native matrix file"));
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {version} (this build reads {VERSION})"),
        ));
    }
    let cell_type = CellType::from_code(bytes[12])
        .ok_or_else(|| Error::format(path, format!("unknown cell type code {}", bytes[12])))?;
    let rows = u64_at(bytes, 16) as usize;
    let cols = u64_at(bytes, 24) as usize;
    let manifest_len = u32_at(bytes, 32) as usize;

    let expected = rows
        .checked_mul(cols)
        .and_then(|rc| rc.checked_add(rows))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN + manifest_len))
        .ok_or_else(|| Error::format(path, format!("implausible shape {rows}x{cols}")))?;
    if bytes.len() != expected {
        let what = if bytes.len() < expected { "truncated" } else { "trailing data" };
        return Err(Error::format(
            path,
            format!("{what}: expected {expected} bytes, found {}", bytes.len()),
        ));
    }

    let manifest_end = HEADER_LEN + manifest_len;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| Error::format(path, format!("manifest is not a JSON string map: {e}")))?;

    let labels_end = manifest_end + 4 * rows;
    let labels: Vec<usize> = bytes[manifest_end..labels_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= DiseaseLabel::COUNT) {
        return Err(Error::format(
            path,
            format!("label {l} at row {i} outside [0, {})", DiseaseLabel::COUNT),
        ));
    }
    let data: Vec<f32> = bytes[labels_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let x = Matrix::from_vec_finite(rows, cols, data).map_err(|e| Error::format(path, e.to_string()))?;

    let ds = LabeledDataset {
        x,
        labels,
        cell_type,
        manifest,
    };
    if let Some(stored) = ds.manifest.get(FINGERPRINT_KEY) {
        let actual = ds.content_fingerprint();
        if *stored != actual {
            return Err(Error::Integrity(format!(
                "{}: content fingerprint {actual} does not match recorded {stored}",
                path.display()
            )));
        }
    }
    Ok(ds)
}

/// `row,label,label_name,binary,cell_type` per row.
pub fn write_labels_csv(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    let mut out = String::from("row,label,label_name,binary,cell_type\n");
    for (i, &l) in ds.labels.iter().enumerate() {
        let name = crate::data::DiseaseLabel::from_index(l).map_or("?", |d| d.name());
        out.push_str(&format!("{i},{l},{name},{},{}\n", usize::from(l != 0), ds.cell_type));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LabeledDataset {
        let x = Matrix::from_rows(&[vec![1.0f32, -2.5, 0.0], vec![3.25, 1e-8, 7.0]]).unwrap();
        let mut ds = LabeledDataset::new(x, vec![0, 6], CellType::Monocyte).unwrap();
        ds.manifest.insert("source".into(), "unit-test".into());
        ds
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lmx");
        let ds = sample();
        save_matrix(&p, &ds).unwrap();
        let back = load_matrix(&p).unwrap();
        assert_eq!(back.x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   ds.x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.cell_type, ds.cell_type);
        assert_eq!(back.manifest["source"], "unit-test");
    }

    #[test]
    fn truncated_file_names_byte_counts() {
        let bytes = encode(&sample()).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        let msg = decode(cut, Path::new("x")).unwrap_err().to_string();
        assert!(msg.contains(&format!("expected {} bytes, found {}", bytes.len(), bytes.len() - 3)), "{msg}");
        let msg = decode(&bytes[..10], Path::new("x")).unwrap_err().to_string();
        assert!(msg.contains("found 10"), "{msg}");
    }

    #[test]
    fn nan_rejected_with_coordinates() {
        let mut bytes = encode(&sample()).unwrap();
        let n = bytes.len();
        // last value is row 1, col 2
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let msg = decode(&bytes, Path::new("x")).unwrap_err().to_string();
        assert!(msg.contains("row 1, col 2"), "{msg}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(decode(&bytes, Path::new("x")).unwrap_err().to_string().contains("magic"));
        let mut bytes = encode(&sample()).unwrap();
        bytes[8] = 9;
        assert!(decode(&bytes, Path::new("x")).unwrap_err().to_string().contains("version 9"));
    }

    #[test]
    fn tampered_values_fail_integrity() {
        let mut bytes = encode(&sample()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&8.0f32.to_le_bytes());
        assert!(matches!(decode(&bytes, Path::new("x")), Err(Error::Integrity(_))));
    }
}

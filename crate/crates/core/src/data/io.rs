//! Feature file (binary) and annotation file (JSON) formats.
//!
//! Feature file, little-endian:
//!
//! ```text
//! "GEBF" | version u32 = 1 | L u32 | D u32 | snippet_rate f64 | duration f64
//!        | id_len u16 | video_id UTF-8 | L*D f32, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BoundaryAnnotation, FeatureSequence};
use crate::error::{GebdError, Result};

const FEATURE_MAGIC: &[u8; 4] = b"GEBF";
const FEATURE_VERSION: u32 = 1;

pub fn encode_feature_file(seq: &FeatureSequence) -> Result<Vec<u8>> {
    let (l, d) = seq.features.dim();
    let id = seq.video_id.as_bytes();
    let id_len = u16::try_from(id.len()).map_err(|_| GebdError::Input("video_id longer than 65535 bytes".into()))?;
    let mut buf = Vec::with_capacity(34 + id.len() + 4 * l * d);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(l as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&seq.snippet_rate.to_le_bytes());
    buf.extend_from_slice(&seq.duration.to_le_bytes());
    buf.extend_from_slice(&id_len.to_le_bytes());
    buf.extend_from_slice(id);
    for v in seq.features.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_feature_file(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    fs::write(path, encode_feature_file(seq)?)?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    decode_feature_file(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(GebdError::Format {
                offset: self.bytes.len() as u64,
                message: format!("truncated {what}: need {n} bytes at offset {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<FeatureSequence> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(GebdError::Format { offset: 0, message: format!("bad magic {:?}", String::from_utf8_lossy(magic)) });
    }
    let version = u32::from_le_bytes(cur.array("version")?);
    if version != FEATURE_VERSION {
        return Err(GebdError::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    let l = u32::from_le_bytes(cur.array("length")?) as usize;
    let d = u32::from_le_bytes(cur.array("dimension")?) as usize;
    let snippet_rate = f64::from_le_bytes(cur.array("snippet rate")?);
    let duration = f64::from_le_bytes(cur.array("duration")?);
    let id_len = u16::from_le_bytes(cur.array("id length")?) as usize;
    let id_offset = cur.pos;
    let video_id = std::str::from_utf8(cur.take(id_len, "video id")?)
        .map_err(|e| GebdError::Format { offset: id_offset as u64, message: format!("video id is not UTF-8: {e}") })?
        .to_string();
    let payload_offset = cur.pos;
    let expected = l.checked_mul(d).and_then(|n| n.checked_mul(4)).ok_or_else(|| GebdError::Format {
        offset: 8,
        message: format!("header size {l}x{d} overflows"),
    })?;
    let available = bytes.len() - payload_offset;
    if available < expected {
        return Err(GebdError::Format {
            offset: bytes.len() as u64,
            message: format!(
                "truncated payload: header claims {l}x{d} = {} values, file holds {} bytes ({} whole values)",
                l * d,
                available,
                available / 4
            ),
        });
    }
    if available > expected {
        return Err(GebdError::Format {
            offset: (payload_offset + expected) as u64,
            message: format!("{} trailing bytes after payload", available - expected),
        });
    }
    let mut values = Vec::with_capacity(l * d);
    for (i, chunk) in bytes[payload_offset..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        if !v.is_finite() {
            return Err(GebdError::Format {
                offset: (payload_offset + 4 * i) as u64,
                message: format!("non-finite value {v} at snippet {}, dim {}", i / d.max(1), i % d.max(1)),
            });
        }
        values.push(v);
    }
    for (what, v, off) in [("snippet rate", snippet_rate, 16u64), ("duration", duration, 24)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(GebdError::Format { offset: off, message: format!("{what} must be positive and finite, got {v}") });
        }
    }
    let features = Array2::from_shape_vec((l, d), values).expect("length checked");
    Ok(FeatureSequence { video_id, snippet_rate, duration, features })
}

/// On-disk annotation record. The whole class is derived on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub duration: f64,
    pub action_boundaries: Vec<f64>,
    pub shot_boundaries: Vec<f64>,
}

impl AnnotationRecord {
    pub fn into_annotation(self, merge_window: f64) -> Result<BoundaryAnnotation> {
        BoundaryAnnotation::new(self.video_id, self.duration, self.action_boundaries, self.shot_boundaries, merge_window)
    }
}

impl From<&BoundaryAnnotation> for AnnotationRecord {
    fn from(a: &BoundaryAnnotation) -> Self {
        Self {
            video_id: a.video_id.clone(),
            duration: a.duration,
            action_boundaries: a.action_boundaries.clone(),
            shot_boundaries: a.shot_boundaries.clone(),
        }
    }
}

pub fn write_annotations(path: impl AsRef<Path>, annotations: &[BoundaryAnnotation]) -> Result<()> {
    let records: Vec<AnnotationRecord> = annotations.iter().map(AnnotationRecord::from).collect();
    fs::write(path, serde_json::to_vec_pretty(&records)?)?;
    Ok(())
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(l: usize, d: usize) -> FeatureSequence {
        FeatureSequence {
            video_id: "clip-01".into(),
            snippet_rate: 1.0,
            duration: l as f64,
            features: Array2::from_shape_fn((l, d), |(i, j)| (i as f32) * 0.25 - j as f32 * 1.5e-3),
        }
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.gebf");
        let seq = sample(5, 3);
        write_feature_file(&path, &seq).unwrap();
        assert_eq!(read_feature_file(&path).unwrap(), seq);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_feature_file(&sample(5, 3)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        match decode_feature_file(&bytes) {
            Err(GebdError::Format { offset: 0, .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload() {
        let seq = sample(10, 4);
        let bytes = encode_feature_file(&seq).unwrap();
        let cut = &bytes[..bytes.len() - 4];
        match decode_feature_file(cut) {
            Err(GebdError::Format { message, .. }) => assert!(message.contains("39 whole values"), "{message}"),
            other => panic!("expected truncation, got {other:?}"),
        }
        assert!(decode_feature_file(&bytes[..10]).is_err());
    }

    #[test]
    fn non_finite_value_reports_offset() {
        let seq = sample(3, 2);
        let mut bytes = encode_feature_file(&seq).unwrap();
        let header = 34 + seq.video_id.len();
        bytes[header + 8..header + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_feature_file(&bytes) {
            Err(GebdError::Format { offset, .. }) => assert_eq!(offset, (header + 8) as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn annotations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.json");
        let ann = BoundaryAnnotation::new("v", 10.0, vec![2.0], vec![5.0], 0.25).unwrap();
        write_annotations(&path, std::slice::from_ref(&ann)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("whole"));
        let back = read_annotations(&path).unwrap().remove(0).into_annotation(0.25).unwrap();
        assert_eq!(back, ann);
    }

    proptest! {
        #[test]
        fn feature_bytes_round_trip(
            l in 2usize..12,
            d in 1usize..6,
            seed in any::<u64>(),
            id in "[a-z0-9_]{0,12}",
        ) {
            let mut state = seed;
            let features = Array2::from_shape_fn((l, d), |_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits(((state >> 33) as u32 & 0x3fff_ffff) | 0x3000_0000) * if state & 1 == 0 { 1.0 } else { -1.0 }
            });
            let seq = FeatureSequence { video_id: id, snippet_rate: 2.5, duration: l as f64 / 2.5, features };
            let back = decode_feature_file(&encode_feature_file(&seq).unwrap()).unwrap();
            prop_assert_eq!(back.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            seq.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, seq);
        }
    }
}

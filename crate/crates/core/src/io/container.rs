//! `.hows` scene container.
//!
//! Little-endian throughout. Header (32 bytes):
//!
//! | offset | type    | field                                  |
//! |--------|---------|----------------------------------------|
//! | 0      | [u8; 4] | magic `HOWS`                           |
//! | 4      | u32     | version (1)                            |
//! | 8      | u32     | n, point count                         |
//! | 12     | u32     | d0, raw feature width                  |
//! | 16     | u32     | f, backbone feature width              |
//! | 20     | u32     | base class count B                     |
//! | 24     | u32     | ground-truth novel class count         |
//! | 28     | u32     | flags: bit 0 gt labels, bit 1 block ids |
//!
//! Payload, in order: positions `n×3 f32`, raw features `n×d0 f32`, features
//! `n×f f32`, closed logits `n×(B+1) f32`, optional gt labels `n i32`,
//! optional block ids `n i32`, then the string table: `u32` count followed by
//! `u32` byte length + UTF-8 bytes per name (base names, then novel names).

use thiserror::Error;

use crate::matrix::Matrix;
use crate::scene::{ClassNames, FrameParts, SceneFrame};

pub const MAGIC: [u8; 4] = *b"HOWS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;
const FLAG_GT: u32 = 1;
const FLAG_BLOCKS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {found} (expected {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("unknown header flags {0:#x}")]
    UnknownFlags(u32),
    #[error("malformed string table: {0}")]
    StringTable(String),
    #[error("container holds an invalid scene: {0}")]
    InvalidScene(String),
}

impl FormatError {
    /// Stable numeric code per error kind.
    pub fn code(&self) -> u8 {
        match self {
            FormatError::BadMagic(_) => 1,
            FormatError::VersionMismatch { .. } => 2,
            FormatError::TruncatedPayload { .. } => 3,
            FormatError::TrailingBytes(_) => 4,
            FormatError::UnknownFlags(_) => 5,
            FormatError::StringTable(_) => 6,
            FormatError::InvalidScene(_) => 7,
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_i32s(out: &mut Vec<u8>, values: &[i32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_scene(frame: &SceneFrame) -> Vec<u8> {
    let n = frame.len();
    let names = frame.class_names();
    let mut flags = 0;
    if frame.gt_labels().is_some() {
        flags |= FLAG_GT;
    }
    if frame.block_ids().is_some() {
        flags |= FLAG_BLOCKS;
    }
    let mut out = Vec::with_capacity(
        HEADER_LEN + 4 * n * (3 + frame.raw_dim() + frame.feature_dim() + names.base.len() + 3),
    );
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, n as u32);
    put_u32(&mut out, frame.raw_dim() as u32);
    put_u32(&mut out, frame.feature_dim() as u32);
    put_u32(&mut out, names.base.len() as u32);
    put_u32(&mut out, names.novel.len() as u32);
    put_u32(&mut out, flags);
    for p in frame.positions() {
        put_f32s(&mut out, p);
    }
    put_f32s(&mut out, frame.raw_features().as_slice());
    put_f32s(&mut out, frame.features().as_slice());
    put_f32s(&mut out, frame.closed_logits().as_slice());
    if let Some(gt) = frame.gt_labels() {
        put_i32s(&mut out, gt);
    }
    if let Some(b) = frame.block_ids() {
        put_i32s(&mut out, b);
    }
    put_u32(&mut out, (names.base.len() + names.novel.len()) as u32);
    for name in names.base.iter().chain(&names.novel) {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(FormatError::TruncatedPayload {
                needed: self.pos + len,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        let len = count.checked_mul(4).ok_or(FormatError::TruncatedPayload {
            needed: usize::MAX,
            available: self.bytes.len(),
        })?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn i32s(&mut self, count: usize) -> Result<Vec<i32>, FormatError> {
        Ok(self
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn read_scene(bytes: &[u8]) -> Result<SceneFrame, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = match r.take(4) {
        Ok(m) => m.try_into().expect("4 bytes"),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(FormatError::BadMagic(m));
        }
    };
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionMismatch { found: version });
    }
    let n = r.u32()? as usize;
    let d0 = r.u32()? as usize;
    let f = r.u32()? as usize;
    let b = r.u32()? as usize;
    let novel = r.u32()? as usize;
    let flags = r.u32()?;
    if flags & !(FLAG_GT | FLAG_BLOCKS) != 0 {
        return Err(FormatError::UnknownFlags(flags));
    }

    let positions: Vec<[f32; 3]> = r
        .f32s(n * 3)?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let raw = r.f32s(n * d0)?;
    let features = r.f32s(n * f)?;
    let logits = r.f32s(n * (b + 1))?;
    let gt = if flags & FLAG_GT != 0 { Some(r.i32s(n)?) } else { None };
    let blocks = if flags & FLAG_BLOCKS != 0 { Some(r.i32s(n)?) } else { None };

    let count = r.u32()? as usize;
    if count != b + novel {
        return Err(FormatError::StringTable(format!(
            "{count} names for {b} base and {novel} novel classes"
        )));
    }
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        let s = std::str::from_utf8(raw).map_err(|e| FormatError::StringTable(e.to_string()))?;
        names.push(s.to_string());
    }
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
    }
    let novel_names = names.split_off(b);

    let parts = FrameParts {
        positions,
        raw_features: Matrix::from_vec(n, d0, raw).expect("sized by header"),
        features: Matrix::from_vec(n, f, features).expect("sized by header"),
        closed_logits: Matrix::from_vec(n, b + 1, logits).expect("sized by header"),
        gt_labels: gt,
        block_ids: blocks,
        class_names: ClassNames {
            base: names,
            novel: novel_names,
        },
    };
    SceneFrame::new(parts).map_err(|e| FormatError::InvalidScene(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth::{generate_synthetic, SynthSpec};

    fn sample() -> SceneFrame {
        generate_synthetic(&SynthSpec {
            base_class_count: 2,
            novel_class_count: 1,
            points_per_class: 5,
            feature_dim: 4,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let bytes = write_scene(&f);
        assert_eq!(read_scene(&bytes).unwrap(), f);
    }

    #[test]
    fn truncation_detected() {
        let bytes = write_scene(&sample());
        let err = read_scene(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, FormatError::TruncatedPayload { .. }));
        assert_eq!(err.code(), 3);
        let err = read_scene(&bytes[..40]).unwrap_err();
        assert!(matches!(err, FormatError::TruncatedPayload { .. }));
    }

    #[test]
    fn header_checks() {
        let mut bytes = write_scene(&sample());
        bytes[0] ^= 0xFF;
        let err = read_scene(&bytes).unwrap_err();
        assert!(matches!(err, FormatError::BadMagic(_)));
        assert_eq!(err.code(), 1);

        let mut bytes = write_scene(&sample());
        bytes[4] = 9;
        assert!(matches!(
            read_scene(&bytes).unwrap_err(),
            FormatError::VersionMismatch { found: 9 }
        ));

        assert!(matches!(read_scene(b"HO").unwrap_err(), FormatError::BadMagic(_)));

        let mut bytes = write_scene(&sample());
        bytes.push(0);
        assert_eq!(read_scene(&bytes).unwrap_err().code(), 4);
    }
}

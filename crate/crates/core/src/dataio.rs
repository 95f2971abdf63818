//! Per-video feature sequences and the `PFVF` feature file codec.
//!
//! Byte layout, all integers and floats little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"PFVF"`                         |
//! | 4      | 4    | version, u32 = 1                        |
//! | 8      | 4×5  | T, N, C_feat, C_cont, C_dist, u32 each  |
//! | 28     | 4    | flags, u32; bit 0 = MOS present         |
//! | 32     | 4    | MOS, f32 (0.0 when absent)              |
//! | 36     | ...  | per frame: N·C_feat f32 features (row-major), C_cont f32 content, C_dist f32 distortion |
//! | end-4  | 4    | CRC-32 (IEEE) of every preceding byte   |
//!
//! Values are stored as `f32` and widened to `f64` on read.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{checked_numel, Tensor};
use crate::{Error, FormatError, Result};

pub const PFVF_MAGIC: [u8; 4] = *b"PFVF";
pub const PFVF_VERSION: u32 = 1;
const HEADER_LEN: usize = 36;
const FLAG_MOS: u32 = 1;

/// Encoder inputs for one sampled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// `N × C_feat` backbone feature map, one row per spatial position.
    pub features: Tensor,
    /// Content prior embedding, rank 1.
    pub content: Tensor,
    /// Distortion prior embedding, rank 1.
    pub distortion: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub frames: Vec<Frame>,
    pub mos: Option<f64>,
}

/// Shape summary shared by every frame of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceDims {
    pub frames: usize,
    pub tokens: usize,
    pub feature_width: usize,
    pub content_width: usize,
    pub distortion_width: usize,
}

impl FeatureSequence {
    /// Checks that every frame shares the first frame's shapes and that all
    /// values (and the MOS, when present) are finite.
    pub fn dims(&self) -> Result<SequenceDims> {
        let first = self.frames.first().ok_or(Error::EmptySequence)?;
        if first.features.rank() != 2 {
            return Err(Error::Shape {
                op: "feature_sequence",
                lhs: first.features.shape().to_vec(),
                rhs: vec![],
            });
        }
        let dims = SequenceDims {
            frames: self.frames.len(),
            tokens: first.features.shape()[0],
            feature_width: first.features.shape()[1],
            content_width: first.content.numel(),
            distortion_width: first.distortion.numel(),
        };
        for frame in &self.frames {
            let ok = frame.features.shape() == [dims.tokens, dims.feature_width]
                && frame.content.shape() == [dims.content_width]
                && frame.distortion.shape() == [dims.distortion_width];
            if !ok {
                return Err(Error::Shape {
                    op: "feature_sequence",
                    lhs: first.features.shape().to_vec(),
                    rhs: frame.features.shape().to_vec(),
                });
            }
            if !(frame.features.is_finite() && frame.content.is_finite() && frame.distortion.is_finite()) {
                return Err(Error::NonFinite { op: "feature_sequence" });
            }
        }
        if self.mos.is_some_and(|m| !m.is_finite()) {
            return Err(Error::NonFinite { op: "feature_sequence" });
        }
        Ok(dims)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn invalid(field: &'static str, reason: &str) -> Error {
    FormatError::InvalidField {
        field,
        reason: reason.into(),
    }
    .into()
}

fn to_u32(v: usize, field: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| invalid(field, "does not fit in u32"))
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64], field: &'static str) -> Result<()> {
    for &v in values {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(invalid(field, "value is not representable as a finite f32"));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(())
}

/// Serializes a sequence to `PFVF` bytes.
pub fn encode_pfvf(seq: &FeatureSequence) -> Result<Vec<u8>> {
    let d = seq.dims()?;
    let per_frame = d.tokens * d.feature_width + d.content_width + d.distortion_width;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * d.frames * per_frame + 4);
    out.extend_from_slice(&PFVF_MAGIC);
    out.extend_from_slice(&PFVF_VERSION.to_le_bytes());
    for (v, field) in [
        (d.frames, "T"),
        (d.tokens, "N"),
        (d.feature_width, "C_feat"),
        (d.content_width, "C_cont"),
        (d.distortion_width, "C_dist"),
    ] {
        out.extend_from_slice(&to_u32(v, field)?.to_le_bytes());
    }
    let flags = if seq.mos.is_some() { FLAG_MOS } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    push_f32s(&mut out, &[seq.mos.unwrap_or(0.0)], "mos")?;
    for frame in &seq.frames {
        push_f32s(&mut out, frame.features.data(), "features")?;
        push_f32s(&mut out, frame.content.data(), "content")?;
        push_f32s(&mut out, frame.distortion.data(), "distortion")?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Little-endian cursor that reports running out of bytes as truncation.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::ShapeOverflow)?;
        if end > self.buf.len() {
            return Err(FormatError::Truncated {
                needed: end,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn array<const K: usize>(&mut self) -> Result<[u8; K], FormatError> {
        let mut a = [0u8; K];
        a.copy_from_slice(self.take(K)?);
        Ok(a)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn f64(&mut self) -> Result<f64, FormatError> {
        self.array().map(f64::from_le_bytes)
    }
}

/// Checks magic and version, the two fields every format shares.
pub(crate) fn check_preamble(r: &mut Reader<'_>, magic: [u8; 4], version: u32) -> Result<(), FormatError> {
    let found = r.array::<4>()?;
    if found != magic {
        return Err(FormatError::BadMagic { found, expected: magic });
    }
    let v = r.u32()?;
    if v != version {
        return Err(FormatError::Version {
            found: v,
            expected: version,
        });
    }
    Ok(())
}

/// Verifies the trailing CRC-32 over `bytes[..len - 4]`.
pub(crate) fn check_crc(bytes: &[u8]) -> Result<(), FormatError> {
    let split = bytes.len().checked_sub(4).ok_or(FormatError::Truncated {
        needed: 4,
        available: bytes.len(),
    })?;
    let (body, tail) = bytes.split_at(split);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(())
}

fn read_f32s(r: &mut Reader<'_>, n: usize, field: &'static str) -> Result<Vec<f64>> {
    let raw = r.take(n * 4)?;
    raw.chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if v.is_finite() {
                Ok(f64::from(v))
            } else {
                Err(invalid(field, "non-finite value"))
            }
        })
        .collect()
}

/// Parses `PFVF` bytes. Checks run in order: magic, version, header fields,
/// declared size against actual size, checksum, then the values themselves.
pub fn decode_pfvf(bytes: &[u8], id: impl Into<String>) -> Result<FeatureSequence> {
    let mut r = Reader::new(bytes);
    check_preamble(&mut r, PFVF_MAGIC, PFVF_VERSION)?;
    let mut dims = [0usize; 5];
    for (slot, name) in dims.iter_mut().zip(["T", "N", "C_feat", "C_cont", "C_dist"]) {
        *slot = r.u32()? as usize;
        if *slot == 0 {
            return Err(invalid(name, "must be at least 1"));
        }
    }
    let [frames, tokens, feature_width, content_width, distortion_width] = dims;
    let flags = r.u32()?;
    if flags & !FLAG_MOS != 0 {
        return Err(invalid("flags", "unknown bits set"));
    }
    let mos_raw = f32::from_le_bytes(r.array::<4>()?);

    let per_frame = checked_numel(&[tokens, feature_width])
        .and_then(|f| f.checked_add(content_width))
        .and_then(|f| f.checked_add(distortion_width));
    let total = per_frame
        .and_then(|p| p.checked_mul(frames))
        .and_then(|p| p.checked_mul(4))
        .and_then(|p| p.checked_add(HEADER_LEN + 4))
        .ok_or(FormatError::ShapeOverflow)?;
    if bytes.len() < total {
        return Err(FormatError::Truncated {
            needed: total,
            available: bytes.len(),
        }
        .into());
    }
    if bytes.len() > total {
        return Err(FormatError::TrailingBytes(bytes.len() - total).into());
    }
    check_crc(bytes)?;

    let mos = if flags & FLAG_MOS != 0 {
        if !mos_raw.is_finite() {
            return Err(invalid("mos", "non-finite value"));
        }
        Some(f64::from(mos_raw))
    } else {
        None
    };
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let features = read_f32s(&mut r, tokens * feature_width, "features")?;
        let content = read_f32s(&mut r, content_width, "content")?;
        let distortion = read_f32s(&mut r, distortion_width, "distortion")?;
        out.push(Frame {
            features: Tensor::from_parts(vec![tokens, feature_width], features),
            content: Tensor::from_parts(vec![content_width], content),
            distortion: Tensor::from_parts(vec![distortion_width], distortion),
        });
    }
    debug_assert_eq!(r.remaining(), 4);
    Ok(FeatureSequence {
        id: id.into(),
        frames: out,
        mos,
    })
}

//! `PFMP` parameter files: a self-describing snapshot of a [`ModelParams`].
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      b"PFMP"
//! version    u32 (= 1)
//! length     u64 total file length in bytes, checksum included
//! config     u32 × 10: layers, heads, width, ff_width, tokens,
//!                      feature_width, content_width, distortion_width,
//!                      gru_hidden, tau
//!            f64: gamma
//!            u32: ablation flags (bit 0 content token, bit 1 distortion
//!                 token, bit 2 temporal pooling, bit 3 GRU)
//!            u64: seed
//! count      u32 tensor count
//! tensors    count × { name_len u32, name (UTF-8), rank u32,
//!                      extents u32 × rank, data f64 × product(extents) }
//! crc        u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Values are stored as raw `f64`, so a save/load round trip is bit-exact.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataio::{check_crc, check_preamble, Reader};
use crate::encoder::EncoderConfig;
use crate::model::{Ablation, ModelConfig, ModelParams};
use crate::temporal::PoolingConfig;
use crate::tensor::{checked_numel, Tensor};
use crate::{Error, FormatError, Result};

pub const PFMP_MAGIC: [u8; 4] = *b"PFMP";
pub const PFMP_VERSION: u32 = 1;

fn u32_field(v: usize, field: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| {
        FormatError::InvalidField {
            field,
            reason: "does not fit in u32".into(),
        }
        .into()
    })
}

fn ablation_bits(a: &Ablation) -> u32 {
    u32::from(a.use_content_token)
        | u32::from(a.use_distortion_token) << 1
        | u32::from(a.use_temporal_pooling) << 2
        | u32::from(a.use_gru) << 3
}

/// Serializes parameters (configuration inline) to `PFMP` bytes.
pub fn encode_params(params: &ModelParams) -> Result<Vec<u8>> {
    let c = &params.config;
    let e = &c.encoder;
    let mut out = Vec::new();
    out.extend_from_slice(&PFMP_MAGIC);
    out.extend_from_slice(&PFMP_VERSION.to_le_bytes());
    out.extend_from_slice(&0u64.to_le_bytes());
    for (v, name) in [
        (e.layers, "layers"),
        (e.heads, "heads"),
        (e.width, "width"),
        (e.ff_width, "ff_width"),
        (e.tokens, "tokens"),
        (e.feature_width, "feature_width"),
        (e.content_width, "content_width"),
        (e.distortion_width, "distortion_width"),
        (c.gru_hidden, "gru_hidden"),
        (c.pooling.tau, "tau"),
    ] {
        out.extend_from_slice(&u32_field(v, name)?.to_le_bytes());
    }
    out.extend_from_slice(&c.pooling.gamma.to_le_bytes());
    out.extend_from_slice(&ablation_bits(&c.ablation).to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());

    let slots = params.weights.slots();
    let names: Vec<String> = c.parameter_shapes().into_iter().map(|(n, _)| n).collect();
    if names.len() != slots.len() {
        return Err(Error::Config("parameters do not match their configuration".into()));
    }
    out.extend_from_slice(&u32_field(slots.len(), "count")?.to_le_bytes());
    for (name, t) in names.iter().zip(slots) {
        out.extend_from_slice(&u32_field(name.len(), "name")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32_field(t.rank(), "rank")?.to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&u32_field(d, "extent")?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let total = (out.len() + 4) as u64;
    out[8..16].copy_from_slice(&total.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct RawTensor<'a> {
    name: &'a [u8],
    shape: Vec<usize>,
    data: &'a [u8],
}

/// Parses `PFMP` bytes. The stored length is compared with the buffer
/// (truncation or trailing bytes), then the checksum is verified, then the
/// tensor table is parsed and validated against the stored configuration.
pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(bytes);
    check_preamble(&mut r, PFMP_MAGIC, PFMP_VERSION)?;
    let total = r.u64()?;
    let total = usize::try_from(total).map_err(|_| FormatError::ShapeOverflow)?;
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
    let mut dims = [0usize; 10];
    for slot in dims.iter_mut() {
        *slot = r.u32()? as usize;
    }
    let gamma = r.f64()?;
    let flags = r.u32()?;
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut raw = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.take(name_len)?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::new();
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let bytes_needed = checked_numel(&shape)
            .and_then(|n| n.checked_mul(8))
            .ok_or(FormatError::ShapeOverflow)?;
        let data = r.take(bytes_needed)?;
        raw.push(RawTensor { name, shape, data });
    }
    if r.remaining() != 4 {
        return Err(FormatError::InvalidField {
            field: "length",
            reason: format!(
                "tensor table ends {} bytes before the checksum",
                r.remaining().saturating_sub(4)
            ),
        }
        .into());
    }

    if flags & !0b1111 != 0 {
        return Err(FormatError::InvalidField {
            field: "ablation",
            reason: "unknown bits set".into(),
        }
        .into());
    }
    let [layers, heads, width, ff_width, tokens, feature_width, content_width, distortion_width, gru_hidden, tau] =
        dims;
    let config = ModelConfig {
        encoder: EncoderConfig {
            layers,
            heads,
            width,
            ff_width,
            tokens,
            feature_width,
            content_width,
            distortion_width,
        },
        gru_hidden,
        pooling: PoolingConfig { tau, gamma },
        ablation: Ablation {
            use_content_token: flags & 1 != 0,
            use_distortion_token: flags & 2 != 0,
            use_temporal_pooling: flags & 4 != 0,
            use_gru: flags & 8 != 0,
        },
        seed,
    };
    config.validate()?;

    let mut table: BTreeMap<&[u8], RawTensor<'_>> = BTreeMap::new();
    for t in raw {
        if table.insert(t.name, t).is_some() {
            return Err(FormatError::InvalidField {
                field: "tensor table",
                reason: "duplicate tensor name".into(),
            }
            .into());
        }
    }
    let expected = config.parameter_shapes();
    if expected.len() != table.len() {
        return Err(FormatError::InvalidField {
            field: "tensor table",
            reason: format!("{} tensors, configuration implies {}", table.len(), expected.len()),
        }
        .into());
    }
    // Build through a freshly shaped template so slot order comes from the
    // configuration, not from the file.
    let template = crate::model::init_model(&config, 0)?;
    let weights = template.weights.try_map(&mut |name, _| -> Result<Tensor> {
        let t = table.get(name.as_bytes()).ok_or_else(|| FormatError::InvalidField {
            field: "tensor table",
            reason: format!("missing tensor {name}"),
        })?;
        let (_, shape) = expected
            .iter()
            .find(|(n, _)| n == name)
            .expect("template and shape table agree");
        if &t.shape != shape {
            return Err(FormatError::InvalidField {
                field: "tensor table",
                reason: format!("tensor {name} has shape {:?}, expected {:?}", t.shape, shape),
            }
            .into());
        }
        let values: Vec<f64> = t
            .data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::InvalidField {
                field: "tensor table",
                reason: format!("tensor {name} holds a non-finite value"),
            }
            .into());
        }
        Tensor::new(t.shape.clone(), values)
    })?;
    Ok(ModelParams { config, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn small() -> ModelParams {
        let c = ModelConfig {
            encoder: EncoderConfig {
                layers: 1,
                heads: 2,
                width: 4,
                ff_width: 6,
                tokens: 2,
                feature_width: 3,
                content_width: 2,
                distortion_width: 2,
            },
            gru_hidden: 3,
            seed: 99,
            ..ModelConfig::default()
        };
        init_model(&c, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = small();
        let bytes = encode_params(&p).unwrap();
        let back = decode_params(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_params(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = encode_params(&small()).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0x01;
        assert!(matches!(
            decode_params(&bytes),
            Err(Error::Format(FormatError::Checksum { .. }))
        ));
    }

    #[test]
    fn every_corrupted_byte_is_rejected() {
        let bytes = encode_params(&small()).unwrap();
        for i in 16..bytes.len() {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            assert!(matches!(
                decode_params(&b),
                Err(Error::Format(FormatError::Checksum { .. }))
            ));
        }
    }

    #[test]
    fn older_version_names_both() {
        let mut bytes = encode_params(&small()).unwrap();
        bytes[4..8].copy_from_slice(&0u32.to_le_bytes());
        let err = decode_params(&bytes).unwrap_err();
        assert_eq!(err, Error::Format(FormatError::Version { found: 0, expected: 1 }));
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains('0') && msg.contains('1'));
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode_params(&small()).unwrap();
        assert!(matches!(
            decode_params(&bytes[..bytes.len() - 9]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_params(&bad),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_params(&long),
            Err(Error::Format(FormatError::TrailingBytes(_)))
        ));
    }

    #[test]
    fn gru_less_model_round_trips() {
        let mut c = small().config;
        c.ablation.use_gru = false;
        let p = init_model(&c, 3).unwrap();
        assert_eq!(decode_params(&encode_params(&p).unwrap()).unwrap(), p);
    }
}

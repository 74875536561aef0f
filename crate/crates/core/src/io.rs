//! The DGST binary container.
//!
//! | offset | size | field                                              |
//! |--------|------|----------------------------------------------------|
//! | 0      | 4    | magic `b"DGST"`                                    |
//! | 4      | 4    | version, `u32` = 1                                 |
//! | 8      | 4    | kind, `u32`: 0 embedding f32, 1 scalar f32, 2 labels u32 |
//! | 12     | 4    | `H`, `u32`                                         |
//! | 16     | 4    | `W`, `u32`                                         |
//! | 20     | 4    | `N`, `u32` (1 for scalar and label kinds)          |
//! | 24     | 4·H·W·N | payload, row-major `(y, x, channel)`            |
//!
//! Every integer and element is little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{EmbeddingField, LabelMap, ScalarField};

pub const MAGIC: [u8; 4] = *b"DGST";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

const KIND_EMBEDDING: u32 = 0;
const KIND_SCALAR: u32 = 1;
const KIND_LABELS: u32 = 2;

/// Any tensor that can live in a DGST file.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    Embedding(EmbeddingField),
    Scalar(ScalarField),
    Labels(LabelMap),
}

/// Borrowed view used for writing.
#[derive(Clone, Copy, Debug)]
pub enum TensorRef<'a> {
    Embedding(&'a EmbeddingField),
    Scalar(&'a ScalarField),
    Labels(&'a LabelMap),
}

impl<'a> From<&'a EmbeddingField> for TensorRef<'a> {
    fn from(t: &'a EmbeddingField) -> Self {
        TensorRef::Embedding(t)
    }
}

impl<'a> From<&'a ScalarField> for TensorRef<'a> {
    fn from(t: &'a ScalarField) -> Self {
        TensorRef::Scalar(t)
    }
}

impl<'a> From<&'a LabelMap> for TensorRef<'a> {
    fn from(t: &'a LabelMap) -> Self {
        TensorRef::Labels(t)
    }
}

impl<'a> From<&'a Tensor> for TensorRef<'a> {
    fn from(t: &'a Tensor) -> Self {
        match t {
            Tensor::Embedding(e) => TensorRef::Embedding(e),
            Tensor::Scalar(s) => TensorRef::Scalar(s),
            Tensor::Labels(l) => TensorRef::Labels(l),
        }
    }
}

impl Tensor {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Tensor::Embedding(_) => "embedding",
            Tensor::Scalar(_) => "scalar",
            Tensor::Labels(_) => "labels",
        }
    }

    pub fn into_embedding(self) -> Result<EmbeddingField> {
        match self {
            Tensor::Embedding(e) => Ok(e),
            other => Err(Error::KindMismatch {
                expected: "embedding",
                found: other.kind_name(),
            }),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarField> {
        match self {
            Tensor::Scalar(s) => Ok(s),
            other => Err(Error::KindMismatch {
                expected: "scalar",
                found: other.kind_name(),
            }),
        }
    }

    pub fn into_labels(self) -> Result<LabelMap> {
        match self {
            Tensor::Labels(l) => Ok(l),
            other => Err(Error::KindMismatch {
                expected: "labels",
                found: other.kind_name(),
            }),
        }
    }
}

fn header(kind: u32, h: usize, w: usize, n: usize, payload_elems: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * payload_elems);
    out.extend_from_slice(&MAGIC);
    for v in [VERSION, kind, h as u32, w as u32, n as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Serializes a tensor to DGST bytes.
pub fn encode<'a>(tensor: impl Into<TensorRef<'a>>) -> Vec<u8> {
    match tensor.into() {
        TensorRef::Embedding(e) => {
            let mut out = header(KIND_EMBEDDING, e.height(), e.width(), e.depth(), e.data().len());
            e.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            out
        }
        TensorRef::Scalar(s) => {
            let mut out = header(KIND_SCALAR, s.height(), s.width(), 1, s.data().len());
            s.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            out
        }
        TensorRef::Labels(l) => encode_raw_labels(l.height(), l.width(), l.labels()),
    }
}

/// Label-kind bytes for arbitrary ids (no contiguity requirement).
pub fn encode_raw_labels(height: usize, width: usize, labels: &[u32]) -> Vec<u8> {
    let mut out = header(KIND_LABELS, height, width, 1, labels.len());
    labels.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

struct Header {
    kind: u32,
    height: usize,
    width: usize,
    depth: usize,
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

fn parse_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().expect("4-byte slice"),
            });
        }
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            found: bytes[..4].try_into().expect("4-byte slice"),
        });
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = read_u32(bytes, 8);
    if kind > KIND_LABELS {
        return Err(Error::UnknownKind(kind));
    }
    let height = read_u32(bytes, 12) as usize;
    let width = read_u32(bytes, 16) as usize;
    let depth = read_u32(bytes, 20) as usize;
    let elems = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(depth))
        .ok_or_else(|| Error::Invalid("declared tensor size overflows".into()))?;
    let expected = HEADER_LEN + 4 * elems;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingData {
            expected,
            actual: bytes.len(),
        });
    }
    Ok((
        Header {
            kind,
            height,
            width,
            depth,
        },
        &bytes[HEADER_LEN..],
    ))
}

fn le_words(payload: &[u8]) -> impl Iterator<Item = [u8; 4]> + '_ {
    payload
        .chunks_exact(4)
        .map(|c| c.try_into().expect("4-byte chunk"))
}

/// Parses DGST bytes, validating the header and the tensor invariants.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let (h, payload) = parse_header(bytes)?;
    match h.kind {
        KIND_EMBEDDING => {
            let data = le_words(payload).map(f32::from_le_bytes).collect();
            Ok(Tensor::Embedding(EmbeddingField::new(h.height, h.width, h.depth, data)?))
        }
        KIND_SCALAR | KIND_LABELS if h.depth != 1 => Err(Error::Invalid(format!(
            "scalar and label tensors must have N = 1, found {}",
            h.depth
        ))),
        KIND_SCALAR => {
            let data = le_words(payload).map(f32::from_le_bytes).collect();
            Ok(Tensor::Scalar(ScalarField::new(h.height, h.width, data)?))
        }
        _ => {
            let labels = le_words(payload).map(u32::from_le_bytes).collect();
            Ok(Tensor::Labels(LabelMap::new(h.height, h.width, labels)?))
        }
    }
}

/// Parses a label-kind file without relabeling (used for seed maps, where 0
/// means "unassigned").
pub fn decode_raw_labels(bytes: &[u8]) -> Result<(usize, usize, Vec<u32>)> {
    let (h, payload) = parse_header(bytes)?;
    if h.kind != KIND_LABELS {
        return Err(Error::KindMismatch {
            expected: "labels",
            found: if h.kind == KIND_EMBEDDING {
                "embedding"
            } else {
                "scalar"
            },
        });
    }
    if h.depth != 1 {
        return Err(Error::Invalid(format!(
            "label tensors must have N = 1, found {}",
            h.depth
        )));
    }
    Ok((h.height, h.width, le_words(payload).map(u32::from_le_bytes).collect()))
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_bytes(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    std::fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_tensor<'a>(tensor: impl Into<TensorRef<'a>>, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path, &encode(tensor))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&read_bytes(path)?)
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<EmbeddingField> {
    load_tensor(path)?.into_embedding()
}

pub fn load_scalar(path: impl AsRef<Path>) -> Result<ScalarField> {
    load_tensor(path)?.into_scalar()
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    load_tensor(path)?.into_labels()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_small_embedding() {
        let e = EmbeddingField::new(2, 2, 3, (0..12).map(|v| v as f32).collect()).unwrap();
        let back = decode(&encode(&e)).unwrap();
        assert_eq!(back, Tensor::Embedding(e));
    }

    #[test]
    fn label_file_byte_count() {
        let l = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        let bytes = encode(&l);
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(&bytes[..4], b"DGST");
        assert_eq!(read_u32(&bytes, 8), 2);
        assert_eq!(&bytes[24..], &[0, 0, 0, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = encode(&ScalarField::filled(1, 1, 0.0).unwrap());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic { found }) if &found == b"XGST"));
    }

    #[test]
    fn unsupported_version_is_reported() {
        let mut bytes = encode(&ScalarField::filled(1, 1, 0.0).unwrap());
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn short_payload_is_truncation() {
        let e = EmbeddingField::new(2, 2, 3, vec![0.0; 12]).unwrap();
        let bytes = encode(&e);
        let cut = &bytes[..HEADER_LEN + 40];
        assert!(matches!(
            decode(cut),
            Err(Error::Truncated {
                expected: 72,
                actual: 64
            })
        ));
    }

    #[test]
    fn long_payload_is_rejected() {
        let mut bytes = encode(&ScalarField::filled(1, 1, 0.0).unwrap());
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(decode(&bytes), Err(Error::TrailingData { .. })));
    }

    #[test]
    fn nan_payload_is_invariant_violation() {
        let mut bytes = encode(&ScalarField::filled(1, 1, 0.0).unwrap());
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Invalid(_))));
    }

    #[test]
    fn loaded_labels_are_compacted() {
        let bytes = encode_raw_labels(1, 3, &[5, 9, 5]);
        let l = decode(&bytes).unwrap().into_labels().unwrap();
        assert_eq!(l.labels(), &[0, 1, 0]);
        assert_eq!(decode_raw_labels(&bytes).unwrap().2, vec![5, 9, 5]);
    }

    #[test]
    fn kind_mismatch_on_typed_load() {
        let bytes = encode(&ScalarField::filled(1, 1, 0.0).unwrap());
        let err = decode(&bytes).unwrap().into_embedding().unwrap_err();
        assert!(matches!(err, Error::KindMismatch { .. }));
    }
}

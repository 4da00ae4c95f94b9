//! Binary checkpoints: a JSON header followed by a raw `f64` payload.
//!
//! ```text
//! magic [4] | version u16 = 1 | reserved u16 = 0 | header_len u64
//! | header (UTF-8 JSON) | payload f64 little-endian
//! ```
//!
//! Probe checkpoints (`OHPM`) carry `W` (row-major) then `b`. Preprocessing
//! checkpoints (`OHPS`) carry the centering mean, class means, covariance
//! and precision, in that order.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::prep::{ClassStats, Preprocessor};
use crate::probe::{ProbeModel, TrainConfig};

pub const PROBE_MAGIC: &[u8; 4] = b"OHPM";
pub const PREP_MAGIC: &[u8; 4] = b"OHPS";
const VERSION: u16 = 1;
const FIXED: usize = 4 + 2 + 2 + 8;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated checkpoint: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("payload holds {found} values, header implies {expected}")]
    PayloadSize { expected: usize, found: usize },
    #[error("invalid checkpoint contents: {0}")]
    Invalid(String),
}

fn encode(magic: &[u8; 4], header: &impl Serialize, payload: &[&[f64]]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("header serializes");
    let count: usize = payload.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(FIXED + header.len() + 8 * count);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for part in payload {
        for v in *part {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode<'a, H: Deserialize<'a>>(
    magic: &[u8; 4],
    bytes: &'a [u8],
) -> Result<(H, Vec<f64>), CheckpointError> {
    if bytes.len() < FIXED {
        return Err(CheckpointError::Truncated {
            expected: FIXED,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if &found != magic {
        return Err(CheckpointError::BadMagic {
            found,
            expected: *magic,
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let hend = FIXED.saturating_add(hlen);
    if bytes.len() < hend {
        return Err(CheckpointError::Truncated {
            expected: hend,
            found: bytes.len(),
        });
    }
    let header = serde_json::from_slice(&bytes[FIXED..hend])?;
    let rest = &bytes[hend..];
    if rest.len() % 8 != 0 {
        return Err(CheckpointError::Truncated {
            expected: hend + rest.len().div_ceil(8) * 8,
            found: bytes.len(),
        });
    }
    let payload = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHeader {
    pub num_classes: usize,
    pub dim: usize,
    pub config: TrainConfig,
}

pub fn encode_probe(model: &ProbeModel, config: &TrainConfig) -> Vec<u8> {
    let header = ProbeHeader {
        num_classes: model.num_classes(),
        dim: model.dim(),
        config: config.clone(),
    };
    encode(PROBE_MAGIC, &header, &[model.weights.as_slice(), &model.bias])
}

pub fn decode_probe(bytes: &[u8]) -> Result<(ProbeModel, ProbeHeader), CheckpointError> {
    let (header, payload): (ProbeHeader, _) = decode(PROBE_MAGIC, bytes)?;
    let (k, d) = (header.num_classes, header.dim);
    let expected = k * d + k;
    if payload.len() != expected {
        return Err(CheckpointError::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    let weights = Matrix::from_vec(k, d, payload[..k * d].to_vec()).expect("size checked");
    let bias = payload[k * d..].to_vec();
    let model =
        ProbeModel::new(weights, bias).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    Ok((model, header))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepHeader {
    pub num_classes: usize,
    pub dim: usize,
    pub shrinkage_lambda: f64,
    pub counts: Vec<usize>,
}

pub fn encode_prep(prep: &Preprocessor, stats: &ClassStats) -> Vec<u8> {
    let header = PrepHeader {
        num_classes: stats.num_classes(),
        dim: stats.dim(),
        shrinkage_lambda: stats.shrinkage_lambda,
        counts: stats.counts.clone(),
    };
    encode(
        PREP_MAGIC,
        &header,
        &[
            &prep.mean,
            stats.class_means.as_slice(),
            stats.covariance.as_slice(),
            stats.precision.as_slice(),
        ],
    )
}

pub fn decode_prep(bytes: &[u8]) -> Result<(Preprocessor, ClassStats), CheckpointError> {
    let (header, payload): (PrepHeader, Vec<f64>) = decode(PREP_MAGIC, bytes)?;
    let (k, d) = (header.num_classes, header.dim);
    let expected = d + k * d + 2 * d * d;
    if payload.len() != expected {
        return Err(CheckpointError::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    if header.counts.len() != k {
        return Err(CheckpointError::Invalid(format!(
            "{} class counts for {k} classes",
            header.counts.len()
        )));
    }
    let mut it = payload.into_iter();
    let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<f64>>();
    let prep = Preprocessor { mean: take(d) };
    let class_means = Matrix::from_vec(k, d, take(k * d)).expect("size checked");
    let covariance = Matrix::from_vec(d, d, take(d * d)).expect("size checked");
    let precision = Matrix::from_vec(d, d, take(d * d)).expect("size checked");
    Ok((
        prep,
        ClassStats {
            class_means,
            counts: header.counts,
            covariance,
            precision,
            shrinkage_lambda: header.shrinkage_lambda,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_round_trip() {
        let w = Matrix::from_rows(2, &[[0.5, -1.25], [3.0, 1e-300], [f64::MIN_POSITIVE, 2.0]]).unwrap();
        let model = ProbeModel::new(w, vec![0.1, -0.2, 0.3]).unwrap();
        let cfg = TrainConfig::default();
        let bytes = encode_probe(&model, &cfg);
        let (back, header) = decode_probe(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(header.config, cfg);
        assert!(matches!(
            decode_probe(&bytes[..bytes.len() - 8]),
            Err(CheckpointError::PayloadSize { .. })
        ));
        assert!(matches!(decode_prep(&bytes), Err(CheckpointError::BadMagic { .. })));
    }

    #[test]
    fn prep_round_trip() {
        let prep = Preprocessor {
            mean: vec![1.0, 2.0],
        };
        let stats = ClassStats {
            class_means: Matrix::from_rows(2, &[[0.6, 0.8], [-1.0, 0.0]]).unwrap(),
            counts: vec![3, 4],
            covariance: Matrix::from_diagonal(&[2.0, 4.0]),
            precision: Matrix::from_diagonal(&[0.5, 0.25]),
            shrinkage_lambda: 0.125,
        };
        let (p, s) = decode_prep(&encode_prep(&prep, &stats)).unwrap();
        assert_eq!(p, prep);
        assert_eq!(s, stats);
    }
}

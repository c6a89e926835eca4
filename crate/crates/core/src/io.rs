//! Flat binary format for dual weights.
//!
//! Layout (little-endian): magic `KHMW`, version `u32`, `P u64`, `N u64`,
//! `gamma f64`, `lambda f64`, regularizer `u8` (0 = L2, 1 = L1), seed `u64`,
//! compression kind `u8` (0 none, 1 quantize, 2 binarize, 3 prune) and its
//! parameter `f64`, then `P·N` row-major `f64` weights.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::compression::{Center, CompressionSpec};
use crate::error::{Error, Result};
use crate::pattern::DualWeights;
use crate::training::Regularizer;

pub const MAGIC: [u8; 4] = *b"KHMW";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8 + 8 + 1 + 8 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightsHeader {
    pub gamma: f64,
    pub lambda: f64,
    pub regularizer: Regularizer,
    pub seed: u64,
    pub compression: CompressionSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub header: WeightsHeader,
    pub weights: DualWeights,
}

fn compression_fields(spec: CompressionSpec) -> (u8, f64) {
    match spec {
        CompressionSpec::None => (0, 0.0),
        CompressionSpec::Quantize { bits } => (1, f64::from(bits)),
        CompressionSpec::Binarize { center: Center::Mean } => (2, 0.0),
        CompressionSpec::Binarize { center: Center::Median } => (2, 1.0),
        CompressionSpec::Prune { sparsity } => (3, sparsity),
    }
}

fn compression_from_fields(kind: u8, param: f64) -> Result<CompressionSpec> {
    let spec = match (kind, param) {
        (0, _) => CompressionSpec::None,
        (1, b) if b.fract() == 0.0 && (0.0..=64.0).contains(&b) => CompressionSpec::Quantize { bits: b as u32 },
        (2, 0.0) => CompressionSpec::Binarize { center: Center::Mean },
        (2, 1.0) => CompressionSpec::Binarize { center: Center::Median },
        (3, s) => CompressionSpec::Prune { sparsity: s },
        _ => return Err(Error::Format(format!("bad compression field ({kind}, {param})"))),
    };
    spec.validate()?;
    Ok(spec)
}

impl WeightsFile {
    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.weights.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.weights.p() as u64).to_le_bytes());
        out.extend_from_slice(&(self.weights.n() as u64).to_le_bytes());
        out.extend_from_slice(&h.gamma.to_le_bytes());
        out.extend_from_slice(&h.lambda.to_le_bytes());
        out.push(match h.regularizer {
            Regularizer::L2 => 0,
            Regularizer::L1 => 1,
        });
        out.extend_from_slice(&h.seed.to_le_bytes());
        let (kind, param) = compression_fields(h.compression);
        out.push(kind);
        out.extend_from_slice(&param.to_le_bytes());
        for v in self.weights.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("file too short for header: {} bytes", bytes.len())));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = u32::from_le_bytes(r.take());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let p = u64::from_le_bytes(r.take()) as usize;
        let n = u64::from_le_bytes(r.take()) as usize;
        let gamma = f64::from_le_bytes(r.take());
        let lambda = f64::from_le_bytes(r.take());
        let regularizer = match r.take::<1>()[0] {
            0 => Regularizer::L2,
            1 => Regularizer::L1,
            t => return Err(Error::Format(format!("bad regularizer tag {t}"))),
        };
        let seed = u64::from_le_bytes(r.take());
        let kind = r.take::<1>()[0];
        let param = f64::from_le_bytes(r.take());
        let compression = compression_from_fields(kind, param)?;
        let expected = p
            .checked_mul(n)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        if bytes.len() - HEADER_LEN != expected {
            return Err(Error::Format(format!(
                "expected {expected} weight bytes for {p} x {n}, found {}",
                bytes.len() - HEADER_LEN
            )));
        }
        let values = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let alpha = Array2::from_shape_vec((p, n), values).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            header: WeightsHeader {
                gamma,
                lambda,
                regularizer,
                seed,
                compression,
            },
            weights: DualWeights::new(alpha)?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const K: usize>(&mut self) -> [u8; K] {
        let out = self.bytes[self.pos..self.pos + K].try_into().expect("length checked");
        self.pos += K;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightsFile {
        let alpha = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - 1.3) * (j as f64 + 0.1).powi(3) * 1e-3);
        WeightsFile {
            header: WeightsHeader {
                gamma: 0.03,
                lambda: 0.03,
                regularizer: Regularizer::L1,
                seed: u64::MAX - 5,
                compression: CompressionSpec::Binarize { center: Center::Median },
            },
            weights: DualWeights::new(alpha).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = sample();
        let back = WeightsFile::decode(&f.encode()).unwrap();
        assert_eq!(back, f);
        for (a, b) in f.weights.values().zip(back.weights.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let f = sample();
        f.write(&path).unwrap();
        assert_eq!(WeightsFile::read(&path).unwrap(), f);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().encode();
        assert!(WeightsFile::decode(&bytes[..10]).is_err());
        assert!(WeightsFile::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(WeightsFile::decode(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 9;
        assert!(WeightsFile::decode(&bad).is_err());
    }
}

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FAD_MAGIC: &[u8; 4] = b"FAD1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Real = 0,
    Generated = 1,
}

/// A feature matrix with labels and a real/generated flag per row.
///
/// Layout: `FAD1`, then little-endian `u32` row count, `u32` rank,
/// `u32` per dimension, `f32` values, `u32` labels, and one origin byte
/// per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub origins: Vec<Origin>,
}

impl FeatureSet {
    pub fn new(features: Tensor, labels: Vec<usize>, origins: Vec<Origin>) -> Result<Self> {
        let n = features.shape().first().copied().unwrap_or(0);
        if features.rank() == 0 || labels.len() != n || origins.len() != n {
            return Err(Error::Consistency(format!(
                "features {:?}, {} labels, {} origin flags",
                features.shape(),
                labels.len(),
                origins.len()
            )));
        }
        Ok(FeatureSet {
            features,
            labels,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let shape = self.features.shape();
        let mut out = Vec::new();
        out.extend_from_slice(FAD_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(shape.len() as u32 - 1).to_le_bytes());
        for &d in &shape[1..] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.features.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out.extend(self.origins.iter().map(|&o| o as u8));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != FAD_MAGIC {
            return Err(Error::Format(format!("bad FAD magic {magic:02x?}")));
        }
        let n = r.u32()?;
        let rank = r.u32()?;
        let mut shape = vec![n];
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        let count: usize = shape.iter().product();
        let data = r
            .take(count * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let labels = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
        let origins = r
            .take(n)?
            .iter()
            .map(|&b| match b {
                0 => Ok(Origin::Real),
                1 => Ok(Origin::Generated),
                other => Err(Error::Format(format!("origin flag {other}"))),
            })
            .collect::<Result<_>>()?;
        FeatureSet::new(Tensor::new(shape, data)?, labels, origins)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.at..self.at + len)
            .ok_or_else(|| Error::Format(format!("FAD1 truncated at byte {}", self.at)))?;
        self.at += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn write_fad(path: &Path, set: &FeatureSet) -> Result<()> {
    std::fs::write(path, set.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_fad(path: &Path) -> Result<FeatureSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSet::decode(&bytes)
}

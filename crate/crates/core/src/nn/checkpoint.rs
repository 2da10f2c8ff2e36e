//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "SCDC"  u32 version (=1)  u32 layer_count
//! layer_count x { u32 rows, u32 cols, rows*cols f64 weights (row-major), cols f64 biases }
//! u32 centroid_rows  u32 centroid_cols  rows*cols f64 centroids   (0 0 when absent)
//! f64 lr  f64 beta1  f64 beta2  f64 epsilon  f64 weight_decay  u64 step_count
//! u32 moment_block_count
//! first moments of each block, then second moments of each block (f64)
//! ```
//!
//! Blocks are ordered weights, biases per layer (encoder first), then centroids.
//! Moment block lengths follow from the parameter shapes. The first half of
//! the layers is the encoder; the last layer of each half is linear and the
//! rest use relu.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::adam::{AdamConfig, AdamState};
use super::autoencoder::{Activation, Autoencoder, Dense, ParamBlocks};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SCDC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub autoencoder: Autoencoder,
    pub centroids: Option<Array2<f64>>,
    pub adam: AdamState,
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("dimension {v} does not fit in u32")))
}

impl Checkpoint {
    fn block_lengths(&self) -> Vec<usize> {
        let mut lens: Vec<usize> = self.autoencoder.blocks().iter().map(|b| b.len()).collect();
        if let Some(c) = &self.centroids {
            lens.push(c.len());
        }
        lens
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let layers: Vec<&Dense> = self.autoencoder.layers().collect();
        out.extend_from_slice(&dim_u32(layers.len())?.to_le_bytes());
        let put = |out: &mut Vec<u8>, vals: &mut dyn Iterator<Item = &f64>| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for l in layers {
            out.extend_from_slice(&dim_u32(l.weight.nrows())?.to_le_bytes());
            out.extend_from_slice(&dim_u32(l.weight.ncols())?.to_le_bytes());
            put(&mut out, &mut l.weight.iter());
            put(&mut out, &mut l.bias.iter());
        }
        match &self.centroids {
            Some(c) => {
                out.extend_from_slice(&dim_u32(c.nrows())?.to_le_bytes());
                out.extend_from_slice(&dim_u32(c.ncols())?.to_le_bytes());
                put(&mut out, &mut c.iter());
            }
            None => out.extend_from_slice(&[0u8; 8]),
        }
        let a = &self.adam;
        for v in [a.config.lr, a.config.beta1, a.config.beta2, a.config.epsilon, a.config.weight_decay] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&a.step_count.to_le_bytes());
        let lens = self.block_lengths();
        if a.first.len() > lens.len() {
            return Err(Error::shape(format!("at most {} moment blocks", lens.len()), a.first.len()));
        }
        out.extend_from_slice(&dim_u32(a.first.len())?.to_le_bytes());
        for (b, m) in a.first.iter().chain(&a.second).enumerate() {
            if m.len() != lens[b % a.first.len()] {
                return Err(Error::shape(format!("moment block of length {}", lens[b % a.first.len()]), m.len()));
            }
            put(&mut out, &mut m.iter());
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let bytes = self.to_bytes()?;
        w.write_all(&bytes).map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Parse("checkpoint: bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Parse(format!("checkpoint: unsupported version {version}")));
        }
        let count = cur.u32()? as usize;
        if count < 2 || count % 2 != 0 {
            return Err(Error::Parse(format!("checkpoint: layer count {count} is not a symmetric autoencoder")));
        }
        let half = count / 2;
        let mut layers = Vec::with_capacity(count);
        for i in 0..count {
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let weight = Array2::from_shape_vec((rows, cols), cur.f64s(rows * cols)?)
                .map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
            let bias = Array1::from(cur.f64s(cols)?);
            let activation = if i % half == half - 1 { Activation::Identity } else { Activation::Relu };
            layers.push(Dense::new(weight, bias, activation)?);
        }
        let decoder = layers.split_off(half);
        let autoencoder = Autoencoder::from_layers(layers, decoder)?;

        let (crow, ccol) = (cur.u32()? as usize, cur.u32()? as usize);
        let centroids = if crow == 0 && ccol == 0 {
            None
        } else {
            Some(
                Array2::from_shape_vec((crow, ccol), cur.f64s(crow * ccol)?)
                    .map_err(|e| Error::Parse(format!("checkpoint: {e}")))?,
            )
        };
        let config = AdamConfig {
            lr: cur.f64()?,
            beta1: cur.f64()?,
            beta2: cur.f64()?,
            epsilon: cur.f64()?,
            weight_decay: cur.f64()?,
        };
        let step_count = cur.u64()?;
        let blocks = cur.u32()? as usize;
        let mut ck = Checkpoint { autoencoder, centroids, adam: AdamState::new(config) };
        let lens = ck.block_lengths();
        if blocks > lens.len() {
            return Err(Error::Parse(format!("checkpoint: {blocks} moment blocks for {} parameters", lens.len())));
        }
        let first = lens[..blocks].iter().map(|&l| cur.f64s(l)).collect::<Result<Vec<_>>>()?;
        let second = lens[..blocks].iter().map(|&l| cur.f64s(l)).collect::<Result<Vec<_>>>()?;
        if cur.pos != bytes.len() {
            return Err(Error::Parse("checkpoint: trailing bytes".into()));
        }
        ck.adam.step_count = step_count;
        ck.adam.first = first;
        ck.adam.second = second;
        Ok(ck)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Parse("checkpoint: truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Parse("checkpoint: overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    fn sample() -> Checkpoint {
        let mut net = Autoencoder::new(3, &[4, 2], &mut stream(5, "init")).unwrap();
        let grads = net.zero_grads();
        let mut adam = AdamState::new(AdamConfig::default());
        let g: Vec<Vec<f64>> = grads.blocks().iter().map(|b| vec![0.25; b.len()]).collect();
        let g_ref: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
        adam.step(&mut net.blocks_mut(), &g_ref).unwrap();
        Checkpoint { autoencoder: net, centroids: Some(array![[0.5, -1.0], [2.0, 3.0]]), adam }
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SCDC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        let w00 = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        assert_eq!(w00, sample().autoencoder.encoder[0].weight[[0, 0]]);
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);

        let fresh = Checkpoint { centroids: None, adam: AdamState::new(AdamConfig::default()), ..ck };
        assert_eq!(Checkpoint::from_bytes(&fresh.to_bytes().unwrap()).unwrap(), fresh);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}

//! Binary checkpoint container for [`WhiteBoxModel`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic         8 bytes   "OAUDCKPT"
//! version       u32       currently 1
//! header_len    u32
//! header        JSON      {"config": .., "provenance": .., "trained_epochs": ..}
//! layer_count   u32
//! per layer:
//!   rows        u32       fan_in
//!   cols        u32       fan_out
//!   weights     f64 x rows*cols, row-major
//!   bias_len    u32       equals cols
//!   bias        f64 x bias_len
//! checksum      32 bytes  SHA-256 of every preceding byte
//! ```

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, ModelConfig, Provenance, WhiteBoxModel};

pub const MAGIC: &[u8; 8] = b"OAUDCKPT";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    provenance: Provenance,
    trained_epochs: usize,
}

pub fn save(model: &WhiteBoxModel) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        provenance: model.provenance().clone(),
        trained_epochs: model.trained_epochs(),
    })
    .expect("checkpoint header is always serializable");

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        let (rows, cols) = layer.weights.dim();
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in layer.weights.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(layer.bias.len() as u32).to_le_bytes());
        for v in layer.bias.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| corrupt(format!("{what} length overflows")))?;
        let b = self.take(len, what)?;
        Ok(b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Deserialize(msg.into())
}

pub fn load(bytes: &[u8]) -> Result<WhiteBoxModel> {
    if bytes.len() < MAGIC.len() + 8 + CHECKSUM_LEN {
        return Err(corrupt("checkpoint is truncated"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(corrupt(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    if Sha256::digest(body).as_slice() != checksum {
        return Err(corrupt("checksum mismatch"));
    }
    let header_len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| corrupt(format!("bad header: {e}")))?;
    header
        .config
        .validate_architecture()
        .map_err(|e| corrupt(format!("header config invalid: {e}")))?;

    let count = r.u32("layer count")? as usize;
    if count != header.config.num_layers() {
        return Err(corrupt(format!(
            "header describes {} layers, body has {count}",
            header.config.num_layers()
        )));
    }
    let mut layers = Vec::with_capacity(count);
    for (i, w) in header.config.layer_sizes.windows(2).enumerate() {
        let rows = r.u32("weight rows")? as usize;
        let cols = r.u32("weight cols")? as usize;
        if (rows, cols) != (w[0], w[1]) {
            return Err(corrupt(format!(
                "layer {} is {rows}x{cols}, config says {}x{}",
                i + 1,
                w[0],
                w[1]
            )));
        }
        let weights = r.f64s(rows * cols, "weights")?;
        let bias_len = r.u32("bias length")? as usize;
        if bias_len != cols {
            return Err(corrupt(format!("layer {} bias length {bias_len} != {cols}", i + 1)));
        }
        let bias = r.f64s(bias_len, "bias")?;
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((rows, cols), weights)
                .map_err(|e| corrupt(e.to_string()))?,
            bias: Array1::from(bias),
        });
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after last layer"));
    }
    WhiteBoxModel::from_parts(header.config, layers, header.trained_epochs, header.provenance)
        .map_err(|e| corrupt(e.to_string()))
}

pub fn save_file(model: &WhiteBoxModel, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, save(model))?;
    Ok(())
}

pub fn load_file(path: &std::path::Path) -> Result<WhiteBoxModel> {
    load(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{train, Activation, LabeledData};
    use ndarray::array;

    fn trained() -> WhiteBoxModel {
        let data = LabeledData::new(
            array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
            vec![0.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        let cfg = ModelConfig {
            epochs: 7,
            batch_size: 2,
            weight_decay: 1e-3,
            seed: 11,
            ..ModelConfig::classifier(vec![2, 5, 3, 2], Activation::Relu)
        };
        train(&cfg, &data).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = trained();
        let back = load(&save(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.trained_epochs(), 7);
        let probe = array![[0.3, -1.2], [2.0, 0.5]];
        for l in 0..=m.num_layers() {
            assert_eq!(
                m.layer_access(l, probe.view()).unwrap(),
                back.layer_access(l, probe.view()).unwrap()
            );
        }
    }

    #[test]
    fn truncated_is_rejected() {
        let bytes = save(&trained());
        for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(load(&bytes[..cut]), Err(Error::Deserialize(_))));
        }
    }

    #[test]
    fn version_mismatch_and_bit_flip_rejected() {
        let mut bytes = save(&trained());
        bytes[8] = 9;
        assert!(matches!(load(&bytes), Err(Error::Deserialize(m)) if m.contains("version")));
        let mut bytes = save(&trained());
        let mid = bytes.len() - 40;
        bytes[mid] ^= 1;
        assert!(matches!(load(&bytes), Err(Error::Deserialize(m)) if m.contains("checksum")));
    }
}

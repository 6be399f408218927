//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        5 bytes  "FFRG1"
//! schema hash 32 bytes  SHA-256 of the canonical schema JSON
//! dims         5 x u64  input D, hidden H, branch hidden H', fields N, branches K
//! blocks       f64      per layer: weight (outputs x inputs, row-major), then bias
//! ```
//!
//! Layers appear as trunk (H x D), branch 1 (N+1 x H), then for each further
//! branch its hidden layer (H' x H) and output layer (N+1 x H').

use std::path::Path;

use super::network::{ModelDims, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"FFRG1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schema_hash: [u8; 32],
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.params.dims;
        let mut out = Vec::with_capacity(MAGIC.len() + 32 + 40 + 8 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.schema_hash);
        for v in [
            d.input,
            d.hidden,
            d.branch_hidden,
            d.classes - 1,
            d.branches,
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for layer in self.params.layers() {
            for v in layer.weight.iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let rest = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| bad("bad magic"))?;
        if rest.len() < 32 + 40 {
            return Err(bad("truncated header"));
        }
        let (hash, rest) = rest.split_at(32);
        let (dims_raw, mut body) = rest.split_at(40);
        let dim =
            |i: usize| u64::from_le_bytes(dims_raw[i * 8..i * 8 + 8].try_into().unwrap()) as usize;
        let dims = ModelDims {
            input: dim(0),
            hidden: dim(1),
            branch_hidden: dim(2),
            classes: dim(3) + 1,
            branches: dim(4),
        };
        if dims.branches == 0 || dims.input == 0 || dims.hidden == 0 {
            return Err(bad("degenerate dimensions"));
        }
        let mut params = ModelParams::zeros(dims);
        if body.len() != 8 * params.num_params() {
            return Err(bad("payload size does not match dimensions"));
        }
        for i in 0..params.num_params() {
            let (v, tail) = body.split_at(8);
            params.set_flat(i, f64::from_le_bytes(v.try_into().unwrap()));
            body = tail;
        }
        if !params.is_finite() {
            return Err(bad("non-finite weights"));
        }
        Ok(Checkpoint {
            schema_hash: hash.try_into().unwrap(),
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dims = ModelDims {
            input: 7,
            hidden: 4,
            branch_hidden: 3,
            classes: 5,
            branches: 3,
        };
        let ck = Checkpoint {
            schema_hash: [7; 32],
            params: ModelParams::init(dims, 11),
        };
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..5], b"FFRG1");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"FFRG2").is_err());
    }
}

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PolicyParams, PolicyShape, BLOCK_NAMES};
use crate::error::{Error, Result};
use crate::retrieval::RetrievalMode;

pub const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk form of a trained router.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub version: u32,
    pub shape: PolicyShape,
    pub retrieval: RetrievalMode,
    pub blocks: IndexMap<String, Block>,
}

impl ParamsFile {
    pub fn from_params(params: &PolicyParams, retrieval: RetrievalMode) -> Self {
        let dims = [
            vec![params.w1.nrows(), params.w1.ncols()],
            vec![params.b1.len()],
            vec![params.w2.nrows(), params.w2.ncols()],
            vec![params.b2.len()],
            vec![params.wg.nrows(), params.wg.ncols()],
            vec![params.bg.len()],
            vec![params.wc.nrows(), params.wc.ncols()],
            vec![params.bc.len()],
        ];
        let blocks = params
            .blocks()
            .into_iter()
            .zip(dims)
            .map(|((name, data), shape)| (name.to_string(), Block { shape, data: data.to_vec() }))
            .collect();
        ParamsFile { version: PARAMS_VERSION, shape: params.shape, retrieval, blocks }
    }

    pub fn to_params(&self) -> Result<PolicyParams> {
        if self.version != PARAMS_VERSION {
            return Err(Error::Config(format!("unsupported params version {}", self.version)));
        }
        let mut params = PolicyParams::zeros(self.shape);
        let expected = ParamsFile::from_params(&params, self.retrieval);
        if self.blocks.len() != BLOCK_NAMES.len() {
            return Err(Error::Config(format!(
                "expected {} parameter blocks, found {}",
                BLOCK_NAMES.len(),
                self.blocks.len()
            )));
        }
        for (name, slot) in params.blocks_mut() {
            let block =
                self.blocks.get(name).ok_or_else(|| Error::Config(format!("missing parameter block `{name}`")))?;
            if block.shape != expected.blocks[name].shape || block.data.len() != slot.len() {
                return Err(Error::Config(format!(
                    "block `{name}` has shape {:?} with {} values, expected {:?}",
                    block.shape,
                    block.data.len(),
                    expected.blocks[name].shape
                )));
            }
            slot.copy_from_slice(&block.data);
        }
        if !params.is_finite() {
            return Err(Error::Config("parameters contain non-finite values".into()));
        }
        Ok(params)
    }
}

pub fn write_params(path: &Path, params: &PolicyParams, retrieval: RetrievalMode) -> Result<()> {
    let text = serde_json::to_string(&ParamsFile::from_params(params, retrieval))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path) -> Result<(PolicyParams, RetrievalMode)> {
    let file: ParamsFile = serde_json::from_str(&crate::error::read_to_string(path)?)?;
    Ok((file.to_params()?, file.retrieval))
}

/// Hex SHA-256 of the serialized parameters.
pub fn params_digest(params: &PolicyParams, retrieval: RetrievalMode) -> String {
    let text = serde_json::to_string(&ParamsFile::from_params(params, retrieval)).expect("params serialize");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Fusion;

    #[test]
    fn round_trip_is_bit_exact() {
        for fusion in [Fusion::Gated, Fusion::Add, Fusion::Concat] {
            let shape = PolicyShape { input_dim: 16, hidden_dim: 4, actions: 3, fusion };
            let p = PolicyParams::init(shape, 42);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.json");
            write_params(&path, &p, RetrievalMode::Random).unwrap();
            let (q, mode) = read_params(&path).unwrap();
            assert_eq!(q, p);
            assert_eq!(mode, RetrievalMode::Random);
            assert_eq!(params_digest(&q, mode), params_digest(&p, RetrievalMode::Random));
        }
    }

    #[test]
    fn rejects_bad_files() {
        let shape = PolicyShape { input_dim: 8, hidden_dim: 2, actions: 2, fusion: Fusion::Gated };
        let p = PolicyParams::init(shape, 1);
        let mut file = ParamsFile::from_params(&p, RetrievalMode::Semantic);
        file.blocks["gate.w"].data.pop();
        assert!(file.to_params().is_err());

        let mut file = ParamsFile::from_params(&p, RetrievalMode::Semantic);
        file.version = 99;
        assert!(file.to_params().is_err());

        let mut file = ParamsFile::from_params(&p, RetrievalMode::Semantic);
        file.blocks.shift_remove("classifier.b");
        assert!(file.to_params().is_err());
    }
}

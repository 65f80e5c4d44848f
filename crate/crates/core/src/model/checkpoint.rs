//! Versioned JSON checkpoints holding exactly the trainable groups.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelFingerprint, SocialFusion};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: (usize, usize),
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub fingerprint: ModelFingerprint,
    #[serde(default)]
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(model: &SocialFusion, step: u64) -> Self {
        let p = model.params();
        Self {
            format_version: FORMAT_VERSION,
            fingerprint: model.fingerprint(),
            step,
            tensors: p
                .names()
                .iter()
                .zip(p.values())
                .map(|(n, v)| NamedTensor {
                    name: n.clone(),
                    shape: v.dim(),
                    data: v.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format_version > FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: format version {} is newer than supported {FORMAT_VERSION}",
                path.display(),
                ck.format_version
            )));
        }
        Ok(ck)
    }

    /// Copies the stored tensors into `model` after checking that it has
    /// the same architecture.
    pub fn apply(&self, model: &mut SocialFusion) -> Result<()> {
        let expect = model.fingerprint();
        if self.fingerprint != expect {
            return Err(Error::Checkpoint(format!(
                "checkpoint fingerprint {:?} does not match model {:?}",
                self.fingerprint, expect
            )));
        }
        let params = model.params_mut();
        if self.tensors.len() != params.len() {
            return Err(Error::Checkpoint("tensor count mismatch".into()));
        }
        for t in &self.tensors {
            let slot = params
                .get_mut(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", t.name)))?;
            if slot.dim() != t.shape {
                return Err(Error::Checkpoint(format!("tensor {} has shape {:?}", t.name, t.shape)));
            }
            *slot = Array2::from_shape_vec(t.shape, t.data.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", t.name)))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_util::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = tiny_model();
        for v in m.params_mut().values_mut() {
            v.mapv_inplace(|x| x + 0.1234567890123);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::capture(&m, 3).save(&path).unwrap();
        let mut fresh = tiny_model();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.step, 3);
        ck.apply(&mut fresh).unwrap();
        assert_eq!(fresh.params(), m.params());
    }

    #[test]
    fn mismatched_fingerprint_is_rejected() {
        let m = tiny_model();
        let mut ck = Checkpoint::capture(&m, 0);
        ck.fingerprint.lora_rank = 99;
        assert!(matches!(ck.apply(&mut tiny_model()), Err(Error::Checkpoint(_))));
    }
}

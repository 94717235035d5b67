use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::math::ParamSet;
use crate::model::{Dims, Mode, Model, Vocab};
use crate::semantics::Ontology;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a model: weights, vocabulary, ontology and
/// the configuration it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: Mode,
    pub dims: Dims,
    pub config: TrainConfig,
    pub ontology_fingerprint: String,
    pub ontology: Ontology,
    pub vocab: Vocab,
    pub params: ParamSet,
    pub epoch: usize,
    pub dev_ser: Option<f64>,
    pub dev_bleu: Option<f64>,
}

impl Checkpoint {
    pub fn new(model: &Model, config: &TrainConfig, epoch: usize, dev_ser: Option<f64>, dev_bleu: Option<f64>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            mode: model.mode,
            dims: model.dims,
            config: config.clone(),
            ontology_fingerprint: model.ontology.fingerprint(),
            ontology: model.ontology.clone(),
            vocab: model.vocab.clone(),
            params: model.params.clone(),
            epoch,
            dev_ser,
            dev_bleu,
        }
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(
            self.mode,
            self.dims,
            self.ontology.clone(),
            self.vocab.clone(),
            self.params.clone(),
        )
    }

    /// Fails unless `ontology` is the one the checkpoint was trained with.
    pub fn check_ontology(&self, ontology: &Ontology) -> Result<()> {
        let fp = ontology.fingerprint();
        if fp != self.ontology_fingerprint {
            return Err(Error::Compatibility(format!(
                "checkpoint was trained with ontology {}, given ontology is {}",
                short(&self.ontology_fingerprint),
                short(&fp)
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(json).map_err(|e| Error::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.ontology.fingerprint() != ck.ontology_fingerprint {
            return Err(Error::Compatibility("checkpoint ontology does not match its fingerprint".into()));
        }
        Ok(ck)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json_str(&text)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

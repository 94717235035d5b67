use serde::{Deserialize, Serialize};

use super::Objective;
use crate::generation::{DEFAULT_BEAM, DEFAULT_MAX_LEN};
use crate::model::{Dims, Mode};
use crate::semantics::Split;
use crate::{Error, Result};

/// Training and decoding hyperparameters. Missing fields in a config file
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub hidden: usize,
    pub embed: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr_scratch: f64,
    pub lr_adapt: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub beam: usize,
    pub max_len: usize,
    /// Defaults to the attention objective in attention mode, NLL otherwise.
    pub objective: Option<Objective>,
    /// Split used for model selection and early stopping.
    pub monitor: Split,
    /// Evaluate on the monitored split every this many epochs.
    pub eval_every: usize,
    /// Stop as soon as the monitored SER is at most this...
    pub target_ser: Option<f64>,
    /// ...and the monitored BLEU at least this.
    pub target_bleu: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::TreeAtt,
            hidden: 100,
            embed: 100,
            layers: 1,
            dropout: 0.25,
            lr_scratch: 0.0025,
            lr_adapt: 0.001,
            batch_size: 16,
            max_epochs: 200,
            patience: 20,
            seed: 1,
            grad_clip: Some(5.0),
            beam: DEFAULT_BEAM,
            max_len: DEFAULT_MAX_LEN,
            objective: None,
            monitor: Split::Dev,
            eval_every: 1,
            target_ser: None,
            target_bleu: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(json).map_err(|e| Error::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            embed: self.embed,
            hidden: self.hidden,
        }
    }

    pub fn objective(&self) -> Objective {
        self.objective.unwrap_or(if self.mode.has_attention() {
            Objective::Att
        } else {
            Objective::Nll
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("beam", self.beam),
            ("max_len", self.max_len),
            ("eval_every", self.eval_every),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if self.layers != 1 {
            return Err(Error::Config(format!("only single-layer networks are supported, got {}", self.layers)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for (name, lr) in [("lr_scratch", self.lr_scratch), ("lr_adapt", self.lr_adapt)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("`{name}` must be a positive number, got {lr}")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.objective == Some(Objective::Att) && !self.mode.has_attention() {
            return Err(Error::Config(format!("the attention objective needs mode tree+att, not {}", self.mode)));
        }
        Ok(())
    }
}

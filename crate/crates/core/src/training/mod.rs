mod checkpoint;
mod config;
mod loss;
mod sweep;
mod train;

pub use checkpoint::{write_atomic, Checkpoint, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use loss::{att_loss, check_sentence_gradients, nll_loss, sentence_loss, Objective};
pub use sweep::{run_matrix, SweepRow, SweepSpec, SweepTable};
pub use train::{
    adapt, evaluate, fit, sample_adaptation, select, train, AdaptOutcome, Decoding, EpochLog, EvalReport,
    TrainOutcome,
};

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod generation;
pub mod math;
pub mod metrics;
pub mod model;
pub mod semantics;
pub mod training;

pub use error::{Error, Result};
pub use model::{Dims, Mode, Model, Vocab};
pub use semantics::{Corpus, Example, Ontology, SemanticRepresentation, Split};
pub use training::{Checkpoint, TrainConfig};

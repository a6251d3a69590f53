//! Linear probing toolkit for measuring how much topic information
//! contextual embeddings carry and how it inflates probe scores.

pub mod amnesic;
pub mod corpus;
pub mod embedstore;
pub mod error;
pub mod experiments;
pub mod folds;
pub mod linalg;
pub mod linprobe;
pub mod metrics;
mod rng;
pub mod scalar;
pub mod synth;
pub mod topicspec;

pub use corpus::{Corpus, Instance, Sentence, TaskDataset, TaskKind};
pub use embedstore::{EmbeddingStore, FeatureTable, StoreWriter};
pub use error::{Error, Result};
pub use folds::{Fold, FoldPlan, Mode};
pub use linprobe::{LabeledSet, ProbeModel, TrainConfig};
pub use scalar::Scalar;

pub type ProbeModelF32 = linprobe::ProbeModel<f32>;
pub type ProbeModelF64 = linprobe::ProbeModel<f64>;
pub type ProjectionF32 = amnesic::ProjectionMatrix<f32>;
pub type ProjectionF64 = amnesic::ProjectionMatrix<f64>;

//! CPU engine for training and running small convolutional networks on
//! handwritten-character data: tensors, layers, a model builder, Adam
//! training with gradient checking, IDX dataset ingestion, and the
//! accuracy/ROC/AUC evaluation suite.

pub mod checkpoint;
pub mod dataset;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use dataset::{LabeledDataset, SplitIndices};
pub use model::{Model, ModelConfig};
pub use tensor::{Scalar, Shape, Tensor};
pub use train::{AdamHyper, AdamState, CurvePoint, TrainSchedule};

//! Joint embeddings of images and fine-grained text descriptions.
//!
//! Images enter as fixed feature vectors; text is encoded by one of several
//! trainable encoders (bag of words, averaged word vectors, attributes,
//! temporal CNN, LSTM, or a CNN with a recurrent layer on top). Both sides
//! meet in a bilinear compatibility score trained with a structured hinge
//! objective that can penalize misclassification from the image side, the
//! text side, or both.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod joint;

pub use autodiff::{ParamStore, Tape, Tensor, Var};
pub use checkpoint::Checkpoint;
pub use data::{ClassId, ClassSplitDataset, Level, SyntheticConfig};
pub use encoders::{EncoderSpec, Family, ImageMode};
pub use error::{Error, Result};
pub use eval::{CaptionCount, EvalReport, EvalSettings};
pub use experiment::{DatasetSource, ExperimentConfig};
pub use joint::{CompatibilityModel, Objective, TrainingConfig};

//! The compatibility model, its objectives, minibatching, and training.

pub mod batch;
pub mod classify;
pub mod loss;
pub mod model;
pub mod train;

pub use batch::{epoch_batches, BatchEntry, MiniBatch, PreparedCorpus};
pub use classify::{argmax_class, class_embedding, classify_image, classify_text};
pub use loss::{loss_image_side, loss_text_side, objective, BatchScores, Objective};
pub use model::{compatibility, zero_one_loss, CompatibilityModel, ImageConfig};
pub use train::{train, train_step, TrainState, TrainingConfig};

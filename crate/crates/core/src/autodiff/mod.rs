//! Dense tensors, a reverse-mode tape, and the RMSprop updater.

mod params;
mod rmsprop;
mod tape;
mod tensor;

pub use params::{Bound, Init, Param, ParamId, ParamStore};
pub use rmsprop::{RmsPropConfig, RmsPropState};
pub use tape::{Gradients, HingeSide, Tape, Var};
pub use tensor::Tensor;

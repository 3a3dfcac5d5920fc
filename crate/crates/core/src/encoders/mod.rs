//! Text encoders `φ(t)` and the image encoder `θ(v)`.

mod image;
mod layers;
mod spec;
mod text;

pub use image::{ImageEncoder, ImageMode};
pub use layers::{ConvLayer, ConvStack, Linear, Recurrent};
pub use spec::{CnnSpec, ConvBlock, EncoderSpec, Family, LstmSpec, RnnCell, RnnSpec};
pub use text::{EncoderInput, Tables, TextEncoder};

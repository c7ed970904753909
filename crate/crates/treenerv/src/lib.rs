//! Tree-structured temporal feature grid for neural video representation.
//!
//! A video is represented by a self-balancing search tree of trainable
//! feature tensors keyed by time, plus a convolutional decoder that maps an
//! interpolated time embedding to a frame. Training grows the tree by
//! inserting midpoint nodes into the intervals with the highest
//! reconstruction error, so sampling density follows temporal variation.
//! A compression pipeline (global magnitude pruning, affine quantization,
//! canonical Huffman coding) serializes the trained model into a compact
//! container with bits-per-pixel accounting.

pub mod analyze;
pub mod autodiff;
pub mod codec;
pub mod decoder;
pub mod trainer;
pub mod tree;
pub mod video;

pub use autodiff::{Tape, Tensor, Value};
pub use decoder::{Decoder, DecoderConfig};
pub use trainer::{FitResult, TrainConfig};
pub use tree::TreeGrid;
pub use video::VideoSequence;

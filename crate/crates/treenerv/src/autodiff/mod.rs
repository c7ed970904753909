//! Dense tensor storage and a reverse-mode automatic differentiation tape.
//!
//! The tape is an arena: every value produced during a forward pass lives in
//! it, identified by a [`Value`] handle. Parameters are copied in as leaves,
//! ops append nodes that remember enough state for the vector-Jacobian
//! product, and [`Tape::backward`] replays the records in reverse. Values are
//! stored in 32-bit floats; loss and gradient accumulation run in 64-bit.

mod tape;
mod tensor;

pub use tape::{Tape, Value};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("conv2d kernel must be 1 or 3, got {0}")]
    KernelSize(usize),
    #[error("pixel_shuffle: {channels} channels not divisible by {factor}^2")]
    ChannelsNotDivisible { channels: usize, factor: usize },
    #[error("lerp_combine weights must sum to 1, got {0}")]
    WeightsNotAffine(f64),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("value id {0} is not recorded on this tape")]
    UnknownValue(usize),
    #[error("tape already consumed by backward")]
    TapeConsumed,
}

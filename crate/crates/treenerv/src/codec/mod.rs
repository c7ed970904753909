//! Model compression pipeline: global magnitude pruning, affine
//! quantization, canonical Huffman entropy coding, the serialized model
//! container, and rate/distortion accounting.

pub mod container;
pub mod huffman;
pub mod metrics;
pub mod prune;
pub mod quant;

pub use container::{compress, decompress, CompressOptions, ModelContainer};
pub use huffman::{entropy_decode, entropy_encode};
pub use metrics::{bpp, psnr, psnr_from_mse};
pub use prune::{prune_global, PruneMask};
pub use quant::{dequantize, quantize_affine, QuantizedTensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("prune fraction must be in [0, 1), got {0}")]
    BadFraction(f64),
    #[error("quantization bits must be in 2..=16, got {0}")]
    BadBits(u8),
    #[error("cannot quantize an empty tensor")]
    EmptyTensor,
    #[error("symbol {symbol} does not fit in {bits} bits")]
    SymbolOutOfRange { symbol: u16, bits: u8 },
    #[error("corrupt bitstream at bit offset {offset}: {detail}")]
    CorruptBitstream { offset: usize, detail: String },
    #[error("bad container magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {got} (expected {want})")]
    VersionMismatch { got: u32, want: u32 },
    #[error("container truncated: {0}")]
    Truncated(String),
    #[error("container checksum mismatch")]
    ChecksumMismatch,
    #[error("container header invalid: {0}")]
    BadHeader(String),
    #[error("zero-size video")]
    ZeroSizeVideo,
}

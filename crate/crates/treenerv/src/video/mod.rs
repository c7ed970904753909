//! Video sequences: frame storage, netpbm file I/O, synthetic generators.

mod netpbm;
mod synth;

pub use netpbm::{load_frames, save_frames};
pub use synth::{synth, SynthKind};

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::trainer::FrameSource;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no frames found in {0}")]
    EmptyDirectory(String),
    #[error("{path}: {detail}")]
    BadFile { path: String, detail: String },
    #[error("{path}: resolution {got:?} differs from first frame {want:?}")]
    MixedResolution {
        path: String,
        got: (usize, usize, usize),
        want: (usize, usize, usize),
    },
    #[error("frame numbering not contiguous: expected {expected}, found {found}")]
    NonContiguous { expected: u64, found: u64 },
    #[error("video needs at least {need} frames, got {got}")]
    TooShort { need: usize, got: usize },
}

/// A loaded video: frames as `C x H x W` tensors with pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct VideoSequence {
    pub frames: Vec<Tensor>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub source: String,
}

impl VideoSequence {
    pub fn new(frames: Vec<Tensor>, source: String) -> Result<Self, VideoError> {
        if frames.len() < 2 {
            return Err(VideoError::TooShort {
                need: 2,
                got: frames.len(),
            });
        }
        let shape = frames[0].shape().to_vec();
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != shape.as_slice() {
                return Err(VideoError::MixedResolution {
                    path: format!("frame {i}"),
                    got: (f.shape()[0], f.shape()[1], f.shape()[2]),
                    want: (shape[0], shape[1], shape[2]),
                });
            }
        }
        Ok(VideoSequence {
            channels: shape[0],
            height: shape[1],
            width: shape[2],
            frames,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Mean squared difference between consecutive frames; entry `i` compares
    /// frame `i` with frame `i+1`.
    pub fn adjacent_mse(&self) -> Vec<f64> {
        self.frames
            .windows(2)
            .map(|w| crate::codec::metrics::mse64(&w[0], &w[1]))
            .collect()
    }
}

impl FrameSource for VideoSequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, idx: usize) -> &Tensor {
        &self.frames[idx]
    }
}

//! Deterministic synthetic videos for experiments and regression tests.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::{VideoError, VideoSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// First half is a static scene with faint noise, second half a moving
    /// pattern whose adjacent-frame MSE is at least ten times larger.
    StaticDynamic,
    /// Slowly drifting gradient; every adjacent-frame MSE stays below 1e-3.
    Smooth,
    /// Alternating calm and burst segments of eight frames.
    Piecewise,
}

impl std::str::FromStr for SynthKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static_dynamic" => Ok(SynthKind::StaticDynamic),
            "smooth" => Ok(SynthKind::Smooth),
            "piecewise" => Ok(SynthKind::Piecewise),
            other => Err(format!("unknown synth kind {other}")),
        }
    }
}

fn static_scene(x: usize, y: usize, c: usize, w: usize, h: usize) -> f64 {
    let fx = x as f64 / w as f64;
    let fy = y as f64 / h as f64;
    0.5 + 0.3 * (TAU * (fx + 0.5 * fy) + 0.7 * c as f64).sin()
}

fn moving_scene(x: usize, y: usize, c: usize, t: f64, h: usize) -> f64 {
    let fy = y as f64 / h as f64;
    0.5 + 0.35 * (TAU * (x as f64 + 2.0 * t) / 16.0 + 0.5 * (TAU * fy).cos() + c as f64).sin()
}

fn smooth_scene(x: usize, y: usize, c: usize, t: f64, w: usize, h: usize) -> f64 {
    let fx = x as f64 / w as f64;
    let fy = y as f64 / h as f64;
    0.5 + 0.35 * (TAU * (fx + 0.5 * fy) + 0.02 * t + 0.6 * c as f64).sin()
}

fn frame_from<F: FnMut(usize, usize, usize) -> f64>(h: usize, w: usize, mut f: F) -> Tensor {
    let mut data = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                data[(c * h + y) * w + x] = f(x, y, c).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("frame shape is consistent")
}

/// Generate an RGB sequence of `frames` frames at `height x width`.
pub fn synth(
    kind: SynthKind,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<VideoSequence, VideoError> {
    if frames < 4 {
        return Err(VideoError::TooShort {
            need: 4,
            got: frames,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_amp = 0.002f64;
    let mut out = Vec::with_capacity(frames);
    match kind {
        SynthKind::StaticDynamic => {
            let half = frames / 2;
            for t in 0..frames {
                let frame = if t < half {
                    frame_from(height, width, |x, y, c| {
                        static_scene(x, y, c, width, height)
                            + noise_amp * rng.random_range(-1.0..1.0)
                    })
                } else {
                    frame_from(height, width, |x, y, c| {
                        moving_scene(x, y, c, t as f64, height)
                    })
                };
                out.push(frame);
            }
        }
        SynthKind::Smooth => {
            for t in 0..frames {
                out.push(frame_from(height, width, |x, y, c| {
                    smooth_scene(x, y, c, t as f64, width, height)
                }));
            }
        }
        SynthKind::Piecewise => {
            // Phase advances slowly in calm segments, fast in bursts.
            let mut phase = 0.0f64;
            for t in 0..frames {
                let burst = (t / 8) % 2 == 1;
                if t > 0 {
                    phase += if burst { 0.8 } else { 0.02 };
                }
                let p = phase;
                out.push(frame_from(height, width, |x, y, c| {
                    let fx = x as f64 / width as f64;
                    let fy = y as f64 / height as f64;
                    0.5 + 0.35 * (TAU * (fx + 0.5 * fy) + p + 0.6 * c as f64).sin()
                        + noise_amp * rng.random_range(-1.0..1.0)
                }));
            }
        }
    }
    let video = VideoSequence::new(out, format!("synth:{kind:?}:{seed}"))?;

    // Generator-enforced contracts.
    match kind {
        SynthKind::StaticDynamic => {
            let ratio = static_dynamic_ratio(&video);
            assert!(
                ratio >= 10.0,
                "static/dynamic adjacent-MSE ratio {ratio} below 10"
            );
        }
        SynthKind::Smooth => {
            let max = video
                .adjacent_mse()
                .into_iter()
                .fold(0.0f64, f64::max);
            assert!(max < 1e-3, "smooth adjacent MSE {max} exceeds 1e-3");
        }
        SynthKind::Piecewise => {}
    }
    Ok(video)
}

/// Mean adjacent-frame MSE of the second half over the first half, with the
/// pair straddling the boundary excluded from both.
pub fn static_dynamic_ratio(video: &VideoSequence) -> f64 {
    let mses = video.adjacent_mse();
    let half = video.len() / 2;
    let first: f64 = mses[..half - 1].iter().sum::<f64>() / (half - 1) as f64;
    let second: f64 = mses[half..].iter().sum::<f64>() / (mses.len() - half) as f64;
    second / first.max(1e-30)
}

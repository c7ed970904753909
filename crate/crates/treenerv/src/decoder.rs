//! Cascaded upsampling decoder from a time embedding to a frame.
//!
//! The first block is the bottlenecked two-conv variant (a thin projection
//! around the pixel-shuffle), later blocks are the single wide conv followed
//! by pixel-shuffle, and a 1x1 head with a logistic squash maps to pixels in
//! (0, 1). All spatial growth comes from pixel-shuffle; convolutions are
//! stride-1 with same padding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Value};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("decoder config invalid: {0}")]
    BadConfig(String),
    #[error("embedding shape {got:?} does not match decoder input {want:?}")]
    EmbeddingShape { got: Vec<usize>, want: Vec<usize> },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Decoder architecture: embedding shape, per-block upscale factors and
/// output channels, and the output pixel format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    /// Embedding shape as (h, w, d), channel-last like the grid values.
    pub input_shape: (usize, usize, usize),
    /// Per-block upscale factor S.
    pub strides: Vec<usize>,
    /// Per-block output channels O.
    pub channels: Vec<usize>,
    /// Floor applied when deriving channel schedules.
    pub min_channels: usize,
    /// 1 for grayscale, 3 for RGB.
    pub output_channels: usize,
}

impl Default for DecoderConfig {
    /// Desk-scale default: 4x8x16 embedding upsampled 8x to 32x64 RGB frames.
    fn default() -> Self {
        DecoderConfig {
            input_shape: (4, 8, 16),
            strides: vec![2, 2, 2],
            channels: vec![32, 16, 8],
            min_channels: 8,
            output_channels: 3,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        let (h, w, d) = self.input_shape;
        if h == 0 || w == 0 || d == 0 {
            return Err(DecoderError::BadConfig(format!(
                "input shape has a zero extent: {:?}",
                self.input_shape
            )));
        }
        if self.strides.is_empty() {
            return Err(DecoderError::BadConfig("no blocks configured".into()));
        }
        if self.strides.len() != self.channels.len() {
            return Err(DecoderError::BadConfig(format!(
                "{} strides but {} channel entries",
                self.strides.len(),
                self.channels.len()
            )));
        }
        if self.strides.iter().any(|&s| s == 0) {
            return Err(DecoderError::BadConfig("stride of 0".into()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(DecoderError::BadConfig("channel count of 0".into()));
        }
        if self.output_channels != 1 && self.output_channels != 3 {
            return Err(DecoderError::BadConfig(format!(
                "output_channels must be 1 or 3, got {}",
                self.output_channels
            )));
        }
        Ok(())
    }

    /// Frame shape (C, H, W) this decoder produces.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        let (h, w, _) = self.input_shape;
        let upscale: usize = self.strides.iter().product();
        (self.output_channels, h * upscale, w * upscale)
    }

    /// Bottleneck width for the first block: `max(1, min(d, O) / 4)`.
    pub fn dprime(&self) -> usize {
        let d = self.input_shape.2;
        let o = self.channels[0];
        (d.min(o) / 4).max(1)
    }

    /// Halving channel schedule starting at `start`, floored at `min_channels`.
    pub fn halving_schedule(start: usize, min_channels: usize, blocks: usize) -> Vec<usize> {
        let mut c = start;
        let mut out = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            out.push(c.max(min_channels));
            c = (c / 2).max(min_channels);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Standard,
    Enerv,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub kernel: usize,
}

impl ConvLayer {
    fn init<R: Rng>(out_ch: usize, in_ch: usize, kernel: usize, rng: &mut R) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let w_bound = (6.0 / fan_in).sqrt() as f32;
        let b_bound = (1.0 / fan_in).sqrt() as f32;
        ConvLayer {
            weight: Tensor::uniform(vec![out_ch, in_ch, kernel, kernel], -w_bound, w_bound, rng)
                .with_requires_grad(true),
            bias: Tensor::uniform(vec![out_ch], -b_bound, b_bound, rng).with_requires_grad(true),
            kernel,
        }
    }
}

/// One upsampling block: a wide conv into pixel-shuffle (standard), or a thin
/// conv into pixel-shuffle into a second conv (the bottlenecked first block).
#[derive(Debug, Clone)]
pub struct NervBlock {
    pub kind: BlockKind,
    pub stride: usize,
    pub conv_a: ConvLayer,
    pub conv_b: Option<ConvLayer>,
}

/// Weight-only and total trainable parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub weights: usize,
    pub with_biases: usize,
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;
    fn add(self, rhs: ParamCount) -> ParamCount {
        ParamCount {
            weights: self.weights + rhs.weights,
            with_biases: self.with_biases + rhs.with_biases,
        }
    }
}

impl NervBlock {
    fn build<R: Rng>(
        kind: BlockKind,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        dprime: usize,
        rng: &mut R,
    ) -> Self {
        let s2 = stride * stride;
        match kind {
            BlockKind::Standard => NervBlock {
                kind,
                stride,
                conv_a: ConvLayer::init(out_ch * s2, in_ch, 3, rng),
                conv_b: None,
            },
            BlockKind::Enerv => NervBlock {
                kind,
                stride,
                conv_a: ConvLayer::init(dprime * s2, in_ch, 3, rng),
                conv_b: Some(ConvLayer::init(out_ch, dprime, 3, rng)),
            },
        }
    }

    /// Parameter count from the allocated layer shapes. For a standard block
    /// the weights come to `9*d*O*S^2`; for the bottlenecked block
    /// `9*d'*(d*S^2 + O)`.
    pub fn param_count(&self) -> ParamCount {
        let mut weights = self.conv_a.weight.numel();
        let mut biases = self.conv_a.bias.numel();
        if let Some(b) = &self.conv_b {
            weights += b.weight.numel();
            biases += b.bias.numel();
        }
        ParamCount {
            weights,
            with_biases: weights + biases,
        }
    }
}

/// Weight-count formulas for the two block types.
pub fn standard_block_weights(d: usize, o: usize, s: usize) -> usize {
    9 * d * o * s * s
}

pub fn enerv_block_weights(d: usize, o: usize, s: usize, dprime: usize) -> usize {
    9 * dprime * (d * s * s + o)
}

/// The full decoder: one bottlenecked block, standard blocks after, and a
/// 1x1 logistic head.
#[derive(Debug, Clone)]
pub struct Decoder {
    config: DecoderConfig,
    pub blocks: Vec<NervBlock>,
    pub head: ConvLayer,
}

/// Tape handles for every decoder parameter, in canonical order.
pub struct DecoderBinding {
    values: Vec<Value>,
}

impl DecoderBinding {
    /// Bind from externally-created leaves; order must match [`Decoder::params`].
    pub fn from_values(values: Vec<Value>) -> Self {
        DecoderBinding { values }
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }
}

impl Decoder {
    /// Deterministic build: same config and seed give bitwise-identical
    /// initial weights.
    pub fn build(config: DecoderConfig, seed: u64) -> Result<Self, DecoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dprime = config.dprime();
        let mut blocks = Vec::with_capacity(config.strides.len());
        let mut in_ch = config.input_shape.2;
        for (i, (&stride, &out_ch)) in config.strides.iter().zip(&config.channels).enumerate() {
            let kind = if i == 0 {
                BlockKind::Enerv
            } else {
                BlockKind::Standard
            };
            blocks.push(NervBlock::build(kind, in_ch, out_ch, stride, dprime, &mut rng));
            in_ch = out_ch;
        }
        let head = ConvLayer::init(config.output_channels, in_ch, 1, &mut rng);
        Ok(Decoder {
            config,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    /// All parameter tensors in canonical order: per block conv weights then
    /// biases, then the head. Serialization and the optimizer share this
    /// ordering.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.push(&block.conv_a.weight);
            out.push(&block.conv_a.bias);
            if let Some(b) = &block.conv_b {
                out.push(&b.weight);
                out.push(&b.bias);
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            out.push(&mut block.conv_a.weight);
            out.push(&mut block.conv_a.bias);
            if let Some(b) = &mut block.conv_b {
                out.push(&mut b.weight);
                out.push(&mut b.bias);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// True for parameters that are conv weights (prunable); biases are not.
    pub fn param_is_weight(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.push(true);
            out.push(false);
            if block.conv_b.is_some() {
                out.push(true);
                out.push(false);
            }
        }
        out.push(true);
        out.push(false);
        out
    }

    /// Register every parameter on a tape as gradient-carrying leaves.
    pub fn bind(&self, tape: &mut Tape) -> DecoderBinding {
        DecoderBinding {
            values: self.params().iter().map(|p| tape.leaf(p)).collect(),
        }
    }

    /// Taped forward pass from a channel-last embedding value. The embedding
    /// transpose to compute layout happens here.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        binding: &DecoderBinding,
        embedding: Value,
    ) -> Result<Value, DecoderError> {
        let (h, w, d) = self.config.input_shape;
        if tape.shape(embedding) != [h, w, d] {
            return Err(DecoderError::EmbeddingShape {
                got: tape.shape(embedding).to_vec(),
                want: vec![h, w, d],
            });
        }
        let mut x = tape.to_channels_first(embedding)?;
        let mut vi = 0usize;
        for block in &self.blocks {
            let w_a = binding.values[vi];
            let b_a = binding.values[vi + 1];
            vi += 2;
            x = tape.conv2d(x, w_a, b_a, block.conv_a.kernel)?;
            x = tape.pixel_shuffle(x, block.stride)?;
            x = tape.gelu(x)?;
            if block.conv_b.is_some() {
                let w_b = binding.values[vi];
                let b_b = binding.values[vi + 1];
                vi += 2;
                x = tape.conv2d(x, w_b, b_b, 3)?;
                x = tape.gelu(x)?;
            }
        }
        let w_h = binding.values[vi];
        let b_h = binding.values[vi + 1];
        x = tape.conv2d(x, w_h, b_h, self.head.kernel)?;
        Ok(tape.sigmoid(x)?)
    }

    /// Inference: same computation on a scratch tape without gradients.
    pub fn infer(&self, embedding: &Tensor) -> Result<Tensor, DecoderError> {
        let mut tape = Tape::new();
        let emb = tape.constant(embedding);
        let binding = DecoderBinding {
            values: self
                .params()
                .iter()
                .map(|p| tape.constant(p))
                .collect(),
        };
        let out = self.forward_bound(&mut tape, &binding, emb)?;
        Ok(tape.to_tensor(out))
    }

    /// Total parameter count: blocks plus head.
    pub fn param_count(&self) -> ParamCount {
        let head = ParamCount {
            weights: self.head.weight.numel(),
            with_biases: self.head.weight.numel() + self.head.bias.numel(),
        };
        self.blocks
            .iter()
            .map(|b| b.param_count())
            .fold(head, |acc, c| acc + c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_config() -> DecoderConfig {
        DecoderConfig::default()
    }

    #[test]
    fn output_shape_arithmetic() {
        let cfg = desk_config();
        assert_eq!(cfg.output_shape(), (3, 32, 64));
    }

    #[test]
    fn forward_produces_frame_shape() {
        let cfg = desk_config();
        let dec = Decoder::build(cfg.clone(), 1).unwrap();
        let emb = Tensor::zeros(vec![4, 8, 16]);
        let out = dec.infer(&emb).unwrap();
        assert_eq!(out.shape(), &[3, 32, 64]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn stride_one_keeps_spatial_size() {
        let cfg = DecoderConfig {
            input_shape: (4, 8, 8),
            strides: vec![1],
            channels: vec![8],
            min_channels: 4,
            output_channels: 1,
        };
        assert_eq!(cfg.output_shape(), (1, 4, 8));
        let dec = Decoder::build(cfg, 0).unwrap();
        let out = dec.infer(&Tensor::zeros(vec![4, 8, 8])).unwrap();
        assert_eq!(out.shape(), &[1, 4, 8]);
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let a = Decoder::build(desk_config(), 42).unwrap();
        let b = Decoder::build(desk_config(), 42).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.data(), pb.data());
        }
        let c = Decoder::build(desk_config(), 43).unwrap();
        assert_ne!(a.params()[0].data(), c.params()[0].data());
    }

    #[test]
    fn zeroed_decoder_outputs_exactly_half() {
        let mut dec = Decoder::build(desk_config(), 7).unwrap();
        for p in dec.params_mut() {
            p.data_mut().fill(0.0);
        }
        let out = dec.infer(&Tensor::zeros(vec![4, 8, 16])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn first_block_is_bottlenecked_rest_standard() {
        let dec = Decoder::build(desk_config(), 1).unwrap();
        assert_eq!(dec.blocks[0].kind, BlockKind::Enerv);
        assert!(dec.blocks[1..]
            .iter()
            .all(|b| b.kind == BlockKind::Standard));
    }

    #[test]
    fn param_count_formulas_match_allocation() {
        // Standard block d=16, O=16, S=2: 9*16*16*4 = 9216 weights.
        assert_eq!(standard_block_weights(16, 16, 2), 9216);
        // Bottlenecked block at d'=4: 9*4*(16*4 + 16) = 2880 weights.
        assert_eq!(enerv_block_weights(16, 16, 2, 4), 2880);

        let cfg = DecoderConfig {
            input_shape: (2, 2, 16),
            strides: vec![2, 2],
            channels: vec![16, 16],
            min_channels: 4,
            output_channels: 3,
        };
        assert_eq!(cfg.dprime(), 4);
        let dec = Decoder::build(cfg, 0).unwrap();
        assert_eq!(dec.blocks[0].param_count().weights, 2880);
        assert_eq!(dec.blocks[1].param_count().weights, 9216);

        // Reduction of the bottlenecked block vs the wide one at those shapes.
        let reduction = 1.0f64 - 2880.0 / 9216.0;
        assert!((reduction - 0.6875).abs() < 1e-12);

        // Totals equal a direct count of allocated elements.
        let direct: usize = dec.params().iter().map(|p| p.numel()).sum();
        assert_eq!(dec.param_count().with_biases, direct);
        let direct_w: usize = dec
            .params()
            .iter()
            .zip(dec.param_is_weight())
            .filter(|(_, is_w)| *is_w)
            .map(|(p, _)| p.numel())
            .sum();
        assert_eq!(dec.param_count().weights, direct_w);
    }

    #[test]
    fn dprime_floors_at_one() {
        let cfg = DecoderConfig {
            input_shape: (2, 2, 2),
            strides: vec![2],
            channels: vec![2],
            min_channels: 1,
            output_channels: 1,
        };
        assert_eq!(cfg.dprime(), 1);
    }

    #[test]
    fn halving_schedule_floors_at_min() {
        assert_eq!(
            DecoderConfig::halving_schedule(32, 8, 4),
            vec![32, 16, 8, 8]
        );
    }

    #[test]
    fn config_validation_rejects_mismatched_lengths() {
        let cfg = DecoderConfig {
            strides: vec![2, 2],
            channels: vec![8],
            ..desk_config()
        };
        assert!(Decoder::build(cfg, 0).is_err());
    }

    #[test]
    fn forward_rejects_wrong_embedding_shape() {
        let dec = Decoder::build(desk_config(), 0).unwrap();
        let err = dec.infer(&Tensor::zeros(vec![4, 8, 8])).unwrap_err();
        assert!(matches!(err, DecoderError::EmbeddingShape { .. }));
    }

    #[test]
    fn inference_matches_taped_forward() {
        let dec = Decoder::build(desk_config(), 11).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let emb = Tensor::uniform(vec![4, 8, 16], -0.5, 0.5, &mut rng);

        let inferred = dec.infer(&emb).unwrap();

        let mut tape = Tape::new();
        let binding = dec.bind(&mut tape);
        let emb_v = tape.leaf(&emb.clone().with_requires_grad(true));
        let out = dec.forward_bound(&mut tape, &binding, emb_v).unwrap();
        assert_eq!(tape.data(out), inferred.data());
    }
}

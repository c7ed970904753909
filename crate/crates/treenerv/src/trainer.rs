//! Training loop: warm-up on a uniform tree, then periodic growth that
//! inserts midpoint nodes into the highest-error intervals, with cosine
//! learning-rate annealing and Adam updates for decoder weights and the two
//! node values each frame touches.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::codec::metrics::{mse64, psnr_from_mse};
use crate::decoder::{Decoder, DecoderConfig, DecoderError};
use crate::tree::{TreeError, TreeGrid};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config invalid: {0}")]
    BadConfig(String),
    #[error("video too short: need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {frame} has shape {got:?} but the decoder produces {want:?}")]
    FrameShape {
        frame: usize,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("non-finite loss at epoch {epoch}, frame {frame}")]
    NonFiniteLoss { epoch: usize, frame: usize },
    #[error("tree invariant violated after growth at epoch {epoch}: {report}")]
    TreeInvariant { epoch: usize, report: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which frames participate in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMask {
    #[default]
    All,
    /// Even-numbered frames only; odd frames are held out for interpolation.
    Even,
}

impl FrameMask {
    pub fn indices(&self, len: usize) -> Vec<usize> {
        match self {
            FrameMask::All => (0..len).collect(),
            FrameMask::Even => (0..len).step_by(2).collect(),
        }
    }

    pub fn includes(&self, idx: usize) -> bool {
        match self {
            FrameMask::All => true,
            FrameMask::Even => idx % 2 == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Epochs between growth stages, counted from the end of warm-up.
    pub growth_interval: usize,
    pub growth_stages: usize,
    pub topk: usize,
    /// Initial node count is `max(2, round(init_ratio * L))`.
    pub init_ratio: f64,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub frame_mask: FrameMask,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            warmup_epochs: 40,
            growth_interval: 10,
            growth_stages: 4,
            topk: 10,
            init_ratio: 0.1,
            lr0: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            frame_mask: FrameMask::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.topk < 1 {
            return Err(TrainError::BadConfig("topk must be at least 1".into()));
        }
        if self.warmup_epochs + self.growth_stages * self.growth_interval > self.epochs {
            return Err(TrainError::BadConfig(format!(
                "warmup ({}) + stages ({}) * interval ({}) exceeds epochs ({})",
                self.warmup_epochs, self.growth_stages, self.growth_interval, self.epochs
            )));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(TrainError::BadConfig("lr0 must be positive".into()));
        }
        if !(0.0 < self.init_ratio && self.init_ratio <= 1.0) {
            return Err(TrainError::BadConfig("init_ratio must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn initial_nodes(&self, sequence_len: usize) -> usize {
        ((self.init_ratio * sequence_len as f64).round() as usize)
            .max(2)
            .min(sequence_len)
    }
}

/// Cosine annealing: `lr0 * 0.5 * (1 + cos(pi * epoch / epochs))`.
pub fn cosine_lr(epoch: usize, config: &TrainConfig) -> f64 {
    let frac = epoch as f64 / config.epochs as f64;
    config.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Anything that can hand out frames by index. The trainer touches frames
/// only through this trait, so tests can verify which frames a fit reads.
pub trait FrameSource {
    fn len(&self) -> usize;
    fn frame(&self, idx: usize) -> &Tensor;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One interval between adjacent keys and its per-epoch loss bookkeeping.
#[derive(Debug, Clone)]
pub struct Gop {
    pub lower_key: f64,
    pub upper_key: f64,
    pub frames: Vec<usize>,
    pub loss_sum: f64,
}

impl Gop {
    /// Average reconstruction error of the frames inside this interval.
    pub fn mean_loss(&self) -> f64 {
        if self.frames.is_empty() {
            0.0
        } else {
            self.loss_sum / self.frames.len() as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GopStats {
    pub gops: Vec<Gop>,
}

impl GopStats {
    pub fn total_frames(&self) -> usize {
        self.gops.iter().map(|g| g.frames.len()).sum()
    }

    /// Frame-weighted mean of the per-interval losses; equals the epoch loss.
    pub fn weighted_mean_loss(&self) -> f64 {
        let frames = self.total_frames();
        if frames == 0 {
            return 0.0;
        }
        self.gops.iter().map(|g| g.loss_sum).sum::<f64>() / frames as f64
    }
}

/// Partition frames into the intervals between consecutive keys. Each
/// interval is `[k_j, k_{j+1})`, with the final one right-closed so the last
/// frame belongs somewhere. Endpoint-inclusive initialization guarantees
/// every frame is covered; that is asserted, not handled.
pub fn partition_gops(grid: &TreeGrid, frame_indices: &[usize]) -> GopStats {
    let keys = grid.in_order_keys();
    assert!(keys.len() >= 2, "partition needs at least two keys");
    let mut gops: Vec<Gop> = keys
        .windows(2)
        .map(|w| Gop {
            lower_key: w[0],
            upper_key: w[1],
            frames: Vec::new(),
            loss_sum: 0.0,
        })
        .collect();
    let last = gops.len() - 1;
    for &f in frame_indices {
        let t = f as f64;
        assert!(
            t >= keys[0] && t <= keys[keys.len() - 1],
            "frame {f} outside key domain [{}, {}]",
            keys[0],
            keys[keys.len() - 1]
        );
        let idx = match keys.iter().position(|&k| k > t) {
            Some(pos) => pos - 1,
            None => last,
        };
        gops[idx].frames.push(f);
    }
    GopStats { gops }
}

/// Indices of the `k` intervals with the largest mean loss, ties broken by
/// the earlier lower key so selection is deterministic.
pub fn select_topk(stats: &GopStats, k: usize) -> Vec<usize> {
    assert!(k <= stats.gops.len(), "topk exceeds interval count");
    let mut order: Vec<usize> = (0..stats.gops.len()).collect();
    order.sort_by(|&a, &b| {
        let la = stats.gops[a].mean_loss();
        let lb = stats.gops[b].mean_loss();
        lb.partial_cmp(&la)
            .expect("losses are finite")
            .then(
                stats.gops[a]
                    .lower_key
                    .partial_cmp(&stats.gops[b].lower_key)
                    .unwrap(),
            )
    });
    order.truncate(k);
    order
}

/// Split the selected intervals at their midpoints. Returns the new keys.
pub fn grow(
    grid: &mut TreeGrid,
    stats: &GopStats,
    selected: &[usize],
) -> Result<Vec<f64>, TreeError> {
    let mut inserted = Vec::with_capacity(selected.len());
    for &idx in selected {
        let gop = &stats.gops[idx];
        inserted.push(grid.midpoint_insert(gop.lower_key, gop.upper_key)?);
    }
    Ok(inserted)
}

#[derive(Debug, Clone, Default)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    fn sized(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, data: &mut [f32], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for i in 0..data.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            data[i] = (data[i] as f64 - lr * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub psnr: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone)]
pub struct GrowEvent {
    pub epoch: usize,
    pub keys: Vec<f64>,
}

/// Per-epoch log plus growth events; renders to the CSV layout the CLI writes.
#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub rows: Vec<EpochRow>,
    pub events: Vec<GrowEvent>,
    pub optimizer_note: String,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.optimizer_note));
        out.push_str("epoch,lr,loss,psnr,nodes\n");
        let mut events = self.events.iter().peekable();
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.epoch, row.lr, row.loss, row.psnr, row.nodes
            ));
            while events.peek().is_some_and(|e| e.epoch == row.epoch) {
                let e = events.next().unwrap();
                let keys: Vec<String> = e.keys.iter().map(|k| k.to_string()).collect();
                out.push_str(&format!(
                    "# grow epoch={} keys=[{}]\n",
                    e.epoch,
                    keys.join(",")
                ));
            }
        }
        out
    }
}

/// A trained model: the feature tree and the decoder.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub grid: TreeGrid,
    pub decoder: Decoder,
    pub sequence_len: usize,
}

impl TrainedModel {
    /// Decode the frame at time `t`.
    pub fn decode_frame(&self, t: f64) -> Result<Tensor, TrainError> {
        let emb = self.grid.time_embedding(t)?;
        Ok(self.decoder.infer(&emb)?)
    }

    /// Mean MSE and PSNR over the given frame indices.
    pub fn evaluate(
        &self,
        video: &dyn FrameSource,
        indices: &[usize],
    ) -> Result<(f64, f64), TrainError> {
        let mut total = 0.0;
        for &i in indices {
            let pred = self.decode_frame(i as f64)?;
            total += mse64(&pred, video.frame(i));
        }
        let mean = total / indices.len().max(1) as f64;
        Ok((mean, psnr_from_mse(mean)))
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: TrainedModel,
    pub log: TrainingLog,
    pub grown_keys: Vec<f64>,
    /// Post-training evaluation over the training frames (float weights).
    pub final_loss: f64,
    pub final_psnr: f64,
}

/// Full training run: warm-up, growth stages, convergence epochs.
pub fn fit(
    video: &dyn FrameSource,
    train_cfg: &TrainConfig,
    decoder_cfg: &DecoderConfig,
) -> Result<FitResult, TrainError> {
    train_cfg.validate()?;
    decoder_cfg.validate()?;
    let len = video.len();
    if len < 2 {
        return Err(TrainError::TooFewFrames(len));
    }
    let (oc, oh, ow) = decoder_cfg.output_shape();
    let frame_shape = vec![oc, oh, ow];
    let train_frames = train_cfg.frame_mask.indices(len);
    for &idx in &train_frames {
        if video.frame(idx).shape() != frame_shape.as_slice() {
            return Err(TrainError::FrameShape {
                frame: idx,
                got: video.frame(idx).shape().to_vec(),
                want: frame_shape,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let (h, w, d) = decoder_cfg.input_shape;
    let n_init = train_cfg.initial_nodes(len);
    let mut grid = TreeGrid::from_uniform_random(len, n_init, vec![h, w, d], &mut rng)?;
    let mut decoder = Decoder::build(decoder_cfg.clone(), train_cfg.seed)?;

    let mut decoder_adam: Vec<AdamState> = decoder
        .params()
        .iter()
        .map(|p| AdamState::sized(p.numel()))
        .collect();
    // Node optimizer state keyed by the key's bit pattern; midpoint keys are
    // exact binary fractions so lookup is exact. New nodes start from zero.
    let mut node_adam: BTreeMap<u64, AdamState> = BTreeMap::new();
    let node_numel = h * w * d;

    let mut log = TrainingLog {
        optimizer_note: format!(
            "optimizer=adam beta1={} beta2={} eps={} (adam substituted for the paper-default optimizer)",
            train_cfg.beta1, train_cfg.beta2, train_cfg.eps
        ),
        ..Default::default()
    };
    let mut grown_keys = Vec::new();
    let mut stages_done = 0usize;

    for epoch in 0..train_cfg.epochs {
        let lr = cosine_lr(epoch, train_cfg);
        let mut order = train_frames.clone();
        order.shuffle(&mut rng);
        let mut stats = partition_gops(&grid, &train_frames);
        let frame_gop: BTreeMap<usize, usize> = stats
            .gops
            .iter()
            .enumerate()
            .flat_map(|(j, g)| g.frames.iter().map(move |&f| (f, j)))
            .collect();

        let mut epoch_loss = 0.0f64;
        for &frame_idx in &order {
            let t = frame_idx as f64;
            let mut tape = Tape::new();
            let binding = decoder.bind(&mut tape);

            let pair = grid.query_bounds(t)?;
            let (w_l, w_u) = TreeGrid::interpolation_weights(&pair, t);
            let (lower_key, upper_key) = (pair.lower.key, pair.upper.key);
            let lower_leaf = tape.leaf(pair.lower.value);
            let (embedding, upper_leaf) = if pair.is_degenerate() {
                (lower_leaf, None)
            } else {
                let upper = tape.leaf(pair.upper.value);
                (tape.lerp_combine(lower_leaf, upper, w_l, w_u)?, Some(upper))
            };

            let pred = decoder.forward_bound(&mut tape, &binding, embedding)?;
            let target = tape.constant(video.frame(frame_idx));
            let loss = tape.mse_loss(pred, target)?;
            let loss_val = tape.scalar(loss)?;
            if !loss_val.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    frame: frame_idx,
                });
            }
            tape.backward(loss)?;

            for ((param, state), value) in decoder
                .params_mut()
                .into_iter()
                .zip(decoder_adam.iter_mut())
                .zip(binding.values())
            {
                let grad = tape.grad(*value).expect("decoder params require grad");
                state.step(param.data_mut(), grad, lr, train_cfg);
            }

            let mut touched = vec![(lower_key, lower_leaf)];
            if let Some(upper) = upper_leaf {
                touched.push((upper_key, upper));
            }
            for (key, leaf) in touched {
                let grad = tape.grad(leaf).expect("node values require grad").to_vec();
                let state = node_adam
                    .entry(key.to_bits())
                    .or_insert_with(|| AdamState::sized(node_numel));
                let tensor = grid.value_mut(key).expect("bound key exists");
                state.step(tensor.data_mut(), &grad, lr, train_cfg);
            }

            epoch_loss += loss_val;
            stats.gops[frame_gop[&frame_idx]].loss_sum += loss_val;
        }

        let mean_loss = epoch_loss / train_frames.len() as f64;
        log.rows.push(EpochRow {
            epoch,
            lr,
            loss: mean_loss,
            psnr: psnr_from_mse(mean_loss),
            nodes: grid.node_count(),
        });

        let epochs_done = epoch + 1;
        if stages_done < train_cfg.growth_stages
            && epochs_done >= train_cfg.warmup_epochs
            && (epochs_done - train_cfg.warmup_epochs) % train_cfg.growth_interval == 0
        {
            let k = train_cfg.topk.min(stats.gops.len());
            let selected = select_topk(&stats, k);
            let new_keys = grow(&mut grid, &stats, &selected)?;
            let report = grid.validate();
            if !report.is_pass() {
                return Err(TrainError::TreeInvariant {
                    epoch,
                    report: format!("{report:?}"),
                });
            }
            log.events.push(GrowEvent {
                epoch,
                keys: new_keys.clone(),
            });
            grown_keys.extend(new_keys);
            stages_done += 1;
        }
    }

    let model = TrainedModel {
        grid,
        decoder,
        sequence_len: len,
    };
    let (final_loss, final_psnr) = model.evaluate(video, &train_frames)?;
    Ok(FitResult {
        model,
        log,
        grown_keys,
        final_loss,
        final_psnr,
    })
}

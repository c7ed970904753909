//! Sampling-density analysis: how the learned key placement relates to the
//! temporal variation of the video.
//!
//! The temporal residual signal is the mean squared error between adjacent
//! frames; the sampling density is a 16-bin histogram of the tree keys
//! normalized to a density. The report carries both per-frame and per-bin
//! columns plus the Pearson correlation between binned residual mass and
//! key density.

use crate::trainer::{TrainError, TrainedModel};
use crate::video::VideoSequence;

pub const HISTOGRAM_BINS: usize = 16;

#[derive(Debug, Clone)]
pub struct FrameRow {
    pub frame: usize,
    /// MSE against the previous frame; 0 for the first frame.
    pub adjacent_mse: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct BinRow {
    pub lo: f64,
    pub hi: f64,
    pub key_count: usize,
    pub key_density: f64,
    pub residual_mass: f64,
}

#[derive(Debug, Clone)]
pub struct AnalyzeReport {
    pub frames: Vec<FrameRow>,
    pub bins: Vec<BinRow>,
    pub correlation: f64,
    pub mean_psnr: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Histogram of keys over `bins` equal time bins on `[0, L-1]`, as counts.
pub fn key_histogram(keys: &[f64], sequence_len: usize, bins: usize) -> Vec<usize> {
    let span = (sequence_len - 1) as f64;
    let mut counts = vec![0usize; bins];
    for &k in keys {
        let mut bin = ((k / span) * bins as f64).floor() as usize;
        if bin >= bins {
            bin = bins - 1; // the maximum key lands in the last bin
        }
        counts[bin] += 1;
    }
    counts
}

pub fn analyze(model: &TrainedModel, video: &VideoSequence) -> Result<AnalyzeReport, TrainError> {
    let adjacent = video.adjacent_mse();
    let mut frames = Vec::with_capacity(video.len());
    let mut psnr_sum = 0.0;
    for i in 0..video.len() {
        let (mse, psnr) = model.evaluate(video, &[i])?;
        let _ = mse;
        psnr_sum += psnr;
        frames.push(FrameRow {
            frame: i,
            adjacent_mse: if i == 0 { 0.0 } else { adjacent[i - 1] },
            psnr,
        });
    }

    let keys = model.grid.in_order_keys();
    let counts = key_histogram(&keys, video.len(), HISTOGRAM_BINS);
    let span = (video.len() - 1) as f64;
    let bin_width = span / HISTOGRAM_BINS as f64;
    let total_keys = keys.len() as f64;
    let residual_total: f64 = adjacent.iter().sum::<f64>().max(1e-30);

    let mut bins = Vec::with_capacity(HISTOGRAM_BINS);
    for (b, &count) in counts.iter().enumerate() {
        let lo = b as f64 * bin_width;
        let hi = lo + bin_width;
        // Residual mass: adjacent-frame MSE of the transitions whose later
        // frame falls inside the bin, normalized over the sequence.
        let mass: f64 = adjacent
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let t = (i + 1) as f64;
                t >= lo && (t < hi || b == HISTOGRAM_BINS - 1)
            })
            .map(|(_, &m)| m)
            .sum::<f64>()
            / residual_total;
        bins.push(BinRow {
            lo,
            hi,
            key_count: count,
            key_density: count as f64 / total_keys / bin_width,
            residual_mass: mass,
        });
    }

    let density: Vec<f64> = bins.iter().map(|b| b.key_density).collect();
    let mass: Vec<f64> = bins.iter().map(|b| b.residual_mass).collect();
    Ok(AnalyzeReport {
        correlation: pearson(&density, &mass),
        mean_psnr: psnr_sum / video.len() as f64,
        frames,
        bins,
    })
}

impl AnalyzeReport {
    pub fn frames_csv(&self) -> String {
        let mut out = String::from("frame,adjacent_mse,psnr\n");
        for row in &self.frames {
            out.push_str(&format!("{},{},{}\n", row.frame, row.adjacent_mse, row.psnr));
        }
        out
    }

    pub fn bins_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,key_count,key_density,residual_mass\n");
        for row in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.lo, row.hi, row.key_count, row.key_density, row.residual_mass
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "correlation,mean_psnr,frames,bins\n{},{},{},{}\n",
            self.correlation,
            self.mean_psnr,
            self.frames.len(),
            self.bins.len()
        )
    }
}

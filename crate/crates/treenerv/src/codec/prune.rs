//! Global magnitude pruning over decoder conv weights.

use crate::decoder::Decoder;

use super::CodecError;

/// Which elements of the concatenated weight stream were zeroed, stored as
/// alternating kept/pruned run lengths starting with a kept run (which may
/// be zero). Biases and grid values are never pruned and are not covered.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneMask {
    pub runs: Vec<u64>,
    pub total: u64,
    pub pruned: u64,
}

impl PruneMask {
    pub fn is_identity(&self) -> bool {
        self.pruned == 0
    }

    /// Expand to a per-element pruned flag vector.
    pub fn to_flags(&self) -> Vec<bool> {
        let mut flags = Vec::with_capacity(self.total as usize);
        let mut pruned_run = false;
        for &run in &self.runs {
            flags.extend(std::iter::repeat_n(pruned_run, run as usize));
            pruned_run = !pruned_run;
        }
        debug_assert_eq!(flags.len(), self.total as usize);
        flags
    }

    fn from_flags(flags: &[bool]) -> Self {
        let mut runs = Vec::new();
        let mut current = false; // runs start with kept
        let mut len = 0u64;
        for &f in flags {
            if f == current {
                len += 1;
            } else {
                runs.push(len);
                current = f;
                len = 1;
            }
        }
        if len > 0 || flags.is_empty() {
            runs.push(len);
        }
        PruneMask {
            runs,
            total: flags.len() as u64,
            pruned: flags.iter().filter(|&&f| f).count() as u64,
        }
    }
}

/// Zero the `floor(fraction * weight_count)` smallest-magnitude conv weights
/// across the whole decoder. Biases are exempt. Ties break by stream
/// position so the selection is deterministic. Returns the mask; the decoder
/// is modified in place.
pub fn prune_global(decoder: &mut Decoder, fraction: f64) -> Result<PruneMask, CodecError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(CodecError::BadFraction(fraction));
    }
    let is_weight = decoder.param_is_weight();
    let mut params = decoder.params_mut();

    let mut magnitudes: Vec<(f32, usize)> = Vec::new();
    let mut stream_len = 0usize;
    for (param, &w) in params.iter().zip(&is_weight) {
        if w {
            for &v in param.data() {
                magnitudes.push((v.abs(), stream_len));
                stream_len += 1;
            }
        }
    }
    let target = (fraction * stream_len as f64).floor() as usize;
    if target == 0 {
        return Ok(PruneMask {
            runs: vec![stream_len as u64],
            total: stream_len as u64,
            pruned: 0,
        });
    }

    magnitudes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut flags = vec![false; stream_len];
    for &(_, idx) in magnitudes.iter().take(target) {
        flags[idx] = true;
    }

    let mut offset = 0usize;
    for (param, &w) in params.iter_mut().zip(&is_weight) {
        if !w {
            continue;
        }
        for v in param.data_mut() {
            if flags[offset] {
                *v = 0.0;
            }
            offset += 1;
        }
    }
    Ok(PruneMask::from_flags(&flags))
}

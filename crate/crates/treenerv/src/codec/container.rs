//! Serialized model container.
//!
//! Layout (little-endian):
//! `magic "TNRV" | version u32 | header_len u32 | header JSON (UTF-8) |
//! payload | crc32 u32`, where the payload is
//! `alphabet u32 | code lengths (alphabet bytes) | coded bitstream padded to
//! a byte boundary` and the CRC covers everything before the checksum field.
//!
//! The header JSON carries the tree keys at full 64-bit precision
//! (uncompressed), the decoder config, per-tensor quantization parameters,
//! and the prune-mask run lengths. The entropy-coded payload holds the
//! quantized node values (in key order) followed by the decoder parameters
//! (in canonical order); pruned weight positions are quantized like any
//! other value and forced back to exact zero on decode using the mask.

use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, DecoderConfig};
use crate::trainer::TrainedModel;
use crate::tree::TreeGrid;

use super::huffman::{entropy_decode, entropy_encode, EncodedStream};
use super::prune::{prune_global, PruneMask};
use super::quant::{dequantize, quantize_affine, QuantizedTensor};
use super::CodecError;

pub const MAGIC: [u8; 4] = *b"TNRV";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressOptions {
    /// Fraction of decoder conv weights to prune, in [0, 1).
    pub fraction: f64,
    /// Quantization width in bits, 2..=16.
    pub bits: u8,
}

impl Default for CompressOptions {
    fn default() -> Self {
        CompressOptions {
            fraction: 0.0,
            bits: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub shape: Vec<usize>,
    pub scale: f64,
    pub zero_point: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub sequence_len: usize,
    pub value_shape: Vec<usize>,
    pub decoder: DecoderConfig,
    /// Tree keys, full 64-bit precision, strictly increasing.
    pub keys: Vec<f64>,
    /// Alternating kept/pruned run lengths over the weight stream.
    pub prune_mask_runs: Vec<u64>,
    pub prune_fraction: f64,
    pub bits: u8,
    /// Per-tensor quantization metadata, payload order: node values then
    /// decoder parameters.
    pub tensors: Vec<TensorMeta>,
    pub symbol_count: u64,
    pub payload_bits: u64,
}

/// In-memory quantized model: what the container stores, before entropy
/// coding.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub sequence_len: usize,
    pub value_shape: Vec<usize>,
    pub decoder_config: DecoderConfig,
    pub keys: Vec<f64>,
    pub node_values: Vec<QuantizedTensor>,
    pub decoder_params: Vec<QuantizedTensor>,
    pub prune_mask: PruneMask,
    pub options: CompressOptions,
}

/// Prune and quantize a trained model. The model itself is not modified.
pub fn quantize_model(
    model: &TrainedModel,
    options: CompressOptions,
) -> Result<QuantizedModel, CodecError> {
    let mut decoder = model.decoder.clone();
    let prune_mask = prune_global(&mut decoder, options.fraction)?;

    let entries = model.grid.in_order_entries();
    let mut keys = Vec::with_capacity(entries.len());
    let mut node_values = Vec::with_capacity(entries.len());
    for (key, value) in entries {
        keys.push(key);
        node_values.push(quantize_affine(value, options.bits)?);
    }
    let decoder_params = decoder
        .params()
        .iter()
        .map(|p| quantize_affine(p, options.bits))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(QuantizedModel {
        sequence_len: model.sequence_len,
        value_shape: model.grid.value_shape().to_vec(),
        decoder_config: model.decoder.config().clone(),
        keys,
        node_values,
        decoder_params,
        prune_mask,
        options,
    })
}

/// Rebuild a float model from a quantized one. Pruned weight positions come
/// back as exact zeros.
pub fn dequantize_model(q: &QuantizedModel) -> Result<TrainedModel, CodecError> {
    let entries: Vec<(f64, crate::autodiff::Tensor)> = q
        .keys
        .iter()
        .zip(&q.node_values)
        .map(|(&k, qv)| (k, dequantize(qv)))
        .collect();
    let grid = TreeGrid::from_entries(q.sequence_len, q.value_shape.clone(), entries)
        .map_err(|e| CodecError::BadHeader(e.to_string()))?;

    let mut decoder = Decoder::build(q.decoder_config.clone(), 0)
        .map_err(|e| CodecError::BadHeader(e.to_string()))?;
    {
        let mut params = decoder.params_mut();
        if params.len() != q.decoder_params.len() {
            return Err(CodecError::BadHeader(format!(
                "decoder expects {} parameter tensors, container has {}",
                params.len(),
                q.decoder_params.len()
            )));
        }
        for (param, qp) in params.iter_mut().zip(&q.decoder_params) {
            if param.shape() != qp.shape.as_slice() {
                return Err(CodecError::BadHeader(format!(
                    "parameter shape {:?} does not match container {:?}",
                    param.shape(),
                    qp.shape
                )));
            }
            param.data_mut().copy_from_slice(dequantize(qp).data());
        }
    }

    // Restore exact zeros at pruned positions.
    if !q.prune_mask.is_identity() {
        let flags = q.prune_mask.to_flags();
        let is_weight = decoder.param_is_weight();
        let mut offset = 0usize;
        let mut params = decoder.params_mut();
        for (param, w) in params.iter_mut().zip(is_weight) {
            if !w {
                continue;
            }
            for v in param.data_mut() {
                if offset >= flags.len() {
                    return Err(CodecError::BadHeader(
                        "prune mask shorter than weight stream".into(),
                    ));
                }
                if flags[offset] {
                    *v = 0.0;
                }
                offset += 1;
            }
        }
        if offset != flags.len() {
            return Err(CodecError::BadHeader(
                "prune mask longer than weight stream".into(),
            ));
        }
    }

    Ok(TrainedModel {
        grid,
        decoder,
        sequence_len: q.sequence_len,
    })
}

/// The serialized form: header plus the entropy-coded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub header: Header,
    pub stream: EncodedStream,
}

impl ModelContainer {
    pub fn from_quantized(q: &QuantizedModel) -> Result<Self, CodecError> {
        let mut symbols: Vec<u16> = Vec::new();
        let mut tensors = Vec::with_capacity(q.node_values.len() + q.decoder_params.len());
        for qt in q.node_values.iter().chain(&q.decoder_params) {
            symbols.extend_from_slice(&qt.symbols);
            tensors.push(TensorMeta {
                shape: qt.shape.clone(),
                scale: qt.scale,
                zero_point: qt.zero_point,
            });
        }
        let stream = entropy_encode(&symbols, q.options.bits)?;
        let header = Header {
            sequence_len: q.sequence_len,
            value_shape: q.value_shape.clone(),
            decoder: q.decoder_config.clone(),
            keys: q.keys.clone(),
            prune_mask_runs: q.prune_mask.runs.clone(),
            prune_fraction: q.options.fraction,
            bits: q.options.bits,
            tensors,
            symbol_count: stream.symbol_count,
            payload_bits: stream.bit_len,
        };
        Ok(ModelContainer { header, stream })
    }

    pub fn to_quantized(&self) -> Result<QuantizedModel, CodecError> {
        let symbols = entropy_decode(
            &self.stream.code_lengths,
            &self.stream.payload,
            self.stream.bit_len,
            self.stream.symbol_count,
        )?;
        let expected: usize = self
            .header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        if expected != symbols.len() {
            return Err(CodecError::BadHeader(format!(
                "tensor metadata describes {expected} symbols, payload holds {}",
                symbols.len()
            )));
        }
        let node_count = self.header.keys.len();
        if node_count > self.header.tensors.len() {
            return Err(CodecError::BadHeader(
                "fewer tensors than tree keys".into(),
            ));
        }
        let mut offset = 0usize;
        let mut all = Vec::with_capacity(self.header.tensors.len());
        for meta in &self.header.tensors {
            let numel: usize = meta.shape.iter().product();
            all.push(QuantizedTensor {
                symbols: symbols[offset..offset + numel].to_vec(),
                scale: meta.scale,
                zero_point: meta.zero_point,
                bits: self.header.bits,
                shape: meta.shape.clone(),
            });
            offset += numel;
        }
        let decoder_params = all.split_off(node_count);
        let weight_total: u64 = self.header.prune_mask_runs.iter().sum();
        let prune_mask = if self.header.prune_mask_runs.is_empty() {
            PruneMask::default()
        } else {
            let mut pruned = 0u64;
            for (i, &run) in self.header.prune_mask_runs.iter().enumerate() {
                if i % 2 == 1 {
                    pruned += run;
                }
            }
            PruneMask {
                runs: self.header.prune_mask_runs.clone(),
                total: weight_total,
                pruned,
            }
        };
        Ok(QuantizedModel {
            sequence_len: self.header.sequence_len,
            value_shape: self.header.value_shape.clone(),
            decoder_config: self.header.decoder.clone(),
            keys: self.header.keys.clone(),
            node_values: all,
            decoder_params,
            prune_mask,
            options: CompressOptions {
                fraction: self.header.prune_fraction,
                bits: self.header.bits,
            },
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let header_json = serde_json::to_vec(&self.header)
            .map_err(|e| CodecError::BadHeader(e.to_string()))?;
        let alphabet = self.stream.code_lengths.len() as u32;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&alphabet.to_le_bytes());
        out.extend_from_slice(&self.stream.code_lengths);
        out.extend_from_slice(&self.stream.payload);
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let need = |n: usize, what: &str| -> Result<(), CodecError> {
            if bytes.len() < n {
                Err(CodecError::Truncated(what.to_string()))
            } else {
                Ok(())
            }
        };
        need(16, "fixed fields")?;
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CodecError::VersionMismatch {
                got: version,
                want: FORMAT_VERSION,
            });
        }
        let crc_stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32(&bytes[..bytes.len() - 4]) != crc_stored {
            return Err(CodecError::ChecksumMismatch);
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12 + header_len;
        need(header_end + 4, "header")?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| CodecError::BadHeader(e.to_string()))?;
        let alphabet =
            u32::from_le_bytes(bytes[header_end..header_end + 4].try_into().unwrap()) as usize;
        if alphabet != 1usize << header.bits {
            return Err(CodecError::BadHeader(format!(
                "alphabet {alphabet} does not match {} bits",
                header.bits
            )));
        }
        let lengths_end = header_end + 4 + alphabet;
        need(lengths_end, "code lengths")?;
        let code_lengths = bytes[header_end + 4..lengths_end].to_vec();
        let coded_bytes = header.payload_bits.div_ceil(8) as usize;
        need(lengths_end + coded_bytes + 4, "payload")?;
        let payload = bytes[lengths_end..lengths_end + coded_bytes].to_vec();
        Ok(ModelContainer {
            stream: EncodedStream {
                code_lengths,
                payload,
                bit_len: header.payload_bits,
                symbol_count: header.symbol_count,
            },
            header,
        })
    }

    /// Total serialized size in bits; the numerator of bits-per-pixel.
    pub fn total_bits(&self) -> Result<u64, CodecError> {
        Ok(self.to_bytes()?.len() as u64 * 8)
    }

    /// Entropy-coded data bits, excluding header and table overhead.
    pub fn payload_bits(&self) -> u64 {
        self.stream.bit_len
    }
}

/// Prune, quantize and entropy-code a trained model.
pub fn compress(
    model: &TrainedModel,
    options: CompressOptions,
) -> Result<ModelContainer, CodecError> {
    let q = quantize_model(model, options)?;
    ModelContainer::from_quantized(&q)
}

/// Reverse of [`compress`] down to the dequantized model.
pub fn decompress(container: &ModelContainer) -> Result<TrainedModel, CodecError> {
    dequantize_model(&container.to_quantized()?)
}

/// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

//! Per-tensor affine quantization to unsigned b-bit symbols.

use crate::autodiff::Tensor;

use super::CodecError;

/// A tensor quantized to `bits`-wide symbols with an affine map back:
/// `value = zero_point + scale * symbol`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub symbols: Vec<u16>,
    pub scale: f64,
    pub zero_point: f64,
    pub bits: u8,
    pub shape: Vec<usize>,
}

/// Affine quantization: `scale = (max - min) / (2^bits - 1)`,
/// `zero_point = min`, symbols rounded and clamped to the symbol range.
/// A constant tensor degenerates to scale 0 with all symbols 0, which
/// round-trips exactly.
pub fn quantize_affine(tensor: &Tensor, bits: u8) -> Result<QuantizedTensor, CodecError> {
    if !(2..=16).contains(&bits) {
        return Err(CodecError::BadBits(bits));
    }
    if tensor.numel() == 0 {
        return Err(CodecError::EmptyTensor);
    }
    let levels = (1u32 << bits) - 1;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in tensor.data() {
        let v = v as f64;
        min = min.min(v);
        max = max.max(v);
    }
    let scale = if max > min {
        (max - min) / levels as f64
    } else {
        0.0
    };
    let symbols = tensor
        .data()
        .iter()
        .map(|&v| {
            if scale == 0.0 {
                0
            } else {
                let q = ((v as f64 - min) / scale).round();
                q.clamp(0.0, levels as f64) as u16
            }
        })
        .collect();
    Ok(QuantizedTensor {
        symbols,
        scale,
        zero_point: min,
        bits,
        shape: tensor.shape().to_vec(),
    })
}

/// Map symbols back to values.
pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    let data: Vec<f32> = q
        .symbols
        .iter()
        .map(|&s| (q.zero_point + q.scale * s as f64) as f32)
        .collect();
    Tensor::new(q.shape.clone(), data).expect("quantized shape is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn range_endpoint_hits_top_symbol() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 1.0]).unwrap();
        let q = quantize_affine(&t, 8).unwrap();
        assert_eq!(q.symbols[2], 255);
        assert_eq!(q.symbols[0], 0);
        let back = dequantize(&q);
        assert_eq!(back.data()[2], 1.0);
        assert_eq!(back.data()[0], -1.0);
    }

    #[test]
    fn constant_tensor_roundtrips_exactly() {
        let t = Tensor::full(vec![4, 4], 0.37);
        let q = quantize_affine(&t, 8).unwrap();
        assert_eq!(q.scale, 0.0);
        assert!(q.symbols.iter().all(|&s| s == 0));
        assert_eq!(dequantize(&q).data(), t.data());
    }

    #[test]
    fn rejects_bad_bits_and_empty() {
        let t = Tensor::full(vec![2], 1.0);
        assert!(matches!(quantize_affine(&t, 1), Err(CodecError::BadBits(1))));
        assert!(matches!(
            quantize_affine(&t, 17),
            Err(CodecError::BadBits(17))
        ));
        let empty = Tensor::zeros(vec![0]);
        assert!(matches!(
            quantize_affine(&empty, 8),
            Err(CodecError::EmptyTensor)
        ));
    }

    #[test]
    fn roundtrip_error_within_half_step() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = Tensor::uniform(vec![64], -2.0, 3.0, &mut rng);
            let q = quantize_affine(&t, 8).unwrap();
            let back = dequantize(&q);
            // Half a quantization step, with headroom for f32 storage rounding.
            let bound = q.scale / 2.0 * (1.0 + 1e-6) + 1e-12;
            for (&orig, &deq) in t.data().iter().zip(back.data()) {
                assert!(
                    (orig as f64 - deq as f64).abs() <= bound,
                    "error {} exceeds {}",
                    (orig as f64 - deq as f64).abs(),
                    bound
                );
            }
        }
    }

    proptest! {
        #[test]
        fn quantization_error_bound_holds(values in proptest::collection::vec(-10.0f32..10.0, 1..128), bits in 2u8..=12) {
            let t = Tensor::new(vec![values.len()], values.clone()).unwrap();
            let q = quantize_affine(&t, bits).unwrap();
            let back = dequantize(&q);
            let bound = q.scale / 2.0 * (1.0 + 1e-6) + 1e-12;
            for (&orig, &deq) in t.data().iter().zip(back.data()) {
                prop_assert!((orig as f64 - deq as f64).abs() <= bound);
            }
        }
    }
}

//! Rate/distortion accounting: PSNR over unit-range pixels and bits per pixel.

use crate::autodiff::Tensor;

use super::CodecError;

/// Mean squared error in 64-bit, for evaluation outside the training tape.
pub fn mse64(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse64 shape mismatch");
    let n = a.numel() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n
}

/// PSNR in dB for pixels in [0, 1], capped at 100 dB for vanishing error.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        100.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(pred: &Tensor, target: &Tensor) -> f64 {
    psnr_from_mse(mse64(pred, target))
}

/// Bits per pixel: total container bits over the pixel count of the video.
pub fn bpp(total_bits: u64, frames: usize, height: usize, width: usize) -> Result<f64, CodecError> {
    let pixels = frames
        .checked_mul(height)
        .and_then(|p| p.checked_mul(width))
        .filter(|&p| p > 0)
        .ok_or(CodecError::ZeroSizeVideo)?;
    Ok(total_bits as f64 / pixels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_formula() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(1.0)).abs() < 1e-12);
    }

    #[test]
    fn psnr_caps_at_100() {
        assert_eq!(psnr_from_mse(0.0), 100.0);
        assert_eq!(psnr_from_mse(9e-11), 100.0);
        let a = Tensor::full(vec![2, 2], 0.25);
        assert_eq!(psnr(&a, &a), 100.0);
    }

    #[test]
    fn bpp_arithmetic_and_zero_rejection() {
        assert_eq!(bpp(1000, 10, 10, 10).unwrap(), 1.0);
        assert!(matches!(bpp(8, 0, 4, 4), Err(CodecError::ZeroSizeVideo)));
    }

    #[test]
    fn mse_is_zero_iff_equal() {
        let a = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let b = Tensor::new(vec![3], vec![0.1, 0.2, 0.4]).unwrap();
        assert_eq!(mse64(&a, &a), 0.0);
        assert!(mse64(&a, &b) > 0.0);
    }
}

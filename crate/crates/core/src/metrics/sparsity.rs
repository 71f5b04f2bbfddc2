//! Sparsity of quantized high-frequency images.

use crate::error::{Error, Result};
use crate::imagecore::{quantize_u8, Domain, Image};

fn nonzero(h: &Image) -> Result<usize> {
    if h.domain() != Domain::HighFreq {
        return Err(Error::InvalidArgument("sparsity needs a high-frequency image".into()));
    }
    Ok(quantize_u8(h).iter().filter(|&&q| q != 0).count())
}

/// `1 - nnz / (H W C)` after signed 8-bit quantization.
pub fn sparsity(h: &Image) -> Result<f64> {
    Ok(1.0 - nonzero(h)? as f64 / h.data().len() as f64)
}

/// `1 - nnz / nnz_gt`. When the GT has no non-zero pixel the result is 1 if
/// `h` has none either, and `-inf` (with a warning) otherwise.
pub fn relative_sparsity(h: &Image, gt: &Image) -> Result<f64> {
    if h.shape() != gt.shape() {
        return Err(Error::shape(
            "relative_sparsity",
            format!("{:?} vs GT {:?}", h.shape(), gt.shape()),
        ));
    }
    let (n, n_gt) = (nonzero(h)?, nonzero(gt)?);
    if n_gt == 0 {
        if n == 0 {
            return Ok(1.0);
        }
        log::warn!("relative sparsity undefined: GT high frequency is all zero");
        return Ok(f64::NEG_INFINITY);
    }
    Ok(1.0 - n as f64 / n_gt as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hf(data: Vec<f64>) -> Image {
        let n = data.len();
        Image::new(1, n, 1, data, Domain::HighFreq).unwrap()
    }

    #[test]
    fn hand_cases() {
        assert_eq!(sparsity(&hf(vec![0.0; 6])).unwrap(), 1.0);
        assert_eq!(sparsity(&hf(vec![1.0 / 255.0, -0.5, 0.9, -1.0 / 255.0])).unwrap(), 0.0);
        assert_eq!(sparsity(&hf(vec![0.5, 0.001, 0.5, 0.001])).unwrap(), 0.5);
        assert_eq!(sparsity(&hf(vec![1.0 / 600.0, -1.0 / 600.0])).unwrap(), 1.0);
    }

    #[test]
    fn relative_cases() {
        let gt = hf(vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(relative_sparsity(&gt, &gt).unwrap(), 0.0);
        assert_eq!(relative_sparsity(&hf(vec![0.5, 0.0, 0.0, 0.0]), &gt).unwrap(), 0.5);
        let zero = hf(vec![0.0; 4]);
        assert_eq!(relative_sparsity(&zero, &zero).unwrap(), 1.0);
        assert_eq!(relative_sparsity(&gt, &zero).unwrap(), f64::NEG_INFINITY);
        assert!(relative_sparsity(&hf(vec![0.0; 3]), &gt).is_err());
        let hr = Image::new(1, 4, 1, vec![0.0; 4], Domain::Hr).unwrap();
        assert!(sparsity(&hr).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_magnitude(
            base in prop::collection::vec(-1.0f64..1.0, 1..40),
            grow in prop::collection::vec(0.0f64..0.05, 40),
        ) {
            let bigger: Vec<f64> = base.iter().zip(&grow).map(|(v, g)| v + g * v.signum()).collect();
            let a = sparsity(&hf(base)).unwrap();
            let b = sparsity(&hf(bigger)).unwrap();
            prop_assert!(b <= a);
        }
    }
}

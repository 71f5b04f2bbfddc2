//! Scale factors and the bicubic low-/high-pass pair.

use serde::{Deserialize, Serialize};

use super::image::{Domain, Image};
use super::resample::bicubic_resize;
use crate::error::{Error, Result};

/// Integer super-resolution factor, at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct ScaleFactor(usize);

impl ScaleFactor {
    pub fn new(s: usize) -> Result<Self> {
        if s < 2 {
            return Err(Error::InvalidArgument(format!("scale factor {s} < 2")));
        }
        Ok(ScaleFactor(s))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for ScaleFactor {
    type Error = Error;
    fn try_from(s: usize) -> Result<Self> {
        ScaleFactor::new(s)
    }
}

impl From<ScaleFactor> for usize {
    fn from(s: ScaleFactor) -> usize {
        s.0
    }
}

impl std::fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "x{}", self.0)
    }
}

pub fn check_divisible(height: usize, width: usize, factor: usize) -> Result<()> {
    if !height.is_multiple_of(factor) || !width.is_multiple_of(factor) {
        return Err(Error::Indivisible {
            height,
            width,
            factor,
        });
    }
    Ok(())
}

/// `(x)_{s↓}`: bicubic shrink by `s`. HR-domain results are clamped to `[0, 1]`;
/// signed-domain inputs (noise maps) are left unclamped.
pub fn downsample(img: &Image, s: ScaleFactor) -> Result<Image> {
    let s = s.get();
    check_divisible(img.height(), img.width(), s)?;
    let out = bicubic_resize(img, img.height() / s, img.width() / s)?;
    Ok(match img.domain() {
        Domain::Hr => out.clamp01(),
        Domain::HighFreq => out,
    })
}

/// `(y)_{s↑}`: bicubic enlarge by `s`, unclamped.
pub fn upsample(img: &Image, s: ScaleFactor) -> Result<Image> {
    let s = s.get();
    bicubic_resize(img, img.height() * s, img.width() * s)
}

/// `L_s(x) = ((x)_{s↓})_{s↑}`.
pub fn lowpass(x: &Image, s: ScaleFactor) -> Result<Image> {
    upsample(&downsample(x, s)?, s)
}

/// `H_s(x) = x - L_s(x)`, tagged as high-frequency.
pub fn highpass(x: &Image, s: ScaleFactor) -> Result<Image> {
    let low = lowpass(x, s)?;
    x.zip_map(&low, Domain::HighFreq, |a, b| a - b)
}

/// Both halves of the split at once: `(L_s(x), H_s(x))`.
pub fn split(x: &Image, s: ScaleFactor) -> Result<(Image, Image)> {
    let low = lowpass(x, s)?;
    let high = x.zip_map(&low, Domain::HighFreq, |a, b| a - b)?;
    Ok((low, high))
}

/// Quantizes to 8-bit levels with round-half-away-from-zero. HR pixels map to
/// `round(clamp(p, 0, 1) * 255)`; high-frequency pixels to the signed
/// `round(clamp(p, -1, 1) * 255)` in `[-255, 255]`.
pub fn quantize_u8(img: &Image) -> Vec<i16> {
    let (lo, hi) = match img.domain() {
        Domain::Hr => (0.0, 1.0),
        Domain::HighFreq => (-1.0, 1.0),
    };
    img.data()
        .iter()
        .map(|&p| (p.clamp(lo, hi) * 255.0).round() as i16)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: usize) -> ScaleFactor {
        ScaleFactor::new(v).unwrap()
    }

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, Domain::Hr, |y, x, c| {
            ((y * 7 + x * 3 + c * 5) % 17) as f64 / 16.0
        })
        .unwrap()
    }

    #[test]
    fn scale_factor_bounds() {
        assert!(ScaleFactor::new(1).is_err());
        assert_eq!(ScaleFactor::new(8).unwrap().get(), 8);
    }

    #[test]
    fn constant_roundtrips() {
        let img = Image::filled(16, 8, 3, 0.25, Domain::Hr).unwrap();
        let d = downsample(&img, s(4)).unwrap();
        assert_eq!(d.shape(), [4, 2, 3]);
        assert!(d.data().iter().all(|v| (v - 0.25).abs() < 1e-14));
        let h = highpass(&img, s(4)).unwrap();
        assert!(h.data().iter().all(|v| v.abs() < 1e-14));
        assert_eq!(h.domain(), Domain::HighFreq);
    }

    #[test]
    fn one_pixel_upsample() {
        let img = Image::filled(1, 1, 1, 0.8, Domain::Hr).unwrap();
        let u = upsample(&img, s(4)).unwrap();
        assert_eq!(u.shape(), [4, 4, 1]);
        assert!(u.data().iter().all(|v| (v - 0.8).abs() < 1e-14));
    }

    #[test]
    fn identity_holds() {
        let x = ramp(16, 24);
        let (low, high) = split(&x, s(4)).unwrap();
        assert_eq!(low.shape(), x.shape());
        for i in 0..x.data().len() {
            assert!((low.data()[i] + high.data()[i] - x.data()[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn indivisible_rejected() {
        let x = ramp(10, 8);
        assert!(matches!(downsample(&x, s(4)), Err(Error::Indivisible { .. })));
        assert!(lowpass(&x, s(4)).is_err());
    }

    #[test]
    fn quantization_rules() {
        let hr = Image::new(1, 1, 3, vec![0.0, 1.0, 0.5], Domain::Hr).unwrap();
        assert_eq!(quantize_u8(&hr), vec![0, 255, 128]);
        let hr = Image::new(1, 1, 3, vec![-0.2, 1.7, 0.499 / 255.0], Domain::Hr).unwrap();
        assert_eq!(quantize_u8(&hr), vec![0, 255, 0]);
        let hf = Image::new(1, 1, 3, vec![1.0 / 600.0, -0.5, -2.0], Domain::HighFreq).unwrap();
        assert_eq!(quantize_u8(&hf), vec![0, -128, -255]);
    }
}

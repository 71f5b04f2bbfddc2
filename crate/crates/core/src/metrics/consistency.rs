//! LR consistency: PSNR between the shrunk super-resolved image and the LR input.

use crate::error::{Error, Result};
use crate::imagecore::{downsample, Image, ScaleFactor};

/// PSNR in dB with peak 1; `f64::INFINITY` for an exact match.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// `PSNR((x̂)_{s↓}, y)`.
pub fn lr_psnr(sr: &Image, lr: &Image, s: ScaleFactor) -> Result<f64> {
    let down = downsample(sr, s)?;
    if down.shape() != lr.shape() {
        return Err(Error::shape(
            "lr_psnr",
            format!("downsampled SR {:?} vs LR {:?}", down.shape(), lr.shape()),
        ));
    }
    psnr(&down, lr)
}

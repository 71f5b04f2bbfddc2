//! Separable bicubic resampling.
//!
//! Keys cubic with `a = -0.5`. When shrinking, the kernel is stretched by the
//! scale ratio (anti-aliasing) and every output's weights are renormalized to
//! sum to one. Source coordinate of output `i` is `(i + 0.5) * scale - 0.5`;
//! taps that fall outside the input are clamped to the nearest edge pixel.

use std::sync::Arc;

use super::image::Image;
use crate::error::{Error, Result};
use crate::numerics::{LinearOp, Tensor};

pub const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output sparse weights along one axis.
#[derive(Debug, Clone)]
pub struct AxisWeights {
    in_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    pub fn new(in_len: usize, out_len: usize) -> Result<Self> {
        if in_len == 0 || out_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "resize {in_len} -> {out_len}: zero-sized axis"
            )));
        }
        let scale = in_len as f64 / out_len as f64;
        let stretch = scale.max(1.0);
        let support = 2.0 * stretch;
        let taps = (0..out_len)
            .map(|i| {
                let center = (i as f64 + 0.5) * scale - 0.5;
                let lo = (center - support).floor() as i64;
                let hi = (center + support).ceil() as i64;
                let mut raw: Vec<(usize, f64)> = Vec::new();
                let mut total = 0.0;
                for j in lo..=hi {
                    let w = keys_kernel((j as f64 - center) / stretch);
                    if w == 0.0 {
                        continue;
                    }
                    total += w;
                    let idx = j.clamp(0, in_len as i64 - 1) as usize;
                    match raw.iter_mut().find(|(k, _)| *k == idx) {
                        Some((_, acc)) => *acc += w,
                        None => raw.push((idx, w)),
                    }
                }
                for (_, w) in &mut raw {
                    *w /= total;
                }
                raw
            })
            .collect();
        Ok(AxisWeights { in_len, taps })
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    /// `(input index, weight)` pairs for output `i`.
    pub fn taps(&self, i: usize) -> &[(usize, f64)] {
        &self.taps[i]
    }

    /// Dense weight of input `j` for output `i`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.taps[i]
            .iter()
            .filter(|(k, _)| *k == j)
            .map(|(_, w)| w)
            .sum()
    }
}

/// Bicubic `[H,W,C] -> [H',W',C]` resize as a linear operator.
#[derive(Debug, Clone)]
pub struct Resampler {
    rows: AxisWeights,
    cols: AxisWeights,
}

impl Resampler {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Self> {
        Ok(Resampler {
            rows: AxisWeights::new(in_h, out_h)?,
            cols: AxisWeights::new(in_w, out_w)?,
        })
    }

    pub fn rows(&self) -> &AxisWeights {
        &self.rows
    }

    pub fn cols(&self) -> &AxisWeights {
        &self.cols
    }

    pub fn arc(self) -> Arc<dyn LinearOp> {
        Arc::new(self)
    }

    fn check(&self, shape: &[usize], h: usize, w: usize) -> Result<usize> {
        match *shape {
            [sh, sw, c] if sh == h && sw == w => Ok(c),
            _ => Err(Error::shape(
                "resample",
                format!("expected [{h},{w},C], got {shape:?}"),
            )),
        }
    }
}

impl LinearOp for Resampler {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (ih, iw) = (self.rows.in_len(), self.cols.in_len());
        let (oh, ow) = (self.rows.out_len(), self.cols.out_len());
        let c = self.check(x.shape(), ih, iw)?;
        let src = x.data();

        let mut tmp = vec![0.0; ih * ow * c];
        for y in 0..ih {
            for j in 0..ow {
                let dst = &mut tmp[(y * ow + j) * c..][..c];
                for &(q, wt) in self.cols.taps(j) {
                    let s = &src[(y * iw + q) * c..][..c];
                    for (d, v) in dst.iter_mut().zip(s) {
                        *d += wt * v;
                    }
                }
            }
        }
        let mut out = vec![0.0; oh * ow * c];
        let row_len = ow * c;
        for i in 0..oh {
            let dst = &mut out[i * row_len..][..row_len];
            for &(p, wt) in self.rows.taps(i) {
                let s = &tmp[p * row_len..][..row_len];
                for (d, v) in dst.iter_mut().zip(s) {
                    *d += wt * v;
                }
            }
        }
        Tensor::new(vec![oh, ow, c], out)
    }

    fn apply_transpose(&self, y: &Tensor) -> Result<Tensor> {
        let (ih, iw) = (self.rows.in_len(), self.cols.in_len());
        let (oh, ow) = (self.rows.out_len(), self.cols.out_len());
        let c = self.check(y.shape(), oh, ow)?;
        let src = y.data();

        let row_len = ow * c;
        let mut tmp = vec![0.0; ih * row_len];
        for i in 0..oh {
            let s = &src[i * row_len..][..row_len];
            for &(p, wt) in self.rows.taps(i) {
                let dst = &mut tmp[p * row_len..][..row_len];
                for (d, v) in dst.iter_mut().zip(s) {
                    *d += wt * v;
                }
            }
        }
        let mut out = vec![0.0; ih * iw * c];
        for yy in 0..ih {
            for j in 0..ow {
                let s = &tmp[(yy * ow + j) * c..][..c];
                for &(q, wt) in self.cols.taps(j) {
                    let dst = &mut out[(yy * iw + q) * c..][..c];
                    for (d, v) in dst.iter_mut().zip(s) {
                        *d += wt * v;
                    }
                }
            }
        }
        Tensor::new(vec![ih, iw, c], out)
    }
}

/// Bicubic resize to `out_h x out_w`. The output is not clamped and keeps the
/// input's domain.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    let r = Resampler::new(img.height(), img.width(), out_h, out_w)?;
    Image::from_tensor(r.apply(img.tensor())?, img.domain())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::Domain;

    #[test]
    fn kernel_values() {
        assert_eq!(keys_kernel(0.0), 1.0);
        assert_eq!(keys_kernel(1.0), 0.0);
        assert_eq!(keys_kernel(2.0), 0.0);
        assert!((keys_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((keys_kernel(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn weights_partition_unity() {
        for (i, o) in [(8, 2), (2, 8), (5, 7), (16, 4), (1, 4), (4, 1)] {
            let a = AxisWeights::new(i, o).unwrap();
            for k in 0..o {
                let s: f64 = a.taps(k).iter().map(|(_, w)| w).sum();
                assert!((s - 1.0).abs() < 1e-14, "{i}->{o} row {k}: {s}");
            }
        }
    }

    #[test]
    fn constant_preserved() {
        let img = Image::filled(6, 10, 3, 0.37, Domain::Hr).unwrap();
        for (h, w) in [(3, 5), (12, 20), (1, 1), (7, 3)] {
            let r = bicubic_resize(&img, h, w).unwrap();
            assert!(r.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
        }
    }

    #[test]
    fn zero_size_rejected() {
        let img = Image::filled(4, 4, 1, 0.5, Domain::Hr).unwrap();
        assert!(bicubic_resize(&img, 0, 2).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        let r = Resampler::new(6, 5, 3, 9).unwrap();
        let x = Tensor::from_fn(&[6, 5, 2], |i| ((i * 37 % 11) as f64) / 7.0 - 0.5);
        let y = Tensor::from_fn(&[3, 9, 2], |i| ((i * 13 % 7) as f64) / 3.0 - 1.0);
        let lhs: f64 = r.apply(&x).unwrap().data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(r.apply_transpose(&y).unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

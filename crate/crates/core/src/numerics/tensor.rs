use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` tensor.
///
/// A zero-length shape denotes a scalar holding exactly one value.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        let head: Vec<_> = self.data.iter().take(SHOWN).collect();
        if self.data.len() > SHOWN {
            write!(f, " {head:?}...")
        } else {
            write!(f, " {head:?}")
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "elementwise",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Last dimension, i.e. channel count for `[H, W, C]` activations.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = a (m x k) * b (k x n)`, both row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(a, false, b, false, &mut c, m, k, n, 0.0);
    c
}

/// General `c = alpha_c * c + op(a) * op(b)` where op optionally transposes.
/// `a` is `m x k` after op, `b` is `k x n` after op.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], padding: Padding) -> Result<Self> {
        let (&[h, w, cin], &[kh, kw, kcin, cout]) = (input, kernel) else {
            return Err(Error::shape(
                "conv2d",
                format!("input {input:?} must be [H,W,C], kernel {kernel:?} must be [kh,kw,Cin,Cout]"),
            ));
        };
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, kernel expects {kcin}"),
            ));
        }
        let (oh, ow, pad_h, pad_w) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::shape(
                        "conv2d",
                        format!("same padding needs odd kernel, got {kh}x{kw}"),
                    ));
                }
                (h, w, kh / 2, kw / 2)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::shape(
                        "conv2d",
                        format!("kernel {kh}x{kw} larger than input {h}x{w}"),
                    ));
                }
                (h - kh + 1, w - kw + 1, 0, 0)
            }
        };
        Ok(ConvGeom {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            oh,
            ow,
            pad_h,
            pad_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Source pixel for output `(oy, ox)` and tap `(ky, kx)`, if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy + ky).checked_sub(self.pad_h)?;
        let ix = (ox + kx).checked_sub(self.pad_w)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }

    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let pl = self.patch_len();
        let mut cols = vec![0.0; self.oh * self.ow * pl];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * pl..][..pl];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if let Some((iy, ix)) = self.source(oy, ox, ky, kx) {
                            let src = &input[(iy * self.w + ix) * self.cin..][..self.cin];
                            row[(ky * self.kw + kx) * self.cin..][..self.cin].copy_from_slice(src);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let pl = self.patch_len();
        let mut out = vec![0.0; self.h * self.w * self.cin];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * pl..][..pl];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if let Some((iy, ix)) = self.source(oy, ox, ky, kx) {
                            let dst = &mut out[(iy * self.w + ix) * self.cin..][..self.cin];
                            let src = &row[(ky * self.kw + kx) * self.cin..][..self.cin];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// 2-D cross-correlation of an `[H,W,Cin]` input with a `[kh,kw,Cin,Cout]` kernel,
/// zero padded in `Same` mode.
pub fn conv2d(input: &Tensor, kernel: &Tensor, padding: Padding) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), padding)?;
    Ok(conv2d_with(&g, input.data(), kernel.data()))
}

pub(crate) fn conv2d_with(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Tensor {
    let cols = g.im2col(input);
    let out = matmul(&cols, kernel, g.oh * g.ow, g.patch_len(), g.cout);
    Tensor {
        shape: vec![g.oh, g.ow, g.cout],
        data: out,
    }
}

/// Gradients of a convolution with respect to its input and kernel.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    upstream: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let pl = g.patch_len();
    let npix = g.oh * g.ow;
    let cols = g.im2col(input);
    let mut dkernel = vec![0.0; pl * g.cout];
    gemm(&cols, true, upstream, false, &mut dkernel, pl, npix, g.cout, 0.0);
    let mut dcols = vec![0.0; npix * pl];
    gemm(upstream, false, kernel, true, &mut dcols, npix, g.cout, pl, 0.0);
    (g.col2im(&dcols), dkernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert_eq!(Tensor::scalar(3.0).item(), 3.0);
    }

    #[test]
    fn matmul_small() {
        let c = matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
        let mut t = vec![0.0; 4];
        // a^T b
        gemm(&[1.0, 2.0, 3.0, 4.0], true, &[5.0, 6.0, 7.0, 8.0], false, &mut t, 2, 2, 2, 0.0);
        assert_eq!(t, vec![26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::from_fn(&[3, 4, 2], |i| i as f64 * 0.5 - 1.0);
        let mut k = Tensor::zeros(&[1, 1, 2, 2]);
        k.data_mut()[0] = 1.0;
        k.data_mut()[3] = 1.0;
        assert_eq!(conv2d(&x, &k, Padding::Same).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_image() {
        let x = Tensor::full(&[5, 5, 1], 0.3);
        let k = Tensor::ones(&[3, 3, 1, 1]);
        let y = conv2d(&x, &k, Padding::Same).unwrap();
        assert!((y.data()[2 * 5 + 2] - 9.0 * 0.3).abs() < 1e-15);
        // corner sees only 4 taps
        assert!((y.data()[0] - 4.0 * 0.3).abs() < 1e-15);
        let v = conv2d(&x, &k, Padding::Valid).unwrap();
        assert_eq!(v.shape(), &[3, 3, 1]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::zeros(&[3, 3, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        assert!(conv2d(&x, &k, Padding::Same).is_err());
        let k = Tensor::zeros(&[2, 2, 2, 1]);
        assert!(conv2d(&x, &k, Padding::Same).is_err());
    }
}

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Value domain of an [`Image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Ordinary intensities in `[0, 1]`.
    Hr,
    /// Signed residuals (high-frequency content, noise maps), nominally in `[-1, 1]`.
    HighFreq,
}

/// `H x W x C` raster stored channel-last, `C` in {1, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    tensor: Tensor,
    domain: Domain,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>, domain: Domain) -> Result<Self> {
        Self::from_tensor(Tensor::new(vec![height, width, channels], data)?, domain)
    }

    pub fn from_tensor(tensor: Tensor, domain: Domain) -> Result<Self> {
        match *tensor.shape() {
            [_, _, 1] | [_, _, 3] => Ok(Image { tensor, domain }),
            ref s => Err(Error::shape(
                "image",
                format!("expected [H,W,1] or [H,W,3], got {s:?}"),
            )),
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64, domain: Domain) -> Result<Self> {
        Self::from_tensor(Tensor::full(&[height, width, channels], value), domain)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        domain: Domain,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data, domain)
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height(), self.width(), self.channels()]
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.tensor.data_mut()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.tensor.data()[(y * self.width() + x) * self.channels() + c]
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            tensor: self.tensor.map(f),
            domain: self.domain,
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Elementwise combination; the result takes `domain`.
    pub fn zip_map(&self, other: &Image, domain: Domain, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        Ok(Image {
            tensor: self.tensor.zip_map(&other.tensor, f)?,
            domain,
        })
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.tensor.max_abs_diff(&other.tensor)
    }

    pub fn mean_abs(&self) -> f64 {
        self.data().iter().map(|v| v.abs()).sum::<f64>() / self.data().len() as f64
    }

    /// Copy of the `size x size` window at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height() || left + width > self.width() {
            return Err(Error::shape(
                "crop",
                format!(
                    "{height}x{width} at ({top},{left}) exceeds {}x{}",
                    self.height(),
                    self.width()
                ),
            ));
        }
        Image::from_fn(height, width, self.channels(), self.domain, |y, x, c| {
            self.get(top + y, left + x, c)
        })
    }

    pub fn flip_horizontal(&self) -> Image {
        let w = self.width();
        Image::from_fn(self.height(), w, self.channels(), self.domain, |y, x, c| {
            self.get(y, w - 1 - x, c)
        })
        .expect("same shape")
    }

    /// Counter-clockwise rotation by 90 degrees.
    pub fn rot90(&self) -> Image {
        let (h, w) = (self.height(), self.width());
        Image::from_fn(w, h, self.channels(), self.domain, |y, x, c| self.get(x, w - 1 - y, c))
            .expect("same element count")
    }
}

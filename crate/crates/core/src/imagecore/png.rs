//! 8-bit PNG load/save and the raw FSHF float format for signed images.
//!
//! FSHF layout: ASCII `FSHF`, then little-endian `u32` height, width,
//! channels, then `f32` little-endian samples in planar (channel-major) order.

use std::path::Path;

use image::{codecs::png::PngEncoder, ExtendedColorType, ImageEncoder, ImageFormat};

use super::freq::quantize_u8;
use super::image::{Domain, Image};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const FSHF_MAGIC: &[u8; 4] = b"FSHF";
const FSHF_HEADER: usize = 16;

fn image_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Decodes an 8-bit grayscale or RGB PNG into `[0, 1]` via `/255`.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let dynimg = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, raw) = match dynimg {
        image::DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        image::DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(image_err(
                path,
                format!("unsupported pixel format {:?}; need 8-bit gray or RGB", other.color()),
            ))
        }
    };
    let data = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Image::new(h, w, channels, data, Domain::Hr)
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = quantize_u8(&img.clone().with_domain(Domain::Hr))
        .into_iter()
        .map(|q| q as u8)
        .collect();
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&bytes, img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
    Ok(out)
}

/// Writes an 8-bit PNG, clamping to `[0, 1]` first.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_png(img)?)
}

pub fn encode_fshf(img: &Image) -> Vec<u8> {
    let [h, w, c] = img.shape();
    let mut out = Vec::with_capacity(FSHF_HEADER + h * w * c * 4);
    out.extend_from_slice(FSHF_MAGIC);
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.extend_from_slice(&(img.get(y, x, ch) as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_fshf(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.len() < FSHF_HEADER || &bytes[..4] != FSHF_MAGIC {
        return Err(image_err(path, "missing FSHF header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h * w * c;
    if n == 0 || bytes.len() != FSHF_HEADER + 4 * n {
        return Err(image_err(
            path,
            format!("FSHF {h}x{w}x{c} needs {} bytes, file has {}", FSHF_HEADER + 4 * n, bytes.len()),
        ));
    }
    let planar: Vec<f64> = bytes[FSHF_HEADER..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Image::from_fn(h, w, c, Domain::HighFreq, |y, x, ch| planar[(ch * h + y) * w + x])
}

pub fn save_fshf(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_fshf(img))
}

pub fn load_fshf(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fshf(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_bytes_fixture() {
        let bytes = [0u8, 51, 102, 255, 128, 1, 7, 9, 200, 10, 20, 30];
        let mut png = Vec::new();
        PngEncoder::new(&mut png)
            .write_image(&bytes, 2, 2, ExtendedColorType::Rgb8)
            .unwrap();
        let img = decode_png(&png, Path::new("fixture")).unwrap();
        assert_eq!(img.shape(), [2, 2, 3]);
        let expect: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        assert_eq!(img.data(), expect.as_slice());
        // pixel (0,1) is the second RGB triple
        assert_eq!(img.get(0, 1, 0), 255.0 / 255.0);
    }

    #[test]
    fn truncated_png_rejected() {
        let img = Image::filled(4, 4, 1, 0.5, Domain::Hr).unwrap();
        let png = encode_png(&img).unwrap();
        assert!(decode_png(&png[..png.len() / 2], Path::new("t")).is_err());
        assert!(decode_png(b"not a png", Path::new("t")).is_err());
    }

    #[test]
    fn sixteen_bit_rejected() {
        let mut png = Vec::new();
        let raw = [0u8; 8];
        PngEncoder::new(&mut png)
            .write_image(&raw, 2, 2, ExtendedColorType::L16)
            .unwrap();
        assert!(decode_png(&png, Path::new("t")).is_err());
    }

    #[test]
    fn fshf_roundtrip_is_planar() {
        let img = Image::from_fn(2, 3, 3, Domain::HighFreq, |y, x, c| {
            (y as f64 - x as f64) * 0.125 + c as f64 * 0.5
        })
        .unwrap();
        let bytes = encode_fshf(&img);
        assert_eq!(&bytes[..4], b"FSHF");
        assert_eq!(bytes.len(), 16 + 18 * 4);
        // second stored sample is channel 0, row 0, col 1
        let second = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
        assert_eq!(second as f64, img.get(0, 1, 0));
        let back = decode_fshf(&bytes, Path::new("t")).unwrap();
        assert_eq!(back, img);
        assert!(decode_fshf(&bytes[..bytes.len() - 1], Path::new("t")).is_err());
    }
}

//! Images, bicubic resampling and the frequency split.

mod freq;
mod image;
mod png;
mod resample;

pub use self::image::{Domain, Image};
pub use freq::{check_divisible, downsample, highpass, lowpass, quantize_u8, split, upsample, ScaleFactor};
pub use png::{
    decode_fshf, decode_png, encode_fshf, encode_png, load_fshf, load_png, save_fshf, save_png,
    FSHF_MAGIC,
};
pub use resample::{bicubic_resize, keys_kernel, AxisWeights, Resampler, KEYS_A};

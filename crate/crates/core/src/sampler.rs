//! Super-resolution by sampling: `x̂ = clamp(f⁻¹(z | y, v) + (y)_{s↑})` with
//! `z ~ N(0, τ²I)`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::imagecore::{upsample, Domain, Image};
use crate::noisecond::{make_inference_condition, NoiseSchedule};
use crate::numerics::Tensor;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub num_samples: usize,
    pub seed: u64,
    pub inference_sigma: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temperature: 0.9,
            num_samples: 10,
            seed: 0,
            inference_sigma: NoiseSchedule::default().inference_sigma,
        }
    }
}

impl SamplerConfig {
    /// Defaults for a scale factor: temperature 0.85 at x8 and above.
    pub fn for_scale(scale: usize) -> Self {
        SamplerConfig {
            temperature: default_temperature(scale),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {} < 0", self.temperature)));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument("num_samples must be >= 1".into()));
        }
        if !(self.inference_sigma.is_finite() && self.inference_sigma >= 0.0) {
            return Err(Error::InvalidArgument("inference_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn default_temperature(scale: usize) -> f64 {
    if scale >= 8 {
        0.85
    } else {
        0.9
    }
}

/// `M` samples for one LR input, in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Image>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn check_lr(model: &FlowModel, y: &Image) -> Result<()> {
    let cfg = model.config();
    let (h, w) = (y.height() * cfg.scale, y.width() * cfg.scale);
    let m = 1 << cfg.levels;
    if h % m != 0 || w % m != 0 {
        return Err(Error::shape(
            "sample_sr",
            format!(
                "LR {}x{} gives HR {h}x{w}, not divisible by 2^levels = {m}",
                y.height(),
                y.width()
            ),
        ));
    }
    if y.channels() != cfg.channels {
        return Err(Error::shape(
            "sample_sr",
            format!("LR has {} channels, model has {}", y.channels(), cfg.channels),
        ));
    }
    Ok(())
}

/// The sample before the final clamp.
pub fn sample_sr_unclamped(
    model: &FlowModel,
    y: &Image,
    cfg: &SamplerConfig,
    image_id: u64,
    index: u64,
) -> Result<Image> {
    cfg.validate()?;
    check_lr(model, y)?;
    let s = model.config().scale_factor();
    let mut r = rng::stream(cfg.seed, &[rng::tag::SAMPLE, image_id, index]);
    let shape = model.latent_shape(y.height() * s.get(), y.width() * s.get());
    let z = if cfg.temperature == 0.0 {
        Tensor::zeros(&shape)
    } else {
        let n = Normal::new(0.0, cfg.temperature).expect("validated temperature");
        Tensor::from_fn(&shape, |_| n.sample(&mut r))
    };
    let schedule = NoiseSchedule {
        inference_sigma: cfg.inference_sigma,
        ..NoiseSchedule::zero()
    };
    let cond = make_inference_condition(y, s, &schedule, &mut r)?;
    let hf = Image::from_tensor(model.inverse(&z, &cond)?, Domain::HighFreq)?;
    let up = upsample(y, s)?;
    hf.zip_map(&up, Domain::Hr, |a, b| a + b)
}

/// One super-resolved sample. The stream `(seed, SAMPLE, image_id, index)`
/// drives first `z`, then `v`.
pub fn sample_sr(model: &FlowModel, y: &Image, cfg: &SamplerConfig, image_id: u64, index: u64) -> Result<Image> {
    Ok(sample_sr_unclamped(model, y, cfg, image_id, index)?.clamp01())
}

pub fn sample_set(model: &FlowModel, y: &Image, cfg: &SamplerConfig, image_id: u64) -> Result<SampleSet> {
    let samples = (0..cfg.num_samples as u64)
        .map(|i| sample_sr(model, y, cfg, image_id, i))
        .collect::<Result<_>>()?;
    Ok(SampleSet { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::verify::perturb_params;
    use crate::flow::FlowConfig;
    use crate::imagecore::{downsample, ScaleFactor};
    use rand::Rng as _;

    fn model() -> FlowModel {
        FlowModel::new(FlowConfig {
            hidden: 4,
            encoder_width: 4,
            feature_channels: 2,
            steps: 1,
            ..Default::default()
        })
        .unwrap()
    }

    fn lr(seed: u64) -> Image {
        let mut r = rng::stream(seed, &[]);
        Image::from_fn(4, 4, 3, Domain::Hr, |_, _, _| r.random::<f64>()).unwrap()
    }

    fn deterministic() -> SamplerConfig {
        SamplerConfig {
            temperature: 0.0,
            inference_sigma: 0.0,
            num_samples: 3,
            seed: 0,
        }
    }

    #[test]
    fn identity_model_reconstructs_low_frequency() {
        let m = model();
        let y = lr(1);
        let x = sample_sr(&m, &y, &deterministic(), 0, 0).unwrap();
        let s = ScaleFactor::new(4).unwrap();
        assert_eq!(x, upsample(&y, s).unwrap().clamp01());
        let raw = sample_sr_unclamped(&m, &y, &deterministic(), 0, 0).unwrap();
        let up = upsample(&y, s).unwrap();
        assert_eq!(downsample(&raw, s).unwrap(), downsample(&up, s).unwrap());
    }

    #[test]
    fn deterministic_settings_give_identical_samples() {
        let mut m = model();
        perturb_params(&mut m, 0.05, 1);
        let set = sample_set(&m, &lr(2), &deterministic(), 0).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.samples.iter().all(|s| *s == set.samples[0]));
    }

    #[test]
    fn seeded_and_shaped() {
        let mut m = model();
        perturb_params(&mut m, 0.05, 1);
        let cfg = SamplerConfig {
            num_samples: 2,
            ..Default::default()
        };
        let y = lr(3);
        let a = sample_set(&m, &y, &cfg, 5).unwrap();
        assert_eq!(a, sample_set(&m, &y, &cfg, 5).unwrap());
        assert_ne!(a.samples[0], a.samples[1]);
        assert_eq!(sample_sr(&m, &y, &cfg, 5, 1).unwrap(), a.samples[1]);
        for s in &a.samples {
            assert_eq!(s.shape(), [16, 16, 3]);
            assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let one = sample_set(&m, &y, &SamplerConfig { num_samples: 1, ..cfg }, 5).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn shape_and_config_errors() {
        let m = model();
        let deep = FlowModel::new(FlowConfig {
            levels: 3,
            ..m.config().clone()
        })
        .unwrap();
        let bad = Image::filled(3, 3, 3, 0.5, Domain::Hr).unwrap();
        assert!(matches!(
            sample_sr(&deep, &bad, &deterministic(), 0, 0),
            Err(Error::Shape { .. })
        ));
        let gray = Image::filled(4, 4, 1, 0.5, Domain::Hr).unwrap();
        assert!(sample_sr(&m, &gray, &deterministic(), 0, 0).is_err());
        let neg = SamplerConfig {
            temperature: -1.0,
            ..deterministic()
        };
        assert!(neg.validate().is_err());
        assert_eq!(SamplerConfig::for_scale(8).temperature, 0.85);
        assert_eq!(SamplerConfig::for_scale(4).temperature, 0.9);
    }
}

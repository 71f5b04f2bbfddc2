//! Noise injection and condition construction.
//!
//! Training draws `σ ~ U(σ_min, σ_max)` and `v ~ N(0, σ²I)` at HR size; the
//! LR-sized noise `w` is always the bicubic shrink of `v`. The target becomes
//! `x⁺_hf = H_s(x) + v`, the input `y⁺ = y + w`, and the flow sees `(y⁺, v, σ)`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Condition;
use crate::imagecore::{check_divisible, downsample, split, Domain, Image, ScaleFactor};
use crate::numerics::Tensor;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Noise level of `v` at inference.
    pub inference_sigma: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            sigma_min: 0.0,
            sigma_max: 0.2,
            inference_sigma: 0.1,
        }
    }
}

impl NoiseSchedule {
    /// No noise anywhere.
    pub fn zero() -> Self {
        NoiseSchedule {
            sigma_min: 0.0,
            sigma_max: 0.0,
            inference_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_min, self.sigma_max, self.inference_sigma];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "noise levels must be finite and non-negative".into(),
            ));
        }
        if self.sigma_min > self.sigma_max {
            return Err(Error::InvalidArgument(format!(
                "sigma_min {} exceeds sigma_max {}",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }
}

/// One draw of training noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingNoise {
    /// HR-sized noise `v`.
    pub v: Image,
    /// LR-sized noise `w = (v)_{s↓}`.
    pub w: Image,
    pub sigma: f64,
}

fn gaussian(shape: [usize; 3], sigma: f64, rng: &mut Rng) -> Result<Image> {
    let t = if sigma == 0.0 {
        Tensor::zeros(&shape)
    } else {
        let n = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Tensor::from_fn(&shape, |_| n.sample(rng))
    };
    Image::from_tensor(t, Domain::HighFreq)
}

pub fn sample_training_noise(
    schedule: &NoiseSchedule,
    hr_shape: [usize; 3],
    s: ScaleFactor,
    rng: &mut Rng,
) -> Result<TrainingNoise> {
    schedule.validate()?;
    check_divisible(hr_shape[0], hr_shape[1], s.get())?;
    let sigma = if schedule.sigma_max > schedule.sigma_min {
        rng.random_range(schedule.sigma_min..schedule.sigma_max)
    } else {
        schedule.sigma_min
    };
    let v = gaussian(hr_shape, sigma, rng)?;
    let w = downsample(&v, s)?;
    Ok(TrainingNoise { v, w, sigma })
}

/// Everything one training example contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// `x⁺_hf = H_s(x) + v`.
    pub x_hf_plus: Image,
    /// `y⁺ = (x)_{s↓} + w`.
    pub y_plus: Image,
    pub cond: Condition,
    pub noise: TrainingNoise,
}

pub fn make_training_pair(x: &Image, s: ScaleFactor, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<TrainingPair> {
    if x.domain() != Domain::Hr {
        return Err(Error::InvalidArgument("training pairs need an HR-domain image".into()));
    }
    let noise = sample_training_noise(schedule, x.shape(), s, rng)?;
    let (_, x_hf) = split(x, s)?;
    let y = downsample(x, s)?;
    let x_hf_plus = x_hf.zip_map(&noise.v, Domain::HighFreq, |a, b| a + b)?;
    let y_plus = y.zip_map(&noise.w, Domain::Hr, |a, b| a + b)?;
    let cond = Condition::new(&y_plus, &noise.v, noise.sigma);
    Ok(TrainingPair {
        x_hf_plus,
        y_plus,
        cond,
        noise,
    })
}

/// Condition for sampling from LR `y`: fresh `v ~ N(0, σ_inf² I)` at HR size,
/// `y` itself left unperturbed.
pub fn make_inference_condition(y: &Image, s: ScaleFactor, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<Condition> {
    schedule.validate()?;
    let shape = [y.height() * s.get(), y.width() * s.get(), y.channels()];
    let v = gaussian(shape, schedule.inference_sigma, rng)?;
    Ok(Condition::new(y, &v, schedule.inference_sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowConfig, FlowModel};
    use crate::imagecore::lowpass;
    use crate::rng::stream;

    fn s4() -> ScaleFactor {
        ScaleFactor::new(4).unwrap()
    }

    fn image(h: usize, seed: u64) -> Image {
        let mut r = stream(seed, &[]);
        Image::from_fn(h, h, 3, Domain::Hr, |_, _, _| r.random::<f64>()).unwrap()
    }

    #[test]
    fn zero_schedule_gives_zero_noise() {
        let n = sample_training_noise(&NoiseSchedule::zero(), [8, 8, 3], s4(), &mut stream(1, &[])).unwrap();
        assert_eq!(n.sigma, 0.0);
        assert!(n.v.data().iter().chain(n.w.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn w_is_the_downsampled_v() {
        let n = sample_training_noise(&NoiseSchedule::default(), [16, 16, 3], s4(), &mut stream(2, &[])).unwrap();
        assert_eq!(n.w, downsample(&n.v, s4()).unwrap());
        assert!(n.w.data().iter().any(|&v| v < 0.0), "noise stays signed");
    }

    #[test]
    fn mixture_second_moment() {
        let sched = NoiseSchedule {
            sigma_min: 0.05,
            sigma_max: 0.2,
            inference_sigma: 0.1,
        };
        let mut r = stream(3, &[]);
        let draws = 1000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let n = sample_training_noise(&sched, [8, 8, 1], s4(), &mut r).unwrap();
            acc += n.v.data().iter().map(|v| v * v).sum::<f64>() / 64.0;
        }
        let (a, b) = (sched.sigma_min, sched.sigma_max);
        let expect = (b * b + a * b + a * a) / 3.0;
        assert!((acc / draws as f64 / expect - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_noise_pair_is_the_frequency_split() {
        let x = image(16, 4);
        let p = make_training_pair(&x, s4(), &NoiseSchedule::zero(), &mut stream(0, &[])).unwrap();
        assert_eq!(p.x_hf_plus.data(), crate::imagecore::highpass(&x, s4()).unwrap().data());
        assert_eq!(p.y_plus.data(), downsample(&x, s4()).unwrap().data());
    }

    #[test]
    fn pair_decomposition_consistency() {
        let x = image(16, 5);
        let p = make_training_pair(&x, s4(), &NoiseSchedule::default(), &mut stream(6, &[])).unwrap();
        let low = lowpass(&x, s4()).unwrap();
        let rec: Vec<f64> = p
            .x_hf_plus
            .data()
            .iter()
            .zip(p.noise.v.data())
            .zip(low.data())
            .map(|((h, v), l)| h - v + l)
            .collect();
        let err = rec.iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12);
        assert_eq!(p.cond.noise, *p.noise.v.tensor());
        assert_eq!(p.cond.lr, *p.y_plus.tensor());
    }

    #[test]
    fn fixed_sigma_variance() {
        let sched = NoiseSchedule {
            sigma_min: 0.1,
            sigma_max: 0.1,
            inference_sigma: 0.1,
        };
        let x = image(64, 7);
        let p = make_training_pair(&x, s4(), &sched, &mut stream(8, &[])).unwrap();
        let hf = crate::imagecore::highpass(&x, s4()).unwrap();
        let d: Vec<f64> = p.x_hf_plus.data().iter().zip(hf.data()).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        assert!((var / 0.01 - 1.0).abs() < 0.1);
    }

    #[test]
    fn inference_condition() {
        let y = image(16, 9);
        let zero = NoiseSchedule::zero();
        let c = make_inference_condition(&y, s4(), &zero, &mut stream(1, &[])).unwrap();
        assert!(c.noise.data().iter().all(|&v| v == 0.0));
        assert_eq!(c.lr, *y.tensor());

        let sched = NoiseSchedule::default();
        let a = make_inference_condition(&y, s4(), &sched, &mut stream(1, &[])).unwrap();
        let b = make_inference_condition(&y, s4(), &sched, &mut stream(2, &[])).unwrap();
        assert_ne!(a.noise, b.noise);
        assert_eq!(a.sigma, 0.1);

        let model = FlowModel::new(FlowConfig::default()).unwrap();
        assert_eq!(a.noise.shape(), [64, 64, 3]);
        model.check_input(&Tensor::zeros(&[64, 64, 3]), &a).unwrap();
        assert_eq!(model.latent_shape(64, 64), [16, 16, 48]);
    }

    #[test]
    fn same_seed_same_draw() {
        let sched = NoiseSchedule::default();
        let a = sample_training_noise(&sched, [8, 8, 3], s4(), &mut stream(5, &[1])).unwrap();
        let b = sample_training_noise(&sched, [8, 8, 3], s4(), &mut stream(5, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_schedule() {
        let bad = NoiseSchedule {
            sigma_min: 0.3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(NoiseSchedule { inference_sigma: f64::NAN, ..Default::default() }.validate().is_err());
    }
}

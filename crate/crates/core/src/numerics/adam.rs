use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Fractions of the run, in percent, at which the learning rate halves.
pub const HALVING_POINTS_PCT: [u64; 4] = [50, 75, 90, 95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub total_steps: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 2e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            total_steps: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.base_lr > 0.0
            && self.total_steps >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "optimizer config out of range: {self:?}"
            )))
        }
    }
}

/// Step-decayed learning rate: `base_lr / 2^k` where `k` counts the halving
/// points (50/75/90/95 % of `total_steps`) that `step` has reached.
pub fn lr_schedule(step: u64, cfg: &OptimizerConfig) -> f64 {
    let reached = HALVING_POINTS_PCT
        .iter()
        .filter(|&&pct| step * 100 >= pct * cfg.total_steps)
        .count();
    cfg.base_lr / f64::from(1u32 << reached)
}

/// One bias-corrected Adam update at `step` (1-based), in place.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    cfg: &OptimizerConfig,
    step: u64,
) -> Result<()> {
    adam_step_with_lr(params, grads, cfg, step, lr_schedule(step, cfg))
}

/// Adam update with an explicit learning rate.
pub fn adam_step_with_lr(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    cfg: &OptimizerConfig,
    step: u64,
    lr: f64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::InvalidArgument("adam step is 1-based".into()));
    }
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::UnknownParam(format!("missing gradient for {name}")))?;
        if g.shape() != p.value.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: grad {:?} vs param {:?}", g.shape(), p.value.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }

    let t = step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let (value, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
        for i in 0..g.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    params.set_step(step);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: u64) -> OptimizerConfig {
        OptimizerConfig {
            total_steps: total,
            ..Default::default()
        }
    }

    fn store(vals: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![vals.len()], vals.to_vec()).unwrap());
        s
    }

    fn grads(vals: &[f64]) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(
            "w".to_string(),
            Tensor::new(vec![vals.len()], vals.to_vec()).unwrap(),
        )])
    }

    #[test]
    fn schedule_values() {
        let c = cfg(1000);
        assert_eq!(lr_schedule(0, &c), 2e-4);
        assert_eq!(lr_schedule(499, &c), 2e-4);
        assert_eq!(lr_schedule(500, &c), 1e-4);
        assert_eq!(lr_schedule(750, &c), 5e-5);
        assert_eq!(lr_schedule(900, &c), 2.5e-5);
        assert_eq!(lr_schedule(950, &c), 1.25e-5);
        assert_eq!(lr_schedule(960, &c), 2e-4 / 16.0);
        assert_eq!(lr_schedule(1000, &c), 1.25e-5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let c = cfg(10);
        let mut s = store(&[0.5, -1.0]);
        adam_step(&mut s, &grads(&[1.0, 1.0]), &c, 1).unwrap();
        let expect = -2e-4 / (1.0 + 1e-8);
        for (now, before) in s.get("w").unwrap().data().iter().zip([0.5, -1.0]) {
            assert!((now - before - expect).abs() < 1e-15);
        }
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let c = cfg(10);
        let mut s = store(&[0.5, -1.0]);
        adam_step(&mut s, &grads(&[2.0, -3.0]), &c, 1).unwrap();
        let before = s.get("w").unwrap().clone();
        let m_before = s.param("w").unwrap().m.clone();
        adam_step(&mut s, &grads(&[0.0, 0.0]), &c, 2).unwrap();
        let m_after = &s.param("w").unwrap().m;
        assert!(m_after.data()[0].abs() < m_before.data()[0].abs());
        // with a nonzero history the parameter still moves; a fresh store does not
        let mut fresh = store(&[0.5, -1.0]);
        adam_step(&mut fresh, &grads(&[0.0, 0.0]), &c, 1).unwrap();
        assert_eq!(fresh.get("w").unwrap().data(), &[0.5, -1.0]);
        assert_ne!(s.get("w").unwrap(), &before);
    }

    #[test]
    fn two_step_hand_trace() {
        // g = 0.5 both steps, lr fixed at 2e-4 (total large so no halving)
        let c = cfg(1_000_000);
        let mut s = store(&[0.0]);
        adam_step(&mut s, &grads(&[0.5]), &c, 1).unwrap();
        adam_step(&mut s, &grads(&[0.5]), &c, 2).unwrap();
        // step1: m=0.05 v=0.0025 mhat=0.5 vhat=0.25 -> delta=-2e-4*0.5/(0.5+1e-8)
        // step2: m=0.095 v=0.004975 mhat=0.095/0.19=0.5 vhat=0.004975/0.0199=0.25
        let d = 2e-4 * 0.5 / (0.5 + 1e-8);
        assert!((s.get("w").unwrap().data()[0] + 2.0 * d).abs() < 1e-17);
    }

    #[test]
    fn errors() {
        let c = cfg(10);
        let mut s = store(&[0.0, 0.0]);
        assert!(adam_step(&mut s, &grads(&[1.0]), &c, 1).is_err());
        assert!(adam_step(&mut s, &grads(&[f64::NAN, 0.0]), &c, 1).is_err());
        assert!(adam_step(&mut s, &grads(&[0.0, 0.0]), &c, 0).is_err());
    }
}

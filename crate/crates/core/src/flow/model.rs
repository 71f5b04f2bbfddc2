use std::f64::consts::{LN_2, PI};

use rand_distr::{Distribution, Normal};

use super::config::FlowConfig;
use super::layers::{self, Direction, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::imagecore::{Image, Resampler};
use crate::numerics::{Bindings, Padding, ParamStore, Tape, Tensor, Var};
use crate::rng;

/// Standard deviations below this leave an actnorm channel's scale at 1.
const ACTNORM_MIN_STD: f64 = 1e-6;

/// What the flow is conditioned on: the (possibly noisy) LR image `y⁺`,
/// the HR-sized noise map `v`, and its standard deviation `σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub lr: Tensor,
    pub noise: Tensor,
    pub sigma: f64,
}

impl Condition {
    pub fn new(lr: &Image, noise: &Image, sigma: f64) -> Self {
        Condition {
            lr: lr.tensor().clone(),
            noise: noise.tensor().clone(),
            sigma,
        }
    }

    /// HR spatial size implied by the noise map.
    pub fn hr_hw(&self) -> (usize, usize) {
        (self.noise.shape()[0], self.noise.shape()[1])
    }
}

/// Negative log-likelihood of one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nll {
    pub nats: f64,
    pub bits_per_dim: f64,
    pub dims: usize,
}

impl Nll {
    pub fn from_nats(nats: f64, dims: usize) -> Self {
        Nll {
            nats,
            bits_per_dim: nats / (dims as f64 * LN_2),
            dims,
        }
    }
}

/// The conditional flow `f_θ` with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    params: ParamStore,
    actnorm_initialized: bool,
}

fn conv_init(
    params: &mut ParamStore,
    prefix: &str,
    cin: usize,
    cout: usize,
    zero: bool,
    rng: &mut rng::Rng,
) {
    let fan_in = (9 * cin) as f64;
    let weight = if zero {
        Tensor::zeros(&[3, 3, cin, cout])
    } else {
        let normal = Normal::new(0.0, (1.0 / fan_in).sqrt()).expect("valid std");
        Tensor::from_fn(&[3, 3, cin, cout], |_| normal.sample(rng))
    };
    params.insert(format!("{prefix}.weight"), weight);
    params.insert(format!("{prefix}.bias"), Tensor::zeros(&[cout]));
}

impl FlowModel {
    /// Fresh model: encoder randomly initialized, every flow step the identity.
    pub fn new(config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut r = rng::stream(config.seed, &[rng::tag::INIT]);
        let c = config.channels;
        let (ew, fc) = (config.encoder_width, config.feature_channels);
        conv_init(&mut params, "enc.conv1", c, ew, false, &mut r);
        conv_init(&mut params, "enc.conv2", ew, ew, false, &mut r);
        conv_init(&mut params, "enc.conv3", ew, fc, false, &mut r);

        let cc = config.cond_channels();
        let model_layers = Self::layer_specs(&config);
        for spec in &model_layers {
            let lc = c << (2 * spec.level);
            let p = &spec.prefix;
            match spec.kind {
                LayerKind::Squeeze => {}
                LayerKind::ActNorm => {
                    params.insert(format!("{p}.scale"), Tensor::ones(&[lc]));
                    params.insert(format!("{p}.bias"), Tensor::zeros(&[lc]));
                }
                LayerKind::InvMix => {
                    params.insert(
                        format!("{p}.weight"),
                        Tensor::from_fn(&[lc, lc], |i| if i / lc == i % lc { 1.0 } else { 0.0 }),
                    );
                }
                LayerKind::NoiseInjector => {
                    conv_init(&mut params, &format!("{p}.conv1"), cc, config.hidden, false, &mut r);
                    conv_init(&mut params, &format!("{p}.conv2"), config.hidden, 2 * lc, true, &mut r);
                }
                LayerKind::Coupling => {
                    let ca = lc / 2;
                    conv_init(&mut params, &format!("{p}.conv1"), ca + cc, config.hidden, false, &mut r);
                    conv_init(
                        &mut params,
                        &format!("{p}.conv2"),
                        config.hidden,
                        2 * (lc - ca),
                        true,
                        &mut r,
                    );
                }
            }
        }
        Ok(FlowModel {
            config,
            params,
            actnorm_initialized: false,
        })
    }

    pub(crate) fn from_parts(config: FlowConfig, params: ParamStore, actnorm_initialized: bool) -> Result<Self> {
        let reference = FlowModel::new(config.clone())?;
        for (name, p) in reference.params.iter() {
            let got = params
                .param(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if got.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.value.shape(),
                    p.value.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Checkpoint("unexpected extra parameters".into()));
        }
        Ok(FlowModel {
            config,
            params,
            actnorm_initialized,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.actnorm_initialized
    }

    pub fn layer_specs(config: &FlowConfig) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        for level in 1..=config.levels {
            out.push(LayerSpec {
                kind: LayerKind::Squeeze,
                level,
                prefix: format!("l{level}.squeeze"),
            });
            for k in 0..config.steps {
                for (kind, tag) in [
                    (LayerKind::ActNorm, "actnorm"),
                    (LayerKind::InvMix, "mix"),
                    (LayerKind::NoiseInjector, "inject"),
                    (LayerKind::Coupling, "couple"),
                ] {
                    out.push(LayerSpec {
                        kind,
                        level,
                        prefix: format!("l{level}.s{k}.{tag}"),
                    });
                }
            }
        }
        out
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        Self::layer_specs(&self.config)
    }

    /// Latent shape for an HR input of `hr_h x hr_w`.
    pub fn latent_shape(&self, hr_h: usize, hr_w: usize) -> [usize; 3] {
        self.config.level_shape(hr_h, hr_w, self.config.levels)
    }

    pub fn check_input(&self, x: &Tensor, cond: &Condition) -> Result<()> {
        let c = self.config.channels;
        let s = self.config.scale;
        let [h, w, xc] = *x.shape() else {
            return Err(Error::shape("flow input", format!("{:?}", x.shape())));
        };
        let m = self.config.hr_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Indivisible {
                height: h,
                width: w,
                factor: m,
            });
        }
        if xc != c {
            return Err(Error::shape("flow input", format!("{xc} channels, model has {c}")));
        }
        if cond.noise.shape() != [h, w, c] {
            return Err(Error::shape(
                "condition",
                format!("noise map {:?} vs input {:?}", cond.noise.shape(), x.shape()),
            ));
        }
        if cond.lr.shape() != [h / s, w / s, c] {
            return Err(Error::shape(
                "condition",
                format!("LR {:?} vs input {:?} at scale {s}", cond.lr.shape(), x.shape()),
            ));
        }
        Ok(())
    }

    /// Per-level condition tensors `[h_l, w_l, F + C + 1]`: resized LR
    /// features, resized noise map, and a constant sigma channel.
    pub fn cond_features(&self, tape: &mut Tape, p: &Bindings, cond: &Condition) -> Result<Vec<Var>> {
        let (hr_h, hr_w) = cond.hr_hw();
        let (lr_h, lr_w) = (cond.lr.shape()[0], cond.lr.shape()[1]);
        let lr = tape.constant(cond.lr.clone());
        let mut f = lr;
        for (i, last) in [(1, false), (2, false), (3, true)] {
            let w = p.get(&format!("enc.conv{i}.weight"))?;
            let b = p.get(&format!("enc.conv{i}.bias"))?;
            f = tape.conv2d(f, w, Padding::Same)?;
            f = tape.add_bcast(f, b)?;
            if !last {
                f = tape.tanh(f);
            }
        }
        let noise = tape.constant(cond.noise.clone());
        let mut out = Vec::with_capacity(self.config.levels);
        for level in 1..=self.config.levels {
            let [lh, lw, _] = self.config.level_shape(hr_h, hr_w, level);
            let feat = tape.linear(f, Resampler::new(lr_h, lr_w, lh, lw)?.arc())?;
            let nmap = tape.linear(noise, Resampler::new(hr_h, hr_w, lh, lw)?.arc())?;
            let sig = tape.constant(Tensor::full(&[lh, lw, 1], cond.sigma));
            out.push(tape.concat_last(&[feat, nmap, sig])?);
        }
        Ok(out)
    }

    /// Applies one layer. Squeeze layers contribute no log-determinant.
    pub fn apply_layer(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        spec: &LayerSpec,
        x: Var,
        cond: &[Var],
        dir: Direction,
    ) -> Result<(Var, Option<Var>)> {
        let c = cond[spec.level - 1];
        let pre = spec.prefix.as_str();
        let (y, ld) = match spec.kind {
            LayerKind::Squeeze => {
                let y = match dir {
                    Direction::Forward => tape.squeeze2(x)?,
                    Direction::Inverse => tape.unsqueeze2(x)?,
                };
                return Ok((y, None));
            }
            LayerKind::ActNorm => layers::actnorm(tape, p, pre, x, dir)?,
            LayerKind::InvMix => layers::invmix(tape, p, pre, x, dir)?,
            LayerKind::NoiseInjector => layers::noise_injector(tape, p, pre, x, c, dir)?,
            LayerKind::Coupling => layers::affine_coupling(tape, p, pre, x, c, dir)?,
        };
        if !tape.value(y).is_finite() || !tape.value(ld).is_finite() {
            return Err(Error::NonFinite(spec.prefix.clone()));
        }
        Ok((y, Some(ld)))
    }

    /// `z = f(x | cond)` with the accumulated log-determinant, recorded on `tape`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        x: Var,
        cond: &Condition,
    ) -> Result<(Var, Var)> {
        self.check_input(tape.value(x), cond)?;
        let feats = self.cond_features(tape, p, cond)?;
        let mut h = x;
        let mut logdet = tape.constant(Tensor::scalar(0.0));
        for spec in self.layers() {
            let (y, ld) = self.apply_layer(tape, p, &spec, h, &feats, Direction::Forward)?;
            if let Some(ld) = ld {
                logdet = tape.add(logdet, ld)?;
            }
            h = y;
        }
        Ok((h, logdet))
    }

    /// NLL in nats, `Σ(z²/2 + ½ log 2π) - log|det J|`, recorded on `tape`.
    pub fn nll_tape(&self, tape: &mut Tape, p: &Bindings, x: Var, cond: &Condition) -> Result<Var> {
        let dims = tape.value(x).len() as f64;
        let (z, logdet) = self.forward_tape(tape, p, x, cond)?;
        let sq = tape.square(z);
        let sum = tape.sum(sq);
        let half = tape.scale(sum, 0.5);
        let prior = tape.add_scalar(half, 0.5 * dims * (2.0 * PI).ln());
        let nll = tape.sub(prior, logdet)?;
        if !tape.value(nll).is_finite() {
            return Err(Error::NonFinite("nll".into()));
        }
        Ok(nll)
    }

    pub fn forward(&self, x: &Tensor, cond: &Condition) -> Result<(Tensor, f64)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let (z, ld) = self.forward_tape(&mut tape, &p, xv, cond)?;
        Ok((tape.value(z).clone(), tape.value(ld).item()))
    }

    /// `x = f⁻¹(z | cond)`; `hr_hw` is implied by the condition's noise map.
    pub fn inverse(&self, z: &Tensor, cond: &Condition) -> Result<Tensor> {
        let (hr_h, hr_w) = cond.hr_hw();
        let expect = self.latent_shape(hr_h, hr_w);
        if z.shape() != expect {
            return Err(Error::shape(
                "flow_inverse",
                format!("latent {:?}, model expects {expect:?}", z.shape()),
            ));
        }
        self.check_input(&Tensor::zeros(cond.noise.shape()), cond)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let feats = self.cond_features(&mut tape, &p, cond)?;
        let mut h = tape.constant(z.clone());
        for spec in self.layers().iter().rev() {
            h = self.apply_layer(&mut tape, &p, spec, h, &feats, Direction::Inverse)?.0;
        }
        Ok(tape.value(h).clone())
    }

    pub fn nll(&self, x: &Tensor, cond: &Condition) -> Result<Nll> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let nll = self.nll_tape(&mut tape, &p, xv, cond)?;
        Ok(Nll::from_nats(tape.value(nll).item(), x.len()))
    }

    /// Data-dependent actnorm initialization: every actnorm layer, in order,
    /// gets `bias = -mean` and `scale = 1/std` of its input channels over the
    /// whole batch. Channels with (near) zero spread keep scale 1.
    pub fn init_actnorm(&mut self, batch: &[(Tensor, Condition)]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("actnorm init needs a non-empty batch".into()));
        }
        struct Lane {
            tape: Tape,
            p: Bindings,
            feats: Vec<Var>,
            h: Var,
        }
        let mut lanes = Vec::with_capacity(batch.len());
        for (x, cond) in batch {
            self.check_input(x, cond)?;
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape);
            let feats = self.cond_features(&mut tape, &p, cond)?;
            let h = tape.constant(x.clone());
            lanes.push(Lane { tape, p, feats, h });
        }
        for spec in self.layers() {
            if spec.kind == LayerKind::ActNorm {
                let c = lanes[0].tape.value(lanes[0].h).last_dim();
                let mut sum = vec![0.0; c];
                let mut count = 0usize;
                for lane in &lanes {
                    for px in lane.tape.value(lane.h).data().chunks(c) {
                        for (s, v) in sum.iter_mut().zip(px) {
                            *s += v;
                        }
                        count += 1;
                    }
                }
                let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
                let mut var = vec![0.0; c];
                for lane in &lanes {
                    for px in lane.tape.value(lane.h).data().chunks(c) {
                        for ((acc, v), m) in var.iter_mut().zip(px).zip(&mean) {
                            *acc += (v - m) * (v - m);
                        }
                    }
                }
                let scale: Vec<f64> = var
                    .iter()
                    .map(|v| {
                        let std = (v / count as f64).sqrt();
                        if std > ACTNORM_MIN_STD {
                            1.0 / std
                        } else {
                            1.0
                        }
                    })
                    .collect();
                let bias: Vec<f64> = mean.iter().map(|m| -m).collect();
                let (sname, bname) = (format!("{}.scale", spec.prefix), format!("{}.bias", spec.prefix));
                *self.params.get_mut(&sname)? = Tensor::new(vec![c], scale)?;
                *self.params.get_mut(&bname)? = Tensor::new(vec![c], bias)?;
                for lane in &mut lanes {
                    let sv = lane.tape.param(sname.clone(), self.params.get(&sname)?.clone());
                    let bv = lane.tape.param(bname.clone(), self.params.get(&bname)?.clone());
                    lane.p.rebind(&sname, sv);
                    lane.p.rebind(&bname, bv);
                }
            }
            for lane in &mut lanes {
                let (y, _) = self.apply_layer(
                    &mut lane.tape,
                    &lane.p,
                    &spec,
                    lane.h,
                    &lane.feats,
                    Direction::Forward,
                )?;
                lane.h = y;
            }
        }
        self.actnorm_initialized = true;
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn set_actnorm_initialized(&mut self, v: bool) {
        self.actnorm_initialized = v;
    }
}

/// `(z, log|det J|) = f(x | cond)`.
pub fn flow_forward(x: &Tensor, cond: &Condition, model: &FlowModel) -> Result<(Tensor, f64)> {
    model.forward(x, cond)
}

/// `x = f⁻¹(z | cond)`.
pub fn flow_inverse(z: &Tensor, cond: &Condition, model: &FlowModel) -> Result<Tensor> {
    model.inverse(z, cond)
}

pub fn nll(x: &Tensor, cond: &Condition, model: &FlowModel) -> Result<Nll> {
    model.nll(x, cond)
}

//! Runtime verification of the flow: brute-force Jacobian log-determinants
//! and finite-difference gradient checks of the NLL.

use rand_distr::{Distribution, Normal};

use super::layers::{Direction, LayerKind};
use super::model::{Condition, FlowModel};
use crate::error::{Error, Result};
use crate::numerics::{check_gradients, linalg, GradCheckOptions, GradCheckReport, Tape, Tensor};
use crate::rng;

/// Largest input dimension for which Jacobians are assembled.
pub const MAX_JACOBIAN_DIMS: usize = 256;

/// Central-difference Jacobian `J[i][j] = ∂f_i/∂x_j`, row-major `D_out x D_in`.
pub fn jacobian_fd(
    f: impl Fn(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    h: f64,
) -> Result<(Vec<f64>, usize)> {
    let d_in = x.len();
    let d_out = f(x)?.len();
    let mut jac = vec![0.0; d_out * d_in];
    let mut probe = x.clone();
    for j in 0..d_in {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[j] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[j] = orig;
        for i in 0..d_out {
            jac[i * d_in + j] = (up.data()[i] - down.data()[i]) / (2.0 * h);
        }
    }
    Ok((jac, d_out))
}

/// `log|det J|` of `f` at `x` from a finite-difference Jacobian.
pub fn brute_force_logdet(f: impl Fn(&Tensor) -> Result<Tensor>, x: &Tensor, h: f64) -> Result<f64> {
    if x.len() > MAX_JACOBIAN_DIMS {
        return Err(Error::InvalidArgument(format!(
            "{} dims exceeds the brute-force limit {MAX_JACOBIAN_DIMS}",
            x.len()
        )));
    }
    let (jac, d_out) = jacobian_fd(f, x, h)?;
    if d_out != x.len() {
        return Err(Error::shape("jacobian", format!("{d_out} outputs for {} inputs", x.len())));
    }
    Ok(linalg::log_abs_det(&jac, d_out)?.0)
}

#[derive(Debug, Clone)]
pub struct LogdetCheck {
    pub name: String,
    pub analytic: f64,
    pub brute_force: f64,
    pub rel_error: f64,
}

impl LogdetCheck {
    fn new(name: String, analytic: f64, brute_force: f64) -> Self {
        let rel_error = (analytic - brute_force).abs() / analytic.abs().max(brute_force.abs()).max(1.0);
        LogdetCheck {
            name,
            analytic,
            brute_force,
            rel_error,
        }
    }
}

const FD_STEP: f64 = 1e-5;

/// Compares every layer's log-determinant, and the whole model's, with the
/// brute-force Jacobian value at the activations reached from `x`.
///
/// Relative error is taken against `max(|analytic|, |brute|, 1)` so that
/// volume-preserving layers (log-det 0) are compared absolutely.
pub fn check_logdets(model: &FlowModel, x: &Tensor, cond: &Condition) -> Result<Vec<LogdetCheck>> {
    model.check_input(x, cond)?;
    let mut out = Vec::new();

    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let feats = model.cond_features(&mut tape, &p, cond)?;
    let mut h = tape.constant(x.clone());
    for spec in model.layers() {
        let input = tape.value(h).clone();
        let (y, ld) = model.apply_layer(&mut tape, &p, &spec, h, &feats, Direction::Forward)?;
        if spec.kind != LayerKind::Squeeze {
            let analytic = tape.value(ld.expect("non-squeeze layer has a log-det")).item();
            let brute = brute_force_logdet(
                |v| {
                    let mut t = Tape::new();
                    let pp = model.params().bind(&mut t);
                    let ff = model.cond_features(&mut t, &pp, cond)?;
                    let xv = t.constant(v.clone());
                    let (yy, _) = model.apply_layer(&mut t, &pp, &spec, xv, &ff, Direction::Forward)?;
                    Ok(t.value(yy).clone())
                },
                &input,
                FD_STEP,
            )?;
            out.push(LogdetCheck::new(spec.prefix.clone(), analytic, brute));
        }
        h = y;
    }

    let (_, analytic) = model.forward(x, cond)?;
    let brute = brute_force_logdet(|v| Ok(model.forward(v, cond)?.0), x, FD_STEP)?;
    out.push(LogdetCheck::new("composite".into(), analytic, brute));
    Ok(out)
}

/// Adds `N(0, std²)` noise to every parameter, moving a freshly initialized
/// model away from the identity so that all gradients are non-trivial.
pub fn perturb_params(model: &mut FlowModel, std: f64, seed: u64) {
    let normal = Normal::new(0.0, std).expect("valid std");
    let names: Vec<String> = model.params().names().map(str::to_string).collect();
    for (i, name) in names.iter().enumerate() {
        let mut r = rng::stream(seed, &[rng::tag::CHECK, 1_000 + i as u64]);
        let t = model.params_mut().get_mut(name).expect("listed name");
        for v in t.data_mut() {
            *v += normal.sample(&mut r);
        }
    }
}

/// A seeded probe input and condition of HR size `hr x hr`.
pub fn probe_input(model: &FlowModel, hr: usize, seed: u64) -> Result<(Tensor, Condition)> {
    let cfg = model.config();
    let (c, s) = (cfg.channels, cfg.scale);
    if !hr.is_multiple_of(cfg.hr_multiple()) {
        return Err(Error::Indivisible {
            height: hr,
            width: hr,
            factor: cfg.hr_multiple(),
        });
    }
    let mut r = rng::stream(seed, &[rng::tag::CHECK]);
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let x = Tensor::from_fn(&[hr, hr, c], |_| 0.3 * n.sample(&mut r));
    let lr = Tensor::from_fn(&[hr / s, hr / s, c], |_| 0.5 + 0.2 * n.sample(&mut r));
    let noise = Tensor::from_fn(&[hr, hr, c], |_| 0.1 * n.sample(&mut r));
    Ok((x, Condition { lr, noise, sigma: 0.1 }))
}

#[derive(Debug, Clone)]
pub struct ModelCheckOptions {
    pub grad: GradCheckOptions,
    /// HR size of the gradient-check input.
    pub grad_hr: usize,
    /// HR size of the Jacobian input (total dims should stay small).
    pub jacobian_hr: usize,
    /// Relative tolerance of the log-det comparison.
    pub logdet_tol: f64,
    pub seed: u64,
    /// Test hook: report the analytic log-dets with the wrong sign.
    pub flip_logdet_sign: bool,
}

impl ModelCheckOptions {
    pub fn for_model(model: &FlowModel) -> Self {
        let m = model.config().hr_multiple();
        ModelCheckOptions {
            grad: GradCheckOptions {
                max_entries: Some(24),
                ..Default::default()
            },
            grad_hr: 2 * m,
            jacobian_hr: m,
            logdet_tol: 1e-4,
            seed: 0,
            flip_logdet_sign: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelCheckReport {
    pub gradients: GradCheckReport,
    pub logdets: Vec<LogdetCheck>,
    pub logdet_tol: f64,
}

impl ModelCheckReport {
    pub fn logdets_passed(&self) -> bool {
        self.logdets.iter().all(|c| c.rel_error <= self.logdet_tol)
    }

    pub fn passed(&self) -> bool {
        self.gradients.passed() && self.logdets_passed()
    }
}

/// Gradient check of the NLL plus the brute-force log-det comparison.
pub fn check_model(model: &FlowModel, opts: &ModelCheckOptions) -> Result<ModelCheckReport> {
    let (x, cond) = probe_input(model, opts.grad_hr, opts.seed)?;
    let gradients = check_gradients(
        |tape, p| {
            let xv = tape.constant(x.clone());
            model.nll_tape(tape, p, xv, &cond)
        },
        model.params(),
        &opts.grad,
    )?;
    let (xj, condj) = probe_input(model, opts.jacobian_hr, opts.seed + 1)?;
    let mut logdets = check_logdets(model, &xj, &condj)?;
    if opts.flip_logdet_sign {
        for c in &mut logdets {
            *c = LogdetCheck::new(std::mem::take(&mut c.name), -c.analytic, c.brute_force);
        }
    }
    Ok(ModelCheckReport {
        gradients,
        logdets,
        logdet_tol: opts.logdet_tol,
    })
}

//! Gradient evaluation and central finite-difference verification.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng as _;

use super::params::{Bindings, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Value and named gradients of a scalar program over `params`.
pub fn grad<F>(params: &ParamStore, loss: F) -> Result<(f64, BTreeMap<String, Tensor>)>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape);
    let l = loss(&mut tape, &bindings)?;
    let value = tape.value(l);
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    let value = value.item();
    let grads = tape.backward(l)?.params(&tape);
    Ok((value, grads))
}

fn eval<F>(params: &ParamStore, loss: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape);
    let l = loss(&mut tape, &bindings)?;
    let v = tape.value(l).item();
    if !v.is_finite() {
        return Err(Error::NonFinite("loss at finite-difference probe".into()));
    }
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Probe at most this many entries per parameter tensor (seeded random
    /// subset); `None` probes every entry.
    pub max_entries: Option<usize>,
    /// Also compare the derivative along one seeded direction that moves
    /// every entry of each tensor at once.
    pub directional: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-3,
            max_entries: None,
            directional: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub probed: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    /// Relative error of the directional derivative, when requested.
    pub directional_rel_error: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub loss: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares reverse-mode gradients with central differences
/// `(f(p + eps) - f(p - eps)) / 2 eps` entry by entry.
pub fn check_gradients<F>(
    loss: F,
    params: &ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference eps {} outside [1e-7, 1e-3]",
            opts.eps
        )));
    }
    let (value, analytic) = grad(params, &loss)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }

    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    for (pi, (name, p)) in params.iter().enumerate() {
        let n = p.value.len();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < n => {
                let mut r = rng::stream(opts.seed, &[rng::tag::CHECK, pi as u64]);
                let mut idx = sample(&mut r, n, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        let g = &analytic[name];
        let mut worst = (0.0, entries.first().copied().unwrap_or(0));
        for &i in &entries {
            let orig = p.value.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + opts.eps;
            let up = eval(&probe, &loss)?;
            probe.get_mut(name)?.data_mut()[i] = orig - opts.eps;
            let down = eval(&probe, &loss)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            let rel = relative_error(g.data()[i], numeric);
            if rel > worst.0 {
                worst = (rel, i);
            }
        }
        let directional = if opts.directional {
            // u_i = sign(g_i) r_i, r_i in [0.5, 1): no cancellation in g.u
            let mut r = rng::stream(opts.seed, &[rng::tag::CHECK, pi as u64, 1]);
            let u: Vec<f64> = g
                .data()
                .iter()
                .map(|&gi| if gi < 0.0 { -1.0 } else { 1.0 } * r.random_range(0.5..1.0))
                .collect();
            let along = |sign: f64, probe: &mut ParamStore| -> Result<f64> {
                let t = probe.get_mut(name)?;
                for ((v, o), ui) in t.data_mut().iter_mut().zip(p.value.data()).zip(&u) {
                    *v = o + sign * opts.eps * ui;
                }
                eval(probe, &loss)
            };
            let up = along(1.0, &mut probe)?;
            let down = along(-1.0, &mut probe)?;
            *probe.get_mut(name)? = p.value.clone();
            let numeric = (up - down) / (2.0 * opts.eps);
            let analytic_dir: f64 = g.data().iter().zip(&u).map(|(a, b)| a * b).sum();
            Some(relative_error(analytic_dir, numeric))
        } else {
            None
        };
        checks.push(ParamCheck {
            name: name.clone(),
            probed: entries.len(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            directional_rel_error: directional,
            passed: worst.0 <= opts.tol && directional.is_none_or(|d| d <= opts.tol),
        });
    }
    Ok(GradCheckReport {
        loss: value,
        params: checks,
    })
}

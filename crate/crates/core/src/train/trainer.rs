//! The NLL training step and the checkpointing loop.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{sample_batch, Dataset};
use crate::error::{Error, Result};
use crate::flow::{load_checkpoint, save_checkpoint, FlowConfig, FlowModel};
use crate::imagecore::Image;
use crate::io::write_atomic;
use crate::noisecond::{make_training_pair, NoiseSchedule};
use crate::numerics::{adam_step_with_lr, grad, lr_schedule, OptimizerConfig, Tensor};
use crate::rng;

pub const LOG_FILE: &str = "train_log.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    /// `optimizer.total_steps` is ignored; the schedule spans `total_steps`.
    pub optimizer: OptimizerConfig,
    pub noise: NoiseSchedule,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            total_steps: 500,
            optimizer: OptimizerConfig::default(),
            noise: NoiseSchedule::default(),
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::InvalidArgument("batch_size and total_steps must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidArgument("checkpoint_every must be >= 1".into()));
        }
        self.optimizer_config().validate()?;
        self.noise.validate()
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            total_steps: self.total_steps,
            ..self.optimizer.clone()
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        lr_schedule(step, &self.optimizer_config())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub step: u64,
    pub lr: f64,
    pub bits_per_dim: f64,
}

/// One optimizer step at the scheduled learning rate. See [`train_step_with_lr`].
pub fn train_step(model: &mut FlowModel, batch: &[Image], cfg: &TrainConfig, step: u64) -> Result<StepOutcome> {
    train_step_with_lr(model, batch, cfg, step, cfg.lr(step))
}

/// Builds a noisy training pair per crop, takes the mean bits/dim over the
/// batch as the loss and applies one Adam update at `lr`. Actnorm is
/// initialized from this batch if it has not been yet.
///
/// Noise for crop `i` comes from the stream `(seed, NOISE, step, i)`.
pub fn train_step_with_lr(
    model: &mut FlowModel,
    batch: &[Image],
    cfg: &TrainConfig,
    step: u64,
    lr: f64,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let s = model.config().scale_factor();
    let mut examples = Vec::with_capacity(batch.len());
    for (i, x) in batch.iter().enumerate() {
        let mut r = rng::stream(cfg.seed, &[rng::tag::NOISE, step, i as u64]);
        let pair = make_training_pair(x, s, &cfg.noise, &mut r)?;
        examples.push((pair.x_hf_plus.into_tensor(), pair.cond));
    }
    if !model.actnorm_initialized() {
        model.init_actnorm(&examples)?;
    }

    let mut loss = 0.0;
    let mut total: BTreeMap<String, Tensor> = BTreeMap::new();
    let b = batch.len() as f64;
    for (x, cond) in &examples {
        let norm = 1.0 / (x.len() as f64 * LN_2 * b);
        let (value, grads) = grad(model.params(), |tape, p| {
            let xv = tape.constant(x.clone());
            let nll = model.nll_tape(tape, p, xv, cond)?;
            Ok(tape.scale(nll, norm))
        })?;
        loss += value;
        for (name, g) in grads {
            match total.get_mut(&name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    total.insert(name, g);
                }
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss at step {step}")));
    }
    adam_step_with_lr(model.params_mut(), &total, &cfg.optimizer_config(), step, lr)?;
    Ok(StepOutcome {
        step,
        lr,
        bits_per_dim: loss,
    })
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:08}.fsnc")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub log_path: PathBuf,
    /// Steps run by this invocation.
    pub history: Vec<StepOutcome>,
}

fn format_log_line(o: &StepOutcome) -> String {
    format!("{}\t{}\t{}\n", o.step, o.lr, o.bits_per_dim)
}

/// Parses a training log written by [`train_loop`].
pub fn read_log(path: &Path) -> Result<Vec<StepOutcome>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let bad = || Error::InvalidArgument(format!("malformed log line {l:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(StepOutcome {
                step: f[0].parse().map_err(|_| bad())?,
                lr: f[1].parse().map_err(|_| bad())?,
                bits_per_dim: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Runs steps `1..=total_steps` (or continues after a checkpoint's step),
/// appending `step, lr, bits/dim` to `out_dir/train_log.tsv` and writing a
/// checkpoint every `checkpoint_every` steps and after the last one.
///
/// Batches come from the stream `(seed, BATCH, step)`, so resuming replays
/// exactly what an uninterrupted run would have seen.
pub fn train_loop(
    flow: &FlowConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    flow.validate()?;
    if !data.crop().is_multiple_of(flow.hr_multiple()) {
        return Err(Error::Indivisible {
            height: data.crop(),
            width: data.crop(),
            factor: flow.hr_multiple(),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);

    let (mut model, start) = match resume {
        Some(p) => {
            let m = load_checkpoint(p, Some(flow))?;
            let done = m.params().step();
            let kept: String = if log_path.exists() {
                read_log(&log_path)?
                    .iter()
                    .filter(|o| o.step <= done)
                    .map(format_log_line)
                    .collect()
            } else {
                String::new()
            };
            write_atomic(&log_path, kept.as_bytes())?;
            (m, done + 1)
        }
        None => {
            write_atomic(&log_path, b"")?;
            (FlowModel::new(flow.clone())?, 1)
        }
    };

    let mut log = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let mut final_checkpoint = resume.map(Path::to_path_buf);
    for step in start..=cfg.total_steps {
        let mut r = rng::stream(cfg.seed, &[rng::tag::BATCH, step]);
        let batch = sample_batch(data, cfg.batch_size, &mut r)?;
        let out = train_step(&mut model, &batch, cfg, step)?;
        log.write_all(format_log_line(&out).as_bytes())
            .and_then(|_| log.flush())
            .map_err(|e| Error::io(&log_path, e))?;
        if step % 50 == 0 || step == 1 {
            log::info!("step {step}/{} lr {:.3e} bits/dim {:.4}", cfg.total_steps, out.lr, out.bits_per_dim);
        }
        history.push(out);
        if step % cfg.checkpoint_every == 0 || step == cfg.total_steps {
            let p = out_dir.join(checkpoint_name(step));
            save_checkpoint(&model, &p)?;
            checkpoints.push(p.clone());
            final_checkpoint = Some(p);
        }
    }
    let final_checkpoint = match final_checkpoint {
        Some(p) => p,
        None => {
            let p = out_dir.join(checkpoint_name(model.params().step()));
            save_checkpoint(&model, &p)?;
            p
        }
    };
    Ok(TrainOutcome {
        model,
        final_checkpoint,
        checkpoints,
        log_path,
        history,
    })
}

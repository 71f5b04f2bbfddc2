//! Experiment configuration: one JSON document whose `profile` selects the
//! defaults that the rest of the document overrides.

use std::path::{Path, PathBuf};

use fsncsr_core::flow::FlowConfig;
use fsncsr_core::metrics::DiversityConfig;
use fsncsr_core::sampler::SamplerConfig;
use fsncsr_core::train::{DatasetSpec, SyntheticSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SEED_ENV: &str = "FSNCSR_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub scale: usize,
    /// Copied into the model, training and sampler seeds unless those are
    /// set explicitly.
    pub seed: u64,
    pub model: FlowConfig,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub diversity: DiversityConfig,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(profile: Profile, scale: usize, seed: u64) -> Self {
        let mut model = FlowConfig::desk(scale);
        model.seed = seed;
        let mut sampler = SamplerConfig::for_scale(scale);
        sampler.seed = seed;
        let (dataset, train, out_dir) = match profile {
            Profile::Desk => (
                DatasetSpec {
                    synthetic: Some(SyntheticSpec::default()),
                    scale,
                    ..Default::default()
                },
                TrainConfig {
                    seed,
                    ..Default::default()
                },
                "runs/desk",
            ),
            Profile::Paper => (
                DatasetSpec {
                    crop: 160,
                    scale,
                    ..Default::default()
                },
                TrainConfig {
                    batch_size: 16,
                    total_steps: if scale >= 8 { 220_000 } else { 180_000 },
                    checkpoint_every: 10_000,
                    seed,
                    ..Default::default()
                },
                "runs/paper",
            ),
        };
        ExperimentConfig {
            profile,
            scale,
            seed,
            model,
            dataset,
            train,
            sampler,
            diversity: DiversityConfig::default(),
            out_dir: PathBuf::from(out_dir),
            checkpoint: None,
        }
    }

    /// Parses a config document, expands its profile and applies the
    /// `FSNCSR_SEED` override. Does not validate.
    pub fn from_json(text: &str, env_seed: Option<&str>) -> Result<Self, CliError> {
        let user: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(ref obj) = user else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        let profile: Profile = match obj.get("profile") {
            None => Profile::Desk,
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|_| CliError::Config(format!("profile: expected \"desk\" or \"paper\", got {v}")))?,
        };
        let field_u64 = |name: &str, default: u64| -> Result<u64, CliError> {
            match obj.get(name) {
                None => Ok(default),
                Some(v) => v
                    .as_u64()
                    .ok_or_else(|| CliError::Config(format!("{name}: expected a non-negative integer, got {v}"))),
            }
        };
        let scale = field_u64("scale", 4)? as usize;
        let seed = field_u64("seed", 0)?;
        let mut merged = serde_json::to_value(Self::defaults(profile, scale, seed)).expect("config serializes");
        merge(&mut merged, user);
        let mut cfg: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| CliError::Config(format!("config: {e}")))?;
        if let Some(s) = env_seed {
            let s: u64 = s
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={s:?} is not a non-negative integer")))?;
            cfg.set_seed(s);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let env = std::env::var(SEED_ENV).ok();
        let cfg = Self::from_json(&text, env.as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.sampler.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: fsncsr_core::Error| CliError::Config(e.to_string());
        if self.model.scale != self.scale || self.dataset.scale != self.scale {
            return Err(CliError::Config(format!(
                "scale {} disagrees with model.scale {} / dataset.scale {}",
                self.scale, self.model.scale, self.dataset.scale
            )));
        }
        self.model.validate().map_err(cfg)?;
        if self.dataset.hr_dir.is_none() && self.dataset.synthetic.is_none() {
            return Err(CliError::Config(
                "dataset.hr_dir is missing and dataset.synthetic is not set".into(),
            ));
        }
        if let Some(dir) = &self.dataset.hr_dir {
            if !dir.is_dir() {
                return Err(CliError::Config(format!("dataset.hr_dir {} is not a directory", dir.display())));
            }
        }
        self.dataset.validate(&self.model).map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        self.sampler.validate().map_err(cfg)?;
        self.diversity.validate().map_err(cfg)?;
        if let Some(c) = &self.checkpoint {
            if !c.is_file() {
                return Err(CliError::Config(format!("checkpoint {} does not exist", c.display())));
            }
        }
        Ok(())
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_json().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Overlays `patch` on `base`; objects merge key by key, anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

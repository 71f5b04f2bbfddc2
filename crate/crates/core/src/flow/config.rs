use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::ScaleFactor;

/// Architecture of the conditional flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Super-resolution factor; the LR condition is `1/scale` the HR size.
    pub scale: usize,
    /// Image channels (1 or 3).
    pub channels: usize,
    /// Number of squeeze levels.
    pub levels: usize,
    /// Flow steps per level.
    pub steps: usize,
    /// Hidden width of the coupling and noise-injector conditioners.
    pub hidden: usize,
    /// Hidden width of the LR encoder.
    pub encoder_width: usize,
    /// Output channels of the LR encoder.
    pub feature_channels: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            scale: 4,
            channels: 3,
            levels: 2,
            steps: 4,
            hidden: 32,
            encoder_width: 32,
            feature_channels: 32,
            seed: 0,
        }
    }
}

impl FlowConfig {
    /// Desk defaults for a scale factor: one extra squeeze level for x8.
    pub fn desk(scale: usize) -> Self {
        FlowConfig {
            scale,
            levels: if scale >= 8 { 3 } else { 2 },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ScaleFactor::new(self.scale)?;
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.levels == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument("levels and steps must be >= 1".into()));
        }
        if self.hidden == 0 || self.encoder_width == 0 || self.feature_channels == 0 {
            return Err(Error::InvalidArgument("widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn scale_factor(&self) -> ScaleFactor {
        ScaleFactor::new(self.scale).expect("validated scale")
    }

    /// Spatial multiple every HR input must satisfy: divisible by the scale
    /// (for the LR pairing) and by `2^levels` (for the squeezes).
    pub fn hr_multiple(&self) -> usize {
        lcm(self.scale, 1 << self.levels)
    }

    /// Shape `[h, w, c]` of the activation at `level` (1-based) for an HR input.
    pub fn level_shape(&self, hr_h: usize, hr_w: usize, level: usize) -> [usize; 3] {
        let f = 1 << level;
        [hr_h / f, hr_w / f, self.channels * f * f]
    }

    /// Channels of the per-level condition: LR features, noise map, sigma.
    pub fn cond_channels(&self) -> usize {
        self.feature_channels + self.channels + 1
    }

    /// Canonical JSON used for the checkpoint echo and its hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiples_and_shapes() {
        let c = FlowConfig::default();
        assert_eq!(c.hr_multiple(), 4);
        assert_eq!(c.level_shape(64, 64, 1), [32, 32, 12]);
        assert_eq!(c.level_shape(64, 64, 2), [16, 16, 48]);
        let c8 = FlowConfig::desk(8);
        assert_eq!(c8.levels, 3);
        assert_eq!(c8.hr_multiple(), 8);
        let c3 = FlowConfig { scale: 3, ..Default::default() };
        assert_eq!(c3.hr_multiple(), 12);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(FlowConfig { scale: 1, ..Default::default() }.validate().is_err());
        assert!(FlowConfig { channels: 2, ..Default::default() }.validate().is_err());
        assert!(FlowConfig { steps: 0, ..Default::default() }.validate().is_err());
    }
}

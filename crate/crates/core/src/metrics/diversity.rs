//! Patch-based diversity score.
//!
//! With per-patch distances `d[i][k] = d(y_k, ŷ_k^i)` between GT patch `k`
//! and the same patch of sample `i`:
//!
//! ```text
//! d̄   = min_i (1/K) Σ_k d[i][k]
//! S_M = (d̄ - (1/K) Σ_k min_i d[i][k]) / d̄        (S_M = 0 when d̄ = 0)
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Image;

/// A symmetric, non-negative patch distance with `d(a, a) = 0`.
pub trait PatchDistance: Send + Sync {
    fn name(&self) -> &str;
    /// Distance between two same-shape patches.
    fn distance(&self, a: &Image, b: &Image) -> f64;
}

pub struct Mse;

impl PatchDistance for Mse {
    fn name(&self) -> &str {
        "mse"
    }

    fn distance(&self, a: &Image, b: &Image) -> f64 {
        let n = a.data().len() as f64;
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
    }
}

pub struct MeanAbs;

impl PatchDistance for MeanAbs {
    fn name(&self) -> &str {
        "l1"
    }

    fn distance(&self, a: &Image, b: &Image) -> f64 {
        let n = a.data().len() as f64;
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
    }
}

/// Built-in distances: `mse` and `l1`.
pub fn distance_by_name(name: &str) -> Result<Arc<dyn PatchDistance>> {
    match name {
        "mse" => Ok(Arc::new(Mse)),
        "l1" => Ok(Arc::new(MeanAbs)),
        other => Err(Error::InvalidArgument(format!(
            "unknown distance {other:?} (built-ins: mse, l1)"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversityConfig {
    /// Samples per GT image (`M`).
    pub num_samples: usize,
    /// Side of the non-overlapping square patches (`P`).
    pub patch_size: usize,
    pub distance: String,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            num_samples: 10,
            patch_size: 64,
            distance: "mse".into(),
        }
    }
}

impl DiversityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 || self.patch_size == 0 {
            return Err(Error::InvalidArgument("num_samples and patch_size must be >= 1".into()));
        }
        distance_by_name(&self.distance).map(|_| ())
    }
}

/// Top-left corners of the full `p x p` tiles; edge remainders are dropped.
pub fn patch_grid(height: usize, width: usize, p: usize) -> Vec<(usize, usize)> {
    if p == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..height / p {
        for j in 0..width / p {
            out.push((i * p, j * p));
        }
    }
    out
}

/// `d[i][k]` for every sample `i` and patch `k`.
pub fn distance_matrix(gt: &Image, samples: &[Image], patch: usize, d: &dyn PatchDistance) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    for s in samples {
        if s.shape() != gt.shape() {
            return Err(Error::shape(
                "diversity",
                format!("sample {:?} vs GT {:?}", s.shape(), gt.shape()),
            ));
        }
    }
    let grid = patch_grid(gt.height(), gt.width(), patch);
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no full {patch}x{patch} patch fits in {}x{}",
            gt.height(),
            gt.width()
        )));
    }
    let gt_patches: Vec<Image> = grid
        .iter()
        .map(|&(t, l)| gt.crop(t, l, patch, patch))
        .collect::<Result<_>>()?;
    samples
        .iter()
        .map(|s| {
            grid.iter()
                .zip(&gt_patches)
                .map(|(&(t, l), g)| Ok(d.distance(g, &s.crop(t, l, patch, patch)?)))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diversity {
    /// `S_M` in `[0, 1]`.
    pub score: f64,
    /// `d̄_M`.
    pub dbar: f64,
    /// `(1/K) Σ_k min_i d[i][k]`.
    pub mean_patch_min: f64,
    /// `d̄_M == 0`, so `S_M` was set to 0.
    pub degenerate: bool,
}

impl Diversity {
    /// `S_M x 100`, the scale of published tables.
    pub fn display(&self) -> f64 {
        self.score * 100.0
    }
}

/// Diversity from a precomputed `samples x patches` distance matrix.
pub fn diversity_from_distances(d: &[Vec<f64>]) -> Result<Diversity> {
    let k = d.first().map_or(0, Vec::len);
    if k == 0 || d.iter().any(|row| row.len() != k) {
        return Err(Error::InvalidArgument(
            "distance matrix must be non-empty and rectangular".into(),
        ));
    }
    if d.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("distances must be finite and non-negative".into()));
    }
    let kf = k as f64;
    let dbar = d
        .iter()
        .map(|row| row.iter().sum::<f64>() / kf)
        .fold(f64::INFINITY, f64::min);
    let mean_patch_min = (0..k)
        .map(|j| d.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / kf;
    if dbar == 0.0 {
        log::warn!("global minimum distance is 0; diversity reported as 0");
        return Ok(Diversity {
            score: 0.0,
            dbar,
            mean_patch_min,
            degenerate: true,
        });
    }
    Ok(Diversity {
        score: (dbar - mean_patch_min) / dbar,
        dbar,
        mean_patch_min,
        degenerate: false,
    })
}

pub fn global_min_distance(gt: &Image, samples: &[Image], cfg: &DiversityConfig) -> Result<f64> {
    Ok(diversity_score(gt, samples, cfg)?.dbar)
}

pub fn diversity_score(gt: &Image, samples: &[Image], cfg: &DiversityConfig) -> Result<Diversity> {
    let d = distance_by_name(&cfg.distance)?;
    diversity_with(gt, samples, cfg.patch_size, d.as_ref())
}

/// Diversity under an arbitrary distance plugin.
pub fn diversity_with(gt: &Image, samples: &[Image], patch: usize, d: &dyn PatchDistance) -> Result<Diversity> {
    diversity_from_distances(&distance_matrix(gt, samples, patch, d)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::Domain;
    use proptest::prelude::*;

    #[test]
    fn hand_built_two_sample_case() {
        let d = vec![vec![0.2, 0.4], vec![0.5, 0.1]];
        let r = diversity_from_distances(&d).unwrap();
        assert!((r.dbar - 0.3).abs() < 1e-15);
        assert!((r.mean_patch_min - 0.15).abs() < 1e-15);
        assert!((r.score - 0.5).abs() < 1e-12);
        assert!((r.display() - 50.0).abs() < 1e-10);
        let swapped = diversity_from_distances(&[d[1].clone(), d[0].clone()]).unwrap();
        assert_eq!(swapped.dbar, r.dbar);
    }

    #[test]
    fn identical_samples_and_single_sample_score_zero() {
        let row = vec![0.3, 0.1, 0.7];
        let r = diversity_from_distances(&[row.clone(), row.clone(), row.clone()]).unwrap();
        assert_eq!(r.score, 0.0);
        assert_eq!(diversity_from_distances(&[row]).unwrap().score, 0.0);
    }

    #[test]
    fn exact_sample_is_degenerate() {
        let gt = Image::filled(8, 8, 1, 0.4, Domain::Hr).unwrap();
        let other = Image::filled(8, 8, 1, 0.6, Domain::Hr).unwrap();
        let cfg = DiversityConfig {
            patch_size: 4,
            ..Default::default()
        };
        let r = diversity_score(&gt, &[other, gt.clone()], &cfg).unwrap();
        assert_eq!(r.dbar, 0.0);
        assert!(r.degenerate);
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn patch_grid_drops_remainders() {
        assert_eq!(patch_grid(10, 9, 4), vec![(0, 0), (0, 4), (4, 0), (4, 4)]);
        assert!(patch_grid(3, 9, 4).is_empty());
    }

    #[test]
    fn matrix_matches_direct_mse() {
        let gt = Image::from_fn(4, 4, 1, Domain::Hr, |y, x, _| (y * 4 + x) as f64 / 16.0).unwrap();
        let s = gt.map(|v| v + 0.1);
        let m = distance_matrix(&gt, &[s], 2, &Mse).unwrap();
        assert_eq!(m[0].len(), 4);
        assert!(m[0].iter().all(|v| (v - 0.01).abs() < 1e-15));
    }

    #[test]
    fn errors() {
        let gt = Image::filled(8, 8, 1, 0.4, Domain::Hr).unwrap();
        let small = Image::filled(4, 4, 1, 0.4, Domain::Hr).unwrap();
        assert!(distance_matrix(&gt, &[small], 4, &Mse).is_err());
        assert!(distance_matrix(&gt, std::slice::from_ref(&gt), 16, &Mse).is_err());
        assert!(distance_matrix(&gt, &[], 4, &Mse).is_err());
        assert!(distance_by_name("lpips").is_err());
        assert!(diversity_from_distances(&[vec![0.1], vec![0.1, 0.2]]).is_err());
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..6, 1usize..8).prop_flat_map(|(m, k)| prop::collection::vec(prop::collection::vec(0.0f64..2.0, k), m))
    }

    proptest! {
        #[test]
        fn score_in_unit_interval(d in matrix()) {
            let r = diversity_from_distances(&d).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.score));
            prop_assert!(r.mean_patch_min <= r.dbar);
        }

        #[test]
        fn invariant_to_distance_scaling(d in matrix(), c in prop::sample::select(vec![0.1, 10.0, 3.0])) {
            let scaled: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
            let a = diversity_from_distances(&d).unwrap().score;
            let b = diversity_from_distances(&scaled).unwrap().score;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn duplicate_sample_changes_nothing(d in matrix(), pick in 0usize..6) {
            let mut dup = d.clone();
            dup.push(d[pick % d.len()].clone());
            let a = diversity_from_distances(&d).unwrap();
            let b = diversity_from_distances(&dup).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn order_invariant(d in matrix()) {
            let mut rev = d.clone();
            rev.reverse();
            let a = diversity_from_distances(&d).unwrap();
            let b = diversity_from_distances(&rev).unwrap();
            prop_assert_eq!(a.dbar, b.dbar);
            prop_assert_eq!(a.mean_patch_min, b.mean_patch_min);
        }
    }
}

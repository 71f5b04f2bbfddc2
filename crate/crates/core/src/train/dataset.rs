//! HR training data: folder or synthetic images, random crops and dihedral
//! augmentation.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::imagecore::{load_png, Domain, Image};
use crate::rng::{self, Rng};

/// Seeded generator of smooth-plus-texture test images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    pub size: usize,
    /// Sinusoids per image.
    pub waves: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 16,
            size: 64,
            waves: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Folder of HR PNGs. Takes precedence over `synthetic`.
    pub hr_dir: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub crop: usize,
    pub scale: usize,
    pub channels: usize,
    pub hflip: bool,
    pub rot90: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            hr_dir: None,
            synthetic: None,
            crop: 32,
            scale: 4,
            channels: 3,
            hflip: true,
            rot90: true,
        }
    }
}

impl DatasetSpec {
    /// Checks the spec against the model it feeds.
    pub fn validate(&self, flow: &FlowConfig) -> Result<()> {
        if self.hr_dir.is_none() && self.synthetic.is_none() {
            return Err(Error::InvalidArgument(
                "dataset: set either hr_dir or synthetic".into(),
            ));
        }
        if self.scale != flow.scale {
            return Err(Error::InvalidArgument(format!(
                "dataset.scale {} differs from model scale {}",
                self.scale, flow.scale
            )));
        }
        if self.channels != flow.channels {
            return Err(Error::InvalidArgument(format!(
                "dataset.channels {} differs from model channels {}",
                self.channels, flow.channels
            )));
        }
        let m = flow.hr_multiple();
        if self.crop == 0 || !self.crop.is_multiple_of(m) {
            return Err(Error::Indivisible {
                height: self.crop,
                width: self.crop,
                factor: m,
            });
        }
        if let Some(s) = &self.synthetic {
            if s.count == 0 || s.size < self.crop {
                return Err(Error::InvalidArgument(format!(
                    "synthetic: need count >= 1 and size >= crop {}",
                    self.crop
                )));
            }
        }
        Ok(())
    }
}

/// Box blur with clamp-to-edge borders, one channel plane at a time.
fn box_blur(img: &Image, radius: usize) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let r = radius as isize;
    let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    Image::from_fn(h, w, c, img.domain(), |y, x, ch| {
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                acc += img.get(yy, xx, ch);
            }
        }
        acc / n
    })
    .expect("same shape")
}

/// Sum of random oriented sinusoids plus blurred white noise around 0.5,
/// clamped to `[0, 1]`.
pub fn synthetic_image(spec: &SyntheticSpec, channels: usize, index: usize) -> Image {
    let mut r = rng::stream(spec.seed, &[rng::tag::SYNTH, index as u64]);
    struct Wave {
        fy: f64,
        fx: f64,
        phase: f64,
        amp: Vec<f64>,
    }
    let waves: Vec<Wave> = (0..spec.waves)
        .map(|_| {
            let freq = r.random_range(0.02..0.35);
            let theta = r.random_range(0.0..std::f64::consts::PI);
            let amp = r.random_range(0.04..0.12);
            Wave {
                fy: freq * theta.sin(),
                fx: freq * theta.cos(),
                phase: r.random_range(0.0..std::f64::consts::TAU),
                amp: (0..channels).map(|_| amp * r.random_range(0.6..1.0)).collect(),
            }
        })
        .collect();
    let n = Normal::new(0.0, 0.12).expect("valid std");
    let size = spec.size;
    let white = Image::from_fn(size, size, channels, Domain::HighFreq, |_, _, _| n.sample(&mut r)).expect("valid shape");
    let texture = box_blur(&white, 1);
    Image::from_fn(size, size, channels, Domain::Hr, |y, x, c| {
        let s: f64 = waves
            .iter()
            .map(|w| {
                let t = std::f64::consts::TAU * (w.fy * y as f64 + w.fx * x as f64) + w.phase;
                w.amp[c] * t.sin()
            })
            .sum();
        (0.5 + s + texture.get(y, x, c)).clamp(0.0, 1.0)
    })
    .expect("valid shape")
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// One random crop with its dihedral transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropDraw {
    pub image: usize,
    pub top: usize,
    pub left: usize,
    pub flip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub rot: u8,
}

impl CropDraw {
    /// Index of the dihedral configuration in `0..8`.
    pub fn dihedral_index(&self) -> usize {
        usize::from(self.flip) * 4 + self.rot as usize
    }
}

/// Applies an optional horizontal flip followed by `rot` quarter turns.
pub fn dihedral(img: &Image, flip: bool, rot: u8) -> Image {
    let mut out = if flip { img.flip_horizontal() } else { img.clone() };
    for _ in 0..rot % 4 {
        out = out.rot90();
    }
    out
}

#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<Image>,
    crop: usize,
    hflip: bool,
    rot90: bool,
}

impl Dataset {
    pub fn from_images(images: Vec<Image>, crop: usize, hflip: bool, rot90: bool) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("no images".into()));
        }
        for (i, img) in images.iter().enumerate() {
            if img.height() < crop || img.width() < crop {
                return Err(Error::Dataset(format!(
                    "image {i} is {}x{}, smaller than crop {crop}",
                    img.height(),
                    img.width()
                )));
            }
        }
        Ok(Dataset {
            images,
            crop,
            hflip,
            rot90,
        })
    }

    /// Loads `hr_dir` (sorted PNG file names) or generates the synthetic set.
    pub fn load(spec: &DatasetSpec) -> Result<Self> {
        let images = if let Some(dir) = &spec.hr_dir {
            let paths = list_pngs(dir)?;
            if paths.is_empty() {
                return Err(Error::Dataset(format!("no PNG files in {}", dir.display())));
            }
            let mut images = Vec::with_capacity(paths.len());
            for p in &paths {
                let img = load_png(p)?;
                if img.channels() != spec.channels {
                    return Err(Error::Dataset(format!(
                        "{} has {} channels, expected {}",
                        p.display(),
                        img.channels(),
                        spec.channels
                    )));
                }
                images.push(img);
            }
            images
        } else if let Some(s) = &spec.synthetic {
            (0..s.count).map(|i| synthetic_image(s, spec.channels, i)).collect()
        } else {
            return Err(Error::InvalidArgument("dataset: set either hr_dir or synthetic".into()));
        };
        Dataset::from_images(images, spec.crop, spec.hflip, spec.rot90)
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn crop(&self) -> usize {
        self.crop
    }

    pub fn draw(&self, rng: &mut Rng) -> CropDraw {
        let image = rng.random_range(0..self.images.len());
        let img = &self.images[image];
        let top = rng.random_range(0..=img.height() - self.crop);
        let left = rng.random_range(0..=img.width() - self.crop);
        let flip = self.hflip && rng.random_bool(0.5);
        let rot = if self.rot90 { rng.random_range(0..4u8) } else { 0 };
        CropDraw {
            image,
            top,
            left,
            flip,
            rot,
        }
    }

    pub fn extract(&self, d: &CropDraw) -> Result<Image> {
        let c = self.images[d.image].crop(d.top, d.left, self.crop, self.crop)?;
        Ok(dihedral(&c, d.flip, d.rot))
    }
}

/// `batch` independent augmented crops.
pub fn sample_batch(data: &Dataset, batch: usize, rng: &mut Rng) -> Result<Vec<Image>> {
    (0..batch).map(|_| data.extract(&data.draw(rng))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(size: usize, seed: u64) -> Image {
        synthetic_image(
            &SyntheticSpec {
                size,
                seed,
                ..Default::default()
            },
            3,
            0,
        )
    }

    #[test]
    fn no_augment_exact_size_returns_image() {
        let im = img(16, 1);
        let ds = Dataset::from_images(vec![im.clone()], 16, false, false).unwrap();
        let mut r = rng::stream(0, &[]);
        for b in sample_batch(&ds, 5, &mut r).unwrap() {
            assert_eq!(b, im);
        }
    }

    #[test]
    fn dihedral_group_relations() {
        let im = img(8, 2);
        assert_eq!(im.flip_horizontal().flip_horizontal(), im);
        assert_eq!(dihedral(&im, false, 4), im);
        assert_eq!(dihedral(&dihedral(&im, false, 3), false, 1), im);
        let all: Vec<Image> = (0..8).map(|k| dihedral(&im, k >= 4, (k % 4) as u8)).collect();
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(all[i], all[j], "configurations {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn dihedral_frequencies_uniform() {
        let ds = Dataset::from_images(vec![img(16, 3)], 8, true, true).unwrap();
        let mut r = rng::stream(7, &[]);
        let mut counts = [0usize; 8];
        let n = 4000;
        for _ in 0..n {
            counts[ds.draw(&mut r).dihedral_index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.125).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn small_image_rejected() {
        assert!(Dataset::from_images(vec![img(8, 1)], 16, true, true).is_err());
        assert!(Dataset::from_images(vec![], 16, true, true).is_err());
    }

    #[test]
    fn synthetic_is_seeded_and_in_range() {
        let a = img(32, 5);
        assert_eq!(a, img(32, 5));
        assert_ne!(a, img(32, 6));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let spread = a.data().iter().fold(0.0f64, |m, v| m.max((v - 0.5).abs()));
        assert!(spread > 0.1);
    }

    #[test]
    fn spec_validation() {
        let flow = FlowConfig::default();
        let spec = DatasetSpec::default();
        assert!(spec.validate(&flow).is_err(), "no source");
        let spec = DatasetSpec {
            synthetic: Some(SyntheticSpec::default()),
            ..Default::default()
        };
        spec.validate(&flow).unwrap();
        assert!(DatasetSpec { crop: 30, ..spec.clone() }.validate(&flow).is_err());
        assert!(DatasetSpec { scale: 8, ..spec.clone() }.validate(&flow).is_err());
    }

    #[test]
    fn loads_png_folder() {
        let dir = tempfile::tempdir().unwrap();
        crate::imagecore::save_png(&img(16, 1), dir.path().join("b.png")).unwrap();
        crate::imagecore::save_png(&img(16, 2), dir.path().join("a.png")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let spec = DatasetSpec {
            hr_dir: Some(dir.path().to_path_buf()),
            crop: 16,
            ..Default::default()
        };
        let ds = Dataset::load(&spec).unwrap();
        assert_eq!(ds.images().len(), 2);
        assert!(ds.images()[0].max_abs_diff(&img(16, 2)) <= 1.0 / 510.0 + 1e-12);
    }
}

//! Per-image evaluation, aggregation and report files.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};

use super::consistency::lr_psnr;
use super::diversity::{distance_by_name, diversity_with, DiversityConfig};
use super::sparsity::{relative_sparsity, sparsity};
use crate::error::{Error, Result};
use crate::imagecore::{downsample, highpass, load_png, lowpass, Domain, Image, ScaleFactor};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub image: String,
    /// `S_M` in `[0, 1]`.
    pub diversity: f64,
    pub dbar: f64,
    /// Diversity was forced to 0 because `d̄_M = 0`.
    pub diversity_degenerate: bool,
    /// Mean over samples; `inf` if any sample is an exact match.
    pub lr_psnr: f64,
    /// Mean sparsity of the generated high frequency `x̂ - L_s(gt)`.
    pub sparsity: f64,
    /// Sparsity of `H_s(gt)`.
    pub gt_sparsity: f64,
    /// Mean relative sparsity over samples.
    pub rs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub patch_size: usize,
    pub distance: String,
    pub scale: usize,
    pub num_samples: usize,
    /// Sorted by image name.
    pub images: Vec<ImageMetrics>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl MetricsReport {
    /// Unweighted means over images, in the per-image field layout.
    pub fn mean(&self) -> ImageMetrics {
        let col = |f: fn(&ImageMetrics) -> f64| mean(self.images.iter().map(f));
        ImageMetrics {
            image: "mean".into(),
            diversity: col(|m| m.diversity),
            dbar: col(|m| m.dbar),
            diversity_degenerate: self.images.iter().any(|m| m.diversity_degenerate),
            lr_psnr: col(|m| m.lr_psnr),
            sparsity: col(|m| m.sparsity),
            gt_sparsity: col(|m| m.gt_sparsity),
            rs: col(|m| m.rs),
        }
    }
}

/// Metrics of one GT image against its samples (all samples are used).
pub fn evaluate_image(name: &str, gt: &Image, samples: &[Image], s: ScaleFactor, cfg: &DiversityConfig) -> Result<ImageMetrics> {
    if samples.is_empty() {
        return Err(Error::MissingSample(format!("{name}: no samples")));
    }
    let d = distance_by_name(&cfg.distance)?;
    let div = diversity_with(gt, samples, cfg.patch_size, d.as_ref())?;
    let lr = downsample(gt, s)?;
    let low = lowpass(gt, s)?;
    let gt_hf = highpass(gt, s)?;
    let mut psnrs = Vec::with_capacity(samples.len());
    let mut sp = Vec::with_capacity(samples.len());
    let mut rs = Vec::with_capacity(samples.len());
    for x in samples {
        psnrs.push(lr_psnr(x, &lr, s)?);
        let hf = x.zip_map(&low, Domain::HighFreq, |a, b| a - b)?;
        sp.push(sparsity(&hf)?);
        rs.push(relative_sparsity(&hf, &gt_hf)?);
    }
    Ok(ImageMetrics {
        image: name.to_string(),
        diversity: div.score,
        dbar: div.dbar,
        diversity_degenerate: div.degenerate,
        lr_psnr: mean(psnrs.into_iter()),
        sparsity: mean(sp.into_iter()),
        gt_sparsity: sparsity(&gt_hf)?,
        rs: mean(rs.into_iter()),
    })
}

/// Evaluates in-memory `(name, gt, samples)` triples; the first
/// `cfg.num_samples` samples of each are used and at least that many must exist.
pub fn evaluate_images(entries: &[(String, Image, Vec<Image>)], s: ScaleFactor, cfg: &DiversityConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut images = Vec::with_capacity(entries.len());
    for (name, gt, samples) in entries {
        if samples.len() < cfg.num_samples {
            return Err(Error::MissingSample(format!(
                "{name}: {} samples, {} required",
                samples.len(),
                cfg.num_samples
            )));
        }
        images.push(evaluate_image(name, gt, &samples[..cfg.num_samples], s, cfg)?);
    }
    images.sort_by(|a, b| a.image.cmp(&b.image));
    Ok(MetricsReport {
        patch_size: cfg.patch_size,
        distance: cfg.distance.clone(),
        scale: s.get(),
        num_samples: cfg.num_samples,
        images,
    })
}

/// One GT image and its sample files.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ManifestEntry {
    pub gt: String,
    pub samples: Vec<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestDoc {
    List(Vec<ManifestEntry>),
    Wrapped { entries: Vec<ManifestEntry> },
}

/// Reads a manifest: either a JSON list of `{gt, samples}` or an object with
/// such a list under `entries` (the sampler's manifest). Relative sample
/// paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDoc = serde_json::from_str(&text)?;
    let mut entries = match doc {
        ManifestDoc::List(e) | ManifestDoc::Wrapped { entries: e } => e,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &mut entries {
        for s in &mut e.samples {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
    }
    Ok(entries)
}

/// Loads GT images from `gt_dir` and samples per the manifest, then evaluates.
pub fn evaluate(gt_dir: &Path, manifest: &Path, s: ScaleFactor, cfg: &DiversityConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let entries = read_manifest(manifest)?;
    for e in &entries {
        if let Some(missing) = e.samples.iter().find(|p| !p.is_file()) {
            return Err(Error::MissingSample(missing.display().to_string()));
        }
    }
    let mut loaded = Vec::with_capacity(entries.len());
    for e in entries {
        let gt = load_png(gt_dir.join(&e.gt))?;
        let samples = e.samples.iter().map(load_png).collect::<Result<Vec<_>>>()?;
        loaded.push((e.gt, gt, samples));
    }
    evaluate_images(&loaded, s, cfg)
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn json_num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::String(fmt_num(v))
    }
}

pub const TSV_COLUMNS: [&str; 7] = [
    "image",
    "diversity_x100",
    "dbar",
    "lr_psnr_db",
    "sparsity",
    "rs",
    "gt_sparsity",
];

fn tsv_row(m: &ImageMetrics) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        m.image,
        fmt_num(m.diversity * 100.0),
        fmt_num(m.dbar),
        fmt_num(m.lr_psnr),
        fmt_num(m.sparsity),
        fmt_num(m.rs),
        fmt_num(m.gt_sparsity)
    )
}

/// TSV with a `#` comment line recording patch size, distance, scale and M,
/// then a header, one row per image and a final `mean` row.
pub fn report_tsv(r: &MetricsReport) -> String {
    let mut out = format!(
        "# patch_size={} distance={} scale={} samples={}\n{}\n",
        r.patch_size,
        r.distance,
        r.scale,
        r.num_samples,
        TSV_COLUMNS.join("\t")
    );
    for m in &r.images {
        out.push_str(&tsv_row(m));
    }
    out.push_str(&tsv_row(&r.mean()));
    out
}

fn metrics_json(m: &ImageMetrics) -> Value {
    json!({
        "image": m.image,
        "diversity_x100": json_num(m.diversity * 100.0),
        "dbar": json_num(m.dbar),
        "diversity_degenerate": m.diversity_degenerate,
        "lr_psnr_db": json_num(m.lr_psnr),
        "sparsity": json_num(m.sparsity),
        "rs": json_num(m.rs),
        "gt_sparsity": json_num(m.gt_sparsity),
    })
}

/// JSON report; infinities are written as the strings `"inf"` / `"-inf"`.
pub fn report_json(r: &MetricsReport) -> Value {
    json!({
        "patch_size": r.patch_size,
        "distance": r.distance,
        "scale": r.scale,
        "num_samples": r.num_samples,
        "images": r.images.iter().map(metrics_json).collect::<Vec<_>>(),
        "mean": metrics_json(&r.mean()),
    })
}

/// Writes `<stem>.tsv` and `<stem>.json` into `dir`; returns both paths.
pub fn write_report(r: &MetricsReport, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let tsv = dir.join(format!("{stem}.tsv"));
    let js = dir.join(format!("{stem}.json"));
    write_atomic(&tsv, report_tsv(r).as_bytes())?;
    let text = serde_json::to_string_pretty(&report_json(r))?;
    write_atomic(&js, text.as_bytes())?;
    Ok((tsv, js))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::save_png;
    use crate::rng;
    use rand::Rng as _;

    fn s2() -> ScaleFactor {
        ScaleFactor::new(2).unwrap()
    }

    fn random(seed: u64) -> Image {
        let mut r = rng::stream(seed, &[]);
        Image::from_fn(8, 8, 1, Domain::Hr, |_, _, _| r.random::<f64>()).unwrap()
    }

    fn cfg(m: usize) -> DiversityConfig {
        DiversityConfig {
            num_samples: m,
            patch_size: 4,
            distance: "mse".into(),
        }
    }

    #[test]
    fn gt_against_itself() {
        let gt = random(1);
        let r = evaluate_images(&[("a".into(), gt.clone(), vec![gt.clone(); 3])], s2(), &cfg(3)).unwrap();
        let m = &r.images[0];
        assert_eq!(m.diversity, 0.0);
        assert!(m.diversity_degenerate);
        assert_eq!(m.lr_psnr, f64::INFINITY);
        assert_eq!(m.rs, 0.0);
        assert_eq!(m.sparsity, m.gt_sparsity);
        let tsv = report_tsv(&r);
        assert!(tsv.starts_with("# patch_size=4 distance=mse scale=2 samples=3\n"));
        assert!(tsv.lines().nth(2).unwrap().contains("\tinf\t"));
        assert_eq!(report_json(&r)["images"][0]["lr_psnr_db"], "inf");
    }

    #[test]
    fn toy_corpus_matches_hand_values() {
        // constant GT: zero high frequency, L_s(gt) = gt
        let gt = Image::filled(8, 8, 1, 0.5, Domain::Hr).unwrap();
        // sample 0: +0.1 on the left half, sample 1: +0.1 on the right half
        let s0 = Image::from_fn(8, 8, 1, Domain::Hr, |_, x, _| if x < 4 { 0.6 } else { 0.5 }).unwrap();
        let s1 = Image::from_fn(8, 8, 1, Domain::Hr, |_, x, _| if x >= 4 { 0.6 } else { 0.5 }).unwrap();
        let gt2 = random(2);
        let entries = vec![
            ("b".to_string(), gt2.clone(), vec![gt2.clone(), gt2.clone()]),
            ("a".to_string(), gt.clone(), vec![s0, s1]),
        ];
        let r = evaluate_images(&entries, s2(), &cfg(2)).unwrap();
        assert_eq!(r.images[0].image, "a");
        let a = &r.images[0];
        // patches (4x4): left column d = 0.01 for s0, right column for s1
        assert!((a.dbar - 0.005).abs() < 1e-15);
        assert!((a.diversity - 1.0).abs() < 1e-12);
        assert_eq!(a.gt_sparsity, 1.0);
        assert_eq!(a.sparsity, 0.5);
        assert_eq!(a.rs, f64::NEG_INFINITY);
        let m = r.mean();
        assert_eq!(m.diversity, 0.5);
        assert_eq!(m.rs, f64::NEG_INFINITY);
    }

    #[test]
    fn too_few_samples() {
        let gt = random(3);
        let err = evaluate_images(&[("a".into(), gt.clone(), vec![gt])], s2(), &cfg(2)).unwrap_err();
        assert!(matches!(err, Error::MissingSample(_)));
    }

    #[test]
    fn evaluate_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let gt_dir = dir.path().join("gt");
        let gt = random(4);
        save_png(&gt, gt_dir.join("x.png")).unwrap();
        save_png(&gt, dir.path().join("s0.png")).unwrap();
        save_png(&gt, dir.path().join("s1.png")).unwrap();
        let manifest = dir.path().join("m.json");
        std::fs::write(&manifest, r#"[{"gt": "x.png", "samples": ["s0.png", "s1.png"]}]"#).unwrap();
        let r = evaluate(&gt_dir, &manifest, s2(), &cfg(2)).unwrap();
        assert_eq!(r.images[0].lr_psnr, f64::INFINITY);

        std::fs::write(
            &manifest,
            r#"{"temperature": 0.9, "entries": [{"gt": "x.png", "samples": ["s0.png", "gone.png"]}]}"#,
        )
        .unwrap();
        assert!(matches!(
            evaluate(&gt_dir, &manifest, s2(), &cfg(2)),
            Err(Error::MissingSample(_))
        ));

        let (tsv, js) = write_report(&r, dir.path(), "report").unwrap();
        assert!(tsv.is_file() && js.is_file());
        let v: Value = serde_json::from_str(&std::fs::read_to_string(js).unwrap()).unwrap();
        assert_eq!(v["patch_size"], 4);
    }
}

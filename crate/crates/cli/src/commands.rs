use std::path::{Path, PathBuf};

use fsncsr_core::flow::verify::{check_model, ModelCheckOptions};
use fsncsr_core::flow::{load_checkpoint, FlowModel};
use fsncsr_core::imagecore::{
    check_divisible, load_png, save_fshf, save_png, split, Domain, ScaleFactor,
};
use fsncsr_core::io::write_atomic;
use fsncsr_core::metrics::{evaluate, report_tsv, write_report, DiversityConfig};
use fsncsr_core::sampler::{sample_sr, SamplerConfig};
use fsncsr_core::train::{train_loop, Dataset};
use fsncsr_core::Error;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig, SEED_ENV};
use crate::error::CliError;
use crate::manifest::RunManifest;

pub const SAMPLE_MANIFEST: &str = "sample_manifest.json";
pub const GRADCHECK_REPORT: &str = "gradcheck_report.json";

fn settings_hash(v: &Value) -> String {
    hex(&Sha256::digest(v.to_string().as_bytes()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn scale(s: usize) -> Result<ScaleFactor, CliError> {
    ScaleFactor::new(s).map_err(|e| CliError::Config(e.to_string()))
}

pub fn train(config: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config)?;
    if let Some(r) = resume {
        if !r.is_file() {
            return Err(CliError::Config(format!("resume checkpoint {} does not exist", r.display())));
        }
    }
    let data = Dataset::load(&cfg.dataset).map_err(|e| match e {
        Error::Dataset(m) => CliError::Config(format!("dataset: {m}")),
        other => other.into(),
    })?;
    let mut run = RunManifest::start("train", cfg.hash(), cfg.train.seed, serde_json::to_value(&cfg).expect("serializes"));
    let out = train_loop(&cfg.model, &cfg.train, &data, &cfg.out_dir, resume)?;
    if let Some(last) = out.history.last() {
        println!("step {} bits/dim {:.6}", last.step, last.bits_per_dim);
    }
    println!("checkpoint {}", out.final_checkpoint.display());
    run.artifacts = out.checkpoints;
    run.artifacts.push(out.log_path);
    run.finish(&cfg.out_dir)?;
    Ok(())
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub temperature: Option<f64>,
    pub num: Option<usize>,
    pub seed: Option<u64>,
    pub sigma_inf: Option<f64>,
}

fn list_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let rd = std::fs::read_dir(input).map_err(|source| Error::Io {
        path: input.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no PNG inputs in {}", input.display())));
    }
    Ok(paths)
}

pub fn sample(a: &SampleArgs) -> Result<(), CliError> {
    let base = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.sampler,
        None => SamplerConfig {
            seed: match std::env::var(SEED_ENV) {
                Ok(s) => s
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("{SEED_ENV}={s:?} is not a non-negative integer")))?,
                Err(_) => 0,
            },
            ..SamplerConfig::default()
        },
    };
    let model = load_checkpoint(&a.checkpoint, None)?;
    let cfg = SamplerConfig {
        temperature: a.temperature.unwrap_or(if a.config.is_some() {
            base.temperature
        } else {
            SamplerConfig::for_scale(model.config().scale).temperature
        }),
        num_samples: a.num.unwrap_or(base.num_samples),
        seed: a.seed.unwrap_or(base.seed),
        inference_sigma: a.sigma_inf.unwrap_or(base.inference_sigma),
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let inputs = list_inputs(&a.input)?;

    let mut images = Vec::with_capacity(inputs.len());
    for (id, path) in inputs.iter().enumerate() {
        let y = load_png(path)?;
        let samples = (0..cfg.num_samples as u64)
            .map(|i| sample_sr(&model, &y, &cfg, id as u64, i))
            .collect::<fsncsr_core::Result<Vec<_>>>()?;
        images.push(samples);
    }

    create_dir(&a.out)?;
    let settings = json!({
        "checkpoint": a.checkpoint,
        "scale": model.config().scale,
        "temperature": cfg.temperature,
        "inference_sigma": cfg.inference_sigma,
        "seed": cfg.seed,
        "num_samples": cfg.num_samples,
    });
    let mut run = RunManifest::start("sample", settings_hash(&settings), cfg.seed, settings.clone());
    let mut entries = Vec::new();
    for (id, (path, samples)) in inputs.iter().zip(&images).enumerate() {
        let stem = path.file_stem().map_or_else(|| format!("image{id}"), |s| s.to_string_lossy().into_owned());
        let mut names = Vec::new();
        let mut draws = Vec::new();
        for (i, img) in samples.iter().enumerate() {
            let name = format!("{stem}_s{i}.png");
            let p = a.out.join(&name);
            save_png(img, &p)?;
            run.artifacts.push(p);
            draws.push(json!({
                "index": i,
                "image_id": id,
                "seed": cfg.seed,
                "temperature": cfg.temperature,
                "inference_sigma": cfg.inference_sigma,
            }));
            names.push(name);
        }
        entries.push(json!({
            "gt": path.file_name().map(|n| n.to_string_lossy().into_owned()),
            "lr": path,
            "samples": names,
            "draws": draws,
        }));
    }
    let mut doc = settings;
    doc["entries"] = Value::Array(entries);
    let mp = a.out.join(SAMPLE_MANIFEST);
    write_atomic(&mp, serde_json::to_string_pretty(&doc).expect("json").as_bytes())?;
    run.artifacts.push(mp.clone());
    println!("{} samples -> {}", inputs.len() * cfg.num_samples, mp.display());
    run.finish(&a.out)?;
    Ok(())
}

pub struct EvalArgs {
    pub gt_dir: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub patch: Option<usize>,
    pub distance: Option<String>,
    pub num: Option<usize>,
    pub scale: Option<usize>,
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (base, base_scale) = match &a.config {
        Some(p) => {
            let c = ExperimentConfig::load(p)?;
            (c.diversity, c.scale)
        }
        None => (DiversityConfig::default(), 4),
    };
    let cfg = DiversityConfig {
        num_samples: a.num.unwrap_or(base.num_samples),
        patch_size: a.patch.unwrap_or(base.patch_size),
        distance: a.distance.clone().unwrap_or(base.distance),
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let s = scale(a.scale.unwrap_or(base_scale))?;
    if !a.manifest.is_file() {
        return Err(CliError::Config(format!("manifest {} does not exist", a.manifest.display())));
    }
    let report = evaluate(&a.gt_dir, &a.manifest, s, &cfg)?;
    let settings = json!({
        "gt_dir": a.gt_dir,
        "manifest": a.manifest,
        "scale": s.get(),
        "diversity": cfg,
    });
    let mut run = RunManifest::start("eval", settings_hash(&settings), 0, settings);
    let (tsv, js) = write_report(&report, &a.out, &format!("report_p{}", cfg.patch_size))?;
    print!("{}", report_tsv(&report));
    run.artifacts = vec![tsv, js];
    run.finish(&a.out)?;
    Ok(())
}

pub fn freqsplit(image: &Path, s: usize, out: &Path) -> Result<(), CliError> {
    let s = scale(s)?;
    let x = load_png(image)?;
    check_divisible(x.height(), x.width(), s.get())?;
    let (low, high) = split(&x, s)?;
    let recombined = low.zip_map(&high, Domain::Hr, |a, b| a + b)?;
    create_dir(out)?;
    let settings = json!({ "image": image, "scale": s.get() });
    let mut run = RunManifest::start("freqsplit", settings_hash(&settings), 0, settings);
    let paths = [out.join("low.png"), out.join("high.fshf"), out.join("recombined.png")];
    save_png(&low, &paths[0])?;
    save_fshf(&high, &paths[1])?;
    save_png(&recombined, &paths[2])?;
    let mean_abs = high.data().iter().map(|v| v.abs()).sum::<f64>() / high.data().len() as f64;
    println!("mean |H| {mean_abs:.6}");
    run.artifacts = paths.to_vec();
    run.finish(out)?;
    Ok(())
}

pub struct GradcheckArgs {
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub entries: usize,
    pub flip_logdet_sign: bool,
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let c = ExperimentConfig::from_json("{}", std::env::var(SEED_ENV).ok().as_deref())?;
            c.validate()?;
            c
        }
    };
    let ckpt = a.checkpoint.clone().or_else(|| cfg.checkpoint.clone());
    let model = match &ckpt {
        Some(p) => load_checkpoint(p, None)?,
        None => FlowModel::new(cfg.model.clone())?,
    };
    let mut opts = ModelCheckOptions::for_model(&model);
    opts.grad.max_entries = Some(a.entries.max(1));
    opts.grad.directional = true;
    opts.seed = cfg.seed;
    opts.flip_logdet_sign = a.flip_logdet_sign;
    let report = check_model(&model, &opts)?;

    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let settings = json!({
        "model": model.config(),
        "checkpoint": ckpt,
        "entries_per_tensor": opts.grad.max_entries,
        "eps": opts.grad.eps,
        "tol": opts.grad.tol,
        "logdet_tol": opts.logdet_tol,
    });
    let mut run = RunManifest::start("gradcheck", settings_hash(&settings), cfg.seed, settings);
    let doc = json!({
        "passed": report.passed(),
        "gradients": report.gradients.params.iter().map(|p| json!({
            "name": p.name,
            "probed": p.probed,
            "max_rel_error": p.max_rel_error,
            "directional_rel_error": p.directional_rel_error,
            "passed": p.passed,
        })).collect::<Vec<_>>(),
        "logdets": report.logdets.iter().map(|c| json!({
            "layer": c.name,
            "analytic": c.analytic,
            "brute_force": c.brute_force,
            "rel_error": c.rel_error,
        })).collect::<Vec<_>>(),
    });
    let rp = out.join(GRADCHECK_REPORT);
    write_atomic(&rp, serde_json::to_string_pretty(&doc).expect("json").as_bytes())?;
    run.artifacts.push(rp);
    run.finish(&out)?;

    let worst_ld = report.logdets.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    println!(
        "gradients: {} tensors, max rel error {:.3e} (tol {:.0e})",
        report.gradients.params.len(),
        report.gradients.max_rel_error(),
        opts.grad.tol
    );
    println!("log-dets: {} checks, max rel error {worst_ld:.3e} (tol {:.0e})", report.logdets.len(), opts.logdet_tol);
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        let mut bad: Vec<String> = report.gradients.failures().map(|p| p.name.clone()).collect();
        bad.extend(
            report
                .logdets
                .iter()
                .filter(|c| c.rel_error > opts.logdet_tol)
                .map(|c| format!("logdet:{}", c.name)),
        );
        println!("FAIL");
        Err(CliError::CheckFailed(format!("gradient check failed: {}", bad.join(", "))))
    }
}

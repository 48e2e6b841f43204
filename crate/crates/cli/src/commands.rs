use std::path::{Path, PathBuf};
use std::time::Instant;

use ifgan::checkpoint::Checkpoint;
use ifgan::data::augment::from_unit;
use ifgan::data::manifest::{load_corpus, read_manifest, write_corpus};
use ifgan::data::synth::EXPRESSION_NAMES;
use ifgan::data::{make_folds, prepare, synth_corpus, FaceSample, GrayImage, Keypoints, SynthConfig};
use ifgan::tensor::OpTag;
use ifgan::training::{
    argmax, evaluate_checkpoint, predict, run_cross_validation, train_to_dir, write_file, Dataset, Precision,
    RunManifest, TrainConfig, RUN_MANIFEST_FILE,
};
use ifgan::verify::{gradcheck_suite, SuiteConfig};
use ifgan::{Error, Result};

use crate::grid;
use crate::Global;

pub const THREADS_ENV: &str = "IFGAN_THREADS";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const CV_REPORT_FILE: &str = "cv_report.json";

/// Caps the worker pool at `IFGAN_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn out_dir(g: &Global) -> Result<&Path> {
    g.out_dir
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --out-dir".into()))
}

/// The config file (or defaults) with command-line overrides applied.
fn load_config(g: &Global) -> Result<TrainConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
            TrainConfig::from_json(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(p) = g.precision {
        cfg.precision = p;
    }
    Ok(cfg)
}

fn load_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    let dir = cfg
        .data_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no corpus given: pass --data or set data_dir in the config".into()))?;
    let (manifest, samples) = load_corpus(dir)?;
    Dataset::new(samples, manifest.classes, manifest.factors, cfg.resize_side, cfg.crop_side)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Adds `files` to the run manifest in `dir`, creating it if needed.
fn record_outputs(dir: &Path, cfg: &TrainConfig, files: &[String]) -> Result<()> {
    let path = dir.join(RUN_MANIFEST_FILE);
    let mut m = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
        Err(_) => RunManifest::new(cfg),
    };
    for f in files {
        if !m.files.contains(f) {
            m.files.push(f.clone());
        }
    }
    m.write(dir)?;
    Ok(())
}

pub fn synth_data(g: &Global, identities: usize, classes: usize, levels: u8, side: usize) -> Result<()> {
    let dir = out_dir(g)?;
    let cfg = SynthConfig {
        identities,
        classes,
        levels,
        side,
        seed: g.seed.unwrap_or(0),
    };
    let corpus = synth_corpus(&cfg)?;
    let written = write_corpus(&corpus, dir)?;
    println!("wrote {} samples and a manifest to {}", written.len() - 1, dir.display());
    Ok(())
}

pub fn train(g: &Global, data: Option<PathBuf>, fold: Option<usize>, steps: Option<u64>, resume: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(d) = data {
        cfg.data_dir = Some(d);
    }
    if let Some(f) = fold {
        cfg.fold = f;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    let dir = out_dir(g)?;
    let ds = load_dataset(&cfg)?;
    let start = Instant::now();
    let manifest = train_to_dir(&cfg, &ds, dir, resume.as_deref())?;
    println!(
        "trained fold {} to step {} in {:.1}s; run {} wrote {} files to {}",
        cfg.fold,
        cfg.steps,
        start.elapsed().as_secs_f64(),
        manifest.run_id,
        manifest.files.len(),
        dir.display()
    );
    Ok(())
}

pub fn eval(g: &Global, checkpoint: &Path, data: Option<PathBuf>, fold: Option<usize>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(d) = data {
        cfg.data_dir = Some(d);
    }
    let ds = load_dataset(&cfg)?;
    let summary = evaluate_checkpoint(&ck, &ds, fold)?;
    let json = to_json(&summary);
    println!("{json}");
    if let Some(dir) = &g.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
        write_file(&dir.join(EVAL_REPORT_FILE), json.as_bytes())?;
        record_outputs(dir, &ck.config, &[EVAL_REPORT_FILE.into()])?;
    }
    Ok(())
}

fn keypoints_for(input: &Path, manifest: Option<&Path>) -> Result<Keypoints> {
    if let Some(dir) = manifest {
        let m = read_manifest(dir)?;
        let canon = |p: &Path| std::fs::canonicalize(p).ok();
        let target = canon(input);
        return m
            .samples
            .iter()
            .find(|e| target.is_some() && canon(&dir.join(&e.path)) == target)
            .map(|e| e.keypoints)
            .ok_or_else(|| Error::Data(format!("{} has no entry in the manifest of {}", input.display(), dir.display())));
    }
    let mut sidecar = input.as_os_str().to_owned();
    sidecar.push(".keypoints.json");
    let sidecar = PathBuf::from(sidecar);
    let text = std::fs::read_to_string(&sidecar).map_err(|_| {
        Error::Data(format!(
            "missing keypoints for {}: expected {} or --manifest",
            input.display(),
            sidecar.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", sidecar.display())))
}

fn panel(values: &[f64], side: usize) -> Result<GrayImage> {
    GrayImage::new(side, side, values.iter().map(|&v| from_unit(v)).collect())
}

pub fn transfer(checkpoint: &Path, inputs: &[PathBuf], manifest: Option<&Path>, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    match ck.config.precision {
        Precision::F32 => transfer_as::<f32>(&ck, inputs, manifest, out),
        Precision::F64 => transfer_as::<f64>(&ck, inputs, manifest, out),
    }
}

fn transfer_as<T: ifgan::tensor::Element>(ck: &Checkpoint, inputs: &[PathBuf], manifest: Option<&Path>, out: &Path) -> Result<()> {
    let session = ck.to_session::<T>()?;
    let cfg = &session.config;
    if cfg.architecture.is_baseline() {
        return Err(Error::Config("transfer needs an IF-GAN checkpoint, not a baseline".into()));
    }
    let (n, m) = (cfg.resize_side, cfg.crop_side);
    let crops = session.crops()?;
    let mut images = Vec::with_capacity(inputs.len());
    for path in inputs {
        let sample = FaceSample {
            image: GrayImage::load_pgm(path)?,
            identity_id: 0,
            expression_label: None,
            intensity_level: 0,
            keypoints: keypoints_for(path, manifest)?,
        };
        let p = prepare(&sample, n, m)?;
        let img = ifgan::data::augment(&p.image, ifgan::data::AugmentMode::Test, n, m, 0)?;
        images.push(img);
    }
    let params = session.selected().0;
    let fakes = ifgan::training::generate(&cfg.architecture, params, &crops.neutral, &images, m)?;
    let logits = predict(&cfg.architecture, params, &crops.neutral, &images, m)?;
    let mut rows = Vec::with_capacity(inputs.len());
    for (k, path) in inputs.iter().enumerate() {
        let class = argmax(&logits[k]);
        let name = EXPRESSION_NAMES.get(class).copied().unwrap_or("?");
        println!("{}: {name} (class {class})", path.display());
        rows.push(vec![
            panel(&images[k], m)?,
            panel(&crops.neutral, m)?,
            panel(&fakes[k], m)?,
            panel(&crops.expressive[class], m)?,
        ]);
    }
    grid::compose(&rows)?.save_pgm(out)
}

pub fn gradcheck(g: &Global, scale: usize, fault: Option<&str>) -> Result<()> {
    let fault = fault
        .map(|f| f.parse::<OpTag>().map_err(|e| Error::Config(e.to_string())))
        .transpose()?;
    let start = Instant::now();
    let cases = gradcheck_suite(&SuiteConfig {
        scale,
        seed: g.seed.unwrap_or(0),
        fault,
        ..SuiteConfig::default()
    })?;
    let mut failed = 0;
    for c in &cases {
        let verdict = if c.passed { "ok" } else { "FAIL" };
        println!("{:<24} {:>5} checked  max rel error {:.3e}  {verdict}", c.name, c.checked, c.max_rel_error);
        failed += usize::from(!c.passed);
    }
    println!("{} cases, {failed} failed, {:.1}s", cases.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

pub fn folds(g: &Global, data: Option<PathBuf>, identities: Option<usize>, n_folds: Option<usize>) -> Result<()> {
    let cfg = load_config(g)?;
    let ids: Vec<usize> = match (data.or(cfg.data_dir.clone()), identities) {
        (_, Some(n)) => (0..n).collect(),
        (Some(dir), None) => {
            let m = read_manifest(&dir)?;
            let mut ids: Vec<usize> = m.samples.iter().map(|e| e.identity_id).collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
        (None, None) => return Err(Error::Config("pass --data or --identities".into())),
    };
    let plan = make_folds(&ids, n_folds.unwrap_or(cfg.n_folds), g.seed.unwrap_or(cfg.fold_seed))?;
    println!("{}", to_json(&plan));
    Ok(())
}

pub fn cross_validate(g: &Global, data: Option<PathBuf>, folds: &[usize], steps: Option<u64>) -> Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(d) = data {
        cfg.data_dir = Some(d);
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    let dir = out_dir(g)?;
    let ds = load_dataset(&cfg)?;
    let start = Instant::now();
    let report = run_cross_validation(&cfg, &ds, folds, |r| {
        eprintln!(
            "fold {}: IF-GAN {:.3}, baseline {:.3}, generated-image probe {:.3} ({:.0}s)",
            r.fold,
            r.accuracy,
            r.baseline_accuracy,
            r.probe_generated,
            start.elapsed().as_secs_f64()
        );
    })?;
    let json = to_json(&report);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
    write_file(&dir.join(CV_REPORT_FILE), json.as_bytes())?;
    record_outputs(dir, &cfg, &[CV_REPORT_FILE.into()])?;
    println!("{json}");
    Ok(())
}

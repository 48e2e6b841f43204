use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{config, data, Error, Result};
use crate::models::Architecture;
use crate::nn::ParamStore;
use crate::tensor::Element;

use super::config::{Precision, TrainConfig};
use super::dataset::{Dataset, FoldData};
use super::evaluate::{generate, EvalReport};
use super::probe::{identity_probe, ProbeReport};
use super::session::Session;
use super::step::StepMetrics;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ifg";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one command's outputs; paths are relative to the output
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub run_id: String,
    pub config: TrainConfig,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(cfg: &TrainConfig) -> Self {
        let json = serde_json::to_vec(cfg).expect("config serializes");
        Self {
            run_id: format!("fold{}-seed{}-{:08x}", cfg.fold, cfg.seed, crc32fast::hash(&json)),
            config: cfg.clone(),
            files: Vec::new(),
        }
    }

    /// Writes the manifest itself (listed among its files) into `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        if !self.files.iter().any(|f| f == RUN_MANIFEST_FILE) {
            self.files.push(RUN_MANIFEST_FILE.into());
        }
        let path = dir.join(RUN_MANIFEST_FILE);
        write_file(&path, serde_json::to_string_pretty(self).expect("manifest serializes").as_bytes())?;
        Ok(path)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))
}

/// Metrics rows of an earlier run up to and including `step`, checked
/// against the expected header.
fn earlier_rows(path: &Path, step: u64) -> Result<Vec<String>> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    let mut lines = text.lines();
    if lines.next() != Some(StepMetrics::CSV_HEADER) {
        return Err(data(format!("{} does not start with the metrics header", path.display())));
    }
    let mut rows = Vec::new();
    for line in lines {
        let s: u64 = line
            .split(',')
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| data(format!("{}: malformed row `{line}`", path.display())))?;
        if s <= step {
            rows.push(line.to_string());
        }
    }
    Ok(rows)
}

/// Trains one fold into `out_dir`: metrics CSV, config echo, checkpoints
/// at the configured cadence and a final checkpoint. With `resume` the run
/// continues from a checkpoint whose config matches up to `steps`;
/// metrics rows after the checkpoint's step are dropped.
pub fn train_to_dir(cfg: &TrainConfig, ds: &Dataset, out_dir: &Path, resume: Option<&Path>) -> Result<RunManifest> {
    match cfg.precision {
        Precision::F32 => train_to_dir_as::<f32>(cfg, ds, out_dir, resume),
        Precision::F64 => train_to_dir_as::<f64>(cfg, ds, out_dir, resume),
    }
}

fn train_to_dir_as<T: Element>(cfg: &TrainConfig, ds: &Dataset, out_dir: &Path, resume: Option<&Path>) -> Result<RunManifest> {
    cfg.validate()?;
    let fold = FoldData::new(cfg, ds)?;
    let mut session: Session<T> = match resume {
        None => Session::new(cfg, &fold)?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if !ck.config.compatible_for_resume(cfg) {
                return Err(config(format!(
                    "{} was written with a different config; only `steps` may change on resume",
                    path.display()
                )));
            }
            let mut s = ck.to_session::<T>()?;
            if s.step > cfg.steps {
                return Err(config(format!(
                    "checkpoint is at step {} but the config asks for {} steps",
                    s.step, cfg.steps
                )));
            }
            s.config = cfg.clone();
            s
        }
    };
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new(cfg);
    write_file(&out_dir.join(CONFIG_FILE), cfg.to_json().as_bytes())?;
    manifest.files.push(CONFIG_FILE.into());

    let csv_path = out_dir.join(METRICS_FILE);
    let kept = if resume.is_some() { earlier_rows(&csv_path, session.step)? } else { Vec::new() };
    let file = File::create(&csv_path).map_err(|e| Error::io(format!("create {}", csv_path.display()), e))?;
    let mut csv = BufWriter::new(file);
    let io = |e| Error::io(format!("write {}", csv_path.display()), e);
    writeln!(csv, "{}", StepMetrics::CSV_HEADER).map_err(io)?;
    for row in &kept {
        writeln!(csv, "{row}").map_err(io)?;
    }
    manifest.files.push(METRICS_FILE.into());

    let every = cfg.checkpoint_every;
    let ck_dir = out_dir.join(CHECKPOINT_DIR);
    if every > 0 {
        create_dir(&ck_dir)?;
    }
    let mut written = Vec::new();
    session.run(ds, &fold, cfg.steps, |s, m| {
        writeln!(csv, "{}", m.csv_row()).map_err(io)?;
        if every > 0 && m.step % every == 0 {
            csv.flush().map_err(io)?;
            let name = format!("step_{:06}.ifg", m.step);
            Checkpoint::from_session(s).save(&ck_dir.join(&name))?;
            written.push(format!("{CHECKPOINT_DIR}/{name}"));
        }
        Ok(())
    })?;
    csv.flush().map_err(io)?;
    manifest.files.extend(written);
    Checkpoint::from_session(&session).save(&out_dir.join(FINAL_CHECKPOINT))?;
    manifest.files.push(FINAL_CHECKPOINT.into());
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Identity probes on the center-cropped expressive samples of every
/// identity and on the generator's outputs for them, with one seed.
pub fn identity_probes<T: Element>(
    arch: &Architecture,
    params: &ParamStore<T>,
    ds: &Dataset,
    neutral: &[f64],
    seed: u64,
) -> Result<(ProbeReport, ProbeReport)> {
    let idx = ds.expressive();
    let images: Vec<Vec<f64>> = idx.iter().map(|&i| ds.test_crop(i)).collect::<Result<_>>()?;
    let ids: Vec<usize> = idx.iter().map(|&i| ds.prepared[i].identity_id).collect();
    let fakes = generate(arch, params, neutral, &images, ds.crop_side)?;
    let input = identity_probe(&images, ds.crop_side, &ids, seed)?;
    let generated = identity_probe(&fakes, ds.crop_side, &ids, seed)?;
    Ok((input, generated))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub run_id: String,
    pub fold: usize,
    pub step: u64,
    /// Step of the parameters that were evaluated.
    pub selected_step: u64,
    pub test: EvalReport,
    pub probe_input: Option<ProbeReport>,
    pub probe_generated: Option<ProbeReport>,
}

/// Test-fold accuracy of a checkpoint's selected parameters, plus identity
/// probes for IF-GAN models. `fold`, when given, must match the fold the
/// checkpoint trained on.
pub fn evaluate_checkpoint(ck: &Checkpoint, ds: &Dataset, fold: Option<usize>) -> Result<EvalSummary> {
    if let Some(f) = fold {
        if f != ck.config.fold {
            return Err(config(format!(
                "checkpoint was trained for fold {}, not fold {f}",
                ck.config.fold
            )));
        }
    }
    match ck.config.precision {
        Precision::F32 => evaluate_as::<f32>(ck, ds),
        Precision::F64 => evaluate_as::<f64>(ck, ds),
    }
}

fn evaluate_as<T: Element>(ck: &Checkpoint, ds: &Dataset) -> Result<EvalSummary> {
    let session = ck.to_session::<T>()?;
    let cfg = &session.config;
    let fold = FoldData::new(cfg, ds)?;
    if fold.averages != session.averages {
        return Err(data("the corpus does not reproduce the checkpoint's training-fold averages"));
    }
    let test = session.test(ds, &fold)?;
    let (params, selected_step) = session.selected();
    let (probe_input, probe_generated) = if cfg.architecture.is_baseline() {
        (None, None)
    } else {
        let crops = session.crops()?;
        let (i, g) = identity_probes(&cfg.architecture, params, ds, &crops.neutral, cfg.seed)?;
        (Some(i), Some(g))
    };
    Ok(EvalSummary {
        run_id: RunManifest::new(cfg).run_id,
        fold: cfg.fold,
        step: session.step,
        selected_step,
        test,
        probe_input,
        probe_generated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub selected_step: u64,
    pub baseline_selected_step: u64,
    pub test_count: usize,
    pub probe_generated: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub per_fold: Vec<FoldResult>,
    pub mean_accuracy: f64,
    pub baseline_mean_accuracy: f64,
    /// Probe accuracy on the input images (identical for every fold).
    pub probe_input: f64,
    /// Mean over folds of the probe accuracy on generated images.
    pub probe_generated: f64,
    pub probe_chance: f64,
}

/// Trains and tests IF-GAN and the raw-image baseline on each listed fold
/// (all folds when `folds` is empty) with one shared fold plan, seed and
/// budget. `progress` is told about each finished fold.
pub fn run_cross_validation(
    cfg: &TrainConfig,
    ds: &Dataset,
    folds: &[usize],
    progress: impl FnMut(&FoldResult),
) -> Result<CvReport> {
    match cfg.precision {
        Precision::F32 => cross_validate_as::<f32>(cfg, ds, folds, progress),
        Precision::F64 => cross_validate_as::<f64>(cfg, ds, folds, progress),
    }
}

fn cross_validate_as<T: Element>(
    cfg: &TrainConfig,
    ds: &Dataset,
    folds: &[usize],
    mut progress: impl FnMut(&FoldResult),
) -> Result<CvReport> {
    cfg.validate()?;
    if cfg.architecture.is_baseline() {
        return Err(config("cross-validation needs the IF-GAN architecture; the baseline is derived from it"));
    }
    let folds: Vec<usize> = if folds.is_empty() { (0..cfg.n_folds).collect() } else { folds.to_vec() };
    let mut per_fold = Vec::with_capacity(folds.len());
    let mut probe_input = None;
    for &f in &folds {
        let run_cfg = TrainConfig { fold: f, ..cfg.clone() };
        run_cfg.validate()?;
        let fold = FoldData::new(&run_cfg, ds)?;
        let mut gan: Session<T> = Session::new(&run_cfg, &fold)?;
        gan.run(ds, &fold, run_cfg.steps, |_, _| Ok(()))?;
        let report = gan.test(ds, &fold)?;
        let (params, selected_step) = gan.selected();
        let crops = gan.crops()?;
        let (pi, pg) = identity_probes(&run_cfg.architecture, params, ds, &crops.neutral, cfg.seed)?;
        probe_input.get_or_insert(pi);

        let base_cfg = run_cfg.as_baseline();
        let mut base: Session<T> = Session::new(&base_cfg, &fold)?;
        base.run(ds, &fold, base_cfg.steps, |_, _| Ok(()))?;
        let base_report = base.test(ds, &fold)?;

        let r = FoldResult {
            fold: f,
            accuracy: report.accuracy,
            baseline_accuracy: base_report.accuracy,
            selected_step,
            baseline_selected_step: base.selected().1,
            test_count: report.count,
            probe_generated: pg.accuracy,
        };
        progress(&r);
        per_fold.push(r);
    }
    let n = per_fold.len() as f64;
    let mean = |f: fn(&FoldResult) -> f64| per_fold.iter().map(f).sum::<f64>() / n;
    let pi = probe_input.ok_or_else(|| config("no folds to run"))?;
    Ok(CvReport {
        mean_accuracy: mean(|r| r.accuracy),
        baseline_mean_accuracy: mean(|r| r.baseline_accuracy),
        probe_input: pi.accuracy,
        probe_generated: mean(|r| r.probe_generated),
        probe_chance: pi.chance,
        per_fold,
    })
}

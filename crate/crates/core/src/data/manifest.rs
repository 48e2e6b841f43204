use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::{Corpus, IdentityFactors, MAX_LEVEL};
use super::{FaceSample, GrayImage, Keypoints};
use crate::error::{data, format, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub identity_id: usize,
    /// `null` for neutral samples.
    pub expression_label: Option<usize>,
    /// 0 for neutral samples, otherwise 1..=4.
    pub intensity_level: u8,
    pub keypoints: Keypoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: usize,
    pub side: usize,
    pub seed: u64,
    /// Ground-truth rendering factors per identity, when known.
    #[serde(default)]
    pub factors: Vec<IdentityFactors>,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    /// Schema checks that go beyond field types.
    pub fn validate(&self) -> Result<()> {
        for e in &self.samples {
            let ctx = || format!("manifest entry `{}`", e.path);
            match e.expression_label {
                Some(l) if l >= self.classes => {
                    return Err(format(format!("{}: label {l} ≥ {} classes", ctx(), self.classes)));
                }
                Some(_) if !(1..=MAX_LEVEL).contains(&e.intensity_level) => {
                    return Err(format(format!("{}: intensity level {} not in 1..=4", ctx(), e.intensity_level)));
                }
                None if e.intensity_level != 0 => {
                    return Err(format(format!("{}: neutral samples have intensity level 0", ctx())));
                }
                _ => {}
            }
            let side = self.side as f64;
            if e.keypoints.iter().flatten().any(|&c| !(0.0..side).contains(&c)) {
                return Err(format(format!("{}: keypoints outside the {s}×{s} image", ctx(), s = self.side)));
            }
            if e.path.contains("..") || Path::new(&e.path).is_absolute() {
                return Err(format(format!("{}: path must stay inside the corpus directory", ctx())));
            }
        }
        Ok(())
    }
}

fn file_name(s: &FaceSample) -> String {
    match s.expression_label {
        None => format!("id{:03}_neutral.pgm", s.identity_id),
        Some(l) => format!("id{:03}_e{l}_l{}.pgm", s.identity_id, s.intensity_level),
    }
}

/// Writes every sample as `images/*.pgm` plus `manifest.json`; returns the
/// paths written.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(format!("create {}", img_dir.display()), e))?;
    let mut written = Vec::with_capacity(corpus.samples.len() + 1);
    let mut entries = Vec::with_capacity(corpus.samples.len());
    for s in &corpus.samples {
        let rel = format!("images/{}", file_name(s));
        let path = dir.join(&rel);
        s.image.save_pgm(&path)?;
        written.push(path);
        entries.push(ManifestEntry {
            path: rel,
            identity_id: s.identity_id,
            expression_label: s.expression_label,
            intensity_level: s.intensity_level,
            keypoints: s.keypoints,
        });
    }
    let manifest = Manifest {
        classes: corpus.config.classes,
        side: corpus.config.side,
        seed: corpus.config.seed,
        factors: corpus.identities.clone(),
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(format!("write {}", path.display()), e))?;
    written.push(path);
    Ok(written)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| format(format!("{}: {e}", path.display())))?;
    m.validate()?;
    Ok(m)
}

/// Reads a corpus written by [`write_corpus`] (or any conforming manifest).
pub fn load_corpus(dir: &Path) -> Result<(Manifest, Vec<FaceSample>)> {
    let m = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(m.samples.len());
    for e in &m.samples {
        let image = GrayImage::load_pgm(&dir.join(&e.path))?;
        if image.width != m.side || image.height != m.side {
            return Err(data(format!(
                "{} is {}×{}, manifest says {}",
                e.path, image.width, image.height, m.side
            )));
        }
        samples.push(FaceSample {
            image,
            identity_id: e.identity_id,
            expression_label: e.expression_label,
            intensity_level: e.intensity_level,
            keypoints: e.keypoints,
        });
    }
    Ok((m, samples))
}

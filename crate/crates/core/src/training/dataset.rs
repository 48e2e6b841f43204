use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::averages::PEAK_LEVELS;
use crate::data::augment::augment_values;
use crate::data::synth::{spurious_subset, IdentityFactors};
use crate::data::{
    average_faces, make_folds, prepare_all, AugmentMode, AverageCrops, Averages, Corpus, FaceSample, Prepared,
    RunRoles,
};
use crate::error::{config, data, Result};
use crate::tensor::{Element, Tensor};

use super::config::TrainConfig;
use super::step::Batch;

/// A corpus with every sample aligned and equalized once.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub raw: Vec<FaceSample>,
    pub prepared: Vec<Prepared>,
    /// Rendering factors per identity; empty when unknown.
    pub factors: Vec<IdentityFactors>,
    pub resize_side: usize,
    pub crop_side: usize,
}

impl Dataset {
    pub fn new(
        raw: Vec<FaceSample>,
        classes: usize,
        factors: Vec<IdentityFactors>,
        resize_side: usize,
        crop_side: usize,
    ) -> Result<Self> {
        if raw.is_empty() {
            return Err(data("corpus is empty"));
        }
        if let Some(s) = raw.iter().find(|s| s.expression_label.is_some_and(|l| l >= classes)) {
            return Err(data(format!(
                "identity {} has label {:?} but the corpus has {classes} classes",
                s.identity_id, s.expression_label
            )));
        }
        let prepared = prepare_all(&raw, resize_side, crop_side)?;
        Ok(Self {
            classes,
            raw,
            prepared,
            factors,
            resize_side,
            crop_side,
        })
    }

    pub fn from_corpus(corpus: &Corpus, cfg: &TrainConfig) -> Result<Self> {
        Self::new(
            corpus.samples.clone(),
            corpus.config.classes,
            corpus.identities.clone(),
            cfg.resize_side,
            cfg.crop_side,
        )
    }

    /// Sorted distinct identity ids.
    pub fn identities(&self) -> Vec<usize> {
        let ids: BTreeSet<usize> = self.raw.iter().map(|s| s.identity_id).collect();
        ids.into_iter().collect()
    }

    /// Indices of expressive samples, in corpus order.
    pub fn expressive(&self) -> Vec<usize> {
        (0..self.prepared.len())
            .filter(|&i| self.prepared[i].expression_label.is_some())
            .collect()
    }

    /// Center crop of sample `i` in [−1, 1].
    pub fn test_crop(&self, i: usize) -> Result<Vec<f64>> {
        self.crop(i, AugmentMode::Test, 0)
    }

    fn crop(&self, i: usize, mode: AugmentMode, seed: u64) -> Result<Vec<f64>> {
        let img = &self.prepared[i].image;
        let src = img.to_f64();
        augment_values(&src, img.width, img.height, mode, self.resize_side, self.crop_side, seed)
    }

    pub fn label(&self, i: usize) -> Result<usize> {
        self.prepared[i]
            .expression_label
            .ok_or_else(|| data(format!("sample {i} is neutral and has no expression label")))
    }
}

/// Sample indices and averages for one cross-validation run.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldData {
    pub roles: RunRoles,
    /// Expressive training samples at or above the minimum level.
    pub train: Vec<usize>,
    /// Peak-level samples of the validation identities.
    pub validation: Vec<usize>,
    /// Peak-level samples of the test identities.
    pub test: Vec<usize>,
    pub averages: Averages,
}

impl FoldData {
    pub fn new(cfg: &TrainConfig, ds: &Dataset) -> Result<Self> {
        if cfg.architecture.classifier.classes != ds.classes {
            return Err(config(format!(
                "classifier has {} classes, corpus has {}",
                cfg.architecture.classifier.classes, ds.classes
            )));
        }
        if ds.resize_side != cfg.resize_side || ds.crop_side != cfg.crop_side {
            return Err(config("dataset was prepared with different image sides than the config"));
        }
        let plan = make_folds(&ds.identities(), cfg.n_folds, cfg.fold_seed)?;
        let roles = plan.roles(cfg.fold)?;
        let n = ds.prepared.len();
        let mut allowed = vec![true; n];
        if let Some(sp) = &cfg.spurious {
            if ds.factors.is_empty() {
                return Err(config("a spurious training subset needs the corpus rendering factors"));
            }
            allowed = vec![false; n];
            for i in spurious_subset(&ds.raw, &ds.factors, ds.classes, &roles.train, sp.keep_other, sp.seed)? {
                allowed[i] = true;
            }
        }
        let in_roles = |ids: &[usize], i: usize| ids.binary_search(&ds.prepared[i].identity_id).is_ok();
        let pool: Vec<usize> = (0..n).filter(|&i| allowed[i] && in_roles(&roles.train, i)).collect();
        let pool_samples: Vec<Prepared> = pool.iter().map(|&i| ds.prepared[i].clone()).collect();
        let averages = average_faces(&pool_samples, ds.classes)?;
        averages.check_provenance(&roles.train)?;
        let train: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&i| ds.prepared[i].expression_label.is_some() && ds.prepared[i].intensity_level >= cfg.min_train_level)
            .collect();
        let peak = |ids: &[usize]| -> Vec<usize> {
            (0..n)
                .filter(|&i| {
                    let p = &ds.prepared[i];
                    in_roles(ids, i) && p.expression_label.is_some() && PEAK_LEVELS.contains(&p.intensity_level)
                })
                .collect()
        };
        let validation = peak(&roles.validation);
        let test = peak(&roles.test);
        if train.is_empty() {
            return Err(data(format!("fold {} has no training samples", cfg.fold)));
        }
        if test.is_empty() {
            return Err(data(format!("fold {} has no test samples", cfg.fold)));
        }
        Ok(Self {
            roles,
            train,
            validation,
            test,
            averages,
        })
    }
}

fn tensor<T: Element>(rows: &[Vec<f64>], side: usize) -> Result<Tensor<T>> {
    let flat: Vec<f64> = rows.concat();
    Ok(Tensor::from_f64([rows.len(), 1, side, side], &flat)?)
}

/// Network inputs for the given samples; `seeds` selects training
/// augmentation per sample, `None` the center crop.
pub fn make_batch<T: Element>(
    ds: &Dataset,
    crops: &AverageCrops,
    indices: &[usize],
    seeds: Option<&[u64]>,
    dropout_seed: u64,
) -> Result<Batch<T>> {
    let m = ds.crop_side;
    let mut i_se = Vec::with_capacity(indices.len());
    let mut i_ae = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for (k, &i) in indices.iter().enumerate() {
        let label = ds.label(i)?;
        let img = match seeds {
            Some(s) => ds.crop(i, AugmentMode::Train, s[k])?,
            None => ds.test_crop(i)?,
        };
        i_se.push(img);
        i_ae.push(
            crops
                .expressive
                .get(label)
                .ok_or_else(|| data(format!("no average face for class {label}")))?
                .clone(),
        );
        labels.push(label);
    }
    let i_an = vec![crops.neutral.clone(); indices.len()];
    Ok(Batch {
        i_an: tensor(&i_an, m)?,
        i_se: tensor(&i_se, m)?,
        i_ae: tensor(&i_ae, m)?,
        labels,
        dropout_seed,
    })
}

/// The batch of step `step`: drawn without replacement from the training
/// samples by a generator seeded with the run seed on stream `step`.
pub fn training_batch<T: Element>(
    cfg: &TrainConfig,
    ds: &Dataset,
    fold: &FoldData,
    crops: &AverageCrops,
    step: u64,
) -> Result<Batch<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step);
    let b = cfg.batch_size.min(fold.train.len());
    let picks: Vec<usize> = sample(&mut rng, fold.train.len(), b).into_iter().map(|k| fold.train[k]).collect();
    let seeds: Vec<u64> = (0..b).map(|_| rng.random()).collect();
    let dropout_seed = rng.random();
    if cfg.augment {
        make_batch(ds, crops, &picks, Some(&seeds), dropout_seed)
    } else {
        make_batch(ds, crops, &picks, None, dropout_seed)
    }
}

/// A fixed center-cropped batch of training samples spread evenly over
/// the training set, used to track the generator's reconstruction term.
pub fn evaluation_batch<T: Element>(cfg: &TrainConfig, ds: &Dataset, fold: &FoldData, crops: &AverageCrops) -> Result<Batch<T>> {
    let n = fold.train.len();
    let b = cfg.batch_size.min(n);
    let picks: Vec<usize> = (0..b).map(|k| fold.train[k * n / b]).collect();
    make_batch(ds, crops, &picks, None, 0)
}

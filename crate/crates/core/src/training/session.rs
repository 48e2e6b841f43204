use std::time::Instant;

use crate::data::AverageCrops;
use crate::data::Averages;
use crate::error::{data, Result};
use crate::nn::ParamStore;
use crate::tensor::Element;

use super::config::TrainConfig;
use super::dataset::{training_batch, Dataset, FoldData};
use super::evaluate::{evaluate, EvalReport};
use super::step::{train_step, Optimizers, StepMetrics};

/// Parameters that scored best on the validation identities.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub step: u64,
    pub accuracy: f64,
    pub params: ParamStore<T>,
}

/// All mutable state of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Session<T> {
    pub config: TrainConfig,
    pub params: ParamStore<T>,
    pub opts: Optimizers<T>,
    /// Steps completed so far.
    pub step: u64,
    pub averages: Averages,
    pub best: Option<Snapshot<T>>,
}

/// Center crops and labels of the given samples.
pub fn labelled_crops(ds: &Dataset, indices: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let images = indices.iter().map(|&i| ds.test_crop(i)).collect::<Result<_>>()?;
    let labels = indices.iter().map(|&i| ds.label(i)).collect::<Result<_>>()?;
    Ok((images, labels))
}

impl<T: Element> Session<T> {
    pub fn new(cfg: &TrainConfig, fold: &FoldData) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.architecture.init(cfg.seed)?;
        let opts = Optimizers::new(cfg, &params);
        Ok(Self {
            config: cfg.clone(),
            params,
            opts,
            step: 0,
            averages: fold.averages.clone(),
            best: None,
        })
    }

    pub fn crops(&self) -> Result<AverageCrops> {
        self.averages.crops(self.config.crop_side)
    }

    /// Trains until `until` steps are complete. `after` sees the session
    /// and the metrics of every step, in order.
    pub fn run(
        &mut self,
        ds: &Dataset,
        fold: &FoldData,
        until: u64,
        mut after: impl FnMut(&Self, &StepMetrics) -> Result<()>,
    ) -> Result<()> {
        if fold.averages != self.averages {
            return Err(data("the training-fold averages differ from the ones this run started with"));
        }
        let crops = self.crops()?;
        while self.step < until {
            let step = self.step + 1;
            let start = Instant::now();
            let batch = training_batch::<T>(&self.config, ds, fold, &crops, step)?;
            let mut m = train_step(&self.config, &mut self.params, &mut self.opts, &batch, step)?;
            self.step = step;
            if self.config.log_wall_time {
                m.wall_ms = start.elapsed().as_millis() as u64;
            }
            let every = self.config.validate_every;
            if every > 0 && step % every == 0 && !fold.validation.is_empty() {
                let acc = self.evaluate_on(ds, &fold.validation, &self.params)?.accuracy;
                if self.best.as_ref().is_none_or(|b| acc > b.accuracy) {
                    self.best = Some(Snapshot {
                        step,
                        accuracy: acc,
                        params: self.params.clone(),
                    });
                }
            }
            after(self, &m)?;
        }
        Ok(())
    }

    /// Parameters chosen for testing (the best validation snapshot, or the
    /// current ones without validation) and the step they come from.
    pub fn selected(&self) -> (&ParamStore<T>, u64) {
        match &self.best {
            Some(b) => (&b.params, b.step),
            None => (&self.params, self.step),
        }
    }

    pub fn evaluate_on(&self, ds: &Dataset, indices: &[usize], params: &ParamStore<T>) -> Result<EvalReport> {
        let (images, labels) = labelled_crops(ds, indices)?;
        let crops = self.crops()?;
        evaluate(&self.config.architecture, params, &crops.neutral, &images, &labels, self.config.crop_side)
    }

    /// Accuracy of the selected parameters on the test identities.
    pub fn test(&self, ds: &Dataset, fold: &FoldData) -> Result<EvalReport> {
        self.evaluate_on(ds, &fold.test, self.selected().0)
    }
}

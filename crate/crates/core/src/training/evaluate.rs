use serde::{Deserialize, Serialize};

use crate::error::{config, data, Result};
use crate::models::Architecture;
use crate::nn::{Forward, ParamStore};
use crate::tensor::{Element, Tape, Tensor};

/// Images per forward pass at inference.
const CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and confusion matrix of argmax predictions.
pub fn score(logits: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<EvalReport> {
    if logits.is_empty() {
        return Err(data("nothing to evaluate: the test set is empty"));
    }
    if logits.len() != labels.len() {
        return Err(config(format!("{} predictions for {} labels", logits.len(), labels.len())));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for (l, &y) in logits.iter().zip(labels) {
        if l.len() != classes || y >= classes {
            return Err(config(format!("prediction over {} classes for label {y} of {classes}", l.len())));
        }
        let p = argmax(l);
        confusion[y][p] += 1;
        correct += usize::from(p == y);
    }
    Ok(EvalReport {
        accuracy: correct as f64 / labels.len() as f64,
        confusion,
        count: labels.len(),
    })
}

fn chunks<T: Element>(images: &[Vec<f64>], side: usize) -> Result<Vec<Tensor<T>>> {
    images
        .chunks(CHUNK)
        .map(|c| Ok(Tensor::from_f64([c.len(), 1, side, side], &c.concat())?))
        .collect()
}

/// `Ĩ_AE = G(I_AN, I_SE)` for each image, in inference mode.
pub fn generate<T: Element>(
    arch: &Architecture,
    params: &ParamStore<T>,
    neutral: &[f64],
    images: &[Vec<f64>],
    side: usize,
) -> Result<Vec<Vec<f64>>> {
    let g = arch
        .generator
        .as_ref()
        .ok_or_else(|| config("this model has no generator"))?;
    let mut out = Vec::with_capacity(images.len());
    for x in chunks::<T>(images, side)? {
        let b = x.shape()[0];
        let mut tape = Tape::new();
        let an = Tensor::from_f64([b, 1, side, side], &neutral.repeat(b))?;
        let an = tape.constant(an);
        let se = tape.constant(x);
        let mut f = Forward::new(&mut tape, params, false, false);
        let y = g.forward(&mut f, an, se, None)?;
        let v = f.tape.value(y).to_f64_vec();
        out.extend(v.chunks(side * side).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Class logits for each image. IF-GAN models classify the pair
/// `(I_SE, G(I_AN, I_SE))`; the baseline classifies `I_SE` alone. The
/// discriminator and the average expressive faces are never used.
pub fn predict<T: Element>(
    arch: &Architecture,
    params: &ParamStore<T>,
    neutral: &[f64],
    images: &[Vec<f64>],
    side: usize,
) -> Result<Vec<Vec<f64>>> {
    let fakes = if arch.is_baseline() {
        None
    } else {
        Some(generate(arch, params, neutral, images, side)?)
    };
    let mut out = Vec::with_capacity(images.len());
    for (k, x) in chunks::<T>(images, side)?.into_iter().enumerate() {
        let b = x.shape()[0];
        let mut tape = Tape::new();
        let se = tape.constant(x);
        let mut f = Forward::new(&mut tape, params, false, false);
        let logits = match &fakes {
            None => arch.classifier.forward(&mut f, se)?,
            Some(all) => {
                let part = &all[k * CHUNK..k * CHUNK + b];
                let fake = Tensor::from_f64([b, 1, side, side], &part.concat())?;
                let fake = f.tape.constant(fake);
                arch.classifier.forward_pair(&mut f, se, fake)?
            }
        };
        let v = f.tape.value(logits).to_f64_vec();
        out.extend(v.chunks(arch.classifier.classes).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Test accuracy and confusion of a model on center-cropped images.
pub fn evaluate<T: Element>(
    arch: &Architecture,
    params: &ParamStore<T>,
    neutral: &[f64],
    images: &[Vec<f64>],
    labels: &[usize],
    side: usize,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(data("nothing to evaluate: the test set is empty"));
    }
    let logits = predict(arch, params, neutral, images, side)?;
    score(&logits, labels, arch.classifier.classes)
}

//! Linear identity probe: how well a fixed-budget softmax regression can
//! tell identities apart from a set of images.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, data, Result};
use crate::tensor::Element;

use super::evaluate::argmax;

/// Images are box-averaged down to this side before the probe sees them.
pub const PROBE_SIDE: usize = 16;
pub const PROBE_STEPS: usize = 200;
pub const PROBE_LR: f64 = 0.1;
pub const PROBE_TRAIN_FRACTION: f64 = 0.75;
pub const PROBE_MIN_SAMPLES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    /// One over the number of identities.
    pub chance: f64,
    pub train_count: usize,
    pub test_count: usize,
}

/// Box average of a `side × side` image onto `PROBE_SIDE × PROBE_SIDE`.
pub fn downsample(img: &[f64], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; PROBE_SIDE * PROBE_SIDE];
    let mut counts = vec![0usize; PROBE_SIDE * PROBE_SIDE];
    for y in 0..side {
        let oy = y * PROBE_SIDE / side;
        for x in 0..side {
            let o = oy * PROBE_SIDE + x * PROBE_SIDE / side;
            out[o] += img[y * side + x];
            counts[o] += 1;
        }
    }
    for (v, c) in out.iter_mut().zip(counts) {
        *v /= c as f64;
    }
    out
}

/// Per identity, a seeded shuffle puts `floor(0.75·n)` samples in the
/// training split and the rest in the test split.
fn split(ids: &[usize], seed: u64) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        by_id.entry(id).or_default().push(i);
    }
    if by_id.len() < 2 {
        return Err(data(format!("the probe needs at least 2 identities, got {}", by_id.len())));
    }
    if let Some((id, v)) = by_id.iter().find(|(_, v)| v.len() < PROBE_MIN_SAMPLES) {
        return Err(data(format!(
            "identity {id} has {} samples; the probe needs at least {PROBE_MIN_SAMPLES}",
            v.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for v in by_id.values() {
        let mut v = v.clone();
        v.shuffle(&mut rng);
        let k = (v.len() as f64 * PROBE_TRAIN_FRACTION).floor() as usize;
        train.extend_from_slice(&v[..k]);
        test.extend_from_slice(&v[k..]);
    }
    Ok((train, test, by_id.len()))
}

/// Held-out identity accuracy of a linear probe on `images` (each
/// `side × side`).
///
/// Features are the downsampled pixels, centered by the training-split
/// mean and divided by one global scale so that training vectors have unit
/// mean squared norm. A global scale keeps the relative size of every
/// pixel's variation, so near-constant pixels are not blown up. The probe
/// starts at zero and takes a fixed number of full-batch gradient steps
/// on the softmax cross-entropy.
pub fn identity_probe(images: &[Vec<f64>], side: usize, ids: &[usize], seed: u64) -> Result<ProbeReport> {
    if images.len() != ids.len() {
        return Err(config(format!("{} images for {} identity ids", images.len(), ids.len())));
    }
    if side < PROBE_SIDE {
        return Err(config(format!("probe images must be at least {PROBE_SIDE} px, got {side}")));
    }
    if let Some(img) = images.iter().find(|im| im.len() != side * side) {
        return Err(config(format!("probe image has {} values, expected {}", img.len(), side * side)));
    }
    let (train, test, n_ids) = split(ids, seed)?;
    let dense: BTreeMap<usize, usize> = {
        let mut u: Vec<usize> = ids.to_vec();
        u.sort_unstable();
        u.dedup();
        u.into_iter().enumerate().map(|(k, id)| (id, k)).collect()
    };
    let feats: Vec<Vec<f64>> = images.iter().map(|im| downsample(im, side)).collect();
    let d = PROBE_SIDE * PROBE_SIDE;
    let mut mean = vec![0.0; d];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(&feats[i]) {
            *m += v / train.len() as f64;
        }
    }
    let centered = |i: usize| -> Vec<f64> { feats[i].iter().zip(&mean).map(|(v, m)| v - m).collect() };
    let sq: f64 = train.iter().map(|&i| centered(i).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / train.len() as f64;
    let scale = if sq > 0.0 { sq.sqrt() } else { 1.0 };
    let matrix = |rows: &[usize]| -> Vec<f64> {
        rows.iter().flat_map(|&i| centered(i).into_iter().map(|v| v / scale)).collect()
    };
    let x_train = matrix(&train);
    let x_test = matrix(&test);
    let y_train: Vec<usize> = train.iter().map(|&i| dense[&ids[i]]).collect();
    let k = n_ids;
    let n = train.len();
    let mut w = vec![0.0; d * k];
    let mut b = vec![0.0; k];
    let mut logits = vec![0.0; n * k];
    let mut grad_w = vec![0.0; d * k];
    for _ in 0..PROBE_STEPS {
        f64::gemm(n, d, k, &x_train, false, &w, false, &mut logits, false);
        let mut grad_b = vec![0.0; k];
        for (row, &y) in logits.chunks_mut(k).zip(&y_train) {
            for (l, bias) in row.iter_mut().zip(&b) {
                *l += bias;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in row.iter_mut() {
                *l = (*l - max).exp();
                z += *l;
            }
            for (c, l) in row.iter_mut().enumerate() {
                *l = (*l / z - if c == y { 1.0 } else { 0.0 }) / n as f64;
                grad_b[c] += *l;
            }
        }
        f64::gemm(d, n, k, &x_train, true, &logits, false, &mut grad_w, false);
        for (wv, g) in w.iter_mut().zip(&grad_w) {
            *wv -= PROBE_LR * g;
        }
        for (bv, g) in b.iter_mut().zip(&grad_b) {
            *bv -= PROBE_LR * g;
        }
    }
    let mut test_logits = vec![0.0; test.len() * k];
    f64::gemm(test.len(), d, k, &x_test, false, &w, false, &mut test_logits, false);
    let correct = test_logits
        .chunks(k)
        .zip(&test)
        .filter(|(row, &i)| {
            let with_bias: Vec<f64> = row.iter().zip(&b).map(|(l, bv)| l + bv).collect();
            argmax(&with_bias) == dense[&ids[i]]
        })
        .count();
    Ok(ProbeReport {
        accuracy: correct as f64 / test.len() as f64,
        chance: 1.0 / n_ids as f64,
        train_count: train.len(),
        test_count: test.len(),
    })
}

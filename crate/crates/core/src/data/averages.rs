use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::augment::{augment_values, AugmentMode};
use super::synth::EXPRESSION_NAMES;
use super::Prepared;
use crate::error::{data, Result};

/// Intensity levels that count as peak expressions.
pub const PEAK_LEVELS: [u8; 2] = [3, 4];

/// Pixel-wise mean faces of one training fold: the average neutral face
/// and one average expressive face per class, on the aligned `n×n` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub side: usize,
    pub neutral: Vec<f64>,
    pub expressive: Vec<Vec<f64>>,
    /// Identities whose images contributed.
    pub source_identities: Vec<usize>,
}

fn class_name(label: usize) -> String {
    EXPRESSION_NAMES
        .get(label)
        .map_or_else(|| format!("class {label}"), |n| (*n).to_string())
}

/// Means of aligned, equalized images: neutral samples for the neutral
/// face, peak-level samples of each class for the expressive faces.
pub fn average_faces(samples: &[Prepared], classes: usize) -> Result<Averages> {
    let side = samples
        .first()
        .map(|s| s.image.width)
        .ok_or_else(|| data("no samples to average"))?;
    let mut sums = vec![vec![0.0; side * side]; classes + 1];
    let mut counts = vec![0usize; classes + 1];
    let mut sources = BTreeSet::new();
    for s in samples {
        if s.image.width != side || s.image.height != side {
            return Err(data("averaged images differ in size"));
        }
        let slot = match s.expression_label {
            None => classes,
            Some(l) if l < classes && PEAK_LEVELS.contains(&s.intensity_level) => l,
            Some(l) if l >= classes => return Err(data(format!("label {l} out of range for {classes} classes"))),
            Some(_) => continue,
        };
        for (a, &p) in sums[slot].iter_mut().zip(&s.image.pixels) {
            *a += f64::from(p);
        }
        counts[slot] += 1;
        sources.insert(s.identity_id);
    }
    for (slot, &c) in counts.iter().enumerate() {
        if c == 0 {
            let name = if slot == classes { "neutral".to_string() } else { class_name(slot) };
            return Err(data(format!("no samples for class `{name}`")));
        }
    }
    let mut means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let neutral = means.pop().expect("neutral slot");
    Ok(Averages {
        side,
        neutral,
        expressive: means,
        source_identities: sources.into_iter().collect(),
    })
}

/// Center-cropped averages in [−1, 1], ready to enter the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct AverageCrops {
    pub side: usize,
    pub neutral: Vec<f64>,
    pub expressive: Vec<Vec<f64>>,
}

impl Averages {
    pub fn crops(&self, m: usize) -> Result<AverageCrops> {
        let crop = |v: &[f64]| augment_values(v, self.side, self.side, AugmentMode::Test, self.side, m, 0);
        Ok(AverageCrops {
            side: m,
            neutral: crop(&self.neutral)?,
            expressive: self.expressive.iter().map(|v| crop(v)).collect::<Result<_>>()?,
        })
    }

    /// Fails unless every contributing identity is in `allowed`.
    pub fn check_provenance(&self, allowed: &[usize]) -> Result<()> {
        match self.source_identities.iter().find(|id| !allowed.contains(id)) {
            Some(id) => Err(data(format!("averages include identity {id} from outside the training fold"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GrayImage;

    fn prep(id: usize, label: Option<usize>, level: u8, v: u8) -> Prepared {
        Prepared {
            image: GrayImage::filled(4, 4, v),
            identity_id: id,
            expression_label: label,
            intensity_level: level,
        }
    }

    #[test]
    fn means_per_class_with_peak_levels_only() {
        let s = vec![
            prep(0, None, 0, 10),
            prep(1, None, 0, 20),
            prep(0, Some(0), 4, 100),
            prep(1, Some(0), 3, 50),
            prep(1, Some(0), 1, 255),
            prep(0, Some(1), 4, 7),
        ];
        let a = average_faces(&s, 2).unwrap();
        assert!(a.neutral.iter().all(|&v| v == 15.0));
        assert!(a.expressive[0].iter().all(|&v| v == 75.0));
        assert!(a.expressive[1].iter().all(|&v| v == 7.0));
        assert_eq!(a.source_identities, vec![0, 1]);
        assert!(a.check_provenance(&[0, 1, 2]).is_ok());
        assert!(a.check_provenance(&[0]).is_err());
    }

    #[test]
    fn empty_class_is_named() {
        let s = vec![prep(0, None, 0, 10), prep(0, Some(0), 4, 1)];
        let err = average_faces(&s, 3).unwrap_err().to_string();
        assert!(err.contains("disgust"), "{err}");
    }
}

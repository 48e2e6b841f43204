//! Synthetic face corpus, preprocessing, average faces and folds.
//!
//! Preprocessing of a sample: similarity alignment of its three keypoints
//! onto canonical positions in an `n×n` image, histogram equalization, then
//! augmentation (train) or a center crop (test) to `m×m` in [−1, 1].

pub mod align;
pub mod augment;
pub mod averages;
pub mod folds;
pub mod histeq;
pub mod image;
pub mod manifest;
pub mod synth;

pub use align::{align_face, canonical_keypoints, estimate_similarity, Similarity};
pub use augment::{augment, AugmentMode};
pub use averages::{average_faces, AverageCrops, Averages};
pub use folds::{make_folds, FoldPlan, RunRoles};
pub use histeq::hist_equalize;
pub use image::GrayImage;
pub use synth::{synth_corpus, Corpus, SynthConfig};

use rayon::prelude::*;

use crate::error::Result;

/// Left eye, right eye, nose tip as `[x, y]` pixel coordinates.
pub type Keypoints = [[f64; 2]; 3];

/// Side of the aligned image before cropping.
pub const RESIZE_SIDE: usize = 72;
/// Side of the network input.
pub const CROP_SIDE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct FaceSample {
    pub image: GrayImage,
    pub identity_id: usize,
    /// `None` for neutral samples.
    pub expression_label: Option<usize>,
    /// 0 for neutral samples.
    pub intensity_level: u8,
    pub keypoints: Keypoints,
}

/// A sample after alignment and equalization, on the `n×n` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub image: GrayImage,
    pub identity_id: usize,
    pub expression_label: Option<usize>,
    pub intensity_level: u8,
}

pub fn prepare(sample: &FaceSample, n: usize, m: usize) -> Result<Prepared> {
    let (aligned, _) = align_face(sample, &canonical_keypoints(n, m), n)?;
    Ok(Prepared {
        image: hist_equalize(&aligned),
        identity_id: sample.identity_id,
        expression_label: sample.expression_label,
        intensity_level: sample.intensity_level,
    })
}

/// [`prepare`] for every sample, in parallel; order is preserved.
pub fn prepare_all(samples: &[FaceSample], n: usize, m: usize) -> Result<Vec<Prepared>> {
    samples.par_iter().map(|s| prepare(s, n, m)).collect()
}

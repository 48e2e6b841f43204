use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::align::warp;
use super::GrayImage;
use crate::error::{config, Result};

pub const MAX_ROTATION_DEG: f64 = 3.0;
pub const FLIP_PROB: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Train,
    Test,
}

/// Maps an 8-bit intensity to [−1, 1].
pub fn to_unit(v: f64) -> f64 {
    v / 127.5 - 1.0
}

/// Inverse of [`to_unit`], clamped and rounded to 8 bits.
pub fn from_unit(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Resize to `n×n`, then either (train) a random horizontal flip, a uniform
/// rotation within ±3° about the center and a random `m×m` crop, or (test)
/// the central `m×m` crop. The result is row-major `m×m` in [−1, 1].
///
/// All steps are composed into a single bilinear resampling.
pub fn augment(img: &GrayImage, mode: AugmentMode, n: usize, m: usize, seed: u64) -> Result<Vec<f64>> {
    augment_values(&img.to_f64(), img.width, img.height, mode, n, m, seed)
}

/// [`augment`] on real-valued intensities in [0, 255].
pub fn augment_values(
    src: &[f64],
    w: usize,
    h: usize,
    mode: AugmentMode,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if m > n || m == 0 {
        return Err(config(format!("crop size {m} must be in 1..={n}")));
    }
    let (sx, sy) = (w as f64 / n as f64, h as f64 / n as f64);
    let c = n as f64 / 2.0;
    let (flip, angle, ox, oy) = match mode {
        AugmentMode::Test => {
            let o = ((n - m) / 2) as f64;
            (false, 0.0f64, o, o)
        }
        AugmentMode::Train => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let flip = rng.random_bool(FLIP_PROB);
            let angle = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
            let ox = rng.random_range(0..=n - m) as f64;
            let oy = rng.random_range(0..=n - m) as f64;
            (flip, angle, ox, oy)
        }
    };
    let (cos, sin) = (angle.cos(), angle.sin());
    let out = warp(src, w, h, m, m, |p| {
        // Crop frame → rotated n×n frame → unrotated → flipped → source.
        let (x, y) = (p[0] + ox - c, p[1] + oy - c);
        let (mut rx, ry) = (cos * x + sin * y + c, -sin * x + cos * y + c);
        if flip {
            rx = n as f64 - rx;
        }
        [rx * sx, ry * sy]
    });
    Ok(out.into_iter().map(to_unit).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(side: usize) -> GrayImage {
        let px = (0..side * side).map(|i| ((i % side) * 255 / (side - 1)) as u8).collect();
        GrayImage::new(side, side, px).unwrap()
    }

    #[test]
    fn test_mode_is_a_center_crop() {
        let img = ramp(72);
        let out = augment(&img, AugmentMode::Test, 72, 64, 0).unwrap();
        assert_eq!(out.len(), 64 * 64);
        for y in [0, 31, 63] {
            for x in [0, 17, 63] {
                let want = to_unit(f64::from(img.get(x + 4, y + 4)));
                assert!((out[y * 64 + x] - want).abs() < 1e-12);
            }
        }
        assert_eq!(out, augment(&img, AugmentMode::Test, 72, 64, 99).unwrap());
    }

    #[test]
    fn train_mode_is_seeded_and_in_range() {
        let img = ramp(72);
        let a = augment(&img, AugmentMode::Train, 72, 64, 3).unwrap();
        let b = augment(&img, AugmentMode::Train, 72, 64, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        let differs = (0..20).any(|s| augment(&img, AugmentMode::Train, 72, 64, s).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn crop_larger_than_resize_is_rejected() {
        assert!(augment(&ramp(72), AugmentMode::Test, 64, 72, 0).is_err());
    }

    #[test]
    fn unit_mapping_round_trips() {
        for v in [0u8, 1, 127, 128, 254, 255] {
            assert_eq!(from_unit(to_unit(f64::from(v))), v);
        }
        assert_eq!(to_unit(0.0), -1.0);
        assert_eq!(to_unit(255.0), 1.0);
    }
}

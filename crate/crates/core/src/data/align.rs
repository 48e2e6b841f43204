use super::image::bilinear;
use super::{FaceSample, GrayImage, Keypoints};
use crate::error::{data, Result};

/// `p ↦ scale·R(angle)·p + (tx, ty)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub angle: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            angle: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (c, s) = (self.scale * self.angle.cos(), self.scale * self.angle.sin());
        [c * p[0] - s * p[1] + self.tx, s * p[0] + c * p[1] + self.ty]
    }

    pub fn inverse(&self) -> Self {
        let inv = Self {
            scale: 1.0 / self.scale,
            angle: -self.angle,
            tx: 0.0,
            ty: 0.0,
        };
        let t = inv.apply([self.tx, self.ty]);
        Self {
            tx: -t[0],
            ty: -t[1],
            ..inv
        }
    }
}

/// Ratio of triangle area to squared longest side below which three
/// keypoints count as collinear.
const COLLINEAR_TOL: f64 = 1e-3;

/// Least-squares similarity mapping `src` onto `dst` (closed-form Procrustes
/// without reflection).
pub fn estimate_similarity(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(data("similarity estimation needs matching point sets of size ≥ 2"));
    }
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let s = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (ms, md) = (mean(src), mean(dst));
    let (mut a, mut b, mut den) = (0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p[0] - ms[0], p[1] - ms[1]);
        let (qx, qy) = (q[0] - md[0], q[1] - md[1]);
        a += px * qx + py * qy;
        b += px * qy - py * qx;
        den += px * px + py * py;
    }
    if den <= f64::EPSILON {
        return Err(data("source points coincide"));
    }
    let (sc, ss) = (a / den, b / den);
    let scale = (sc * sc + ss * ss).sqrt();
    let angle = ss.atan2(sc);
    let rot = Similarity {
        scale,
        angle,
        tx: 0.0,
        ty: 0.0,
    }
    .apply(ms);
    Ok(Similarity {
        scale,
        angle,
        tx: md[0] - rot[0],
        ty: md[1] - rot[1],
    })
}

fn check_not_collinear(k: &Keypoints) -> Result<()> {
    let cross = (k[1][0] - k[0][0]) * (k[2][1] - k[0][1]) - (k[1][1] - k[0][1]) * (k[2][0] - k[0][0]);
    let longest = (0..3)
        .map(|i| {
            let (p, q) = (k[i], k[(i + 1) % 3]);
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
        })
        .fold(0.0, f64::max);
    if longest == 0.0 || (0.5 * cross.abs()) / longest < COLLINEAR_TOL {
        return Err(data(format!("keypoints {k:?} are (nearly) collinear")));
    }
    Ok(())
}

/// Eye centers at `(0.3m, 0.35m)`, `(0.7m, 0.35m)` and nose tip at
/// `(0.5m, 0.6m)` of the centered `m×m` crop of an `n×n` image.
pub fn canonical_keypoints(n: usize, m: usize) -> Keypoints {
    let o = (n as f64 - m as f64) / 2.0;
    let m = m as f64;
    [
        [o + 0.3 * m, o + 0.35 * m],
        [o + 0.7 * m, o + 0.35 * m],
        [o + 0.5 * m, o + 0.6 * m],
    ]
}

/// Resamples `img` into an `out_w×out_h` grid; `inv` maps output
/// coordinates back to input coordinates.
pub fn warp(img: &[f64], w: usize, h: usize, out_w: usize, out_h: usize, inv: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_w * out_h);
    for v in 0..out_h {
        for u in 0..out_w {
            let p = inv([u as f64 + 0.5, v as f64 + 0.5]);
            out.push(bilinear(img, w, h, p[0], p[1]));
        }
    }
    out
}

/// Warps `sample` so its keypoints land on `canonical` in an
/// `out_side×out_side` image; returns the image and the transform used.
pub fn align_face(sample: &FaceSample, canonical: &Keypoints, out_side: usize) -> Result<(GrayImage, Similarity)> {
    check_not_collinear(&sample.keypoints)?;
    let t = estimate_similarity(&sample.keypoints, canonical)?;
    let inv = t.inverse();
    let src = sample.image.to_f64();
    let out = warp(&src, sample.image.width, sample.image.height, out_side, out_side, |p| {
        inv.apply(p)
    });
    Ok((GrayImage::from_f64(out_side, out_side, &out)?, t))
}

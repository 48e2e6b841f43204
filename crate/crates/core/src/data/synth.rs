use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FaceSample, GrayImage, Keypoints};
use crate::error::{config, Result};

pub const EXPRESSION_NAMES: [&str; 6] = ["anger", "disgust", "fear", "happiness", "sadness", "surprise"];
pub const MAX_LEVEL: u8 = 4;
pub const MIN_SIDE: usize = 32;

/// Nose tip distance below the eye line, in units of the eye spacing.
pub const NOSE_DROP: f64 = 0.625;

const SUPERSAMPLE: usize = 4;
const BACKGROUND: f64 = 40.0;

/// Per-identity geometry and shading; lengths are fractions of the image side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityFactors {
    pub oval_w: f64,
    pub oval_h: f64,
    pub eye_spacing: f64,
    pub base_intensity: f64,
    pub nose_length: f64,
    pub eye_size: f64,
    pub mouth_width: f64,
    /// Head roll in radians.
    pub roll: f64,
    /// Offset of the face center from the image center, in pixels.
    pub offset: [f64; 2],
}

impl IdentityFactors {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            oval_w: rng.random_range(0.27..0.41),
            oval_h: rng.random_range(0.38..0.46),
            eye_spacing: rng.random_range(0.30..0.38),
            base_intensity: rng.random_range(120.0..210.0),
            nose_length: rng.random_range(0.07..0.17),
            eye_size: rng.random_range(0.035..0.06),
            mouth_width: rng.random_range(0.08..0.14),
            roll: rng.random_range(-8.0f64..8.0).to_radians(),
            offset: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
        }
    }
}

/// Expression geometry; a function of `(label, level)` only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionFactors {
    /// Positive lifts the mouth corners.
    pub mouth_curve: f64,
    pub mouth_open: f64,
    /// Eye opening relative to neutral.
    pub eye_open: f64,
    /// Positive lowers the inner brow ends.
    pub brow_angle: f64,
    pub brow_raise: f64,
}

const NEUTRAL: ExpressionFactors = ExpressionFactors {
    mouth_curve: 0.0,
    mouth_open: 0.0,
    eye_open: 1.0,
    brow_angle: 0.0,
    brow_raise: 0.0,
};

const PROTOTYPES: [ExpressionFactors; 6] = [
    // anger
    ExpressionFactors {
        mouth_curve: -0.4,
        mouth_open: 0.0,
        eye_open: 0.75,
        brow_angle: 1.0,
        brow_raise: -0.5,
    },
    // disgust
    ExpressionFactors {
        mouth_curve: -0.7,
        mouth_open: 0.35,
        eye_open: 0.55,
        brow_angle: 0.4,
        brow_raise: -0.7,
    },
    // fear
    ExpressionFactors {
        mouth_curve: -0.2,
        mouth_open: 0.7,
        eye_open: 1.45,
        brow_angle: -0.7,
        brow_raise: 0.7,
    },
    // happiness
    ExpressionFactors {
        mouth_curve: 1.0,
        mouth_open: 0.4,
        eye_open: 0.8,
        brow_angle: 0.0,
        brow_raise: 0.15,
    },
    // sadness
    ExpressionFactors {
        mouth_curve: -1.0,
        mouth_open: 0.0,
        eye_open: 0.85,
        brow_angle: -1.0,
        brow_raise: 0.25,
    },
    // surprise
    ExpressionFactors {
        mouth_curve: 0.0,
        mouth_open: 1.0,
        eye_open: 1.6,
        brow_angle: 0.0,
        brow_raise: 1.0,
    },
];

impl ExpressionFactors {
    /// Neutral for `None`; otherwise the class prototype blended from neutral
    /// by `level / 4`.
    pub fn new(label: Option<usize>, level: u8) -> Self {
        let Some(label) = label else { return NEUTRAL };
        let p = PROTOTYPES[label % PROTOTYPES.len()];
        let a = f64::from(level) / f64::from(MAX_LEVEL);
        let mix = |n: f64, e: f64| n + a * (e - n);
        Self {
            mouth_curve: mix(NEUTRAL.mouth_curve, p.mouth_curve),
            mouth_open: mix(NEUTRAL.mouth_open, p.mouth_open),
            eye_open: mix(NEUTRAL.eye_open, p.eye_open),
            brow_angle: mix(NEUTRAL.brow_angle, p.brow_angle),
            brow_raise: mix(NEUTRAL.brow_raise, p.brow_raise),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub identities: usize,
    pub classes: usize,
    pub levels: u8,
    pub side: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            identities: 20,
            classes: 6,
            levels: 4,
            side: 64,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 {
            return Err(config(format!("need at least 2 identities, got {}", self.identities)));
        }
        if !(2..=PROTOTYPES.len()).contains(&self.classes) {
            return Err(config(format!(
                "classes must be in 2..={}, got {}",
                PROTOTYPES.len(),
                self.classes
            )));
        }
        if !(1..=MAX_LEVEL).contains(&self.levels) {
            return Err(config(format!("levels must be in 1..={MAX_LEVEL}, got {}", self.levels)));
        }
        if self.side < MIN_SIDE {
            return Err(config(format!(
                "side {} is too small to render (minimum {MIN_SIDE})",
                self.side
            )));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.identities * (1 + self.classes * usize::from(self.levels))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: SynthConfig,
    pub identities: Vec<IdentityFactors>,
    pub samples: Vec<FaceSample>,
}

/// One neutral sample plus `classes × levels` expressive samples for each
/// of `identities` procedurally rendered faces.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let identities: Vec<IdentityFactors> = (0..cfg.identities).map(|_| IdentityFactors::sample(&mut rng)).collect();
    let mut samples = Vec::with_capacity(cfg.sample_count());
    for (id, f) in identities.iter().enumerate() {
        samples.push(render_sample(f, id, None, 0, cfg.side));
        for label in 0..cfg.classes {
            for level in 1..=cfg.levels {
                samples.push(render_sample(f, id, Some(label), level, cfg.side));
            }
        }
    }
    Ok(Corpus {
        config: cfg.clone(),
        identities,
        samples,
    })
}

fn render_sample(f: &IdentityFactors, id: usize, label: Option<usize>, level: u8, side: usize) -> FaceSample {
    let e = ExpressionFactors::new(label, level);
    FaceSample {
        image: render(f, &e, side),
        identity_id: id,
        expression_label: label,
        intensity_level: level,
        keypoints: keypoints(f, side),
    }
}

struct Frame {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
}

impl Frame {
    fn new(f: &IdentityFactors, side: usize) -> Self {
        let s = side as f64;
        Self {
            cx: s / 2.0 + f.offset[0],
            cy: s / 2.0 + f.offset[1],
            cos: f.roll.cos(),
            sin: f.roll.sin(),
        }
    }

    fn to_image(&self, lx: f64, ly: f64) -> [f64; 2] {
        [
            self.cx + self.cos * lx - self.sin * ly,
            self.cy + self.sin * lx + self.cos * ly,
        ]
    }

    fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy)
    }
}

const EYE_Y: f64 = -0.08;

/// Left eye, right eye and nose tip in image coordinates.
pub fn keypoints(f: &IdentityFactors, side: usize) -> Keypoints {
    let s = side as f64;
    let fr = Frame::new(f, side);
    let half = f.eye_spacing * s / 2.0;
    let ey = EYE_Y * s;
    [
        fr.to_image(-half, ey),
        fr.to_image(half, ey),
        fr.to_image(0.0, ey + NOSE_DROP * f.eye_spacing * s),
    ]
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let t = (((px - a.0) * vx + (py - a.1) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + t * vx, a.1 + t * vy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

fn in_ellipse(px: f64, py: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (dx, dy) = ((px - cx) / rx, (py - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

/// Intensity at face-local coordinates (in pixels).
fn shade(f: &IdentityFactors, e: &ExpressionFactors, s: f64, lx: f64, ly: f64) -> f64 {
    let skin = f.base_intensity;
    if !in_ellipse(lx, ly, 0.0, 0.02 * s, f.oval_w * s, f.oval_h * s) {
        return BACKGROUND;
    }
    let half = f.eye_spacing * s / 2.0;
    let ey = EYE_Y * s;
    // Brows: inner ends drop for positive angle.
    for sgn in [-1.0, 1.0] {
        let theta = -sgn * e.brow_angle * 0.3;
        let c = (sgn * half, ey - 0.075 * s - e.brow_raise * 0.035 * s);
        let l = 0.07 * s;
        let (dx, dy) = (theta.cos() * l, theta.sin() * l);
        if segment_distance(lx, ly, (c.0 - dx, c.1 - dy), (c.0 + dx, c.1 + dy)) <= 0.018 * s {
            return 30.0;
        }
    }
    for sgn in [-1.0, 1.0] {
        let rx = f.eye_size * s;
        let ry = rx * 0.55 * e.eye_open;
        if in_ellipse(lx, ly, sgn * half, ey, rx, ry) {
            return 20.0;
        }
    }
    let tip = ey + NOSE_DROP * f.eye_spacing * s;
    if in_ellipse(lx, ly, 0.0, tip, 0.035 * s, 0.018 * s) {
        return skin * 0.55;
    }
    if segment_distance(lx, ly, (0.0, tip - f.nose_length * s), (0.0, tip)) <= 0.011 * s {
        return skin * 0.7;
    }
    let mw = f.mouth_width * s;
    if lx.abs() < mw {
        let r = (lx / mw).powi(2);
        let y0 = tip + 0.11 * s;
        let line = y0 - e.mouth_curve * 0.05 * s * (r - 0.5);
        let open = e.mouth_open * 0.07 * s * (1.0 - r);
        let t = 0.013 * s;
        if ly >= line - t && ly <= line + open + t {
            return if ly > line + t && ly < line + open - t { 8.0 } else { 25.0 };
        }
    }
    skin
}

/// Anti-aliased rendering by 4×4 supersampling of each pixel.
pub fn render(f: &IdentityFactors, e: &ExpressionFactors, side: usize) -> GrayImage {
    let s = side as f64;
    let fr = Frame::new(f, side);
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let mut values = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    let (lx, ly) = fr.to_local(px, py);
                    acc += shade(f, e, s, lx, ly);
                }
            }
            values.push(acc / n);
        }
    }
    GrayImage::from_f64(side, side, &values).expect("side×side values")
}

/// Training subset in which identity geometry is spuriously predictive of
/// the expression label.
///
/// Identities in `biased` are ranked by face-oval width; each keeps every
/// expressive sample of its two preferred classes (chosen from its rank) and
/// only a `keep_other` fraction of the rest. Neutral samples and identities
/// outside `biased` are untouched.
/// Returns the indices of the kept samples.
pub fn spurious_subset(
    samples: &[FaceSample],
    factors: &[IdentityFactors],
    classes: usize,
    biased: &[usize],
    keep_other: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if let Some(&id) = biased.iter().find(|&&id| id >= factors.len()) {
        return Err(config(format!("no rendering factors for identity {id}")));
    }
    let mut ranked: Vec<usize> = biased.to_vec();
    ranked.sort_by(|&a, &b| factors[a].oval_w.total_cmp(&factors[b].oval_w).then(a.cmp(&b)));
    let mut preferred = vec![None; factors.len()];
    for (rank, &id) in ranked.iter().enumerate() {
        let p = rank * classes / ranked.len();
        preferred[id] = Some([p, (p + 1) % classes]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..samples.len())
        .filter(|&i| {
            let s = &samples[i];
            let pref = preferred.get(s.identity_id).copied().flatten();
            let (Some(pref), Some(label)) = (pref, s.expression_label) else {
                return true;
            };
            let draw: f64 = rng.random();
            pref.contains(&label) || draw < keep_other
        })
        .collect())
}

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{format, Error, Result};

/// 8-bit grayscale image, row-major. Pixel `(i, j)` covers
/// `[i, i+1) × [j, j+1)` with its center at `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(format(format!(
                "{} pixels do not fill a {width}×{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    /// Rounds and clamps real intensities into an image.
    pub fn from_f64(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let px = values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        Self::new(width, height, px)
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(format("truncated PGM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(format(format!("not a binary PGM (magic `{}`)", fields[0])));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| format(format!("bad PGM header field `{s}`")))
        };
        let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if max != 255 {
            return Err(format(format!("unsupported PGM maxval {max}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let raster = bytes
            .get(pos..pos + w * h)
            .ok_or_else(|| format(format!("PGM raster shorter than {w}×{h}")))?;
        Self::new(w, h, raster.to_vec())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        f.write_all(&self.encode_pgm())
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::decode_pgm(&bytes).map_err(|e| format(format!("{}: {e}", path.display())))
    }
}

/// Bilinear sample of a `w×h` real image at continuous position `(x, y)`
/// under the pixel-center convention. Taps outside the image read as 0.
pub fn bilinear(img: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let ax = fx - x0;
    let ay = fy - y0;
    let tap = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            img[yi as usize * w + xi as usize]
        }
    };
    (1.0 - ay) * ((1.0 - ax) * tap(x0, y0) + ax * tap(x0 + 1.0, y0))
        + ay * ((1.0 - ax) * tap(x0, y0 + 1.0) + ax * tap(x0 + 1.0, y0 + 1.0))
}

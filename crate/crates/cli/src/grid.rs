//! Side-by-side image grids for qualitative output.

use ifgan::data::GrayImage;
use ifgan::Result;

/// Pixels between panels.
pub const GUTTER: usize = 2;
pub const GUTTER_VALUE: u8 = 255;

/// Lays out rows of equally sized panels with a gutter between panels and
/// between rows.
pub fn compose(rows: &[Vec<GrayImage>]) -> Result<GrayImage> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| ifgan::Error::Config("a grid needs at least one panel".into()))?;
    let (pw, ph) = (first.width, first.height);
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) || rows.iter().flatten().any(|p| p.width != pw || p.height != ph) {
        return Err(ifgan::Error::Config("grid panels must share one size and rows one length".into()));
    }
    let width = cols * pw + (cols - 1) * GUTTER;
    let height = rows.len() * ph + (rows.len() - 1) * GUTTER;
    let mut pixels = vec![GUTTER_VALUE; width * height];
    for (r, row) in rows.iter().enumerate() {
        for (c, panel) in row.iter().enumerate() {
            let (x0, y0) = (c * (pw + GUTTER), r * (ph + GUTTER));
            for y in 0..ph {
                let dst = (y0 + y) * width + x0;
                pixels[dst..dst + pw].copy_from_slice(&panel.pixels[y * pw..(y + 1) * pw]);
            }
        }
    }
    GrayImage::new(width, height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_row_of_four() {
        let m = 8;
        let row: Vec<GrayImage> = (0..4).map(|v| GrayImage::filled(m, m, v * 10)).collect();
        let g = compose(&[row]).unwrap();
        assert_eq!(g.width, 4 * m + 3 * GUTTER);
        assert_eq!(g.height, m);
        assert_eq!(g.get(0, 0), 0);
        assert_eq!(g.get(m, 0), GUTTER_VALUE);
        assert_eq!(g.get(m + GUTTER, 3), 10);
        assert_eq!(g.get(3 * (m + GUTTER), 7), 30);
    }

    #[test]
    fn rows_are_separated() {
        let row = vec![GrayImage::filled(4, 4, 0); 2];
        let g = compose(&[row.clone(), row]).unwrap();
        assert_eq!(g.height, 2 * 4 + GUTTER);
        assert_eq!(g.get(0, 4), GUTTER_VALUE);
        assert_eq!(g.get(0, 4 + GUTTER), 0);
    }

    #[test]
    fn mismatched_panels_are_rejected() {
        assert!(compose(&[vec![GrayImage::filled(4, 4, 0), GrayImage::filled(5, 4, 0)]]).is_err());
        assert!(compose(&[]).is_err());
    }
}

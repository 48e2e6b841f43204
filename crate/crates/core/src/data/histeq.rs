use super::GrayImage;

/// Histogram equalization by CDF remapping:
/// `v' = round(255·(cdf(v) − cdf_min) / (count − cdf_min))`, where `cdf_min`
/// is the cumulative count at the darkest occupied level. A constant image
/// maps to all zeros.
pub fn hist_equalize(img: &GrayImage) -> GrayImage {
    let mut hist = [0usize; 256];
    for &p in &img.pixels {
        hist[usize::from(p)] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let count = img.pixels.len();
    let cdf_min = hist.iter().position(|&h| h > 0).map_or(0, |i| cdf[i]);
    let denom = count - cdf_min;
    let lut: Vec<u8> = cdf
        .iter()
        .map(|&c| {
            if denom == 0 {
                0
            } else {
                (255.0 * c.saturating_sub(cdf_min) as f64 / denom as f64).round() as u8
            }
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| lut[usize::from(p)]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_level_image_spreads_to_extremes() {
        let img = GrayImage::new(2, 2, vec![0, 0, 255, 255]).unwrap();
        assert_eq!(hist_equalize(&img).pixels, vec![0, 0, 255, 255]);
        let img = GrayImage::new(4, 1, vec![10, 20, 20, 30]).unwrap();
        // cdf = 1, 3, 4; cdf_min = 1; denominators 3.
        assert_eq!(hist_equalize(&img).pixels, vec![0, 170, 170, 255]);
    }

    #[test]
    fn constant_image_maps_to_zero() {
        let img = GrayImage::filled(5, 3, 77);
        assert!(hist_equalize(&img).pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn uniform_histogram_is_nearly_unchanged() {
        let img = GrayImage::new(16, 16, (0..=255).collect()).unwrap();
        let out = hist_equalize(&img);
        for (a, b) in img.pixels.iter().zip(&out.pixels) {
            assert!((i32::from(*a) - i32::from(*b)).abs() <= 1);
        }
    }
}

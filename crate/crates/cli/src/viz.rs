//! Heatmap rendering: channel-mean panels, min-max normalization, a small
//! hand-rolled colormap, nearest-neighbor upsampling.

use grunet_core::Result;
use ndarray::Array2;
use std::path::Path;

/// Piecewise-linear dark-purple-to-yellow gradient.
const STOPS: [(f64, [f64; 3]); 5] = [
    (0.00, [13.0, 8.0, 135.0]),
    (0.25, [126.0, 3.0, 168.0]),
    (0.50, [203.0, 71.0, 119.0]),
    (0.75, [248.0, 149.0, 64.0]),
    (1.00, [240.0, 249.0, 33.0]),
];

pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    for w in STOPS.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            let mut px = [0u8; 3];
            for i in 0..3 {
                px[i] = (c0[i] + f * (c1[i] - c0[i])).round() as u8;
            }
            return px;
        }
    }
    [240, 249, 33]
}

/// Min-max normalize to [0,1]; constant panels map to 0.
pub fn normalize(panel: &Array2<f64>) -> Array2<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in panel.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return Array2::zeros(panel.dim());
    }
    panel.mapv(|v| (v - lo) / (hi - lo))
}

/// Nearest-neighbor resize to (out_h, out_w).
pub fn resize_nearest(panel: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = panel.dim();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let sy = (y * h / out_h).min(h - 1);
        let sx = (x * w / out_w).min(w - 1);
        panel[(sy, sx)]
    })
}

pub fn save_colormapped(panel: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = panel.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(x as u32, y as u32, image::Rgb(colormap(panel[(y, x)])));
        }
    }
    img.save(path)?;
    Ok(())
}

/// 16-bit grayscale probability map, value = round(p * 65535).
pub fn save_prob_png(prob: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = prob.dim();
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (prob[(y, x)].clamp(0.0, 1.0) * 65535.0).round() as u16;
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Binary mask at the given threshold, pixels in {0, 255}.
pub fn save_mask_png(prob: &Array2<f64>, thr: f64, path: &Path) -> Result<()> {
    let (h, w) = prob.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = if prob[(y, x)] > thr { 255u8 } else { 0 };
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path)?;
    Ok(())
}

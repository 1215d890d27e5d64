//! Dataset layout, loading, deterministic splitting, batching and the
//! synthetic blob generator used by the desk-scale suites.
//!
//! On-disk layout: `root/images/*.png|tif` and `root/masks/*.png|tif` with
//! matching basenames; masks are 8-bit grayscale, binarized at >127.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// `(H, W, 3)`, scaled to [0, 1].
    pub image: Array3<f64>,
    /// `(H, W)`, values in {0, 1}.
    pub mask: Array2<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.7,
            val_frac: 0.2,
            test_frac: 0.1,
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        if self.train_frac < 0.0 || self.val_frac < 0.0 || self.test_frac < 0.0 {
            return Err(Error::Config("split fractions must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

fn load_image_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[(y as usize, x as usize, c)] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

fn load_mask(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let mut out = Array2::zeros((h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        out[(y as usize, x as usize)] = if px.0[0] > 127 { 1.0 } else { 0.0 };
    }
    Ok(out)
}

fn index_dir(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "tif" | "tiff") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("unreadable file name: {}", path.display())))?;
        map.insert(stem.to_string(), path.clone());
    }
    Ok(map)
}

/// Load every image/mask pair under `root`, sorted by id.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let images = index_dir(&root.join("images"))
        .map_err(|e| Error::Data(format!("cannot index {}/images: {e}", root.display())))?;
    let masks = index_dir(&root.join("masks"))
        .map_err(|e| Error::Data(format!("cannot index {}/masks: {e}", root.display())))?;
    let mut samples = Vec::with_capacity(images.len());
    for (id, img_path) in &images {
        let mask_path = masks
            .get(id)
            .ok_or_else(|| Error::Data(format!("missing mask for {id:?}")))?;
        let image = load_image_rgb(img_path)?;
        let mask = load_mask(mask_path)?;
        if image.dim().0 != mask.dim().0 || image.dim().1 != mask.dim().1 {
            return Err(Error::shape_in(
                format!("{}x{}", image.dim().0, image.dim().1),
                format!("{}x{}", mask.dim().0, mask.dim().1),
                format!("mask for {id:?}"),
            ));
        }
        samples.push(Sample {
            id: id.clone(),
            image,
            mask,
        });
    }
    Ok(samples)
}

/// Load a dataset with predefined `train/` and `test/` sub-directories.
pub fn load_predefined(root: &Path) -> Result<(Vec<Sample>, Vec<Sample>)> {
    Ok((
        load_dataset(&root.join("train"))?,
        load_dataset(&root.join("test"))?,
    ))
}

/// Seeded shuffle, then contiguous partition with rounded sizes; the test
/// split absorbs the remainder.
pub fn split(
    samples: &[Sample],
    spec: &SplitSpec,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    spec.validate()?;
    let n = samples.len();
    if n < 3 {
        return Err(Error::Data(format!(
            "need at least 3 samples to split, have {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let n_train = (n as f64 * spec.train_frac).round() as usize;
    let n_val = (n as f64 * spec.val_frac).round() as usize;
    let n_val = n_val.min(n - n_train);
    let take = |r: std::ops::Range<usize>| -> Vec<Sample> {
        order[r].iter().map(|&i| samples[i].clone()).collect()
    };
    Ok((
        take(0..n_train),
        take(n_train..n_train + n_val),
        take(n_train + n_val..n),
    ))
}

/// Ellipse-blob synthetic dataset: bright blurred "nuclei" on a dark
/// textured background, masks are the exact ellipse supports.
pub fn make_synthetic(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let mut mask = Array2::<f64>::zeros((size, size));
        let mut intensity = Array2::<f64>::zeros((size, size));
        let n_blobs = rng.gen_range(3..=6);
        for _ in 0..n_blobs {
            let cx = rng.gen_range(0.15..0.85) * size as f64;
            let cy = rng.gen_range(0.15..0.85) * size as f64;
            let rx = rng.gen_range(0.08..0.18) * size as f64;
            let ry = rng.gen_range(0.08..0.18) * size as f64;
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (st, ct) = theta.sin_cos();
            for y in 0..size {
                for x in 0..size {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    let u = (dx * ct + dy * st) / rx;
                    let v = (-dx * st + dy * ct) / ry;
                    let d2 = u * u + v * v;
                    if d2 <= 1.0 {
                        mask[(y, x)] = 1.0;
                    }
                    // blurred-edge profile centered on the support boundary,
                    // so the intensity midpoint coincides with the mask edge
                    let val = 1.0 / (1.0 + (8.0 * (d2 - 1.0)).exp());
                    if val > intensity[(y, x)] {
                        intensity[(y, x)] = val;
                    }
                }
            }
        }
        let mut image = Array3::<f64>::zeros((size, size, 3));
        for y in 0..size {
            for x in 0..size {
                let noise = rng.gen_range(-0.05..0.05);
                let base = 0.12 + 0.75 * intensity[(y, x)];
                for c in 0..3 {
                    let tint = match c {
                        0 => 1.0,
                        1 => 0.85,
                        _ => 0.95,
                    };
                    image[(y, x, c)] = (base * tint + noise).clamp(0.0, 1.0);
                }
            }
        }
        samples.push(Sample {
            id: format!("synthetic_{i:03}"),
            image,
            mask,
        });
    }
    samples
}

/// Stack samples into `(B, H, W, 3)` image and `(B, H, W, 1)` mask batches.
pub fn make_batch<F: Scalar>(samples: &[&Sample]) -> (ArrayD<F>, ArrayD<F>) {
    assert!(!samples.is_empty());
    let (h, w) = samples[0].mask.dim();
    let b = samples.len();
    let mut images = ArrayD::<F>::zeros(IxDyn(&[b, h, w, 3]));
    let mut masks = ArrayD::<F>::zeros(IxDyn(&[b, h, w, 1]));
    for (bi, s) in samples.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    images[[bi, y, x, c]] = F::of_f64(s.image[(y, x, c)]);
                }
                masks[[bi, y, x, 0]] = F::of_f64(s.mask[(y, x)]);
            }
        }
    }
    (images, masks)
}

/// Write a dataset to the standard directory layout as 8-bit PNGs.
pub fn save_dataset(samples: &[Sample], root: &Path) -> Result<()> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    std::fs::create_dir_all(&images_dir)?;
    std::fs::create_dir_all(&masks_dir)?;
    for s in samples {
        let (h, w) = s.mask.dim();
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [
                    (s.image[(y, x, 0)] * 255.0).round() as u8,
                    (s.image[(y, x, 1)] * 255.0).round() as u8,
                    (s.image[(y, x, 2)] * 255.0).round() as u8,
                ];
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img.save(images_dir.join(format!("{}.png", s.id)))?;
        let mut m = image::GrayImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let v = if s.mask[(y, x)] > 0.5 { 255 } else { 0 };
                m.put_pixel(x as u32, y as u32, image::Luma([v]));
            }
        }
        m.save(masks_dir.join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn split_rounds_fractions_and_test_absorbs_remainder() {
        let spec = SplitSpec::default();
        let samples = make_synthetic(50, 8, 1);
        let (train, val, test) = split(&samples, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (35, 10, 5));
        let samples = make_synthetic(10, 8, 1);
        let (train, val, test) = split(&samples, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (7, 2, 1));
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let samples = make_synthetic(20, 8, 2);
        let spec = SplitSpec::default();
        let (t1, v1, s1) = split(&samples, &spec).unwrap();
        let (t2, v2, s2) = split(&samples, &spec).unwrap();
        let ids = |xs: &[Sample]| xs.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&t1), ids(&t2));
        assert_eq!(ids(&v1), ids(&v2));
        assert_eq!(ids(&s1), ids(&s2));
        let all: BTreeSet<String> = ids(&t1)
            .into_iter()
            .chain(ids(&v1))
            .chain(ids(&s1))
            .collect();
        assert_eq!(all.len(), 20);
        let other = SplitSpec {
            seed: 43,
            ..SplitSpec::default()
        };
        let (t3, _, _) = split(&samples, &other).unwrap();
        assert_ne!(ids(&t1), ids(&t3));
    }

    #[test]
    fn bad_fractions_and_tiny_datasets_are_rejected() {
        let samples = make_synthetic(10, 8, 3);
        let bad = SplitSpec {
            train_frac: 0.8,
            val_frac: 0.3,
            test_frac: 0.1,
            seed: 1,
        };
        assert!(split(&samples, &bad).is_err());
        let two = make_synthetic(2, 8, 3);
        assert!(split(&two, &SplitSpec::default()).is_err());
    }

    #[test]
    fn synthetic_samples_are_valid_and_seeded() {
        let a = make_synthetic(4, 32, 7);
        let b = make_synthetic(4, 32, 7);
        let c = make_synthetic(4, 32, 8);
        for (s, s2) in a.iter().zip(&b) {
            assert_eq!(s.image.dim(), (32, 32, 3));
            assert_eq!(s.mask.dim(), (32, 32));
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.mask.iter().all(|v| *v == 0.0 || *v == 1.0));
            let fg = s.mask.sum();
            assert!(fg > 0.0 && fg < (32 * 32) as f64);
            assert_eq!(s.image, s2.image);
            assert_eq!(s.mask, s2.mask);
        }
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn synthetic_foreground_is_brighter_than_background() {
        for s in make_synthetic(6, 32, 9) {
            let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0.0, 0.0, 0.0);
            for y in 0..32 {
                for x in 0..32 {
                    let lum = s.image[(y, x, 0)];
                    if s.mask[(y, x)] == 1.0 {
                        fg += lum;
                        nf += 1.0;
                    } else {
                        bg += lum;
                        nb += 1.0;
                    }
                }
            }
            assert!(fg / nf > bg / nb + 0.1);
        }
    }

    #[test]
    fn batches_stack_in_order() {
        let samples = make_synthetic(3, 16, 10);
        let refs: Vec<&Sample> = samples.iter().collect();
        let (images, masks) = make_batch::<f64>(&refs);
        assert_eq!(images.shape(), &[3, 16, 16, 3]);
        assert_eq!(masks.shape(), &[3, 16, 16, 1]);
        for (bi, s) in samples.iter().enumerate() {
            assert_eq!(images[[bi, 5, 7, 1]], s.image[(5, 7, 1)]);
            assert_eq!(masks[[bi, 5, 7, 0]], s.mask[(5, 7)]);
        }
    }

    #[test]
    fn save_and_load_round_trip_through_png() {
        let samples = make_synthetic(3, 16, 11);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&samples, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        for (orig, back) in samples.iter().zip(&loaded) {
            assert_eq!(orig.id, back.id);
            assert_eq!(orig.mask, back.mask);
            for (a, b) in orig.image.iter().zip(back.image.iter()) {
                // 8-bit quantization
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn missing_mask_is_reported_by_id() {
        let samples = make_synthetic(2, 8, 12);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&samples, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("masks/synthetic_001.png")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("synthetic_001"), "{err}");
    }

    #[test]
    fn mismatched_mask_shape_is_an_error() {
        let samples = make_synthetic(1, 8, 13);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&samples, dir.path()).unwrap();
        let small = image::GrayImage::new(4, 4);
        small
            .save(dir.path().join("masks/synthetic_000.png"))
            .unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn predefined_layout_loads_both_splits() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&make_synthetic(3, 8, 14), &dir.path().join("train")).unwrap();
        save_dataset(&make_synthetic(2, 8, 15), &dir.path().join("test")).unwrap();
        let (train, test) = load_predefined(dir.path()).unwrap();
        assert_eq!((train.len(), test.len()), (3, 2));
    }
}

//! Dataset loading, normalization, deterministic splitting, and a synthetic
//! ultrasound-like generator for desk-scale runs.
//!
//! On-disk layout follows the public breast-ultrasound convention: each
//! sample is a pair `<id>.png` / `<id>_mask.png`. Images are converted to
//! grayscale luminance, min-max normalized per image (constant images map
//! to zero), and bilinearly resized; masks are resized nearest-neighbor and
//! re-binarized so they stay strictly binary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::postprocess::BinaryMask;
use crate::tensor::rten;
use crate::tensor::{DType, Tensor};

/// Default preprocessing resolution.
pub const DEFAULT_SIZE: usize = 256;

/// Provenance of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleSource {
    Real,
    Synthetic,
}

/// One image/mask pair, preprocessed.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// 1×H×W grayscale image in [0,1].
    pub image: Tensor,
    pub mask: BinaryMask,
    pub source: SampleSource,
}

/// Per-file problems encountered during a partial load.
#[derive(Clone, Debug)]
pub enum LoadIssue {
    MissingMask { id: String },
    CorruptImage { path: PathBuf, message: String },
}

impl fmt::Display for LoadIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadIssue::MissingMask { id } => write!(f, "missing mask for '{id}'"),
            LoadIssue::CorruptImage { path, message } => {
                write!(f, "corrupt image {}: {message}", path.display())
            }
        }
    }
}

/// Result of loading a dataset directory; loads are partial on error.
#[derive(Debug, Default)]
pub struct DatasetLoad {
    pub samples: Vec<Sample>,
    pub issues: Vec<LoadIssue>,
}

/// Split fractions and seed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.30,
            val_fraction_of_train: 0.30,
            seed: 0,
        }
    }
}

/// Disjoint, exhaustive partitions of a dataset.
#[derive(Debug)]
pub struct SplitSets {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Ids per split, for the dataset manifest file.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Errors from splitting.
#[derive(Clone, Debug, PartialEq)]
pub enum DataError {
    TooFewSamples { got: usize, need: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::TooFewSamples { got, need } => {
                write!(f, "need at least {need} samples to split, got {got}")
            }
        }
    }
}

impl std::error::Error for DataError {}

/// Min-max normalization to [0,1]; constant images map to all zeros.
pub fn normalize_minmax(image: &Tensor) -> Tensor {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in image.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        return Tensor::zeros(image.shape(), image.dtype());
    }
    let range = hi - lo;
    Tensor::from_fn(image.shape(), image.dtype(), |i| {
        (image.data()[i] - lo) / range
    })
}

fn luma_tensor(img: &image::DynamicImage) -> Tensor {
    let luma = img.to_luma32f();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let raw = luma.as_raw();
    Tensor::from_fn(&[1, h, w], DType::F64, |i| raw[i] as f64)
}

/// Preprocesses an already-decoded image/mask pair to `size`×`size`.
pub fn preprocess_pair(
    image: &image::DynamicImage,
    mask: &image::DynamicImage,
    size: usize,
) -> (Tensor, BinaryMask) {
    let img = normalize_minmax(&luma_tensor(image))
        .resize_bilinear(size, size)
        .expect("image resize");
    let mask_t = luma_tensor(mask)
        .resize_nearest(size, size)
        .expect("mask resize");
    // Nearest resize of a binary map stays binary; re-binarize regardless.
    let mask = BinaryMask::from_fn(size, size, |y, x| mask_t.data()[y * size + x] > 0.5);
    (img, mask)
}

/// Loads every `<id>.png` / `<id>_mask.png` pair under `dir`. Problems are
/// collected per file; the returned sample list is sorted by id.
pub fn load_dataset(dir: &Path, size: usize) -> std::io::Result<DatasetLoad> {
    let mut ids = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name.strip_suffix(".png") else {
            continue;
        };
        if stem.ends_with("_mask") {
            continue;
        }
        ids.insert(stem.to_string(), path.clone());
    }
    let mut load = DatasetLoad::default();
    for (id, img_path) in ids {
        let mask_path = dir.join(format!("{id}_mask.png"));
        if !mask_path.exists() {
            load.issues.push(LoadIssue::MissingMask { id });
            continue;
        }
        let image = match image::open(&img_path) {
            Ok(i) => i,
            Err(e) => {
                load.issues.push(LoadIssue::CorruptImage {
                    path: img_path,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let mask = match image::open(&mask_path) {
            Ok(m) => m,
            Err(e) => {
                load.issues.push(LoadIssue::CorruptImage {
                    path: mask_path,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let (img_t, mask_b) = preprocess_pair(&image, &mask, size);
        load.samples.push(Sample {
            id,
            image: img_t,
            mask: mask_b,
            source: SampleSource::Real,
        });
    }
    Ok(load)
}

/// Seeded shuffle then partition. The held-out sizes floor their fractions
/// but every partition keeps at least one sample.
pub fn split(samples: Vec<Sample>, spec: &SplitSpec) -> Result<SplitSets, DataError> {
    let n = samples.len();
    if n < 3 {
        return Err(DataError::TooFewSamples { got: n, need: 3 });
    }
    let mut samples = samples;
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let test_n = ((n as f64 * spec.test_fraction).floor() as usize).clamp(1, n - 2);
    let rem = n - test_n;
    let val_n = ((rem as f64 * spec.val_fraction_of_train).floor() as usize).clamp(1, rem - 1);
    let mut by_index: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let take = |idxs: &[usize], store: &mut Vec<Option<Sample>>| -> Vec<Sample> {
        idxs.iter()
            .map(|&i| store[i].take().expect("each index taken once"))
            .collect()
    };
    let test = take(&order[..test_n], &mut by_index);
    let val = take(&order[test_n..test_n + val_n], &mut by_index);
    let train = take(&order[test_n + val_n..], &mut by_index);
    Ok(SplitSets { train, val, test })
}

impl SplitSets {
    pub fn manifest(&self, spec: &SplitSpec) -> DatasetManifest {
        let ids = |v: &[Sample]| v.iter().map(|s| s.id.clone()).collect();
        DatasetManifest {
            seed: spec.seed,
            test_fraction: spec.test_fraction,
            val_fraction_of_train: spec.val_fraction_of_train,
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }
}

/// 3×3 box blur, repeated.
fn box_blur(field: &mut Vec<f64>, h: usize, w: usize, passes: usize) {
    let mut tmp = vec![0.0; h * w];
    for _ in 0..passes {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny >= 0 && ny < h as i64 && nx >= 0 && nx < w as i64 {
                            acc += field[ny as usize * w + nx as usize];
                            cnt += 1.0;
                        }
                    }
                }
                tmp[y * w + x] = acc / cnt;
            }
        }
        std::mem::swap(field, &mut tmp);
    }
}

/// One to three overlapping ellipses; returns the exact union mask.
fn draw_lesion(rng: &mut ChaCha8Rng, size: usize) -> (BinaryMask, f64) {
    let s = size as f64;
    let count = rng.gen_range(1..=3usize);
    let mut ellipses = Vec::with_capacity(count);
    for _ in 0..count {
        let cx = rng.gen_range(0.25 * s..0.75 * s);
        let cy = rng.gen_range(0.25 * s..0.75 * s);
        let a = rng.gen_range(0.08 * s..0.28 * s);
        let b = rng.gen_range(0.08 * s..0.28 * s);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        ellipses.push((cx, cy, a, b, theta.cos(), theta.sin()));
    }
    let mask = BinaryMask::from_fn(size, size, |y, x| {
        ellipses.iter().any(|&(cx, cy, a, b, ct, st)| {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let u = (dx * ct + dy * st) / a;
            let v = (-dx * st + dy * ct) / b;
            u * u + v * v <= 1.0
        })
    });
    let frac = mask.foreground_area() as f64 / (size * size) as f64;
    (mask, frac)
}

/// Synthetic ultrasound-like samples: a dark elliptical lesion on a
/// speckled background. Deterministic per `(seed, index)`; lesion masks
/// always cover between 0.5% and 40% of the frame (parameters are redrawn
/// until they do).
pub fn generate_synthetic(count: usize, size: usize, seed: u64) -> Vec<Sample> {
    assert!(size >= 32, "synthetic images need size >= 32");
    (0..count)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64 + 1);
            let (mask, _) = std::iter::repeat_with(|| draw_lesion(&mut rng, size))
                .take(1000)
                .find(|(_, frac)| (0.005..=0.4).contains(frac))
                .expect("lesion sampling converges");
            let base = rng.gen_range(0.55..0.75);
            let dip = rng.gen_range(0.2..0.5);
            let mut speckle: Vec<f64> = (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
            box_blur(&mut speckle, size, size, 2);
            let mut img: Vec<f64> = (0..size * size)
                .map(|i| {
                    let tone = base * (1.0 + 0.45 * (speckle[i] - 0.5));
                    if mask.data()[i] == 1 {
                        tone * (1.0 - dip)
                    } else {
                        tone
                    }
                })
                .collect();
            box_blur(&mut img, size, size, 1);
            let image = Tensor::from_fn(&[1, size, size], DType::F64, |i| img[i].clamp(0.0, 1.0));
            Sample {
                id: format!("synth_{index:04}"),
                image,
                mask,
                source: SampleSource::Synthetic,
            }
        })
        .collect()
}

/// Writes a sample pair as 8-bit grayscale PNGs (`<id>.png`,
/// `<id>_mask.png`; mask foreground is 255).
pub fn save_sample_pngs(sample: &Sample, dir: &Path) -> std::io::Result<()> {
    let (h, w) = sample.image.spatial().expect("sample image");
    let img: Vec<u8> = sample
        .image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::GrayImage::from_raw(w as u32, h as u32, img)
        .expect("image buffer")
        .save(dir.join(format!("{}.png", sample.id)))
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    save_mask_png(&sample.mask, &dir.join(format!("{}_mask.png", sample.id)))
}

/// Writes a mask as an 8-bit grayscale PNG, foreground 255.
pub fn save_mask_png(mask: &BinaryMask, path: &Path) -> std::io::Result<()> {
    let (h, w) = mask.dims();
    let buf: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    image::GrayImage::from_raw(w as u32, h as u32, buf)
        .expect("mask buffer")
        .save(path)
        .map_err(|e| std::io::Error::other(e.to_string()))
}

/// Reads a mask PNG (any gray level above half counts as foreground).
pub fn load_mask_png(path: &Path) -> std::io::Result<BinaryMask> {
    let img = image::open(path).map_err(|e| std::io::Error::other(e.to_string()))?;
    let luma = img.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let raw = luma.as_raw();
    Ok(BinaryMask::from_fn(h, w, |y, x| raw[y * w + x] > 127))
}

/// RTEN cache of a split: `<id>.image` and `<id>.mask` records.
pub fn save_split_cache(samples: &[Sample], w: &mut impl Write) -> std::io::Result<()> {
    for s in samples {
        rten::write_named(w, &format!("{}.image", s.id), &s.image)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        rten::write_named(w, &format!("{}.mask", s.id), &s.mask.to_prob())
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    Ok(())
}

/// Reads a split cache written by [`save_split_cache`].
pub fn load_split_cache(r: &mut impl Read) -> std::io::Result<Vec<Sample>> {
    let entries =
        rten::read_archive(r).map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut images: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut masks: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, t) in entries {
        if let Some(id) = name.strip_suffix(".image") {
            images.insert(id.to_string(), t);
        } else if let Some(id) = name.strip_suffix(".mask") {
            masks.insert(id.to_string(), t);
        }
    }
    let mut out = Vec::new();
    for (id, image) in images {
        let Some(mask_t) = masks.remove(&id) else {
            continue;
        };
        let (h, w) = mask_t.spatial().expect("mask dims");
        let mask = BinaryMask::from_fn(h, w, |y, x| mask_t.data()[y * w + x] > 0.5);
        out.push(Sample {
            id,
            image,
            mask,
            source: SampleSource::Real,
        });
    }
    Ok(out)
}

//! Datasets: in-memory feature/label storage, the synthetic blob generator
//! and the IDX binary reader used for MNIST-style files.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A labelled classification dataset. Features are stored row-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub n_features: usize,
    pub n_classes: usize,
    /// `n_samples * n_features` values, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Keep only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        if n < self.n_samples() {
            self.features.truncate(n * self.n_features);
            self.labels.truncate(n);
        }
    }

    /// New dataset holding the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            n_features: self.n_features,
            n_classes: self.n_classes,
            features,
            labels,
        }
    }
}

/// Gaussian blobs, one per class, pairwise mean distance `separation`,
/// unit covariance. Classes are interleaved so any prefix stays balanced.
///
/// Mean placement: on a circle in the first two feature dimensions when
/// possible (adjacent means exactly `separation` apart), on a line for
/// one-dimensional features.
pub fn gen_synthetic(
    n_classes: usize,
    n_features: usize,
    n_samples: usize,
    separation: f64,
    rng: RngStream,
) -> Result<Dataset> {
    if n_classes == 0 || n_features == 0 || n_samples == 0 {
        return Err(Error::invalid("synthetic dataset sizes must be positive"));
    }
    let means = class_means(n_classes, n_features, separation);
    let mut r = rng.rng();
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % n_classes;
        for f in 0..n_features {
            let noise: f64 = StandardNormal.sample(&mut r);
            features.push(means[class][f] + noise);
        }
        labels.push(class as u32);
    }
    Ok(Dataset {
        n_features,
        n_classes,
        features,
        labels,
    })
}

fn class_means(n_classes: usize, n_features: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut means = vec![vec![0.0; n_features]; n_classes];
    if n_classes == 1 || separation == 0.0 {
        return means;
    }
    if n_features == 1 {
        for (c, m) in means.iter_mut().enumerate() {
            m[0] = separation * c as f64;
        }
    } else {
        // Circle in the first two dims: adjacent class means are exactly
        // `separation` apart.
        let radius = separation / (2.0 * (std::f64::consts::PI / n_classes as f64).sin());
        for (c, m) in means.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / n_classes as f64;
            m[0] = radius * angle.cos();
            m[1] = radius * angle.sin();
        }
    }
    means
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Load an IDX image/label file pair (big-endian, MNIST container format).
/// Pixels are scaled to `[0, 1]` by dividing by 255.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let fmt = |path: &Path, offset: u64, what: &str| Error::Format {
        path: path.to_path_buf(),
        offset,
        what: what.to_string(),
    };

    let img_magic = read_be_u32(&images, 0).ok_or_else(|| fmt(images_path, 0, "truncated header"))?;
    if img_magic != IDX_IMAGES_MAGIC {
        return Err(fmt(images_path, 0, &format!("bad magic 0x{img_magic:08x}, want 0x{IDX_IMAGES_MAGIC:08x}")));
    }
    let n = read_be_u32(&images, 4).ok_or_else(|| fmt(images_path, 4, "truncated header"))? as usize;
    let rows = read_be_u32(&images, 8).ok_or_else(|| fmt(images_path, 8, "truncated header"))? as usize;
    let cols = read_be_u32(&images, 12).ok_or_else(|| fmt(images_path, 12, "truncated header"))? as usize;
    let pixels = n * rows * cols;
    if images.len() != 16 + pixels {
        return Err(fmt(images_path, images.len().min(16 + pixels) as u64, &format!("expected {} pixel bytes, file holds {}", pixels, images.len().saturating_sub(16))));
    }

    let lbl_magic = read_be_u32(&labels, 0).ok_or_else(|| fmt(labels_path, 0, "truncated header"))?;
    if lbl_magic != IDX_LABELS_MAGIC {
        return Err(fmt(labels_path, 0, &format!("bad magic 0x{lbl_magic:08x}, want 0x{IDX_LABELS_MAGIC:08x}")));
    }
    let n_lbl = read_be_u32(&labels, 4).ok_or_else(|| fmt(labels_path, 4, "truncated header"))? as usize;
    if n_lbl != n {
        return Err(fmt(labels_path, 4, &format!("label count {n_lbl} does not match image count {n}")));
    }
    if labels.len() != 8 + n {
        return Err(fmt(labels_path, labels.len().min(8 + n) as u64, &format!("expected {} label bytes, file holds {}", n, labels.len().saturating_sub(8))));
    }

    let features: Vec<f64> = images[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<u32> = labels[8..].iter().map(|&b| b as u32).collect();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    Ok(Dataset {
        n_features: rows * cols,
        n_classes,
        features,
        labels,
    })
}

fn read_be_u32(buf: &[u8], offset: usize) -> Option<u32> {
    let bytes = buf.get(offset..offset + 4)?;
    Some(u32::from_be_bytes(bytes.try_into().unwrap()))
}

/// Write a dataset as an IDX image/label pair. Features are clamped to
/// `[0, 1]` and quantized to bytes; the feature count must be `rows * cols`.
pub fn write_idx(dataset: &Dataset, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    if rows * cols != dataset.n_features {
        return Err(Error::invalid(format!(
            "rows*cols = {} does not match feature width {}",
            rows * cols,
            dataset.n_features
        )));
    }
    let n = dataset.n_samples();
    let mut images = Vec::with_capacity(16 + n * rows * cols);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in &dataset.features {
        images.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &dataset.labels {
        labels.push(l as u8);
    }
    fs::write(images_path, images).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, labels).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

/// Synthetic image-like classification task in IDX geometry: per-class pixel
/// prototypes with per-sample intensity scaling, pixel noise and a small
/// label-noise floor.
///
/// Prototypes come from `proto_rng` and samples from `sample_rng`, so a
/// train and a test set drawn with the same `proto_rng` but different
/// sample streams share one class structure.
pub fn gen_prototype_images(
    n_classes: usize,
    rows: usize,
    cols: usize,
    n_samples: usize,
    noise_sigma: f64,
    label_noise: f64,
    proto_rng: RngStream,
    sample_rng: RngStream,
) -> Result<Dataset> {
    if n_classes == 0 || rows * cols == 0 || n_samples == 0 {
        return Err(Error::invalid("prototype dataset sizes must be positive"));
    }
    let n_features = rows * cols;
    let mut pr = proto_rng.rng();
    let prototypes: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..n_features)
                .map(|_| if pr.random::<f64>() < 0.25 { 0.6 + 0.4 * pr.random::<f64>() } else { 0.0 })
                .collect()
        })
        .collect();
    let mut r = sample_rng.rng();
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % n_classes;
        let intensity: f64 = 0.6 + 0.4 * r.random::<f64>();
        for f in 0..n_features {
            let noise: f64 = StandardNormal.sample(&mut r);
            features.push((prototypes[class][f] * intensity + noise_sigma * noise).clamp(0.0, 1.0));
        }
        let label = if r.random::<f64>() < label_noise {
            r.random_range(0..n_classes) as u32
        } else {
            class as u32
        };
        labels.push(label);
    }
    Ok(Dataset {
        n_features,
        n_classes,
        features,
        labels,
    })
}

/// Image task with two learning timescales, echoing the confusable-digit
/// structure of handwritten data: every class has a strong prototype
/// (learned in a few rounds), but the last two classes share one prototype
/// and differ only by a faint distinguishing mark that gets resolved
/// slowly. A small dense net shoots to roughly `(K-1)/K` accuracy quickly,
/// then grinds out the confusable pair over many rounds.
#[allow(clippy::too_many_arguments)]
pub fn gen_two_timescale_images(
    n_classes: usize,
    rows: usize,
    cols: usize,
    n_samples: usize,
    noise_sigma: f64,
    mark_pixels: usize,
    mark_contrast: f64,
    proto_rng: RngStream,
    sample_rng: RngStream,
) -> Result<Dataset> {
    if n_classes < 2 || rows * cols == 0 || n_samples == 0 {
        return Err(Error::invalid("two-timescale dataset needs >= 2 classes and data"));
    }
    let n_features = rows * cols;
    let mut pr = proto_rng.rng();
    // One strong prototype per class; the last class reuses the previous
    // class's prototype.
    let mut prototypes: Vec<Vec<f64>> = (0..n_classes - 1)
        .map(|_| {
            (0..n_features)
                .map(|f| {
                    let _ = f;
                    if pr.random::<f64>() < 0.25 {
                        0.6 + 0.4 * pr.random::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    prototypes.push(prototypes[n_classes - 2].clone());
    // The faint mark distinguishing the final class: a handful of pixels
    // that are dark in the shared prototype.
    let dark: Vec<usize> = (0..n_features)
        .filter(|&f| prototypes[n_classes - 2][f] == 0.0)
        .collect();
    let mut mark = Vec::new();
    let mut pool = dark;
    for _ in 0..mark_pixels.min(pool.len()) {
        let i = pr.random_range(0..pool.len());
        mark.push(pool.swap_remove(i));
    }
    for &f in &mark {
        prototypes[n_classes - 1][f] = mark_contrast;
    }

    let mut r = sample_rng.rng();
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % n_classes;
        let intensity: f64 = 0.6 + 0.4 * r.random::<f64>();
        for f in 0..n_features {
            let noise: f64 = StandardNormal.sample(&mut r);
            features.push((prototypes[class][f] * intensity + noise_sigma * noise).clamp(0.0, 1.0));
        }
        labels.push(class as u32);
    }
    Ok(Dataset {
        n_features,
        n_classes,
        features,
        labels,
    })
}

/// Write the lab's standard desk-scale image task as an MNIST-style IDX
/// quartet under `dir`: 12,000 train and 2,000 test samples, 28x28, ten
/// classes with one slow confusable pair, shared prototypes across the two
/// splits.
pub fn write_desk_task(dir: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let proto = RngStream::new(seed, 7);
    let train = gen_two_timescale_images(
        10,
        28,
        28,
        12_000,
        DESK_NOISE,
        DESK_MARK_PIXELS,
        DESK_MARK_CONTRAST,
        proto,
        RngStream::new(seed, 1),
    )?;
    let test = gen_two_timescale_images(
        10,
        28,
        28,
        2_000,
        DESK_NOISE,
        DESK_MARK_PIXELS,
        DESK_MARK_CONTRAST,
        proto,
        RngStream::new(seed, 2),
    )?;
    write_idx(
        &train,
        28,
        28,
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    write_idx(
        &test,
        28,
        28,
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )
}

pub const DESK_NOISE: f64 = 0.8;
pub const DESK_MARK_PIXELS: usize = 20;
pub const DESK_MARK_CONTRAST: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = gen_synthetic(3, 5, 60, 2.0, RngStream::new(1, 2)).unwrap();
        let b = gen_synthetic(3, 5, 60, 2.0, RngStream::new(1, 2)).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn synthetic_means_separated() {
        let means = class_means(2, 4, 10.0);
        let d: f64 = means[0]
            .iter()
            .zip(&means[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((d - 10.0).abs() < 1e-9);
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_prototype_images(3, 4, 4, 30, 0.1, 0.0, RngStream::new(9, 8), RngStream::new(9, 9)).unwrap();
        let img = dir.path().join("images.idx");
        let lbl = dir.path().join("labels.idx");
        write_idx(&ds, 4, 4, &img, &lbl).unwrap();
        let back = load_mnist_idx(&img, &lbl).unwrap();
        assert_eq!(back.n_samples(), 30);
        assert_eq!(back.n_features, 16);
        assert_eq!(back.labels, ds.labels);
        // Quantization error only.
        for (a, b) in back.features.iter().zip(&ds.features) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn idx_header_parses_counts() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("images.idx");
        let lbl = dir.path().join("labels.idx");
        let n = 10u32;
        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&n.to_be_bytes());
        images.extend_from_slice(&28u32.to_be_bytes());
        images.extend_from_slice(&28u32.to_be_bytes());
        images.extend(std::iter::repeat(255u8).take((n * 28 * 28) as usize));
        fs::write(&img, &images).unwrap();
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&n.to_be_bytes());
        labels.extend((0..n).map(|i| (i % 10) as u8));
        fs::write(&lbl, &labels).unwrap();

        let ds = load_mnist_idx(&img, &lbl).unwrap();
        assert_eq!(ds.n_samples(), 10);
        assert_eq!(ds.n_features, 784);
        // A 255 byte maps to feature 1.0.
        assert_eq!(ds.features[0], 1.0);
    }

    #[test]
    fn idx_count_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("images.idx");
        let lbl = dir.path().join("labels.idx");
        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&1u32.to_be_bytes());
        images.extend_from_slice(&1u32.to_be_bytes());
        images.extend_from_slice(&[7, 9]);
        fs::write(&img, &images).unwrap();
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[0, 1, 0]);
        fs::write(&lbl, &labels).unwrap();

        match load_mnist_idx(&img, &lbl) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn idx_bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("images.idx");
        let lbl = dir.path().join("labels.idx");
        fs::write(&img, 0xdeadbeefu32.to_be_bytes()).unwrap();
        fs::write(&lbl, 0x0000_0801u32.to_be_bytes()).unwrap();
        assert!(matches!(load_mnist_idx(&img, &lbl), Err(Error::Format { offset: 0, .. })));
    }
}

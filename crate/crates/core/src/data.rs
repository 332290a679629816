//! MNIST (IDX) and CIFAR-10 (binary batch) loaders.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Val,
    Test,
}

/// Images `[N, C, H, W]` with one class label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub role: Role,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, role: Role) -> Result<Self> {
        if images.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        Ok(Dataset { images, labels, role })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize], role: Role) -> Dataset {
        Dataset {
            images: self.images.gather_samples(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            role,
        }
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.role)
    }

    /// Splits off `n_val` samples chosen by a seeded permutation; the rest
    /// (in original order) stay in the training split.
    pub fn split_validation(&self, n_val: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if n_val == 0 || n_val >= self.len() {
            return Err(Error::invalid(format!(
                "validation size {n_val} for a dataset of {}",
                self.len()
            )));
        }
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut val: Vec<usize> = perm[..n_val].to_vec();
        let mut train: Vec<usize> = perm[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Ok((self.subset(&train, Role::Train), self.subset(&val, Role::Val)))
    }

    /// Index batches of size `batch_size` (last one possibly short), shuffled by `seed`.
    pub fn batch_indices(&self, batch_size: usize, seed: Option<u64>) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        if let Some(s) = seed {
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
        }
        idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }

    /// Center crop of every image to `size × size`.
    pub fn center_crop(&self, size: usize) -> Result<Dataset> {
        let s = self.sample_shape();
        if s.len() != 3 || s[1] < size || s[2] < size || size == 0 {
            return Err(Error::Shape(format!("cannot crop {s:?} to {size}x{size}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (top, left) = ((h - size) / 2, (w - size) / 2);
        let mut out = Vec::with_capacity(self.len() * c * size * size);
        for n in 0..self.len() {
            let img = self.images.sample(n);
            for ch in 0..c {
                for y in top..top + size {
                    let row = ch * h * w + y * w + left;
                    out.extend_from_slice(&img[row..row + size]);
                }
            }
        }
        Dataset::new(Tensor::from_vec(&[self.len(), c, size, size], out)?, self.labels.clone(), self.role)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses an IDX3 image file into `[N, 1, rows, cols]` scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "truncated IDX header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGES {
        return Err(Error::format(path, format!("bad magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let (n, rows, cols) = (be_u32(bytes, 4) as usize, be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("{n} images of {rows}x{cols} need {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let data = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(&[n, 1, rows, cols], data).map_err(|e| Error::format(path, e.to_string()))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    if bytes.len() < 8 {
        return Err(Error::format(path, "truncated IDX header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABELS {
        return Err(Error::format(path, format!("bad magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let n = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(Error::format(
            path,
            format!("{n} labels need {} bytes, file has {}", 8 + n, bytes.len()),
        ));
    }
    let labels: Vec<usize> = bytes[8..].iter().map(|&b| b as usize).collect();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::format(path, format!("label {bad} is not a digit")));
    }
    Ok(labels)
}

pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>, role: Role) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let images = parse_idx_images(&read(ip)?, ip)?;
    let labels = parse_idx_labels(&read(lp)?, lp)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::format(
            lp,
            format!("{} labels for {} images in {}", labels.len(), images.shape()[0], ip.display()),
        ));
    }
    Dataset::new(images, labels, role)
}

/// Standard MNIST file names inside `dir`: `(train_images, train_labels, test_images, test_labels)`.
pub fn mnist_files(dir: &Path) -> [PathBuf; 4] {
    [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .map(|f| dir.join(f))
}

/// `(train, test)` from a directory holding the four standard MNIST files.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let [ti, tl, ei, el] = mnist_files(dir);
    Ok((load_mnist(ti, tl, Role::Train)?, load_mnist(ei, el, Role::Test)?))
}

/// Parses concatenated CIFAR-10 binary records into `[N, 3, 32, 32]` scaled to [0, 1].
pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of the {CIFAR_RECORD}-byte record", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::format(path, format!("label byte {} is out of range", rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((pixels, labels))
}

pub fn load_cifar10<P: AsRef<Path>>(files: &[P], role: Role) -> Result<Dataset> {
    if files.is_empty() {
        return Err(Error::Empty("CIFAR-10 file list"));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (p, l) = parse_cifar10(&read(f.as_ref())?, f.as_ref())?;
        pixels.extend(p);
        labels.extend(l);
    }
    Dataset::new(Tensor::from_vec(&[labels.len(), 3, 32, 32], pixels)?, labels, role)
}

/// `(train, test)` from the standard `cifar-10-batches-bin` directory.
pub fn load_cifar10_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    Ok((
        load_cifar10(&train, Role::Train)?,
        load_cifar10(&[dir.join("test_batch.bin")], Role::Test)?,
    ))
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn compute(ds: &Dataset) -> Result<Self> {
        let s = ds.sample_shape();
        if ds.is_empty() || s.len() != 3 {
            return Err(Error::Empty("image dataset"));
        }
        let (c, plane) = (s[0], s[1] * s[2]);
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for n in 0..ds.len() {
            for (ch, chunk) in ds.images.sample(n).chunks_exact(plane).enumerate() {
                for &v in chunk {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (ds.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / count - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(ChannelStats { mean, std })
    }

    /// `(x - mean) / std` per channel, in place.
    pub fn standardize(&self, ds: &mut Dataset) {
        let s = ds.sample_shape().to_vec();
        let plane = s[1] * s[2];
        let c = s[0];
        for (i, v) in ds.images.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = ((*v as f64 - self.mean[ch]) / self.std[ch]) as f32;
        }
    }
}

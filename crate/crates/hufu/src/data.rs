//! Datasets: IDX (MNIST) and CIFAR-10 binary loaders, deterministic subset
//! sampling, and a synthetic glyph dataset that ships in the same IDX
//! format for runs without real data on disk.
//!
//! Images are stored as raw u8 planes; batches are normalized to f32 with
//! the descriptor's per-channel constants at assembly time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::Rng;

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Where datasets live when a config gives no directory.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("HUFU_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub source: String,
    pub classes: usize,
    pub size: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Per-channel normalization constants applied after scaling to [0, 1].
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    /// Seed used for subset sampling, when this split is a sampled subset.
    pub subset_seed: Option<u64>,
}

/// A labeled image set held as raw bytes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub descriptor: DatasetDescriptor,
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn from_parts(descriptor: DatasetDescriptor, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let plane = descriptor.channels * descriptor.height * descriptor.width;
        if images.len() != descriptor.size * plane {
            return Err(Error::Config(format!(
                "dataset {}: {} image bytes for {} images of {} bytes",
                descriptor.name,
                images.len(),
                descriptor.size,
                plane
            )));
        }
        if labels.len() != descriptor.size {
            return Err(Error::Config(format!(
                "dataset {}: {} labels for {} images",
                descriptor.name,
                labels.len(),
                descriptor.size
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= descriptor.classes) {
            return Err(Error::Config(format!(
                "dataset {}: label {bad} outside {} classes",
                descriptor.name, descriptor.classes
            )));
        }
        Ok(Dataset {
            descriptor,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptor.size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.descriptor.classes
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [
            self.descriptor.channels,
            self.descriptor.height,
            self.descriptor.width,
        ]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_raw(&self, index: usize) -> &[u8] {
        let plane =
            self.descriptor.channels * self.descriptor.height * self.descriptor.width;
        &self.images[index * plane..(index + 1) * plane]
    }

    fn normalize_into(&self, raw: &[u8], out: &mut [f32]) {
        let plane = self.descriptor.height * self.descriptor.width;
        for c in 0..self.descriptor.channels {
            let mean = self.descriptor.mean[c];
            let std = self.descriptor.std[c];
            for i in 0..plane {
                out[c * plane + i] = (raw[c * plane + i] as f32 / 255.0 - mean) / std;
            }
        }
    }

    /// One normalized image as [1, C, H, W].
    pub fn image_tensor(&self, index: usize) -> Tensor<f32> {
        let [c, h, w] = self.image_shape();
        let mut t = Tensor::zeros(&[1, c, h, w]);
        self.normalize_into(self.image_raw(index), t.data_mut());
        t
    }

    /// Normalized batch with optional horizontal flip and shift-crop
    /// augmentation. Transforms act on the raw bytes before normalization,
    /// so padding fill matches the background.
    pub fn batch_augmented(
        &self,
        indices: &[usize],
        hflip: bool,
        crop_pad: usize,
        rng: &mut Rng,
    ) -> (Tensor<f32>, Vec<usize>) {
        if !hflip && crop_pad == 0 {
            return self.batch(indices);
        }
        let [c, h, w] = self.image_shape();
        let plane = c * h * w;
        let mut t = Tensor::zeros(&[indices.len(), c, h, w]);
        let data = t.data_mut();
        let mut labels = Vec::with_capacity(indices.len());
        let mut raw = vec![0u8; plane];
        for (slot, &idx) in indices.iter().enumerate() {
            raw.copy_from_slice(self.image_raw(idx));
            if hflip && rng.next_f32() < 0.5 {
                for ch in 0..c {
                    for y in 0..h {
                        raw[ch * h * w + y * w..ch * h * w + (y + 1) * w].reverse();
                    }
                }
            }
            if crop_pad > 0 {
                let dy = rng.below(2 * crop_pad + 1) as isize - crop_pad as isize;
                let dx = rng.below(2 * crop_pad + 1) as isize - crop_pad as isize;
                let src = raw.clone();
                raw.fill(0);
                for ch in 0..c {
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + dx;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            raw[ch * h * w + y * w + x] =
                                src[ch * h * w + sy as usize * w + sx as usize];
                        }
                    }
                }
            }
            self.normalize_into(&raw, &mut data[slot * plane..(slot + 1) * plane]);
            labels.push(self.label(idx));
        }
        (t, labels)
    }

    /// Normalized batch [N, C, H, W] plus labels for the given indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let plane = c * h * w;
        let mut t = Tensor::zeros(&[indices.len(), c, h, w]);
        let data = t.data_mut();
        let mut labels = Vec::with_capacity(indices.len());
        for (slot, &idx) in indices.iter().enumerate() {
            self.normalize_into(self.image_raw(idx), &mut data[slot * plane..(slot + 1) * plane]);
            labels.push(self.label(idx));
        }
        (t, labels)
    }

    /// New dataset keeping rows in `indices` order.
    pub fn select(&self, indices: &[usize], subset_seed: Option<u64>) -> Dataset {
        let plane =
            self.descriptor.channels * self.descriptor.height * self.descriptor.width;
        let mut images = Vec::with_capacity(indices.len() * plane);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image_raw(i));
            labels.push(self.labels[i]);
        }
        let mut descriptor = self.descriptor.clone();
        descriptor.size = indices.len();
        descriptor.subset_seed = subset_seed;
        Dataset {
            descriptor,
            images,
            labels,
        }
    }

    /// Deterministic random subset of `count` rows.
    pub fn subset(&self, count: usize, seed: u64) -> Dataset {
        let mut rng = Rng::seed_from_u64(seed);
        let indices = rng.sample_indices(self.len(), count.min(self.len()));
        self.select(&indices, Some(seed))
    }

    /// Indices of every row with the given label.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.label(i) == class).collect()
    }

    /// Replace labels wholesale (length checked).
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Dataset> {
        Dataset::from_parts(self.descriptor.clone(), self.images.clone(), labels)
    }

    /// Append rows (used by back-door dataset construction).
    pub fn push_row(&mut self, image: &[u8], label: u8) {
        let plane =
            self.descriptor.channels * self.descriptor.height * self.descriptor.width;
        assert_eq!(image.len(), plane);
        self.images.extend_from_slice(image);
        self.labels.push(label);
        self.descriptor.size += 1;
    }
}

// ── IDX format ──────────────────────────────────────────────────────────

fn dataset_err(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::DatasetFile {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

struct Counting<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Counting<R> {
    fn exact(&mut self, path: &Path, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| dataset_err(path, self.offset, format!("reading {what}: {e}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32_be(&mut self, path: &Path, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(path, &mut b, what)?;
        Ok(u32::from_be_bytes(b))
    }
}

/// Parse an IDX image file (magic 0x00000803, big-endian header).
pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut r = Counting {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let magic = r.u32_be(path, "magic")?;
    if magic != 2051 {
        return Err(dataset_err(path, 0, format!("bad image magic {magic}, expected 2051")));
    }
    let n = r.u32_be(path, "image count")? as usize;
    let h = r.u32_be(path, "rows")? as usize;
    let w = r.u32_be(path, "cols")? as usize;
    let mut data = vec![0u8; n * h * w];
    r.exact(path, &mut data, "pixel data")?;
    Ok((data, n, h, w))
}

/// Parse an IDX label file (magic 0x00000801).
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = Counting {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let magic = r.u32_be(path, "magic")?;
    if magic != 2049 {
        return Err(dataset_err(path, 0, format!("bad label magic {magic}, expected 2049")));
    }
    let n = r.u32_be(path, "label count")? as usize;
    let mut data = vec![0u8; n];
    r.exact(path, &mut data, "label data")?;
    Ok(data)
}

pub fn write_idx_images(path: &Path, images: &[u8], n: usize, h: usize, w: usize) -> Result<()> {
    assert_eq!(images.len(), n * h * w);
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&2051u32.to_be_bytes())?;
    f.write_all(&(n as u32).to_be_bytes())?;
    f.write_all(&(h as u32).to_be_bytes())?;
    f.write_all(&(w as u32).to_be_bytes())?;
    f.write_all(images)?;
    f.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&2049u32.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    f.flush()?;
    Ok(())
}

/// MNIST normalization constants (also used for the synthetic analog).
const MNIST_MEAN: f32 = 0.1307;
const MNIST_STD: f32 = 0.3081;

/// Load the MNIST train and test splits from a directory of raw IDX files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let load_split = |images_name: &str, labels_name: &str, split: &str| -> Result<Dataset> {
        let ipath = dir.join(images_name);
        let lpath = dir.join(labels_name);
        let (images, n, h, w) = read_idx_images(&ipath)?;
        let labels = read_idx_labels(&lpath)?;
        if labels.len() != n {
            return Err(dataset_err(
                &lpath,
                8,
                format!("{} labels for {n} images", labels.len()),
            ));
        }
        Dataset::from_parts(
            DatasetDescriptor {
                name: format!("mnist-{split}"),
                source: dir.display().to_string(),
                classes: 10,
                size: n,
                channels: 1,
                height: h,
                width: w,
                mean: vec![MNIST_MEAN],
                std: vec![MNIST_STD],
                subset_seed: None,
            },
            images,
            labels,
        )
    };
    Ok((
        load_split(MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS, "train")?,
        load_split(MNIST_TEST_IMAGES, MNIST_TEST_LABELS, "test")?,
    ))
}

// ── CIFAR-10 binary format ──────────────────────────────────────────────

const CIFAR_RECORD: usize = 3073;
const CIFAR_PER_FILE: usize = 10_000;

fn read_cifar_file(path: &Path, images: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<()> {
    let meta = std::fs::metadata(path)?;
    if meta.len() != (CIFAR_RECORD * CIFAR_PER_FILE) as u64 {
        return Err(dataset_err(
            path,
            0,
            format!(
                "file is {} bytes, expected {} (10000 records of 3073)",
                meta.len(),
                CIFAR_RECORD * CIFAR_PER_FILE
            ),
        ));
    }
    let mut r = Counting {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let mut record = [0u8; CIFAR_RECORD];
    for _ in 0..CIFAR_PER_FILE {
        r.exact(path, &mut record, "record")?;
        if record[0] > 9 {
            return Err(dataset_err(
                path,
                r.offset - CIFAR_RECORD as u64,
                format!("label byte {} out of range", record[0]),
            ));
        }
        labels.push(record[0]);
        images.extend_from_slice(&record[1..]);
    }
    Ok(())
}

/// Load CIFAR-10 train (five batch files) and test splits.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let descriptor = |name: &str, size: usize| DatasetDescriptor {
        name: name.to_string(),
        source: dir.display().to_string(),
        classes: 10,
        size,
        channels: 3,
        height: 32,
        width: 32,
        mean: vec![0.4914, 0.4822, 0.4465],
        std: vec![0.2470, 0.2435, 0.2616],
        subset_seed: None,
    };
    let mut train_images = Vec::new();
    let mut train_labels = Vec::new();
    for i in 1..=5 {
        read_cifar_file(
            &dir.join(format!("data_batch_{i}.bin")),
            &mut train_images,
            &mut train_labels,
        )?;
    }
    let mut test_images = Vec::new();
    let mut test_labels = Vec::new();
    read_cifar_file(&dir.join("test_batch.bin"), &mut test_images, &mut test_labels)?;
    Ok((
        Dataset::from_parts(descriptor("cifar10-train", train_labels.len()), train_images, train_labels)?,
        Dataset::from_parts(descriptor("cifar10-test", test_labels.len()), test_images, test_labels)?,
    ))
}

// ── Synthetic glyph dataset ─────────────────────────────────────────────

/// 7x7 glyphs, one per class. Class 9 leans on 4/7-like strokes so it does
/// not collapse onto class 0 under a never-trained head.
const GLYPHS: [[u8; 49]; 10] = [
    // 0: ring
    [
        0, 1, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 1, 0,
        0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1, 0,
    ],
    // 1: bar with foot
    [
        0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0,
        0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0,
    ],
    // 2: top arc, diagonal, base
    [
        0, 1, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0,
        1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1,
    ],
    // 3: double arc
    [
        0, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 1, 0, 0, 0,
        0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1, 0,
    ],
    // 4: converging strokes
    [
        0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1,
        1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0,
    ],
    // 5: flag
    [
        1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0,
        0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 0,
    ],
    // 6: lower loop
    [
        0, 1, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 0, 1, 0,
        0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1, 0,
    ],
    // 7: roof and slash
    [
        1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0,
        0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0,
    ],
    // 8: stacked loops
    [
        0, 1, 1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1, 0, 1, 0,
        0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1, 0,
    ],
    // 9: a 7 with a crossbar. Its nearest neighbor by shape is 7, not 0,
    // which keeps a never-trained head from funneling it into the
    // back-door target on its own.
    [
        1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0,
        0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0,
    ],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            train_size: 12_000,
            test_size: 10_000,
            seed: 2024,
        }
    }
}

const SYNTH_H: usize = 28;
const SYNTH_W: usize = 28;

fn render_glyph(class: usize, rng: &mut Rng, out: &mut [u8]) {
    out.fill(0);
    let glyph = &GLYPHS[class];
    let scale = 3usize;
    let dy = rng.below(SYNTH_H - 7 * scale + 1);
    let dx = rng.below(SYNTH_W - 7 * scale + 1);
    let intensity = rng.uniform_f32(0.5, 1.0);
    // Occasional one-pixel row wobble makes strokes less rigid.
    let wobble = rng.next_f32() < 0.5;
    for gy in 0..7 {
        let row_shift: isize = if wobble && rng.next_f32() < 0.4 {
            (rng.below(3) as isize) - 1
        } else {
            0
        };
        for gx in 0..7 {
            if glyph[gy * 7 + gx] == 0 {
                continue;
            }
            for sy in 0..scale {
                for sx in 0..scale {
                    let y = dy + gy * scale + sy;
                    let x = (dx + gx * scale + sx) as isize + row_shift;
                    if x < 0 || x >= SYNTH_W as isize {
                        continue;
                    }
                    let fade = 1.0 - 0.3 * rng.next_f32();
                    let v = (intensity * fade * 255.0) as u8;
                    let idx = y * SYNTH_W + x as usize;
                    out[idx] = out[idx].max(v);
                }
            }
        }
    }
    // Background noise, distractor strokes, and an occasional occluding
    // patch keep the task from saturating.
    for v in out.iter_mut() {
        if *v == 0 && rng.next_f32() < 0.12 {
            *v = (rng.uniform_f32(0.05, 0.25) * 255.0) as u8;
        }
    }
    for _ in 0..3 {
        let len = 3 + rng.below(6);
        let mut y = rng.below(SYNTH_H) as isize;
        let mut x = rng.below(SYNTH_W) as isize;
        let (dy, dx) = match rng.below(4) {
            0 => (0isize, 1isize),
            1 => (1, 0),
            2 => (1, 1),
            _ => (1, -1),
        };
        let level = (rng.uniform_f32(0.3, 0.7) * 255.0) as u8;
        for _ in 0..len {
            if y >= 0 && y < SYNTH_H as isize && x >= 0 && x < SYNTH_W as isize {
                let idx = y as usize * SYNTH_W + x as usize;
                out[idx] = out[idx].max(level);
            }
            y += dy;
            x += dx;
        }
    }
    if rng.next_f32() < 0.3 {
        let py = rng.below(SYNTH_H - 5);
        let px = rng.below(SYNTH_W - 5);
        for y in py..py + 5 {
            for x in px..px + 5 {
                out[y * SYNTH_W + x] = 0;
            }
        }
    }
}

fn synth_split(size: usize, rng: &mut Rng) -> (Vec<u8>, Vec<u8>) {
    let plane = SYNTH_H * SYNTH_W;
    let mut images = vec![0u8; size * plane];
    let mut labels = Vec::with_capacity(size);
    for i in 0..size {
        let class = rng.below(10);
        render_glyph(class, rng, &mut images[i * plane..(i + 1) * plane]);
        labels.push(class as u8);
    }
    (images, labels)
}

/// Generate the synthetic dataset as MNIST-format IDX files under `dir`.
/// Loading back through `load_mnist` exercises the byte-exact IDX path.
pub fn generate_synthetic(dir: &Path, spec: &SynthSpec) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rng = Rng::seed_from_u64(spec.seed);
    let (train_images, train_labels) = synth_split(spec.train_size, &mut rng.fork(1));
    let (test_images, test_labels) = synth_split(spec.test_size, &mut rng.fork(2));
    write_idx_images(&dir.join(MNIST_TRAIN_IMAGES), &train_images, spec.train_size, SYNTH_H, SYNTH_W)?;
    write_idx_labels(&dir.join(MNIST_TRAIN_LABELS), &train_labels)?;
    write_idx_images(&dir.join(MNIST_TEST_IMAGES), &test_images, spec.test_size, SYNTH_H, SYNTH_W)?;
    write_idx_labels(&dir.join(MNIST_TEST_LABELS), &test_labels)?;
    Ok(())
}

/// Bumped whenever the renderer changes, so cached IDX files regenerate.
const SYNTH_GENERATOR_VERSION: u32 = 3;

#[derive(PartialEq, Serialize, Deserialize)]
struct SynthCacheKey {
    version: u32,
    spec: SynthSpec,
}

/// Load the synthetic dataset from `dir`, generating it first if the IDX
/// files are missing or were built from a different spec or generator.
pub fn load_or_generate_synthetic(dir: &Path, spec: &SynthSpec) -> Result<(Dataset, Dataset)> {
    let spec_path = dir.join("synth-spec.json");
    let key = SynthCacheKey {
        version: SYNTH_GENERATOR_VERSION,
        spec: spec.clone(),
    };
    let cached: Option<SynthCacheKey> = std::fs::read(&spec_path)
        .ok()
        .and_then(|bytes| serde_json::from_slice(&bytes).ok());
    if cached.as_ref() != Some(&key) || !dir.join(MNIST_TRAIN_IMAGES).exists() {
        generate_synthetic(dir, spec)?;
        std::fs::write(&spec_path, serde_json::to_vec_pretty(&key)?)?;
    }
    let (mut train, mut test) = load_mnist(dir)?;
    train.descriptor.name = "synthetic-train".into();
    test.descriptor.name = "synthetic-test".into();
    Ok((train, test))
}

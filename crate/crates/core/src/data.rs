//! Datasets: IDX (MNIST) ingestion, synthetic Gaussian blobs and
//! class-balanced labelled splits. Features are always scaled to `[0, 1]`.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n x D`, every entry in `[0, 1]`.
    pub x: Mat,
    pub y: Option<Vec<usize>>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(x: Mat, y: Option<Vec<usize>>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        let ds = Dataset {
            x,
            y,
            num_classes,
            name: name.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.x.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidDataset(format!(
                "{}: feature {bad} outside [0, 1]",
                self.name
            )));
        }
        if let Some(y) = &self.y {
            if y.len() != self.x.rows() {
                return Err(Error::InvalidDataset(format!(
                    "{}: {} labels for {} samples",
                    self.name,
                    y.len(),
                    self.x.rows()
                )));
            }
            if let Some(bad) = y.iter().find(|&&c| c >= self.num_classes) {
                return Err(Error::InvalidDataset(format!(
                    "{}: label {bad} >= class count {}",
                    self.name, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::InvalidDataset(format!("{} is unlabeled", self.name)))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: self
                .y
                .as_ref()
                .map(|y| indices.iter().map(|&i| y[i]).collect()),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let mut ds = self.subset(&idx);
        if n < self.len() {
            ds.name = format!("{}[..{n}]", self.name);
        }
        ds
    }

    pub fn unlabeled(&self) -> Dataset {
        Dataset {
            y: None,
            ..self.clone()
        }
    }

    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.num_classes];
        for &c in self.labels()? {
            counts[c] += 1;
        }
        Ok(counts)
    }

    /// Empirical class distribution of the labels.
    pub fn class_prior(&self) -> Result<Vec<f64>> {
        let counts = self.class_counts()?;
        let n = self.len().max(1) as f64;
        Ok(counts.into_iter().map(|c| c as f64 / n).collect())
    }

    /// Splits off the last `fraction` of a seeded permutation as validation.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction must be in [0, 1), got {fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, rng::SPLIT));
        let n_val = (self.len() as f64 * fraction).round() as usize;
        let (train, val) = idx.split_at(self.len() - n_val);
        Ok((self.subset(train), self.subset(val)))
    }

    /// CSV with a header row `f0,...,f{D-1},label` (label column empty when
    /// unlabeled).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for j in 0..self.dim() {
            out.push_str(&format!("f{j},"));
        }
        out.push_str("label\n");
        for i in 0..self.len() {
            for v in self.x.row(i) {
                out.push_str(&format!("{v},"));
            }
            if let Some(y) = &self.y {
                out.push_str(&y[i].to_string());
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Raw IDX image tensor: `count` images of `rows x cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Truncated {
            offset,
            needed: 4,
            available: bytes.len().saturating_sub(offset),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

impl IdxImages {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        check_magic(bytes, IDX_IMAGES_MAGIC)?;
        let count = be_u32(bytes, 4)? as usize;
        let rows = be_u32(bytes, 8)? as usize;
        let cols = be_u32(bytes, 12)? as usize;
        let needed = count * rows * cols;
        let available = bytes.len() - 16;
        if available < needed {
            return Err(Error::Truncated {
                offset: 16,
                needed,
                available,
            });
        }
        Ok(IdxImages {
            count,
            rows,
            cols,
            pixels: bytes[16..16 + needed].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IDX_IMAGES_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Pixels divided by 255, images flattened row-major.
    pub fn to_mat(&self) -> Mat {
        let data = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Mat::new(self.count, self.rows * self.cols, data).expect("pixel count checked in parse")
    }

    /// Inverse of [`IdxImages::to_mat`] for `[0, 1]` data on the 1/255 grid.
    pub fn from_mat(x: &Mat, rows: usize, cols: usize) -> Result<Self> {
        if x.cols() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "IdxImages::from_mat",
                left: x.shape(),
                right: (rows, cols),
            });
        }
        Ok(IdxImages {
            count: x.rows(),
            rows,
            cols,
            pixels: x
                .as_slice()
                .iter()
                .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect(),
        })
    }
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let available = bytes.len() - 8;
    if available < count {
        return Err(Error::Truncated {
            offset: 8,
            needed: count,
            available,
        });
    }
    Ok(bytes[8..8 + count].to_vec())
}

pub fn idx_labels_to_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a labelled dataset from raw IDX image and label file contents.
pub fn dataset_from_idx(image_bytes: &[u8], label_bytes: &[u8], name: &str) -> Result<Dataset> {
    let images = IdxImages::parse(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let y: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = y.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(images.to_mat(), Some(y), num_classes, name)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    let mut ds = dataset_from_idx(&images, &labels, &name)?;
    // MNIST-style files always carry ten classes even if a subset misses one.
    if ds.num_classes < 10 && ds.dim() == 784 {
        ds.num_classes = 10;
    }
    Ok(ds)
}

/// Loads `train-*` or `t10k-*` MNIST files from `dir`.
pub fn load_mnist(dir: &Path, train: bool) -> Result<Dataset> {
    let prefix = if train { "train" } else { "t10k" };
    let mut ds = load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )?;
    ds.num_classes = 10;
    ds.name = format!("mnist-{prefix}");
    Ok(ds)
}

/// Isotropic Gaussian blobs around seeded unit-norm class means, min-max
/// rescaled to `[0, 1]` per feature.
pub fn synth_blobs(num_classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if num_classes < 2 || per_class < 1 || dim < 1 {
        return Err(Error::InvalidDataset(format!(
            "blobs need C >= 2, per_class >= 1, D >= 1 (got C={num_classes}, per_class={per_class}, D={dim})"
        )));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidDataset(format!("spread must be >= 0, got {spread}")));
    }
    let mut r = rng::stream(seed, rng::DATA);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|a| a / norm).collect()
        })
        .collect();
    let n = num_classes * per_class;
    let mut x = Mat::zeros(n, dim);
    let mut y = Vec::with_capacity(n);
    for c in 0..num_classes {
        for k in 0..per_class {
            let i = c * per_class + k;
            for j in 0..dim {
                let noise: f64 = StandardNormal.sample(&mut r);
                x[(i, j)] = means[c][j] + spread * noise;
            }
            y.push(c);
        }
    }
    for j in 0..dim {
        let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            (lo.min(x[(i, j)]), hi.max(x[(i, j)]))
        });
        let range = hi - lo;
        for i in 0..n {
            x[(i, j)] = if range > 0.0 {
                ((x[(i, j)] - lo) / range).clamp(0.0, 1.0)
            } else {
                0.5
            };
        }
    }
    Dataset::new(x, Some(y), num_classes, format!("blobs-c{num_classes}-d{dim}"))
}

/// Train and test sets drawn from the same blobs: within each class the
/// first `train_per_class` samples go to training.
pub fn synth_blobs_split(
    num_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if train_per_class == 0 || test_per_class == 0 {
        return Err(Error::InvalidDataset(
            "blobs split needs at least one train and one test sample per class".into(),
        ));
    }
    let per_class = train_per_class + test_per_class;
    let all = synth_blobs(num_classes, per_class, dim, spread, seed)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..num_classes {
        for k in 0..per_class {
            let i = c * per_class + k;
            if k < train_per_class {
                train.push(i);
            } else {
                test.push(i);
            }
        }
    }
    let (mut a, mut b) = (all.subset(&train), all.subset(&test));
    a.name = format!("{}-train", all.name);
    b.name = format!("{}-test", all.name);
    Ok((a, b))
}

/// Stratified draw of `n_labeled / C` samples per class. The full set is
/// returned unchanged as the unlabeled pool.
pub fn split_labeled(ds: &Dataset, n_labeled: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let labels = ds.labels()?;
    let c = ds.num_classes;
    if n_labeled > ds.len() || n_labeled == 0 || n_labeled % c != 0 {
        return Err(Error::InvalidConfig(format!(
            "n_labeled={n_labeled} must be positive, <= {} and divisible by C={c}",
            ds.len()
        )));
    }
    let per_class = n_labeled / c;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut r = rng::stream(seed, rng::SPLIT);
    let mut chosen = Vec::with_capacity(n_labeled);
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::InvalidDataset(format!(
                "class {class} has {} samples, need {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut r);
        chosen.extend_from_slice(&members[..per_class]);
    }
    chosen.shuffle(&mut r);
    let mut labeled = ds.subset(&chosen);
    labeled.name = format!("{}-labeled{n_labeled}", ds.name);
    Ok((labeled, ds.clone()))
}

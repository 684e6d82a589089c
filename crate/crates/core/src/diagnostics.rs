//! Analysis artifacts: H-matrix heat maps for mixed and single-class
//! batches, kernel-value histograms for same- and different-class pairs, and
//! a scalar separation score.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::cmmd::h_matrix;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::linalg::Mat;
use crate::network::ModelParams;
use crate::rng;

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_PAIRS: usize = 10_000;

/// Which representation the kernel sees.
#[derive(Debug, Clone, Copy)]
pub enum Features<'a> {
    Raw,
    Latent(&'a ModelParams),
}

impl Features<'_> {
    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        match self {
            Features::Raw => Ok(x.clone()),
            Features::Latent(p) => p.encode(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Mixed,
    /// One class: the given one, or a seeded pick among classes with enough
    /// samples.
    SingleClass(Option<usize>),
}

#[derive(Debug, Clone)]
pub struct Heatmap {
    pub mode: BatchMode,
    pub indices: Vec<usize>,
    /// Class drawn for [`BatchMode::SingleClass`].
    pub class: Option<usize>,
    pub k: Mat,
    pub h: Mat,
}

/// Draws `batch_size` distinct sample indices.
pub fn draw_batch(
    ds: &Dataset,
    mode: BatchMode,
    batch_size: usize,
    seed: u64,
) -> Result<(Vec<usize>, Option<usize>)> {
    let mut r = rng::stream(seed, rng::DIAGNOSTICS);
    match mode {
        BatchMode::Mixed => {
            if ds.len() < batch_size {
                return Err(Error::InvalidDataset(format!(
                    "batch of {batch_size} needs that many samples, dataset has {}",
                    ds.len()
                )));
            }
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.shuffle(&mut r);
            idx.truncate(batch_size);
            Ok((idx, None))
        }
        BatchMode::SingleClass(wanted) => {
            let labels = ds.labels()?;
            let counts = ds.class_counts()?;
            let class = match wanted {
                Some(c) if c >= ds.num_classes => {
                    return Err(Error::InvalidConfig(format!(
                        "class {c} out of range for {} classes",
                        ds.num_classes
                    )))
                }
                Some(c) if counts[c] < batch_size => {
                    return Err(Error::InvalidDataset(format!(
                        "class {c} has {} samples, batch needs {batch_size}",
                        counts[c]
                    )))
                }
                Some(c) => c,
                None => {
                    let eligible: Vec<usize> = (0..ds.num_classes)
                        .filter(|&c| counts[c] >= batch_size)
                        .collect();
                    *eligible.choose(&mut r).ok_or_else(|| {
                        Error::InvalidDataset(format!(
                            "no class has {batch_size} samples (largest has {})",
                            counts.iter().max().copied().unwrap_or(0)
                        ))
                    })?
                }
            };
            let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut r);
            idx.truncate(batch_size);
            Ok((idx, Some(class)))
        }
    }
}

pub fn h_heatmap(
    ds: &Dataset,
    spec: &KernelSpec,
    features: Features<'_>,
    mode: BatchMode,
    batch_size: usize,
    lambda: f64,
    seed: u64,
) -> Result<Heatmap> {
    let (indices, class) = draw_batch(ds, mode, batch_size, seed)?;
    let z = features.apply(&ds.x.select_rows(&indices))?;
    let k = gram(spec, &z, &z)?;
    let h = h_matrix(&k, lambda)?;
    Ok(Heatmap {
        mode,
        indices,
        class,
        k,
        h,
    })
}

/// Coefficient of variation (population) of the off-diagonal entries.
pub fn off_diagonal_cv(m: &Mat) -> f64 {
    let n = m.rows();
    let vals: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    if vals.is_empty() {
        return f64::NAN;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
    var.sqrt() / mean.abs()
}

/// `|a - b|_F / |a|_F`.
pub fn relative_frobenius(a: &Mat, b: &Mat) -> Result<f64> {
    Ok(a.sub(b)?.frobenius_norm() / a.frobenius_norm())
}

pub fn matrix_csv(m: &Mat) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Binary P5 image, per-matrix min-max scaled to 0..=255 (constant input
/// maps to 0).
pub fn pgm_bytes(m: &Mat) -> Vec<u8> {
    let (lo, hi) = m
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(m.as_slice().iter().map(|&v| {
        if range > 0.0 {
            ((v - lo) / range * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

impl Heatmap {
    /// Writes `<stem>.csv` and `<stem>.pgm`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(format!("{stem}.csv")), matrix_csv(&self.h).as_bytes())?;
        write_file(&dir.join(format!("{stem}.pgm")), &pgm_bytes(&self.h))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelHistogram {
    pub bins: usize,
    pub same: Vec<usize>,
    pub diff: Vec<usize>,
    pub same_values: Vec<f64>,
    pub diff_values: Vec<f64>,
}

impl KernelHistogram {
    fn from_values(same_values: Vec<f64>, diff_values: Vec<f64>, bins: usize) -> Self {
        let bin = |v: f64| ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        let mut same = vec![0; bins];
        let mut diff = vec![0; bins];
        same_values.iter().for_each(|&v| same[bin(v)] += 1);
        diff_values.iter().for_each(|&v| diff[bin(v)] += 1);
        KernelHistogram {
            bins,
            same,
            diff,
            same_values,
            diff_values,
        }
    }

    /// `bin_left,bin_right,count_same,count_diff`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count_same,count_diff\n");
        let w = 1.0 / self.bins as f64;
        for b in 0..self.bins {
            out.push_str(&format!(
                "{},{},{},{}\n",
                b as f64 * w,
                (b + 1) as f64 * w,
                self.same[b],
                self.diff[b]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn separation(&self) -> Result<f64> {
        separation_score(&self.same_values, &self.diff_values)
    }
}

/// Kernel values on `pairs` random same-class and `pairs` random
/// different-class pairs, binned over `[0, 1]` (values outside are clamped
/// into the edge bins).
pub fn kernel_histogram(
    ds: &Dataset,
    spec: &KernelSpec,
    features: Features<'_>,
    pairs: usize,
    bins: usize,
    seed: u64,
) -> Result<KernelHistogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let labels = ds.labels()?;
    let counts = ds.class_counts()?;
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::InvalidDataset(format!(
            "class {c} has {} samples, need at least 2",
            counts[c]
        )));
    }
    let by_class: Vec<Vec<usize>> = (0..ds.num_classes)
        .map(|c| (0..ds.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    let mut r = rng::stream(seed, rng::DIAGNOSTICS);
    let n = ds.len();
    let mut same_pairs = Vec::with_capacity(pairs);
    while same_pairs.len() < pairs {
        let i = r.random_range(0..n);
        let members = &by_class[labels[i]];
        let j = members[r.random_range(0..members.len())];
        if j != i {
            same_pairs.push((i, j));
        }
    }
    let mut diff_pairs = Vec::with_capacity(pairs);
    while diff_pairs.len() < pairs {
        let (i, j) = (r.random_range(0..n), r.random_range(0..n));
        if labels[i] != labels[j] {
            diff_pairs.push((i, j));
        }
    }

    let mut used: Vec<usize> = same_pairs
        .iter()
        .chain(&diff_pairs)
        .flat_map(|&(i, j)| [i, j])
        .collect();
    used.sort_unstable();
    used.dedup();
    let z = features.apply(&ds.x.select_rows(&used))?;
    let row = |i: usize| z.row(used.binary_search(&i).expect("index encoded"));
    let eval = |ps: &[(usize, usize)]| -> Vec<f64> {
        ps.iter().map(|&(i, j)| spec.eval(row(i), row(j))).collect()
    };
    Ok(KernelHistogram::from_values(
        eval(&same_pairs),
        eval(&diff_pairs),
        bins,
    ))
}

/// `mean(same) - mean(diff)`.
pub fn separation_score(same: &[f64], diff: &[f64]) -> Result<f64> {
    if same.is_empty() || diff.is_empty() {
        return Err(Error::EmptyBatch("separation score"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(same) - mean(diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    #[test]
    fn identical_samples_give_rank_one_h() {
        let n = 6;
        let x = Mat::filled(n, 3, 0.4);
        let ds = Dataset::new(x, Some(vec![0; n]), 1, "same").unwrap();
        let hm = h_heatmap(&ds, &KernelSpec::default(), Features::Raw, BatchMode::Mixed, n, 0.01, 1)
            .unwrap();
        let expect = 1.0 / (n as f64 + 0.01).powi(2);
        assert!(hm.k.as_slice().iter().all(|&v| v == 1.0));
        for v in hm.h.as_slice() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_batches_are_pure() {
        let ds = synth_blobs(3, 20, 4, 0.2, 2).unwrap();
        let (idx, class) = draw_batch(&ds, BatchMode::SingleClass(None), 10, 5).unwrap();
        let labels = ds.labels().unwrap();
        assert_eq!(idx.len(), 10);
        assert!(idx.iter().all(|&i| Some(labels[i]) == class));
        let (idx, class) = draw_batch(&ds, BatchMode::SingleClass(Some(2)), 10, 5).unwrap();
        assert_eq!(class, Some(2));
        assert!(idx.iter().all(|&i| labels[i] == 2));
        assert!(draw_batch(&ds, BatchMode::SingleClass(None), 21, 5).is_err());
        assert!(draw_batch(&ds, BatchMode::SingleClass(Some(3)), 5, 5).is_err());
        assert!(draw_batch(&ds, BatchMode::Mixed, 61, 5).is_err());
    }

    #[test]
    fn pgm_layout() {
        let m = Mat::from_rows(&[[0.0, 1.0], [0.5, 1.0]]);
        let b = pgm_bytes(&m);
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&b[..header.len()], header);
        assert_eq!(&b[header.len()..], &[0, 255, 128, 255]);
        assert!(pgm_bytes(&Mat::filled(2, 2, 3.0)).ends_with(&[0, 0, 0, 0]));
    }

    #[test]
    fn separation_examples() {
        assert_eq!(separation_score(&[1.0; 4], &[0.0; 3]).unwrap(), 1.0);
        assert_eq!(separation_score(&[0.3, 0.5], &[0.5, 0.3]).unwrap(), 0.0);
        assert!(separation_score(&[], &[1.0]).is_err());
    }

    #[test]
    fn degenerate_blobs_fill_top_bin() {
        let ds = synth_blobs(3, 10, 4, 0.0, 3).unwrap();
        let h = kernel_histogram(&ds, &KernelSpec::default(), Features::Raw, 200, 50, 1).unwrap();
        assert_eq!(h.same[49], 200);
        assert_eq!(h.same.iter().sum::<usize>(), 200);
        assert_eq!(h.diff.iter().sum::<usize>(), 200);
        assert!(h.same_values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn separated_blobs_score_higher() {
        let spec = KernelSpec::default();
        let tight = synth_blobs(3, 30, 4, 0.01, 4).unwrap();
        let loose = synth_blobs(3, 30, 4, 3.0, 4).unwrap();
        let a = kernel_histogram(&tight, &spec, Features::Raw, 500, 20, 2).unwrap();
        let b = kernel_histogram(&loose, &spec, Features::Raw, 500, 20, 2).unwrap();
        assert!(a.separation().unwrap() > b.separation().unwrap());
    }

    #[test]
    fn histogram_csv_is_deterministic() {
        let ds = synth_blobs(2, 15, 3, 0.5, 5).unwrap();
        let spec = KernelSpec::default();
        let a = kernel_histogram(&ds, &spec, Features::Raw, 100, 10, 9).unwrap().to_csv();
        let b = kernel_histogram(&ds, &spec, Features::Raw, 100, 10, 9).unwrap().to_csv();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 11);
        assert!(a.starts_with("bin_left,bin_right,count_same,count_diff\n0,0.1,"));
    }

    #[test]
    fn singleton_class_is_rejected() {
        let x = Mat::filled(3, 2, 0.5);
        let ds = Dataset::new(x, Some(vec![0, 0, 1]), 2, "tiny").unwrap();
        assert!(kernel_histogram(&ds, &KernelSpec::default(), Features::Raw, 5, 5, 0).is_err());
    }

    #[test]
    fn off_diagonal_cv_of_constant_is_zero() {
        let mut m = Mat::filled(4, 4, 0.2);
        m = m.add_diagonal(5.0);
        assert!(off_diagonal_cv(&m).abs() < 1e-15);
    }
}

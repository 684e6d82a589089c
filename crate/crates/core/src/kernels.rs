//! Gram matrices for the data-side and label-side kernels.
//!
//! The Gaussian mixture averages its components, so `k(x, x) = 1` and every
//! entry lies in `(0, 1]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Mat};

pub const DEFAULT_BANDWIDTHS: [f64; 5] = [1.0, 3.0, 5.0, 7.0, 9.0];

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `(1/q) sum_q exp(-|a - b|^2 / sigma2_q)` over the listed `sigma2` values.
    GaussianMixture { bandwidths: Vec<f64> },
    Linear,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::GaussianMixture {
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
        }
    }
}

impl KernelSpec {
    pub fn gaussian(bandwidths: &[f64]) -> Result<Self> {
        let spec = KernelSpec::GaussianMixture {
            bandwidths: bandwidths.to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::GaussianMixture { bandwidths } => {
                if bandwidths.is_empty() {
                    return Err(Error::InvalidKernel(
                        "gaussian mixture needs at least one bandwidth".into(),
                    ));
                }
                if let Some(bad) = bandwidths.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
                    return Err(Error::InvalidKernel(format!(
                        "bandwidth sigma^2 must be positive and finite, got {bad}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Linear => Ok(()),
        }
    }

    /// Kernel value for a single pair of vectors.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::GaussianMixture { bandwidths } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                mixture(bandwidths, d2)
            }
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::GaussianMixture { bandwidths } => {
                let parts: Vec<String> = bandwidths.iter().map(|b| b.to_string()).collect();
                write!(f, "gaussian:{}", parts.join(","))
            }
            KernelSpec::Linear => write!(f, "linear"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// `linear` or `gaussian:1,3,5`
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "linear" {
            return Ok(KernelSpec::Linear);
        }
        let list = s.strip_prefix("gaussian:").unwrap_or(s);
        let bandwidths = parse_list(list)
            .map_err(|e| Error::InvalidKernel(format!("cannot parse `{s}`: {e}")))?;
        KernelSpec::gaussian(&bandwidths)
    }
}

pub(crate) fn parse_list(s: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>())
        .collect()
}

fn mixture(bandwidths: &[f64], d2: f64) -> f64 {
    let q = bandwidths.len() as f64;
    bandwidths.iter().map(|s| (-d2 / s).exp()).sum::<f64>() / q
}

/// `-(1/q) sum_q (1/sigma2_q) exp(-d2/sigma2_q)`: derivative of the mixture
/// with respect to the squared distance.
fn mixture_slope(bandwidths: &[f64], d2: f64) -> f64 {
    let q = bandwidths.len() as f64;
    -bandwidths.iter().map(|s| (-d2 / s).exp() / s).sum::<f64>() / q
}

/// Pairwise squared distances via `|a|^2 + |b|^2 - 2<a,b>`, clamped at 0.
fn sq_distances(a: &Mat, b: &Mat, same: bool) -> Result<Mat> {
    let cross = matmul_nt(a, b)?;
    let na = a.row_sq_norms();
    let nb = if same { na.clone() } else { b.row_sq_norms() };
    let mut d = cross;
    for i in 0..d.rows() {
        let row = d.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (na[i] + nb[j] - 2.0 * *v).max(0.0);
        }
    }
    if same {
        for i in 0..d.rows() {
            d[(i, i)] = 0.0;
            for j in (i + 1)..d.cols() {
                let v = 0.5 * (d[(i, j)] + d[(j, i)]);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
    }
    Ok(d)
}

fn check_inputs(a: &Mat, b: &Mat) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::EmptyBatch("gram"));
    }
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            op: "gram",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// `G_ij = k(a_i, b_j)` with samples as rows.
///
/// When `a` and `b` hold the same data the result is exactly symmetric with a
/// unit diagonal for the Gaussian mixture.
pub fn gram(spec: &KernelSpec, a: &Mat, b: &Mat) -> Result<Mat> {
    check_inputs(a, b)?;
    spec.validate()?;
    let same = std::ptr::eq(a, b) || a == b;
    let g = match spec {
        KernelSpec::GaussianMixture { bandwidths } => {
            sq_distances(a, b, same)?.map(|d2| mixture(bandwidths, d2))
        }
        KernelSpec::Linear => {
            let mut g = matmul_nt(a, b)?;
            if same {
                for i in 0..g.rows() {
                    for j in (i + 1)..g.cols() {
                        let v = 0.5 * (g[(i, j)] + g[(j, i)]);
                        g[(i, j)] = v;
                        g[(j, i)] = v;
                    }
                }
            }
            g
        }
    };
    g.ensure_finite("gram")
}

/// Kernel applied after an encoder: `gram(spec, encode(a), encode(b))`.
pub fn compound_gram<F>(spec: &KernelSpec, encode: F, a: &Mat, b: &Mat) -> Result<Mat>
where
    F: Fn(&Mat) -> Result<Mat>,
{
    let za = encode(a)?;
    let zb = if std::ptr::eq(a, b) { za.clone() } else { encode(b)? };
    gram(spec, &za, &zb)
}

/// Gradients of `sum_ij upstream_ij * G_ij` with respect to `a` and `b`.
///
/// For a self-Gram (`a` and `b` are the same leaf) the caller adds the two
/// returned matrices.
pub fn gram_backward(spec: &KernelSpec, a: &Mat, b: &Mat, upstream: &Mat) -> Result<(Mat, Mat)> {
    check_inputs(a, b)?;
    if upstream.shape() != (a.rows(), b.rows()) {
        return Err(Error::DimensionMismatch {
            op: "gram_backward",
            left: upstream.shape(),
            right: (a.rows(), b.rows()),
        });
    }
    match spec {
        KernelSpec::Linear => Ok((matmul(upstream, b)?, matmul_tn(upstream, a)?)),
        KernelSpec::GaussianMixture { bandwidths } => {
            // dG_ij/da_i = 2 * slope(d_ij) * (a_i - b_j)
            let d = sq_distances(a, b, false)?;
            let mut w = Mat::zeros(a.rows(), b.rows());
            for i in 0..a.rows() {
                for j in 0..b.rows() {
                    w[(i, j)] = 2.0 * upstream[(i, j)] * mixture_slope(bandwidths, d[(i, j)]);
                }
            }
            let row = w.row_sums();
            let col = w.col_sums();
            let mut ga = matmul(&w, b)?.scale(-1.0);
            for i in 0..a.rows() {
                for (g, x) in ga.row_mut(i).iter_mut().zip(a.row(i)) {
                    *g += row[i] * x;
                }
            }
            let mut gb = matmul_tn(&w, a)?.scale(-1.0);
            for j in 0..b.rows() {
                for (g, x) in gb.row_mut(j).iter_mut().zip(b.row(j)) {
                    *g += col[j] * x;
                }
            }
            Ok((ga.ensure_finite("gram_backward")?, gb.ensure_finite("gram_backward")?))
        }
    }
}

/// One-hot rows for integer labels.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Mat {
    let mut m = Mat::zeros(labels.len(), num_classes);
    for (i, &y) in labels.iter().enumerate() {
        m[(i, y)] = 1.0;
    }
    m
}

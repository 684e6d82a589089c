//! Empirical conditional MMD between two labelled batches.
//!
//! With `P = (K + lambda I)^{-1}` on each side,
//!
//! ```text
//! CMMD = Tr(K_s P_s L_s P_s) + Tr(K_t P_t L_t P_t) - 2 Tr(K_ts P_s L_st P_t)
//! ```
//!
//! where `K_ts` is `n_t x n_s` (t rows, s columns) and `L_st` is `n_s x n_t`.
//! That orientation is the one for which the trace formula reproduces
//! `|C_s - C_t|_F^2` of the explicit conditional-embedding operators built by
//! [`cmmd_oracle`]; the acceptance suite checks the two against each other.
//!
//! Gradients come from a fixed reverse pass over this expression rather than
//! a general tape. Every inverse is applied through a Cholesky factor.

use crate::error::{Error, Result};
use crate::kernels::{gram, gram_backward, KernelSpec};
use crate::linalg::{matmul, matmul_tn, trace_of_product, Cholesky, Mat, SYMMETRY_TOLERANCE};

/// Batch inputs retained so gradients can flow back into them.
#[derive(Debug, Clone)]
pub struct Leaves {
    pub data_kernel: KernelSpec,
    pub label_kernel: KernelSpec,
    /// Latent codes (or raw inputs) of the labelled batch, `n_s x d`.
    pub z_s: Mat,
    /// Label vectors of the labelled batch, `n_s x C`.
    pub y_s: Mat,
    pub z_t: Mat,
    /// Predicted label vectors of the second batch, `n_t x C`.
    pub y_t: Mat,
}

#[derive(Debug, Clone)]
pub struct GramPack {
    pub k_s: Mat,
    pub k_t: Mat,
    /// `n_t x n_s`
    pub k_ts: Mat,
    pub l_s: Mat,
    pub l_t: Mat,
    /// `n_s x n_t`
    pub l_st: Mat,
    pub lambda: f64,
    leaves: Option<Leaves>,
}

impl GramPack {
    pub fn new(
        k_s: Mat,
        k_t: Mat,
        k_ts: Mat,
        l_s: Mat,
        l_t: Mat,
        l_st: Mat,
        lambda: f64,
    ) -> Result<Self> {
        let pack = GramPack {
            k_s,
            k_t,
            k_ts,
            l_s,
            l_t,
            l_st,
            lambda,
            leaves: None,
        };
        pack.validate()?;
        Ok(pack)
    }

    /// Builds all six Grams from batch leaves and keeps the leaves for
    /// [`cmmd_backward`].
    pub fn from_leaves(leaves: Leaves, lambda: f64) -> Result<Self> {
        let Leaves {
            data_kernel,
            label_kernel,
            z_s,
            y_s,
            z_t,
            y_t,
        } = &leaves;
        if z_s.rows() != y_s.rows() || z_t.rows() != y_t.rows() {
            return Err(Error::DimensionMismatch {
                op: "GramPack::from_leaves",
                left: (z_s.rows(), z_t.rows()),
                right: (y_s.rows(), y_t.rows()),
            });
        }
        let k_s = gram(data_kernel, z_s, z_s)?;
        let k_t = gram(data_kernel, z_t, z_t)?;
        let k_ts = gram(data_kernel, z_t, z_s)?;
        let l_s = gram(label_kernel, y_s, y_s)?;
        let l_t = gram(label_kernel, y_t, y_t)?;
        let l_st = gram(label_kernel, y_s, y_t)?;
        let mut pack = GramPack::new(k_s, k_t, k_ts, l_s, l_t, l_st, lambda)?;
        pack.leaves = Some(leaves);
        Ok(pack)
    }

    /// Linear-kernel Grams from explicit feature rows (`K = Phi Phi^T`).
    pub fn from_features(phi_s: &Mat, psi_s: &Mat, phi_t: &Mat, psi_t: &Mat, lambda: f64) -> Result<Self> {
        let leaves = Leaves {
            data_kernel: KernelSpec::Linear,
            label_kernel: KernelSpec::Linear,
            z_s: phi_s.clone(),
            y_s: psi_s.clone(),
            z_t: phi_t.clone(),
            y_t: psi_t.clone(),
        };
        GramPack::from_leaves(leaves, lambda)
    }

    pub fn leaves(&self) -> Option<&Leaves> {
        self.leaves.as_ref()
    }

    pub fn n_s(&self) -> usize {
        self.k_s.rows()
    }

    pub fn n_t(&self) -> usize {
        self.k_t.rows()
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        let (n_s, n_t) = (self.k_s.rows(), self.k_t.rows());
        let expect = [
            ("k_s", &self.k_s, (n_s, n_s)),
            ("k_t", &self.k_t, (n_t, n_t)),
            ("k_ts", &self.k_ts, (n_t, n_s)),
            ("l_s", &self.l_s, (n_s, n_s)),
            ("l_t", &self.l_t, (n_t, n_t)),
            ("l_st", &self.l_st, (n_s, n_t)),
        ];
        for (name, m, shape) in expect {
            if m.shape() != shape {
                return Err(Error::DimensionMismatch {
                    op: name,
                    left: m.shape(),
                    right: shape,
                });
            }
        }
        for m in [&self.k_s, &self.k_t, &self.l_s, &self.l_t] {
            let asym = m.max_asymmetry();
            if asym > SYMMETRY_TOLERANCE {
                return Err(Error::NotSymmetric {
                    max_asymmetry: asym,
                });
            }
        }
        if n_s == 0 || n_t == 0 {
            return Err(Error::EmptyBatch("GramPack"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmmdValue {
    pub term_s: f64,
    pub term_t: f64,
    pub cross_term: f64,
    pub total: f64,
}

struct Factored {
    chol_s: Cholesky,
    chol_t: Cholesky,
    /// `P_s L_s P_s`
    plp_s: Mat,
    plp_t: Mat,
    /// `P_s L_st P_t`
    cross: Mat,
}

fn factor(pack: &GramPack) -> Result<Factored> {
    let chol_s = Cholesky::factor(&pack.k_s.add_diagonal(pack.lambda))?;
    let chol_t = Cholesky::factor(&pack.k_t.add_diagonal(pack.lambda))?;
    let plp_s = chol_s.sandwich(&pack.l_s)?;
    let plp_t = chol_t.sandwich(&pack.l_t)?;
    let cross = chol_t.solve_right(&chol_s.solve(&pack.l_st)?)?;
    Ok(Factored {
        chol_s,
        chol_t,
        plp_s,
        plp_t,
        cross,
    })
}

fn value_from(pack: &GramPack, f: &Factored) -> Result<CmmdValue> {
    let term_s = trace_of_product(&pack.k_s, &f.plp_s)?;
    let term_t = trace_of_product(&pack.k_t, &f.plp_t)?;
    let cross_term = trace_of_product(&pack.k_ts, &f.cross)?;
    Ok(CmmdValue {
        term_s,
        term_t,
        cross_term,
        total: term_s + term_t - 2.0 * cross_term,
    })
}

pub fn cmmd_value(pack: &GramPack) -> Result<CmmdValue> {
    value_from(pack, &factor(pack)?)
}

/// `|C_s - C_t|_F^2` with `C = Psi^T (Phi Phi^T + lambda I)^{-1} Phi` formed
/// explicitly from finite-dimensional feature rows.
pub fn cmmd_oracle(phi_s: &Mat, psi_s: &Mat, phi_t: &Mat, psi_t: &Mat, lambda: f64) -> Result<f64> {
    let operator = |phi: &Mat, psi: &Mat| -> Result<Mat> {
        if phi.rows() != psi.rows() {
            return Err(Error::DimensionMismatch {
                op: "cmmd_oracle",
                left: phi.shape(),
                right: psi.shape(),
            });
        }
        let k = crate::linalg::matmul_nt(phi, phi)?.add_diagonal(lambda);
        let weighted = crate::linalg::spd_solve(&k, phi)?;
        matmul_tn(psi, &weighted)
    };
    let c_s = operator(phi_s, psi_s)?;
    let c_t = operator(phi_t, psi_t)?;
    let diff = c_s.sub(&c_t)?;
    Ok(diff.as_slice().iter().map(|v| v * v).sum())
}

/// `(K + lambda I)^{-1} K (K + lambda I)^{-1}`, the weight applied to the
/// label Gram inside each trace.
pub fn h_matrix(k: &Mat, lambda: f64) -> Result<Mat> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let chol = Cholesky::factor(&k.add_diagonal(lambda))?;
    let mut h = chol.sandwich(k)?;
    let n = h.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Gradients of the total with respect to each Gram matrix.
#[derive(Debug, Clone)]
pub struct GramGrads {
    pub k_s: Mat,
    pub k_t: Mat,
    pub k_ts: Mat,
    pub l_s: Mat,
    pub l_t: Mat,
    pub l_st: Mat,
}

/// Gradients with respect to the retained batch leaves.
#[derive(Debug, Clone)]
pub struct LeafGrads {
    pub z_s: Mat,
    pub z_t: Mat,
    pub y_t: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leaf {
    LatentS,
    LatentT,
    PredictedLabels,
}

fn gram_grads_from(pack: &GramPack, f: &Factored, upstream: f64) -> Result<GramGrads> {
    let pk_s = f.chol_s.solve(&pack.k_s)?; // P_s K_s
    let pk_t = f.chol_t.solve(&pack.k_t)?;
    let h_s = f.chol_s.solve_right(&pk_s)?;
    let h_t = f.chol_t.solve_right(&pk_t)?;

    // d Tr(K P L P)/dK = PLP - PLP K P - P K PLP
    let self_term = |plp: &Mat, pk: &Mat| -> Result<Mat> {
        let a = matmul(plp, &pk.transpose())?; // PLP (P K)^T = PLP K P
        let b = matmul(pk, plp)?; // P K PLP
        plp.sub(&a)?.sub(&b)
    };
    let mut g_ks = self_term(&f.plp_s, &pk_s)?;
    let mut g_kt = self_term(&f.plp_t, &pk_t)?;

    // cross = P_s L_st P_t;  T_x = Tr(K_ts cross)
    // dT_x/dK_s = -(cross K_ts P_s)^T, dT_x/dK_t = -(P_t K_ts cross)^T
    let cross_k = matmul(&f.cross, &pack.k_ts)?; // P_s L_st P_t K_ts
    let xs = f.chol_s.solve_right(&cross_k)?;
    g_ks.axpy(2.0, &xs.transpose())?;
    let pt_kts = f.chol_t.solve(&pack.k_ts)?; // P_t K_ts
    let xt = matmul(&pt_kts, &f.cross)?;
    g_kt.axpy(2.0, &xt.transpose())?;

    let g_kts = f.cross.transpose().scale(-2.0);
    // dT_x/dL_st = (P_t K_ts P_s)^T
    let pkp_ts = f.chol_s.solve_right(&pt_kts)?;
    let g_lst = pkp_ts.transpose().scale(-2.0);

    let s = upstream;
    Ok(GramGrads {
        k_s: g_ks.scale(s),
        k_t: g_kt.scale(s),
        k_ts: g_kts.scale(s),
        l_s: h_s.scale(s),
        l_t: h_t.scale(s),
        l_st: g_lst.scale(s),
    })
}

/// `upstream * d(total)/d(Gram)` for all six Grams.
pub fn gram_gradients(pack: &GramPack, upstream: f64) -> Result<GramGrads> {
    gram_grads_from(pack, &factor(pack)?, upstream)
}

fn leaf_grads_from(pack: &GramPack, g: &GramGrads) -> Result<LeafGrads> {
    let leaves = pack
        .leaves
        .as_ref()
        .ok_or(Error::BackwardWithoutForward("GramPack has no retained leaves"))?;
    let dk = &leaves.data_kernel;
    let lk = &leaves.label_kernel;

    let (a, b) = gram_backward(dk, &leaves.z_s, &leaves.z_s, &g.k_s)?;
    let mut z_s = a.add(&b)?;
    let (a, b) = gram_backward(dk, &leaves.z_t, &leaves.z_t, &g.k_t)?;
    let mut z_t = a.add(&b)?;
    let (gt, gs) = gram_backward(dk, &leaves.z_t, &leaves.z_s, &g.k_ts)?;
    z_s.axpy(1.0, &gs)?;
    z_t.axpy(1.0, &gt)?;

    let (a, b) = gram_backward(lk, &leaves.y_t, &leaves.y_t, &g.l_t)?;
    let mut y_t = a.add(&b)?;
    let (_, gy) = gram_backward(lk, &leaves.y_s, &leaves.y_t, &g.l_st)?;
    y_t.axpy(1.0, &gy)?;
    Ok(LeafGrads { z_s, z_t, y_t })
}

/// Value and all leaf gradients in one pass; what a training step uses.
pub fn cmmd_forward_backward(pack: &GramPack, upstream: f64) -> Result<(CmmdValue, LeafGrads)> {
    let f = factor(pack)?;
    let value = value_from(pack, &f)?;
    let g = gram_grads_from(pack, &f, upstream)?;
    Ok((value, leaf_grads_from(pack, &g)?))
}

/// `upstream * d(total)/d(leaf)`; the pack must have been built by
/// [`GramPack::from_leaves`].
pub fn cmmd_backward(pack: &GramPack, upstream: f64, wrt: Leaf) -> Result<Mat> {
    if pack.leaves.is_none() {
        return Err(Error::BackwardWithoutForward(
            "GramPack has no retained leaves",
        ));
    }
    let g = gram_gradients(pack, upstream)?;
    let all = leaf_grads_from(pack, &g)?;
    Ok(match wrt {
        Leaf::LatentS => all.z_s,
        Leaf::LatentT => all.z_t,
        Leaf::PredictedLabels => all.y_t,
    })
}

//! Spectral and structural matrix primitives.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before an eigendecomposition.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Column-major stacking of a matrix.
pub fn vec_of(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &DVector<f64>, d1: usize, d2: usize) -> Result<DMatrix<f64>> {
    if v.len() != d1 * d2 {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {} cannot be reshaped to {d1}x{d2}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(d1, d2, v.as_slice()))
}

/// `<A, B> = tr(A^T B)`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// `[[0, A], [A^T, 0]]`.
pub fn hermitian_dilation(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (d1, d2) = a.shape();
    let mut h = DMatrix::zeros(d1 + d2, d1 + d2);
    h.view_mut((0, d1), (d1, d2)).copy_from(a);
    h.view_mut((d1, 0), (d2, d1)).copy_from(&a.transpose());
    h
}

/// Top-right `d1 x d2` block of a `(d1+d2)`-square matrix.
pub fn horizontal_truncation(m: &DMatrix<f64>, d1: usize, d2: usize) -> DMatrix<f64> {
    m.view((0, d1), (d1, d2)).into_owned()
}

fn psi(x: f64) -> f64 {
    if x >= 0.0 {
        (x + 0.5 * x * x).ln_1p()
    } else {
        -(-x + 0.5 * x * x).ln_1p()
    }
}

/// Catoni's influence function.
pub fn influence_psi(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("influence function argument {x}")));
    }
    Ok(psi(x))
}

/// Eigendecomposition with eigenvalues in ascending order.
#[derive(Clone, Debug)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

impl SortedEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().expect("empty spectrum")
    }
}

fn symmetrized(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!("{:?} is not square", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let asym = (m - m.transpose()).norm();
    let rel = asym / m.norm().max(1.0);
    if rel > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(rel));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Symmetric eigendecomposition after a symmetry check.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SortedEigen> {
    let s = symmetrized(m)?;
    Ok(sym_eigen_unchecked(s))
}

pub(crate) fn sym_eigen_unchecked(s: DMatrix<f64>) -> SortedEigen {
    let n = s.nrows();
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    SortedEigen { values, vectors }
}

/// Largest eigenvalue of a symmetric matrix (no symmetry check).
pub(crate) fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigen_unchecked((m + m.transpose()) * 0.5).max()
}

/// Smallest eigenvalue of a symmetric matrix (no symmetry check).
pub(crate) fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigen_unchecked((m + m.transpose()) * 0.5).min()
}

/// `U diag(f(lambda_i)) U^T` for symmetric `M`.
pub fn spectral_map(f: impl Fn(f64) -> f64, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    Ok(rebuild_symmetric(&eig, f))
}

fn rebuild_symmetric(eig: &SortedEigen, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let n = eig.values.len();
    let mut out = DMatrix::zeros(n, n);
    for (i, &lam) in eig.values.iter().enumerate() {
        let w = f(lam);
        if w == 0.0 {
            continue;
        }
        let u = eig.vectors.column(i);
        out.ger(w, &u, &u, 1.0);
    }
    out
}

/// `(1/nu) psi(nu H(A))` truncated back to the `d1 x d2` block.
pub fn psi_tilde_nu(a: &DMatrix<f64>, nu: f64) -> Result<DMatrix<f64>> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidArgument(format!("nu must be positive, got {nu}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("psi_tilde argument".into()));
    }
    let (d1, d2) = a.shape();
    let dil = hermitian_dilation(a) * nu;
    let mapped = spectral_map(psi, &dil)?;
    Ok(horizontal_truncation(&mapped, d1, d2) / nu)
}

/// Thin SVD with singular values sorted in decreasing order.
#[derive(Clone, Debug)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (d1, d2) = a.shape();
        let k = d1.min(d2);
        if k == 0 {
            return Self {
                u: DMatrix::zeros(d1, 0),
                sigma: vec![],
                v_t: DMatrix::zeros(0, d2),
            };
        }
        let svd = to_faer(a).thin_svd().expect("SVD of a finite matrix");
        let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
        Self {
            u: DMatrix::from_fn(d1, k, |r, c| u[(r, order[c])]),
            sigma: order.iter().map(|&i| s[i]).collect(),
            v_t: DMatrix::from_fn(k, d2, |r, c| v[(c, order[r])]),
        }
    }

    /// `U diag(f(i, sigma_i)) V^T`.
    pub fn rebuild(&self, f: impl Fn(usize, f64) -> f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.u.nrows(), self.v_t.ncols());
        for (i, &s) in self.sigma.iter().enumerate() {
            let w = f(i, s);
            if w == 0.0 {
                continue;
            }
            out.ger(w, &self.u.column(i), &self.v_t.row(i).transpose(), 1.0);
        }
        out
    }
}

// nalgebra's SVD can lose accuracy on nearly rank-deficient input.
fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Singular values in decreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return vec![];
    }
    let mut s = to_faer(a).singular_values().expect("SVD of a finite matrix");
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).iter().sum()
}

pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Number of singular values above `tol`.
pub fn numerical_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    a.singular_values().iter().filter(|&&s| s > tol).count()
}

/// Best rank-`r` approximation in Frobenius norm.
pub fn best_rank_r(theta: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let (d1, d2) = theta.shape();
    if r > d1.min(d2) {
        return Err(Error::BadRank { rank: r, d1, d2 });
    }
    let svd = SortedSvd::new(theta);
    Ok(svd.rebuild(|i, s| if i < r { s } else { 0.0 }))
}

/// Hard singular-value thresholding: singular values at most `sigma_thres`
/// are set to zero.
pub fn svt_threshold(theta: &DMatrix<f64>, sigma_thres: f64) -> DMatrix<f64> {
    let svd = SortedSvd::new(theta);
    svd.rebuild(|_, s| if s <= sigma_thres { 0.0 } else { s })
}

/// Soft singular-value thresholding, the proximal map of `tau * ||.||_*`.
pub fn svt_soft(theta: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let svd = SortedSvd::new(theta);
    svd.rebuild(|_, s| (s - tau).max(0.0))
}

/// Euclidean projection of a nonnegative vector onto `{s >= 0, sum s <= radius}`.
pub fn project_l1_ball_nonneg(v: &[f64], radius: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= radius {
        return clipped;
    }
    let shift = simplex_shift(&clipped, radius);
    clipped.iter().map(|x| (x - shift).max(0.0)).collect()
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let shift = simplex_shift(v, 1.0);
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}

// Threshold t with sum max(v_i - t, 0) = radius (sort-and-shift).
fn simplex_shift(v: &[f64], radius: f64) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - radius) / (k + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        } else {
            break;
        }
    }
    shift
}

/// The constraint set for the parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamSpace {
    Unconstrained { d1: usize, d2: usize },
    SkewSymmetric { d: usize },
    NuclearBall { d1: usize, d2: usize, radius: f64 },
}

impl ParamSpace {
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            ParamSpace::Unconstrained { d1, d2 } | ParamSpace::NuclearBall { d1, d2, .. } => (d1, d2),
            ParamSpace::SkewSymmetric { d } => (d, d),
        }
    }

    fn check_shape(&self, theta: &DMatrix<f64>) -> Result<()> {
        if theta.shape() != self.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {:?} vs space {:?}",
                theta.shape(),
                self.shape()
            )));
        }
        Ok(())
    }

    /// Frobenius projection onto the set.
    pub fn project(&self, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shape(theta)?;
        Ok(match *self {
            ParamSpace::Unconstrained { .. } => theta.clone(),
            ParamSpace::SkewSymmetric { .. } => (theta - theta.transpose()) * 0.5,
            ParamSpace::NuclearBall { radius, .. } => {
                let svd = SortedSvd::new(theta);
                if svd.sigma.iter().sum::<f64>() <= radius {
                    theta.clone()
                } else {
                    let projected = project_l1_ball_nonneg(&svd.sigma, radius);
                    svd.rebuild(|i, _| projected[i])
                }
            }
        })
    }

    /// Proximal map of `tau * ||.||_*` restricted to the set.
    pub fn prox_nuclear(&self, y: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
        self.check_shape(y)?;
        Ok(match *self {
            ParamSpace::Unconstrained { .. } => svt_soft(y, tau),
            // Soft thresholding maps skew matrices to skew matrices.
            ParamSpace::SkewSymmetric { .. } => svt_soft(&((y - y.transpose()) * 0.5), tau),
            // Both steps act on the same singular vectors; the composition is exact.
            ParamSpace::NuclearBall { .. } => self.project(&svt_soft(y, tau))?,
        })
    }

    /// Frobenius distance to the set.
    pub fn residual(&self, theta: &DMatrix<f64>) -> Result<f64> {
        Ok((self.project(theta)? - theta).norm())
    }

    /// The parameter space of a given kind at new dimensions.
    pub fn with_shape(&self, d1: usize, d2: usize) -> Result<Self> {
        Ok(match *self {
            ParamSpace::Unconstrained { .. } => ParamSpace::Unconstrained { d1, d2 },
            ParamSpace::SkewSymmetric { .. } if d1 == d2 => ParamSpace::SkewSymmetric { d: d1 },
            ParamSpace::SkewSymmetric { .. } => {
                return Err(Error::ShapeMismatch(format!("skew-symmetric space needs square shape, got {d1}x{d2}")))
            }
            ParamSpace::NuclearBall { radius, .. } => ParamSpace::NuclearBall { d1, d2, radius },
        })
    }
}

//! Sampling policies over a finite arm set, the design and Hessian matrices
//! they induce, the GL objective, and the design solvers.

mod caratheodory;
mod eopt;
mod glopt;
mod simplex;
mod strategy;

pub use caratheodory::{approx_caratheodory, CaratheodoryReport};
pub use eopt::{e_optimal_design, ecad, EcadReport};
pub use glopt::{gl_optimal_design, gl_smoothed, gl_subgradient};
pub use strategy::{
    DesignContext, DesignRegistry, DesignStrategy, EcadStrategy, EOptimalStrategy, GlOptimalStrategy,
    UniformStrategy,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::GlmModel;
use crate::matfun::{op_norm, sym_eigen_unchecked, vec_of, SortedEigen};

/// Tolerance on `||X||_op <= 1`.
pub const OP_NORM_TOL: f64 = 1e-9;
/// Largest condition number of `H(pi; theta)` we accept.
pub const MAX_CONDITION: f64 = 1e12;
/// Weights below this are dropped from a solver's output.
pub const PRUNE_THRESHOLD: f64 = 1e-12;

/// A finite set of `d1 x d2` sensing matrices spanning the matrix space.
#[derive(Clone, Debug)]
pub struct ArmSet {
    arms: Vec<DMatrix<f64>>,
    d1: usize,
    d2: usize,
    /// `vec(X_a)` stacked as columns, `d1 d2 x K`.
    vecs: DMatrix<f64>,
}

impl ArmSet {
    pub fn new(arms: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = arms.first().ok_or(Error::EmptyData)?;
        let (d1, d2) = first.shape();
        if d1 == 0 || d2 == 0 {
            return Err(Error::ShapeMismatch("zero-sized arm".into()));
        }
        for (i, x) in arms.iter().enumerate() {
            if x.shape() != (d1, d2) {
                return Err(Error::ShapeMismatch(format!("arm {i} is {:?}, expected {:?}", x.shape(), (d1, d2))));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("arm {i}")));
            }
            let n = op_norm(x);
            if n > 1.0 + OP_NORM_TOL {
                return Err(Error::InvalidArgument(format!("arm {i} has operator norm {n} > 1")));
            }
        }
        let n = d1 * d2;
        let mut vecs = DMatrix::zeros(n, arms.len());
        for (a, x) in arms.iter().enumerate() {
            vecs.set_column(a, &vec_of(x));
        }
        let sv = crate::matfun::singular_values(&vecs);
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let rank = sv.iter().filter(|&&s| s > 1e-9 * smax.max(1e-300)).count();
        if rank < n {
            return Err(Error::SpanDeficient { rank, dim: n });
        }
        Ok(Self { arms, d1, d2, vecs })
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    /// Dimension of the vectorized space, `d1 d2`.
    pub fn dim(&self) -> usize {
        self.d1 * self.d2
    }

    pub fn arms(&self) -> &[DMatrix<f64>] {
        &self.arms
    }

    pub fn arm(&self, a: usize) -> &DMatrix<f64> {
        &self.arms[a]
    }

    /// Matrix whose columns are `vec(X_a)`.
    pub fn vec_matrix(&self) -> &DMatrix<f64> {
        &self.vecs
    }

    /// `<X_a, theta>` for every arm.
    pub fn inner_products(&self, theta: &DMatrix<f64>) -> DVector<f64> {
        self.vecs.tr_mul(&vec_of(theta))
    }

    fn check_design(&self, design: &Design) -> Result<()> {
        if design.len() != self.len() {
            return Err(Error::IndexMismatch(format!(
                "design over {} arms, arm set has {}",
                design.len(),
                self.len()
            )));
        }
        Ok(())
    }

    fn check_theta(&self, theta: &DMatrix<f64>) -> Result<()> {
        if theta.shape() != (self.d1, self.d2) {
            return Err(Error::ShapeMismatch(format!(
                "parameter {:?} vs arms {:?}",
                theta.shape(),
                (self.d1, self.d2)
            )));
        }
        Ok(())
    }

    /// `sum_a w_a vec(X_a) vec(X_a)^T`.
    pub(crate) fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        for (a, &wa) in w.iter().enumerate() {
            if wa != 0.0 {
                let v = self.vecs.column(a);
                g.ger(wa, &v, &v, 1.0);
            }
        }
        g
    }

    /// `v_a^T Q v_a` for every arm.
    pub(crate) fn quadratic_forms(&self, q: &DMatrix<f64>) -> Vec<f64> {
        let qv = q * &self.vecs;
        (0..self.len()).map(|a| self.vecs.column(a).dot(&qv.column(a))).collect()
    }

    /// `mu'(<X_a, theta>)` for every arm.
    pub fn curvatures(&self, model: &GlmModel, theta: &DMatrix<f64>) -> Vec<f64> {
        self.inner_products(theta).iter().map(|&z| model.mu_dot(z)).collect()
    }
}

/// A probability distribution over the arms of an [`ArmSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    weights: Vec<f64>,
}

impl Design {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyData);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("design weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 * weights.len().max(1) as f64 {
            return Err(Error::InvalidArgument(format!("design weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    /// Normalizes nonnegative weights to sum to one.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidArgument("weights have no positive mass".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn point_mass(k: usize, arm: usize) -> Self {
        let mut weights = vec![0.0; k];
        weights[arm] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Indices with positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&a| self.weights[a] > 0.0).collect()
    }

    /// Drops weights below `threshold` and renormalizes.
    pub fn pruned(&self, threshold: f64) -> Self {
        let kept: Vec<f64> = self.weights.iter().map(|&w| if w < threshold { 0.0 } else { w }).collect();
        let total: f64 = kept.iter().sum();
        if total <= 0.0 {
            return self.clone();
        }
        Self {
            weights: kept.into_iter().map(|w| w / total).collect(),
        }
    }

    /// A sampler that draws arm indices i.i.d. from the design.
    pub fn sampler(&self) -> DesignSampler {
        let mut cumulative = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for &w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        DesignSampler { cumulative }
    }
}

/// Inverse-CDF sampler over arm indices.
#[derive(Clone, Debug)]
pub struct DesignSampler {
    cumulative: Vec<f64>,
}

impl DesignSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("empty design");
        let u = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        // Guard against landing on a trailing zero-weight arm through rounding.
        let mut i = idx.min(self.cumulative.len() - 1);
        while i > 0 && self.cumulative[i] == self.cumulative[i - 1] {
            i -= 1;
        }
        i
    }
}

/// `V(pi) = E_{X ~ pi}[vec(X) vec(X)^T]`.
pub fn design_matrix(design: &Design, arms: &ArmSet) -> Result<DMatrix<f64>> {
    arms.check_design(design)?;
    Ok(arms.weighted_gram(design.weights()))
}

/// `H(pi; theta) = E_{X ~ pi}[mu'(<X, theta>) vec(X) vec(X)^T]`.
pub fn hessian_matrix(
    design: &Design,
    arms: &ArmSet,
    model: &GlmModel,
    theta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    arms.check_design(design)?;
    arms.check_theta(theta)?;
    let curv = arms.curvatures(model, theta);
    let w: Vec<f64> = design.weights().iter().zip(&curv).map(|(p, c)| p * c).collect();
    Ok(arms.weighted_gram(&w))
}

/// Inverse of a symmetric positive definite matrix through its
/// eigendecomposition, refusing ill-conditioned input.
pub fn guarded_inverse(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, SortedEigen)> {
    let eig = sym_eigen_unchecked((h + h.transpose()) * 0.5);
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || !lo.is_finite() || hi / lo > MAX_CONDITION {
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(Error::SingularHessian(cond));
    }
    let n = h.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for (i, &lam) in eig.values.iter().enumerate() {
        let u = eig.vectors.column(i);
        inv.ger(1.0 / lam, &u, &u, 1.0);
    }
    Ok((inv, eig))
}

/// The two block families of `H(pi; theta)^{-1}` and the resulting GL value.
///
/// Vectorization is column-major, so index `l + d1 m` addresses entry
/// `(l, m)`. The contiguous family holds the `d1 x d1` diagonal blocks (one per
/// column `m`); the strided family holds the `d2 x d2` blocks with stride `d1`
/// (one per row `m`).
#[derive(Clone, Debug, Serialize)]
pub struct GlBreakdown {
    #[serde(skip)]
    pub contiguous_blocks: Vec<DMatrix<f64>>,
    #[serde(skip)]
    pub strided_blocks: Vec<DMatrix<f64>>,
    /// `lambda_max` of the sum of the contiguous blocks.
    pub stat_contiguous: f64,
    /// `lambda_max` of the sum of the strided blocks.
    pub stat_strided: f64,
    pub gl: f64,
}

pub(crate) fn contiguous_block_sum(m: &DMatrix<f64>, d1: usize, d2: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(d1, d1);
    for col in 0..d2 {
        s += m.view((col * d1, col * d1), (d1, d1));
    }
    s
}

pub(crate) fn strided_block_sum(m: &DMatrix<f64>, d1: usize, d2: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d2, d2, |l, k| (0..d1).map(|row| m[(row + d1 * l, row + d1 * k)]).sum())
}

pub(crate) fn gl_from_inverse(m: &DMatrix<f64>, d1: usize, d2: usize) -> GlBreakdown {
    let contiguous_blocks: Vec<DMatrix<f64>> =
        (0..d2).map(|col| m.view((col * d1, col * d1), (d1, d1)).into_owned()).collect();
    let strided_blocks: Vec<DMatrix<f64>> = (0..d1)
        .map(|row| DMatrix::from_fn(d2, d2, |l, k| m[(row + d1 * l, row + d1 * k)]))
        .collect();
    let stat_contiguous = crate::matfun::lambda_max(&contiguous_block_sum(m, d1, d2));
    let stat_strided = crate::matfun::lambda_max(&strided_block_sum(m, d1, d2));
    GlBreakdown {
        contiguous_blocks,
        strided_blocks,
        stat_contiguous,
        stat_strided,
        gl: stat_contiguous.max(stat_strided),
    }
}

/// Evaluates `GL(pi; theta0)`.
pub fn gl_objective(
    design: &Design,
    arms: &ArmSet,
    model: &GlmModel,
    theta0: &DMatrix<f64>,
) -> Result<GlBreakdown> {
    let h = hessian_matrix(design, arms, model, theta0)?;
    let (m, _) = guarded_inverse(&h)?;
    Ok(gl_from_inverse(&m, arms.d1(), arms.d2()))
}

/// `lambda_min(V(pi))`.
pub fn e_objective(design: &Design, arms: &ArmSet) -> Result<f64> {
    Ok(crate::matfun::lambda_min(&design_matrix(design, arms)?))
}

/// Options shared by the iterative design solvers.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative optimality tolerance of the certificate.
    pub tol: f64,
    pub max_iters: usize,
    /// Return the best iterate instead of failing when the cap is hit.
    pub lenient: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iters: 5000,
            lenient: false,
        }
    }
}

/// Output of a design solver.
#[derive(Clone, Debug, Serialize)]
pub struct DesignReport {
    pub design: Design,
    pub objective_value: f64,
    /// Relative optimality gap bound (zero for closed-form designs).
    pub certificate: f64,
    pub iterations: usize,
    pub converged: bool,
}

use nalgebra::DMatrix;
use rand_distr::StandardNormal;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::AggregatedData;
use crate::glm::GlmModel;
use crate::rng::StreamRng;

pub const BMF_STEP: f64 = 0.01;
pub const BMF_MAX_ITERS: usize = 10_000;
pub const BMF_GRAD_TOL: f64 = 1e-6;
pub const BMF_INIT_SCALE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct BmfOutput {
    #[serde(with = "crate::serde_matrix")]
    pub theta: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Negative log-likelihood at each iterate.
    pub trace: Vec<f64>,
}

/// Gradient descent on the likelihood over `theta = U U^T` with a small
/// random start.
pub fn bmf_baseline(data: &AggregatedData, model: &GlmModel, r: usize, rng: &mut StreamRng) -> Result<BmfOutput> {
    let (d1, d2) = data.shape();
    if d1 != d2 {
        return Err(Error::ShapeMismatch(format!("factorization needs a square parameter, got {d1}x{d2}")));
    }
    if r == 0 || r > d1 {
        return Err(Error::BadRank { rank: r, d1, d2 });
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut u = DMatrix::from_fn(d1, r, |_, _| BMF_INIT_SCALE * rng.sample::<f64, _>(StandardNormal));
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < BMF_MAX_ITERS {
        let theta = &u * u.transpose();
        trace.push(data.neg_log_likelihood(model, &theta));
        let g = data.gradient(model, &theta);
        let grad_u = (&g + g.transpose()) * &u;
        if grad_u.norm() < BMF_GRAD_TOL {
            converged = true;
            break;
        }
        u -= grad_u * BMF_STEP;
        iterations += 1;
    }
    let theta = &u * u.transpose();
    Ok(BmfOutput {
        theta,
        iterations,
        converged,
        trace,
    })
}

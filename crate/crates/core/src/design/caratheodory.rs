use nalgebra::DMatrix;
use serde::Serialize;

use super::{ArmSet, Design, PRUNE_THRESHOLD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct CaratheodoryReport {
    pub design: Design,
    /// `||V(design) - V(target)||_F`.
    pub distance: f64,
    /// `min(|supp target|, ceil(4 R^2 / epsilon^2))` with `R` the largest atom norm.
    pub support_bound: usize,
    pub iterations: usize,
}

/// Finds a sparse design whose design matrix is within `epsilon` of the
/// target's in Frobenius norm, using Frank-Wolfe with exact line search over
/// the atoms `vec(X_a) vec(X_a)^T` in the target's support.
pub fn approx_caratheodory(target: &Design, arms: &ArmSet, epsilon: f64) -> Result<CaratheodoryReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    arms.check_design(target)?;
    let support = target.support();
    let goal = arms.weighted_gram(target.weights());
    let atom = |a: usize| {
        let v = arms.vec_matrix().column(a);
        &v * v.transpose()
    };
    let radius = support.iter().map(|&a| arms.vec_matrix().column(a).norm_squared()).fold(0.0, f64::max);
    let support_bound = support.len().min((4.0 * radius * radius / (epsilon * epsilon)).ceil() as usize);

    let start = support
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let da = (atom(a) - &goal).norm();
            let db = (atom(b) - &goal).norm();
            da.total_cmp(&db)
        })
        .expect("nonempty support");
    let mut weights = vec![0.0; target.len()];
    weights[start] = 1.0;
    let mut current: DMatrix<f64> = atom(start);
    let cap = 10 * support_bound.max(1000);
    let mut iterations = 0;
    let mut distance = (&current - &goal).norm();
    while distance > epsilon && iterations < cap {
        let resid = &current - &goal;
        let scores = arms.quadratic_forms(&resid);
        let s = support
            .iter()
            .copied()
            .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .expect("nonempty support");
        let dir = atom(s) - &current;
        let denom = dir.norm_squared();
        if denom <= 0.0 {
            break;
        }
        let gamma = (-(resid.dot(&dir)) / denom).clamp(0.0, 1.0);
        if gamma <= 0.0 {
            break;
        }
        for w in &mut weights {
            *w *= 1.0 - gamma;
        }
        weights[s] += gamma;
        current += dir * gamma;
        distance = (&current - &goal).norm();
        iterations += 1;
    }
    let design = Design::from_unnormalized(weights)?.pruned(PRUNE_THRESHOLD);
    let distance = (arms.weighted_gram(design.weights()) - &goal).norm();
    if design.support().len() >= support.len() {
        return Ok(CaratheodoryReport {
            design: target.clone(),
            distance: 0.0,
            support_bound,
            iterations,
        });
    }
    if distance > epsilon {
        return Err(Error::NonConvergence { iters: iterations, gap: distance });
    }
    Ok(CaratheodoryReport {
        design,
        distance,
        support_bound,
        iterations,
    })
}

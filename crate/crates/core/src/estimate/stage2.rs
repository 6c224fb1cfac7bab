use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::ArmSet;
use crate::error::{Error, Result};
use crate::glm::GlmModel;
use crate::matfun::{psi_tilde_nu, unvec, vec_of};

/// How the hard-thresholding level is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `sqrt(8 (1 + R_s) GL / N2 * log(4 (d1 + d2) / delta))`.
    #[default]
    Theory,
    /// `sqrt(16 GL / N2 * log(4 (d1 + d2) / delta))`, the experimental setting.
    Experiment,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StageIIConfig {
    pub nu_override: Option<f64>,
    pub sigma_thres_override: Option<f64>,
    pub delta: f64,
    pub rank_cap: Option<usize>,
    #[serde(default)]
    pub threshold_rule: ThresholdRule,
}

impl StageIIConfig {
    pub fn new(delta: f64) -> Self {
        Self {
            nu_override: None,
            sigma_thres_override: None,
            delta,
            rank_cap: None,
            threshold_rule: ThresholdRule::Theory,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::BadConfidence(self.delta));
        }
        if let Some(nu) = self.nu_override {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::InvalidArgument(format!("nu must be positive, got {nu}")));
            }
        }
        if let Some(s) = self.sigma_thres_override {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {s}")));
            }
        }
        Ok(())
    }

    fn log_term(&self, d1: usize, d2: usize) -> f64 {
        (4.0 * (d1 + d2) as f64 / self.delta).ln()
    }

    /// Catoni scale for `n2` samples at GL value `gl`.
    pub fn nu(&self, model: &GlmModel, gl: f64, n2: usize, d1: usize, d2: usize) -> f64 {
        self.nu_override
            .unwrap_or_else(|| (2.0 / ((1.0 + model.r_s()) * gl * n2 as f64) * self.log_term(d1, d2)).sqrt())
    }

    /// Singular-value threshold for `n2` samples at GL value `gl`.
    pub fn sigma_thres(&self, model: &GlmModel, gl: f64, n2: usize, d1: usize, d2: usize) -> f64 {
        if let Some(s) = self.sigma_thres_override {
            return s;
        }
        let factor = match self.threshold_rule {
            ThresholdRule::Theory => 8.0 * (1.0 + model.r_s()),
            ThresholdRule::Experiment => 16.0,
        };
        (factor * gl / n2 as f64 * self.log_term(d1, d2)).sqrt()
    }
}

/// `unvec(H^{-1} (y - mu(<X, theta0>)) vec(X))`.
pub fn one_sample_estimator(
    x: &DMatrix<f64>,
    y: f64,
    theta0: &DMatrix<f64>,
    h_inv: &DMatrix<f64>,
    model: &GlmModel,
) -> Result<DMatrix<f64>> {
    let (d1, d2) = theta0.shape();
    if x.shape() != (d1, d2) || h_inv.shape() != (d1 * d2, d1 * d2) {
        return Err(Error::ShapeMismatch(format!(
            "arm {:?}, parameter {:?}, inverse Hessian {:?}",
            x.shape(),
            theta0.shape(),
            h_inv.shape()
        )));
    }
    let resid = y - model.mu(x.dot(theta0));
    unvec(&(h_inv * vec_of(x) * resid), d1, d2)
}

/// Catoni-type robust mean: the average of `psi_tilde_nu` over the samples.
pub fn catoni_aggregate(samples: &[DMatrix<f64>], nu: f64) -> Result<DMatrix<f64>> {
    let weighted: Vec<(&DMatrix<f64>, f64)> = samples.iter().map(|s| (s, 1.0)).collect();
    catoni_aggregate_weighted(&weighted, nu)
}

/// Same as [`catoni_aggregate`] with repeated samples given as `(sample, count)`.
pub fn catoni_aggregate_weighted(samples: &[(&DMatrix<f64>, f64)], nu: f64) -> Result<DMatrix<f64>> {
    let (first, _) = samples.first().ok_or(Error::EmptySamples)?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidArgument(format!("nu must be positive, got {nu}")));
    }
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    let mut total = 0.0;
    for (s, count) in samples {
        if s.shape() != first.shape() {
            return Err(Error::ShapeMismatch(format!("sample {:?} vs {:?}", s.shape(), first.shape())));
        }
        acc += psi_tilde_nu(s, nu)? * *count;
        total += count;
    }
    Ok(acc / total)
}

/// Catoni aggregate of one-sample estimators for `(arm, response)` pulls.
/// Pulls sharing an arm and a response produce identical estimators, so each
/// distinct pair is transformed once.
pub fn catoni_from_pulls(
    arms: &ArmSet,
    pulls: &[(usize, f64)],
    theta0: &DMatrix<f64>,
    h_inv: &DMatrix<f64>,
    model: &GlmModel,
    nu: f64,
) -> Result<DMatrix<f64>> {
    if pulls.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut groups: BTreeMap<(usize, u64), f64> = BTreeMap::new();
    for &(a, y) in pulls {
        if a >= arms.len() {
            return Err(Error::BadIndex { index: a, len: arms.len() });
        }
        *groups.entry((a, y.to_bits())).or_insert(0.0) += 1.0;
    }
    let estimators: Vec<(DMatrix<f64>, f64)> = groups
        .into_iter()
        .map(|((a, bits), count)| {
            one_sample_estimator(arms.arm(a), f64::from_bits(bits), theta0, h_inv, model).map(|e| (e, count))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(&DMatrix<f64>, f64)> = estimators.iter().map(|(e, c)| (e, *c)).collect();
    catoni_aggregate_weighted(&refs, nu)
}

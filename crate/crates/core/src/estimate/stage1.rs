use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::ArmSet;
use crate::error::{Error, Result};
use crate::glm::GlmModel;
use crate::matfun::{nuclear_norm, unvec, vec_of, ParamSpace};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StageIConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub omega: ParamSpace,
}

impl StageIConfig {
    pub fn new(lambda: f64, omega: ParamSpace) -> Self {
        Self {
            lambda,
            max_iters: 5000,
            tol: 1e-8,
            omega,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageIOutput {
    #[serde(with = "crate::serde_matrix")]
    pub theta: DMatrix<f64>,
    pub objective: f64,
    /// Composite objective of each accepted iterate, starting at zero.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Observations grouped by distinct sensing matrix. The likelihood is linear
/// in the responses, so counts and response sums are sufficient.
#[derive(Clone, Debug)]
pub struct AggregatedData {
    d1: usize,
    d2: usize,
    vecs: DMatrix<f64>,
    counts: Vec<f64>,
    sums: Vec<f64>,
    total: usize,
}

impl AggregatedData {
    pub fn from_pairs(data: &[(DMatrix<f64>, f64)]) -> Result<Self> {
        let (first, _) = data.first().ok_or(Error::EmptyData)?;
        let (d1, d2) = first.shape();
        let mut groups: BTreeMap<Vec<u64>, (usize, f64, f64)> = BTreeMap::new();
        for (x, y) in data {
            if x.shape() != (d1, d2) {
                return Err(Error::ShapeMismatch(format!("observation {:?} vs {:?}", x.shape(), (d1, d2))));
            }
            if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("observation".into()));
            }
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            let next = groups.len();
            let e = groups.entry(key).or_insert((next, 0.0, 0.0));
            e.1 += 1.0;
            e.2 += y;
        }
        let mut entries: Vec<(Vec<u64>, (usize, f64, f64))> = groups.into_iter().collect();
        entries.sort_by_key(|(_, (first_seen, _, _))| *first_seen);
        let n = d1 * d2;
        let mut vecs = DMatrix::zeros(n, entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut sums = Vec::with_capacity(entries.len());
        for (j, (key, (_, c, s))) in entries.into_iter().enumerate() {
            for (i, bits) in key.into_iter().enumerate() {
                vecs[(i, j)] = f64::from_bits(bits);
            }
            counts.push(c);
            sums.push(s);
        }
        Ok(Self {
            d1,
            d2,
            vecs,
            counts,
            sums,
            total: data.len(),
        })
    }

    /// Aggregates `(arm index, response)` pulls on a fixed arm set.
    pub fn from_pulls(arms: &ArmSet, pulls: &[(usize, f64)]) -> Result<Self> {
        if pulls.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut counts = vec![0.0; arms.len()];
        let mut sums = vec![0.0; arms.len()];
        for &(a, y) in pulls {
            if a >= arms.len() {
                return Err(Error::BadIndex { index: a, len: arms.len() });
            }
            if !y.is_finite() {
                return Err(Error::NonFinite("response".into()));
            }
            counts[a] += 1.0;
            sums[a] += y;
        }
        Ok(Self {
            d1: arms.d1(),
            d2: arms.d2(),
            vecs: arms.vec_matrix().clone(),
            counts,
            sums,
            total: pulls.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    /// Average negative log-likelihood and, optionally, its gradient.
    fn loss(&self, model: &GlmModel, theta: &DMatrix<f64>, with_grad: bool) -> (f64, Option<DMatrix<f64>>) {
        let z = self.vecs.tr_mul(&vec_of(theta));
        let scale = 1.0 / (self.total as f64 * model.g_tau());
        let mut value = 0.0;
        let mut coef = DVector::zeros(z.len());
        for a in 0..z.len() {
            if self.counts[a] == 0.0 {
                continue;
            }
            value += self.counts[a] * model.m(z[a]) - self.sums[a] * z[a];
            coef[a] = (self.counts[a] * model.mu(z[a]) - self.sums[a]) * scale;
        }
        let grad = with_grad.then(|| unvec(&(&self.vecs * coef), self.d1, self.d2).expect("shape"));
        (value * scale, grad)
    }

    pub fn neg_log_likelihood(&self, model: &GlmModel, theta: &DMatrix<f64>) -> f64 {
        self.loss(model, theta, false).0
    }

    pub fn gradient(&self, model: &GlmModel, theta: &DMatrix<f64>) -> DMatrix<f64> {
        self.loss(model, theta, true).1.expect("requested")
    }
}

/// Nuclear-norm-regularized maximum likelihood on raw `(X, y)` pairs.
pub fn stage1_nuclear_mle(data: &[(DMatrix<f64>, f64)], model: &GlmModel, cfg: &StageIConfig) -> Result<StageIOutput> {
    stage1_aggregated(&AggregatedData::from_pairs(data)?, model, cfg)
}

/// Composite objective `L(theta) + lambda ||theta||_*`.
pub fn stage1_objective(data: &AggregatedData, model: &GlmModel, lambda: f64, theta: &DMatrix<f64>) -> f64 {
    data.neg_log_likelihood(model, theta) + lambda * nuclear_norm(theta)
}

/// Accelerated proximal gradient with backtracking and restart on objective
/// increase, started at zero. Returns the best iterate.
pub fn stage1_aggregated(data: &AggregatedData, model: &GlmModel, cfg: &StageIConfig) -> Result<StageIOutput> {
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", cfg.lambda)));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if data.shape() != cfg.omega.shape() {
        return Err(Error::ShapeMismatch(format!(
            "data {:?} vs parameter space {:?}",
            data.shape(),
            cfg.omega.shape()
        )));
    }
    let (d1, d2) = data.shape();
    let lam = cfg.lambda;
    let objective = |t: &DMatrix<f64>| stage1_objective(data, model, lam, t);

    let mut x = DMatrix::zeros(d1, d2);
    let mut fx = objective(&x);
    let mut trace = vec![fx];
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let max_sq = data.vecs.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
    let mut lip = (model.r_max_hint * max_sq / model.g_tau()).max(1e-12) * 0.1;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let (ly, gy) = data.loss(model, &y, true);
        let gy = gy.expect("requested");
        let z = loop {
            let z = cfg.omega.prox_nuclear(&(&y - &gy / lip), lam / lip)?;
            let diff = &z - &y;
            let lz = data.neg_log_likelihood(model, &z);
            if lz.is_finite() && lz <= ly + gy.dot(&diff) + 0.5 * lip * diff.norm_squared() + 1e-15 * ly.abs() {
                break z;
            }
            lip *= 2.0;
            if lip > 1e30 {
                return Err(Error::NonConvergence {
                    iters: iterations,
                    gap: f64::INFINITY,
                });
            }
        };
        let fz = objective(&z);
        if fz > fx {
            // Momentum overshot; the next step is a plain proximal step from x.
            y.clone_from(&x);
            t = 1.0;
            continue;
        }
        let decrease = (fx - fz) / fx.abs().max(1e-300);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &z + (&z - &x) * ((t - 1.0) / t_next);
        t = t_next;
        x = z;
        fx = fz;
        trace.push(fx);
        if decrease < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(StageIOutput {
        theta: x,
        objective: fx,
        trace,
        iterations,
        converged,
    })
}

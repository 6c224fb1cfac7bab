//! The two-stage estimator: nuclear-norm-regularized MLE, then a Catoni-type
//! refinement under a second design followed by hard singular-value
//! thresholding.

mod lambda;
mod stage1;
mod stage2;

pub use lambda::{bounded_case_min_samples, lambda_constant, lambda_selection, LambdaCase};
pub use stage1::{stage1_aggregated, stage1_nuclear_mle, stage1_objective, AggregatedData, StageIConfig, StageIOutput};
pub use stage2::{
    catoni_aggregate, catoni_aggregate_weighted, catoni_from_pulls, one_sample_estimator, StageIIConfig,
    ThresholdRule,
};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::design::{gl_objective, gl_optimal_design, guarded_inverse, hessian_matrix, ArmSet, Design, SolverOptions};
use crate::error::{Error, Result};
use crate::glm::{sample_observation, Family, GlmModel};
use crate::matfun::{best_rank_r, numerical_rank, op_norm, svt_threshold, ParamSpace};
use crate::rng::StreamRng;

/// Singular values at most this count as zero when reporting rank.
pub const RANK_TOL: f64 = 1e-10;

/// Where responses come from.
pub trait ObservationSource {
    fn observe(&mut self, arm: usize, rng: &mut StreamRng) -> Result<f64>;
}

/// Responses drawn from the model at a known parameter.
#[derive(Clone, Debug)]
pub struct SimulatedEnvironment {
    model: GlmModel,
    means: Vec<f64>,
}

impl SimulatedEnvironment {
    pub fn new(arms: &ArmSet, model: GlmModel, theta_star: &DMatrix<f64>) -> Result<Self> {
        if theta_star.shape() != (arms.d1(), arms.d2()) {
            return Err(Error::ShapeMismatch(format!(
                "parameter {:?} vs arms {:?}",
                theta_star.shape(),
                (arms.d1(), arms.d2())
            )));
        }
        Ok(Self {
            model,
            means: arms.inner_products(theta_star).iter().copied().collect(),
        })
    }
}

impl ObservationSource for SimulatedEnvironment {
    fn observe(&mut self, arm: usize, rng: &mut StreamRng) -> Result<f64> {
        let z = *self.means.get(arm).ok_or(Error::BadIndex {
            index: arm,
            len: self.means.len(),
        })?;
        sample_observation(&self.model, z, rng)
    }
}

/// Draws `n` arms i.i.d. from `design` and observes each.
pub fn collect_pulls(
    design: &Design,
    n: usize,
    env: &mut dyn ObservationSource,
    rng: &mut StreamRng,
) -> Result<Vec<(usize, f64)>> {
    let sampler = design.sampler();
    (0..n)
        .map(|_| {
            let a = sampler.draw(rng);
            env.observe(a, rng).map(|y| (a, y))
        })
        .collect()
}

/// The second-stage design: given, or optimized for GL at the pilot.
#[derive(Clone, Debug)]
pub enum SecondDesign {
    Fixed(Design),
    GlOptimal,
}

/// The model with its curvature bound tightened by the parameter space where
/// that is possible (Poisson over a nuclear ball).
pub fn effective_model(model: &GlmModel, omega: &ParamSpace, arms: &ArmSet) -> GlmModel {
    match (model.family, omega) {
        (Family::Poisson, ParamSpace::NuclearBall { radius, .. }) => {
            let reach = arms.arms().iter().map(op_norm).fold(0.0, f64::max);
            GlmModel::poisson_with_hint((radius * reach).exp())
        }
        _ => *model,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageIIOutput {
    #[serde(with = "crate::serde_matrix")]
    pub theta1: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub theta_hat: DMatrix<f64>,
    pub design: Design,
    pub gl_value: f64,
    /// Optimality certificate of the GL solver, when it ran.
    pub gl_certificate: Option<f64>,
    /// GL optimization hit a singular Hessian and the uniform design was used.
    pub gl_fallback: bool,
    pub nu: f64,
    pub sigma_thres: f64,
    pub rank_hat: usize,
    pub rank_capped: bool,
    #[serde(skip)]
    pub pulls: Vec<(usize, f64)>,
}

/// Stage II alone: resolves the design at `theta0`, samples `n2` pulls,
/// aggregates one-sample estimators, projects and thresholds.
#[allow(clippy::too_many_arguments)]
pub fn stage2_refine(
    arms: &ArmSet,
    model: &GlmModel,
    theta0: &DMatrix<f64>,
    second: &SecondDesign,
    n2: usize,
    omega: &ParamSpace,
    cfg: &StageIIConfig,
    gl_options: &SolverOptions,
    env: &mut dyn ObservationSource,
    rng: &mut StreamRng,
) -> Result<StageIIOutput> {
    cfg.validate()?;
    if n2 == 0 {
        return Err(Error::BadBudget("N2 must be at least 1".into()));
    }
    let (d1, d2) = (arms.d1(), arms.d2());
    let (design, gl_certificate, gl_fallback) = match second {
        SecondDesign::Fixed(p) => (p.clone(), None, false),
        SecondDesign::GlOptimal => match gl_optimal_design(arms, model, theta0, gl_options) {
            Ok(r) => (r.design, Some(r.certificate), false),
            Err(Error::SingularHessian(_)) => (Design::uniform(arms.len()), None, true),
            Err(e) => return Err(e),
        },
    };
    let gl_value = gl_objective(&design, arms, model, theta0)?.gl;
    let (h_inv, _) = guarded_inverse(&hessian_matrix(&design, arms, model, theta0)?)?;
    let pulls = collect_pulls(&design, n2, env, rng)?;
    let nu = cfg.nu(model, gl_value, n2, d1, d2);
    let aggregate = catoni_from_pulls(arms, &pulls, theta0, &h_inv, model, nu)?;
    let theta1 = omega.project(&(theta0 + aggregate))?;
    let sigma_thres = cfg.sigma_thres(model, gl_value, n2, d1, d2);
    let mut theta_hat = svt_threshold(&theta1, sigma_thres);
    let mut rank_hat = numerical_rank(&theta_hat, RANK_TOL);
    let mut rank_capped = false;
    if let Some(cap) = cfg.rank_cap {
        if rank_hat > cap {
            theta_hat = best_rank_r(&theta_hat, cap)?;
            rank_hat = numerical_rank(&theta_hat, RANK_TOL);
            rank_capped = true;
        }
    }
    Ok(StageIIOutput {
        theta1,
        theta_hat,
        design,
        gl_value,
        gl_certificate,
        gl_fallback,
        nu,
        sigma_thres,
        rank_hat,
        rank_capped,
        pulls,
    })
}

/// Settings of the full two-stage pipeline.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub n1: usize,
    pub n2: usize,
    pub omega: ParamSpace,
    pub lambda_case: LambdaCase,
    pub lambda_override: Option<f64>,
    pub stage1_max_iters: usize,
    pub stage1_tol: f64,
    pub stage2: StageIIConfig,
    pub gl_options: SolverOptions,
    /// Total sample budget the caller can afford.
    pub budget: Option<usize>,
}

impl PipelineConfig {
    pub fn new(n1: usize, n2: usize, delta: f64, omega: ParamSpace) -> Self {
        Self {
            n1,
            n2,
            omega,
            lambda_case: LambdaCase::Auto,
            lambda_override: None,
            stage1_max_iters: 5000,
            stage1_tol: 1e-8,
            stage2: StageIIConfig::new(delta),
            gl_options: SolverOptions::default(),
            budget: None,
        }
    }
}

/// The default split `N1 = floor(N / 2)`, `N2 = N - N1`.
pub fn split_budget(n: usize) -> (usize, usize) {
    (n / 2, n - n / 2)
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateDiagnostics {
    pub lambda: f64,
    pub stage1_trace: Vec<f64>,
    pub stage1_iterations: usize,
    pub stage1_converged: bool,
    pub gl_certificate: Option<f64>,
    pub gl_fallback: bool,
    pub rank_capped: bool,
    #[serde(with = "crate::serde_matrix")]
    pub theta1: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    #[serde(with = "crate::serde_matrix")]
    pub theta0: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub theta_hat: DMatrix<f64>,
    pub gl_value: f64,
    pub nu: f64,
    pub sigma_thres: f64,
    pub rank_hat: usize,
    pub sample_counts: (usize, usize),
    pub diagnostics: EstimateDiagnostics,
    /// Arms pulled in Stage I then Stage II, in order.
    #[serde(skip)]
    pub pulls: Vec<usize>,
}

/// Runs both stages: `n1` pulls from `pi1` for the regularized MLE, then
/// Stage II with `n2` pulls from the second design.
pub fn gl_lowpopart(
    arms: &ArmSet,
    model: &GlmModel,
    pi1: &Design,
    second: &SecondDesign,
    cfg: &PipelineConfig,
    env: &mut dyn ObservationSource,
    rng: &mut StreamRng,
) -> Result<EstimateReport> {
    cfg.stage2.validate()?;
    if cfg.n1 == 0 || cfg.n2 == 0 {
        return Err(Error::BadBudget(format!("N1 = {} and N2 = {} must both be positive", cfg.n1, cfg.n2)));
    }
    if let Some(b) = cfg.budget {
        if cfg.n1 + cfg.n2 > b {
            return Err(Error::BadBudget(format!("N1 + N2 = {} exceeds budget {b}", cfg.n1 + cfg.n2)));
        }
    }
    if cfg.omega.shape() != (arms.d1(), arms.d2()) {
        return Err(Error::ShapeMismatch(format!(
            "parameter space {:?} vs arms {:?}",
            cfg.omega.shape(),
            (arms.d1(), arms.d2())
        )));
    }
    if pi1.len() != arms.len() {
        return Err(Error::IndexMismatch(format!("design over {} arms, arm set has {}", pi1.len(), arms.len())));
    }
    let lambda = match cfg.lambda_override {
        Some(l) => l,
        None => lambda_selection(
            &effective_model(model, &cfg.omega, arms),
            cfg.stage2.delta,
            arms.d1(),
            arms.d2(),
            cfg.n1,
            cfg.lambda_case,
        )?,
    };
    let pulls1 = collect_pulls(pi1, cfg.n1, env, rng)?;
    let stage1_cfg = StageIConfig {
        lambda,
        max_iters: cfg.stage1_max_iters,
        tol: cfg.stage1_tol,
        omega: cfg.omega,
    };
    let s1 = stage1_aggregated(&AggregatedData::from_pulls(arms, &pulls1)?, model, &stage1_cfg)?;
    let s2 = stage2_refine(
        arms,
        model,
        &s1.theta,
        second,
        cfg.n2,
        &cfg.omega,
        &cfg.stage2,
        &cfg.gl_options,
        env,
        rng,
    )?;
    let pulls = pulls1.iter().chain(&s2.pulls).map(|&(a, _)| a).collect();
    Ok(EstimateReport {
        theta0: s1.theta,
        theta_hat: s2.theta_hat,
        gl_value: s2.gl_value,
        nu: s2.nu,
        sigma_thres: s2.sigma_thres,
        rank_hat: s2.rank_hat,
        sample_counts: (cfg.n1, cfg.n2),
        diagnostics: EstimateDiagnostics {
            lambda,
            stage1_trace: s1.trace,
            stage1_iterations: s1.iterations,
            stage1_converged: s1.converged,
            gl_certificate: s2.gl_certificate,
            gl_fallback: s2.gl_fallback,
            rank_capped: s2.rank_capped,
            theta1: s2.theta1,
        },
        pulls,
    })
}

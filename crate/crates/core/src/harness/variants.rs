//! The estimators compared by the experiments, selectable by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::bmf::bmf_baseline;
use crate::design::{ArmSet, Design, SolverOptions};
use crate::error::{Error, Result};
use crate::estimate::{
    collect_pulls, gl_lowpopart, lambda_selection, split_budget, stage1_aggregated, stage2_refine, AggregatedData,
    LambdaCase, PipelineConfig, SecondDesign, SimulatedEnvironment, StageIConfig, StageIIConfig, ThresholdRule,
};
use crate::glm::GlmModel;
use crate::matfun::ParamSpace;
use crate::rng::StreamRng;

/// Everything a variant needs for one run.
pub struct RunContext<'a> {
    pub arms: &'a ArmSet,
    pub model: GlmModel,
    pub theta_star: &'a DMatrix<f64>,
    pub n: usize,
    pub r: usize,
    pub delta: f64,
    pub threshold_rule: ThresholdRule,
    pub solver: SolverOptions,
    /// E-optimal (sparsified) design over the arms, shared across runs.
    pub e_design: &'a Design,
}

impl RunContext<'_> {
    fn omega(&self) -> ParamSpace {
        ParamSpace::Unconstrained {
            d1: self.arms.d1(),
            d2: self.arms.d2(),
        }
    }

    fn env(&self) -> Result<SimulatedEnvironment> {
        SimulatedEnvironment::new(self.arms, self.model, self.theta_star)
    }

    fn stage2_config(&self) -> StageIIConfig {
        StageIIConfig {
            threshold_rule: self.threshold_rule,
            ..StageIIConfig::new(self.delta)
        }
    }
}

pub trait Variant: Send + Sync {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &RunContext<'_>, rng: &mut StreamRng) -> Result<DMatrix<f64>>;
}

#[derive(Clone, Copy, Debug)]
pub enum FirstDesign {
    EOptimal,
    Uniform,
}

impl FirstDesign {
    fn resolve(self, ctx: &RunContext<'_>) -> Design {
        match self {
            FirstDesign::EOptimal => ctx.e_design.clone(),
            FirstDesign::Uniform => Design::uniform(ctx.arms.len()),
        }
    }
}

/// Regularized MLE on the whole budget.
pub struct StageOneOnly {
    pub name: &'static str,
    pub first: FirstDesign,
}

impl Variant for StageOneOnly {
    fn name(&self) -> &'static str {
        self.name
    }

    fn run(&self, ctx: &RunContext<'_>, rng: &mut StreamRng) -> Result<DMatrix<f64>> {
        let pulls = collect_pulls(&self.first.resolve(ctx), ctx.n, &mut ctx.env()?, rng)?;
        let lambda = lambda_selection(&ctx.model, ctx.delta, ctx.arms.d1(), ctx.arms.d2(), ctx.n, LambdaCase::Auto)?;
        let out = stage1_aggregated(
            &AggregatedData::from_pulls(ctx.arms, &pulls)?,
            &ctx.model,
            &StageIConfig::new(lambda, ctx.omega()),
        )?;
        Ok(out.theta)
    }
}

/// Both stages with the budget split in half.
pub struct TwoStage {
    pub name: &'static str,
    pub first: FirstDesign,
    pub gl_second: bool,
}

impl Variant for TwoStage {
    fn name(&self) -> &'static str {
        self.name
    }

    fn run(&self, ctx: &RunContext<'_>, rng: &mut StreamRng) -> Result<DMatrix<f64>> {
        let (n1, n2) = split_budget(ctx.n);
        let mut cfg = PipelineConfig::new(n1, n2, ctx.delta, ctx.omega());
        cfg.stage2 = ctx.stage2_config();
        cfg.gl_options = ctx.solver;
        let second = if self.gl_second {
            SecondDesign::GlOptimal
        } else {
            SecondDesign::Fixed(Design::uniform(ctx.arms.len()))
        };
        let report = gl_lowpopart(
            ctx.arms,
            &ctx.model,
            &self.first.resolve(ctx),
            &second,
            &cfg,
            &mut ctx.env()?,
            rng,
        )?;
        Ok(report.theta_hat)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum NaiveInit {
    Zero,
    Gaussian,
}

/// Stage II alone from an uninformed pilot, on the whole budget.
pub struct NaiveStageTwo {
    pub name: &'static str,
    pub init: NaiveInit,
}

impl Variant for NaiveStageTwo {
    fn name(&self) -> &'static str {
        self.name
    }

    fn run(&self, ctx: &RunContext<'_>, rng: &mut StreamRng) -> Result<DMatrix<f64>> {
        let (d1, d2) = (ctx.arms.d1(), ctx.arms.d2());
        let theta0 = match self.init {
            NaiveInit::Zero => DMatrix::zeros(d1, d2),
            NaiveInit::Gaussian => DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal)),
        };
        let out = stage2_refine(
            ctx.arms,
            &ctx.model,
            &theta0,
            &SecondDesign::GlOptimal,
            ctx.n,
            &ctx.omega(),
            &ctx.stage2_config(),
            &ctx.solver,
            &mut ctx.env()?,
            rng,
        )?;
        Ok(out.theta_hat)
    }
}

/// Factorized gradient descent on uniform samples.
pub struct BmfGd;

impl Variant for BmfGd {
    fn name(&self) -> &'static str {
        "BMF_GD"
    }

    fn run(&self, ctx: &RunContext<'_>, rng: &mut StreamRng) -> Result<DMatrix<f64>> {
        let pulls = collect_pulls(&Design::uniform(ctx.arms.len()), ctx.n, &mut ctx.env()?, rng)?;
        let data = AggregatedData::from_pulls(ctx.arms, &pulls)?;
        Ok(bmf_baseline(&data, &ctx.model, ctx.r, rng)?.theta)
    }
}

/// Variants keyed by name.
#[derive(Clone)]
pub struct VariantRegistry {
    entries: BTreeMap<&'static str, Arc<dyn Variant>>,
}

impl Default for VariantRegistry {
    fn default() -> Self {
        let mut reg = Self { entries: BTreeMap::new() };
        reg.register(Arc::new(StageOneOnly {
            name: "E",
            first: FirstDesign::EOptimal,
        }));
        reg.register(Arc::new(StageOneOnly {
            name: "U",
            first: FirstDesign::Uniform,
        }));
        for (name, first, gl_second) in [
            ("E_GL", FirstDesign::EOptimal, true),
            ("E_U", FirstDesign::EOptimal, false),
            ("U_GL", FirstDesign::Uniform, true),
            ("U_U", FirstDesign::Uniform, false),
        ] {
            reg.register(Arc::new(TwoStage { name, first, gl_second }));
        }
        reg.register(Arc::new(BmfGd));
        reg.register(Arc::new(NaiveStageTwo {
            name: "ZERO_GL",
            init: NaiveInit::Zero,
        }));
        reg.register(Arc::new(NaiveStageTwo {
            name: "RAND_GL",
            init: NaiveInit::Gaussian,
        }));
        reg
    }
}

impl VariantRegistry {
    pub fn register(&mut self, variant: Arc<dyn Variant>) {
        self.entries.insert(variant.name(), variant);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Variant>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{name}'")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

//! Named design strategies selectable at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{e_objective, e_optimal_design, ecad, gl_optimal_design, ArmSet, Design, DesignReport, SolverOptions};
use crate::error::{Error, Result};
use crate::glm::GlmModel;

/// Inputs available to a design strategy.
pub struct DesignContext<'a> {
    pub arms: &'a ArmSet,
    pub model: &'a GlmModel,
    /// Pilot estimate; strategies that need one treat `None` as zero.
    pub theta0: Option<&'a DMatrix<f64>>,
    pub options: SolverOptions,
}

pub trait DesignStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, ctx: &DesignContext<'_>) -> Result<DesignReport>;
}

pub struct UniformStrategy;
pub struct EOptimalStrategy;
pub struct EcadStrategy;
pub struct GlOptimalStrategy;

impl DesignStrategy for UniformStrategy {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn solve(&self, ctx: &DesignContext<'_>) -> Result<DesignReport> {
        let design = Design::uniform(ctx.arms.len());
        let objective_value = e_objective(&design, ctx.arms)?;
        Ok(DesignReport {
            design,
            objective_value,
            certificate: 0.0,
            iterations: 0,
            converged: true,
        })
    }
}

impl DesignStrategy for EOptimalStrategy {
    fn name(&self) -> &'static str {
        "e-opt"
    }

    fn solve(&self, ctx: &DesignContext<'_>) -> Result<DesignReport> {
        e_optimal_design(ctx.arms, &ctx.options)
    }
}

impl DesignStrategy for EcadStrategy {
    fn name(&self) -> &'static str {
        "ecad"
    }

    fn solve(&self, ctx: &DesignContext<'_>) -> Result<DesignReport> {
        Ok(ecad(ctx.arms, &ctx.options)?.report)
    }
}

impl DesignStrategy for GlOptimalStrategy {
    fn name(&self) -> &'static str {
        "gl"
    }

    fn solve(&self, ctx: &DesignContext<'_>) -> Result<DesignReport> {
        let zero;
        let theta0 = match ctx.theta0 {
            Some(t) => t,
            None => {
                zero = DMatrix::zeros(ctx.arms.d1(), ctx.arms.d2());
                &zero
            }
        };
        gl_optimal_design(ctx.arms, ctx.model, theta0, &ctx.options)
    }
}

/// Strategies keyed by name.
#[derive(Clone)]
pub struct DesignRegistry {
    entries: BTreeMap<&'static str, Arc<dyn DesignStrategy>>,
}

impl Default for DesignRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(UniformStrategy));
        reg.register(Arc::new(EOptimalStrategy));
        reg.register(Arc::new(EcadStrategy));
        reg.register(Arc::new(GlOptimalStrategy));
        reg
    }
}

impl DesignRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, strategy: Arc<dyn DesignStrategy>) {
        self.entries.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DesignStrategy>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown design strategy '{name}'")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

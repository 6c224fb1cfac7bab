use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use lowrank_glm::design::{
    approx_caratheodory, e_objective, gl_objective, ArmSet, DesignContext, DesignRegistry, SolverOptions,
};
use lowrank_glm::serde_matrix::{read_matrices, read_matrix};
use lowrank_glm::{DMatrix, GlmModel};
use serde::Serialize;

#[derive(Args)]
pub struct DesignArgs {
    /// JSON list of arm matrices, each a list of rows.
    #[arg(long)]
    arms: PathBuf,
    /// One of uniform, e-opt, ecad, gl.
    #[arg(long, default_value = "e-opt")]
    objective: String,
    #[arg(long, default_value = "bernoulli")]
    model: GlmModel,
    /// Pilot parameter for the GL objective; zero when absent.
    #[arg(long)]
    theta0: Option<PathBuf>,
    /// Sparsify the solution to this Frobenius accuracy.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = SolverOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = SolverOptions::default().max_iters)]
    max_iters: usize,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct DesignOutput {
    objective: String,
    weights: Vec<f64>,
    support: Vec<usize>,
    objective_value: f64,
    certificate: f64,
}

pub fn run(args: &DesignArgs) -> Result<()> {
    let arms = ArmSet::new(read_matrices(&args.arms)?).context("loading arms")?;
    let theta0 = args.theta0.as_deref().map(read_matrix).transpose()?;
    let registry = DesignRegistry::default();
    let strategy = registry.get(&args.objective)?;
    let ctx = DesignContext {
        arms: &arms,
        model: &args.model,
        theta0: theta0.as_ref(),
        options: SolverOptions {
            tol: args.tol,
            max_iters: args.max_iters,
            lenient: false,
        },
    };
    let mut report = strategy.solve(&ctx)?;
    if let Some(eps) = args.epsilon {
        report.design = approx_caratheodory(&report.design, &arms, eps)?.design;
        report.objective_value = if strategy.name() == "gl" {
            let zero = DMatrix::zeros(arms.d1(), arms.d2());
            gl_objective(&report.design, &arms, &args.model, theta0.as_ref().unwrap_or(&zero))
                .context("GL objective of the sparsified design")?
                .gl
        } else {
            e_objective(&report.design, &arms)?
        };
    }
    let out = DesignOutput {
        objective: strategy.name().to_string(),
        support: report.design.support(),
        weights: report.design.weights().to_vec(),
        objective_value: report.objective_value,
        certificate: report.certificate,
    };
    let mut json = serde_json::to_string_pretty(&out)?;
    json.push('\n');
    match &args.output {
        Some(path) => std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

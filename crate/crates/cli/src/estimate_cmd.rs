use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use lowrank_glm::design::{ArmSet, DesignContext, DesignRegistry, SolverOptions};
use lowrank_glm::estimate::{
    gl_lowpopart, split_budget, EstimateReport, LambdaCase, PipelineConfig, SecondDesign, SimulatedEnvironment,
    ThresholdRule,
};
use lowrank_glm::matfun::{nuclear_norm, op_norm, ParamSpace};
use lowrank_glm::rng::{stream, tag_key};
use lowrank_glm::serde_matrix::{read_matrices, read_matrix};
use lowrank_glm::GlmModel;
use serde::{Deserialize, Serialize};

#[derive(Args)]
pub struct EstimateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving `report.json` and `estimate.csv`.
    #[arg(long, default_value = ".")]
    output: PathBuf,
}

/// Simulation-side estimation run. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub model: GlmModel,
    pub arms: PathBuf,
    /// Parameter generating the observations.
    pub theta_star: PathBuf,
    /// Defaults to the unconstrained space of the arm shape.
    #[serde(default)]
    pub omega: Option<ParamSpace>,
    /// Total budget, split evenly when `n1`/`n2` are absent.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub n1: Option<usize>,
    #[serde(default)]
    pub n2: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Design strategy for Stage I.
    #[serde(default = "default_first")]
    pub first_design: String,
    /// Design strategy for Stage II; `gl` is solved at the Stage I estimate.
    #[serde(default = "default_second")]
    pub second_design: String,
    #[serde(default)]
    pub seed: u64,
    /// Label written to the CSV; defaults to `<first>+<second>`.
    #[serde(default)]
    pub variant: Option<String>,
    #[serde(default)]
    pub rank_cap: Option<usize>,
    #[serde(default)]
    pub lambda_case: Option<LambdaCase>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub sigma_thres: Option<f64>,
    #[serde(default)]
    pub threshold_rule: ThresholdRule,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_delta() -> f64 {
    0.1
}

fn default_first() -> String {
    "ecad".into()
}

fn default_second() -> String {
    "gl".into()
}

impl EstimateConfig {
    fn budgets(&self) -> Result<(usize, usize)> {
        match (self.n1, self.n2, self.budget) {
            (Some(n1), Some(n2), None) => Ok((n1, n2)),
            (None, None, Some(n)) => Ok(split_budget(n)),
            (Some(n1), Some(n2), Some(n)) if n1 + n2 == n => Ok((n1, n2)),
            _ => bail!("give either `budget` or both `n1` and `n2` (summing to `budget` if present)"),
        }
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    variant: &'a str,
    seed: u64,
    n1: usize,
    n2: usize,
    nuclear_error: f64,
    frobenius_error: f64,
    op_error: f64,
    report: &'a EstimateReport,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    seed: u64,
    #[serde(rename = "N")]
    n: usize,
    variant: &'a str,
    nuclear_error: f64,
    frobenius_error: f64,
    op_error: f64,
    rank_hat: usize,
    gl_value: f64,
    wall_ms: u64,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn run(args: &EstimateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let cfg: EstimateConfig = serde_json::from_str(&text).context("parsing estimate config")?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let arms = ArmSet::new(read_matrices(&resolve(base, &cfg.arms))?).context("loading arms")?;
    let theta_star = read_matrix(&resolve(base, &cfg.theta_star))?;
    let (n1, n2) = cfg.budgets()?;
    let omega = cfg.omega.unwrap_or(ParamSpace::Unconstrained {
        d1: arms.d1(),
        d2: arms.d2(),
    });

    let registry = DesignRegistry::default();
    let first = registry
        .get(&cfg.first_design)?
        .solve(&DesignContext {
            arms: &arms,
            model: &cfg.model,
            theta0: None,
            options: cfg.solver,
        })?
        .design;
    let second = if cfg.second_design == "gl" {
        SecondDesign::GlOptimal
    } else {
        let report = registry.get(&cfg.second_design)?.solve(&DesignContext {
            arms: &arms,
            model: &cfg.model,
            theta0: None,
            options: cfg.solver,
        })?;
        SecondDesign::Fixed(report.design)
    };

    let mut pipeline = PipelineConfig::new(n1, n2, cfg.delta, omega);
    if let Some(case) = cfg.lambda_case {
        pipeline.lambda_case = case;
    }
    pipeline.lambda_override = cfg.lambda;
    pipeline.stage2.nu_override = cfg.nu;
    pipeline.stage2.sigma_thres_override = cfg.sigma_thres;
    pipeline.stage2.rank_cap = cfg.rank_cap;
    pipeline.stage2.threshold_rule = cfg.threshold_rule;
    pipeline.gl_options = cfg.solver;

    let mut env = SimulatedEnvironment::new(&arms, cfg.model, &theta_star)?;
    let mut rng = stream(cfg.seed, &[tag_key("estimate")]);
    let start = Instant::now();
    let report = gl_lowpopart(&arms, &cfg.model, &first, &second, &pipeline, &mut env, &mut rng)?;
    let wall_ms = if cfg.record_wall_time {
        start.elapsed().as_millis() as u64
    } else {
        0
    };

    let variant = cfg
        .variant
        .clone()
        .unwrap_or_else(|| format!("{}+{}", cfg.first_design, cfg.second_design));
    let err = &report.theta_hat - &theta_star;
    let (nuclear_error, frobenius_error, op_error) = (nuclear_norm(&err), err.norm(), op_norm(&err));

    std::fs::create_dir_all(&args.output)?;
    let file = ReportFile {
        variant: &variant,
        seed: cfg.seed,
        n1,
        n2,
        nuclear_error,
        frobenius_error,
        op_error,
        report: &report,
    };
    let mut json = serde_json::to_string_pretty(&file)?;
    json.push('\n');
    std::fs::write(args.output.join("report.json"), json)?;

    let mut w = csv::Writer::from_path(args.output.join("estimate.csv"))?;
    w.serialize(CsvRow {
        seed: cfg.seed,
        n: n1 + n2,
        variant: &variant,
        nuclear_error,
        frobenius_error,
        op_error,
        rank_hat: report.rank_hat,
        gl_value: report.gl_value,
        wall_ms,
    })?;
    w.flush()?;
    Ok(())
}

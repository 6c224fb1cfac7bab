//! The simulation suite for 1-bit matrix completion and recovery: instance
//! and arm generators, the compared variants, confidence intervals, and
//! result persistence.

mod bmf;
mod bootstrap;
mod table;
mod variants;

pub use bmf::{bmf_baseline, BmfOutput, BMF_GRAD_TOL, BMF_INIT_SCALE, BMF_MAX_ITERS, BMF_STEP};
pub use bootstrap::{bootstrap_ci, median, quantile_sorted, INNER_RESAMPLES, OUTER_RESAMPLES};
pub use table::{ResultRow, ResultTable, STATUS_OK};
pub use variants::{
    BmfGd, FirstDesign, NaiveInit, NaiveStageTwo, RunContext, StageOneOnly, TwoStage, Variant, VariantRegistry,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{ecad, ArmSet, SolverOptions};
use crate::error::{Error, Result};
use crate::estimate::ThresholdRule;
use crate::glm::GlmModel;
use crate::matfun::{nuclear_norm, numerical_rank, op_norm};
use crate::rng::{stream, tag_key, StreamRng};

/// Attempts at drawing a spanning random arm set.
pub const ARM_RESAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setting {
    /// The standard basis `e_i e_j^T`.
    Completion,
    /// `k` random unit-Frobenius-norm matrices.
    Recovery { k: usize },
}

fn default_delta() -> f64 {
    0.1
}

fn default_threshold_rule() -> ThresholdRule {
    ThresholdRule::Experiment
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub d: usize,
    pub r: usize,
    pub sample_sizes: Vec<usize>,
    pub repetitions: usize,
    pub variants: Vec<String>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default = "default_threshold_rule")]
    pub threshold_rule: ThresholdRule,
    /// Store measured run times; off by default so outputs are reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Name written to the summary; defaults to the setting.
    #[serde(default)]
    pub figure: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self, registry: &VariantRegistry) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be positive".into()));
        }
        if self.r == 0 || self.r > self.d {
            return Err(Error::BadRank {
                rank: self.r,
                d1: self.d,
                d2: self.d,
            });
        }
        if self.sample_sizes.is_empty() || self.sample_sizes[0] < 2 || self.sample_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sample_sizes must be ascending and at least 2".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidArgument("no variants selected".into()));
        }
        for v in &self.variants {
            registry.get(v)?;
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::BadConfidence(self.delta));
        }
        if let Setting::Recovery { k } = self.setting {
            if k == 0 {
                return Err(Error::InvalidArgument("recovery needs at least one arm".into()));
            }
        }
        Ok(())
    }

    pub fn figure_name(&self) -> String {
        self.figure.clone().unwrap_or_else(|| match self.setting {
            Setting::Completion => "completion".into(),
            Setting::Recovery { .. } => "recovery".into(),
        })
    }
}

/// Orthonormal factor of a thin QR decomposition with the diagonal of the
/// triangular factor made positive.
pub fn orthonormal_factor(g: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = g.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for i in 0..q.ncols().min(r.nrows()) {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
        }
    }
    q
}

/// `2 Q Q^T` with `Q` the orthonormal factor of a standard normal `d x r` matrix.
pub fn gen_instance(d: usize, r: usize, rng: &mut StreamRng) -> Result<DMatrix<f64>> {
    if r == 0 || r > d {
        return Err(Error::BadRank { rank: r, d1: d, d2: d });
    }
    let g = DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = orthonormal_factor(&g);
    Ok(&q * q.transpose() * 2.0)
}

pub fn completion_basis(d: usize) -> Vec<DMatrix<f64>> {
    let mut arms = Vec::with_capacity(d * d);
    for j in 0..d {
        for i in 0..d {
            let mut x = DMatrix::zeros(d, d);
            x[(i, j)] = 1.0;
            arms.push(x);
        }
    }
    arms
}

/// Random matrices uniform on the unit Frobenius sphere.
pub fn sphere_matrices(d1: usize, d2: usize, k: usize, rng: &mut StreamRng) -> Vec<DMatrix<f64>> {
    (0..k)
        .map(|_| {
            let g = DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = g.norm();
            g / n
        })
        .collect()
}

pub fn gen_arms(setting: Setting, d: usize, rng: &mut StreamRng) -> Result<ArmSet> {
    match setting {
        Setting::Completion => ArmSet::new(completion_basis(d)),
        Setting::Recovery { k } => {
            let mut last = Error::EmptyData;
            for _ in 0..ARM_RESAMPLES {
                match ArmSet::new(sphere_matrices(d, d, k, rng)) {
                    Ok(a) => return Ok(a),
                    Err(e @ Error::SpanDeficient { .. }) => last = e,
                    Err(e) => return Err(e),
                }
            }
            Err(last)
        }
    }
}

/// Solver settings used inside experiments: best iterates are kept even when a
/// certificate stays open.
pub fn experiment_solver_options() -> SolverOptions {
    SolverOptions {
        lenient: true,
        ..SolverOptions::default()
    }
}

fn failed_row(variant: &str, n: usize, seed: u64, e: &Error) -> ResultRow {
    ResultRow {
        variant: variant.to_string(),
        n,
        seed,
        nuclear_error: f64::NAN,
        frobenius_error: f64::NAN,
        op_error: f64::NAN,
        rank_hat: 0,
        wall_ms: 0,
        status: format!("failed: {e}").replace(['\n', ','], " "),
    }
}

/// Runs every `(variant, N, repetition)` cell. Failures are recorded as rows
/// with a non-`ok` status. `workers = None` uses the default thread count.
pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ResultTable> {
    let registry = VariantRegistry::default();
    cfg.validate(&registry)?;
    let variants: Vec<_> = cfg.variants.iter().map(|v| registry.get(v)).collect::<Result<_>>()?;
    let arms = gen_arms(cfg.setting, cfg.d, &mut stream(cfg.seed, &[tag_key("arms")]))?;
    let solver = experiment_solver_options();
    let e_design = ecad(&arms, &solver)?.report.design;
    let model = GlmModel::bernoulli();

    let mut jobs = Vec::new();
    for rep in 0..cfg.repetitions {
        for &n in &cfg.sample_sizes {
            for v in &variants {
                jobs.push((rep, n, v.clone()));
            }
        }
    }
    let run_job = |(rep, n, variant): &(usize, usize, std::sync::Arc<dyn Variant>)| -> ResultRow {
        let seed = cfg.seed.wrapping_add(*rep as u64);
        let theta_star = match gen_instance(cfg.d, cfg.r, &mut stream(seed, &[tag_key("instance")])) {
            Ok(t) => t,
            Err(e) => return failed_row(variant.name(), *n, seed, &e),
        };
        let ctx = RunContext {
            arms: &arms,
            model,
            theta_star: &theta_star,
            n: *n,
            r: cfg.r,
            delta: cfg.delta,
            threshold_rule: cfg.threshold_rule,
            solver,
            e_design: &e_design,
        };
        // One stream per repetition, shared by every variant and sample size.
        let mut rng = stream(seed, &[tag_key("sample")]);
        let start = Instant::now();
        match variant.run(&ctx, &mut rng) {
            Ok(theta_hat) => {
                let err = &theta_hat - &theta_star;
                ResultRow {
                    variant: variant.name().to_string(),
                    n: *n,
                    seed,
                    nuclear_error: nuclear_norm(&err),
                    frobenius_error: err.norm(),
                    op_error: op_norm(&err),
                    rank_hat: numerical_rank(&theta_hat, crate::estimate::RANK_TOL),
                    wall_ms: if cfg.record_wall_time {
                        start.elapsed().as_millis() as u64
                    } else {
                        0
                    },
                    status: STATUS_OK.into(),
                }
            }
            Err(e) => failed_row(variant.name(), *n, seed, &e),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rows = pool.install(|| jobs.par_iter().map(run_job).collect());
    let mut table = ResultTable { rows };
    table.canonicalize();
    Ok(table)
}

#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Series {
    pub variant: String,
    pub cells: Vec<CellSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSummary {
    pub figure: String,
    pub metric: &'static str,
    pub setting: Setting,
    pub d: usize,
    pub r: usize,
    pub delta: f64,
    pub repetitions: usize,
    pub series: Vec<Series>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Medians and bootstrap intervals of the nuclear error per cell.
pub fn summarize(cfg: &ExperimentConfig, table: &ResultTable, workers: Option<usize>) -> Result<ExperimentSummary> {
    let mut cells = Vec::new();
    for v in &cfg.variants {
        for &n in &cfg.sample_sizes {
            cells.push((v.clone(), n));
        }
    }
    let compute = |(v, n): &(String, usize)| -> Result<CellSummary> {
        let values = table.cell(v, *n);
        let total = table.rows.iter().filter(|r| &r.variant == v && r.n == *n).count();
        let (median_v, mean_v) = if values.is_empty() {
            (None, None)
        } else {
            (finite(median(&values)), finite(values.iter().sum::<f64>() / values.len() as f64))
        };
        let (lo, hi) = if values.len() >= 2 {
            let mut rng = stream(cfg.seed, &[tag_key("bootstrap"), tag_key(v), *n as u64]);
            let (lo, hi) = bootstrap_ci(&values, &mut rng)?;
            (finite(lo), finite(hi))
        } else {
            (None, None)
        };
        Ok(CellSummary {
            n: *n,
            median: median_v,
            mean: mean_v,
            ci_low: lo,
            ci_high: hi,
            successes: values.len(),
            failures: total - values.len(),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<CellSummary> = pool.install(|| cells.par_iter().map(compute).collect::<Result<_>>())?;
    let per = cfg.sample_sizes.len();
    let series = cfg
        .variants
        .iter()
        .zip(results.chunks(per))
        .map(|(v, c)| Series {
            variant: v.clone(),
            cells: c.to_vec(),
        })
        .collect();
    Ok(ExperimentSummary {
        figure: cfg.figure_name(),
        metric: "nuclear_error",
        setting: cfg.setting,
        d: cfg.d,
        r: cfg.r,
        delta: cfg.delta,
        repetitions: cfg.repetitions,
        series,
    })
}

/// Writes `results.csv` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, table: &ResultTable, summary: &ExperimentSummary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    table.write_csv(&dir.join("results.csv"))?;
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

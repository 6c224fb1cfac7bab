use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use lowrank_glm::harness::{run_experiment, summarize, write_outputs, ExperimentConfig};

use crate::ExperimentArgs;

/// Variants of the Stage II ablation.
pub const ABLATION_VARIANTS: [&str; 4] = ["U_GL", "E_GL", "ZERO_GL", "RAND_GL"];

/// Exit status when some cells failed but results were written.
const PARTIAL_FAILURE: u8 = 2;

pub fn run(args: &ExperimentArgs, ablation: bool) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text).context("parsing experiment config")?;
    if ablation {
        cfg.variants = ABLATION_VARIANTS.iter().map(|v| v.to_string()).collect();
        cfg.figure.get_or_insert_with(|| "ablation".into());
    }
    let dir = args
        .output
        .clone()
        .or_else(|| cfg.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let table = run_experiment(&cfg, args.workers)?;
    let summary = summarize(&cfg, &table, args.workers)?;
    write_outputs(&dir, &table, &summary)?;
    let failures = table.failures();
    eprintln!(
        "{} rows, {failures} failed; wrote {}",
        table.rows.len(),
        dir.display()
    );
    Ok(ExitCode::from(exit_status(failures)))
}

fn exit_status(failures: usize) -> u8 {
    if failures > 0 {
        PARTIAL_FAILURE
    } else {
        0
    }
}

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use lowrank_glm::duel::{betc_glm_lr, borda_diagnostics, BudgetRule, DuelInstance, DuelOptions};
use lowrank_glm::rng::{stream, tag_key};
use serde::Serialize;

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["instance", "random"]))]
pub struct DuelArgs {
    /// Instance JSON with `features`, `theta_star` and `model`.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Generate an instance: dimension, item count, half rank, seed.
    #[arg(long, num_args = 4, value_names = ["D", "K", "R", "SEED"])]
    random: Option<Vec<u64>>,
    /// Horizon.
    #[arg(long = "T", visible_alias = "horizon")]
    horizon: usize,
    /// `fixed:N1:N2` or `t23:c`.
    #[arg(long, default_value = "t23:4")]
    budget_rule: BudgetRule,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Seed of the sampling stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Regret trace CSV.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Serialize)]
struct Summary {
    horizon: usize,
    n1: usize,
    n2: usize,
    budget_rule: String,
    total_regret: f64,
    winner_hat: usize,
    winner_star: usize,
}

pub fn run(args: &DuelArgs) -> Result<()> {
    let instance = match (&args.instance, &args.random) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let inst: DuelInstance = serde_json::from_str(&text).context("parsing duel instance")?;
            inst.validate()?;
            inst
        }
        (None, Some(v)) => DuelInstance::random(v[0] as usize, v[1] as usize, v[2] as usize, v[3])?,
        (None, None) => unreachable!("clap requires one source"),
    };
    let (n1, n2) = args.budget_rule.budgets(args.horizon)?;
    let options = DuelOptions {
        delta: args.delta,
        ..DuelOptions::default()
    };
    borda_diagnostics(&instance)?;
    let mut rng = stream(args.seed, &[tag_key("duel")]);
    let trace = betc_glm_lr(&instance, args.horizon, n1, n2, &options, &mut rng)?;
    if let Some(dir) = args.output.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    trace.write_csv(&args.output)?;
    let summary = Summary {
        horizon: args.horizon,
        n1,
        n2,
        budget_rule: args.budget_rule.to_string(),
        total_regret: trace.total_regret(),
        winner_hat: trace.winner_hat,
        winner_star: trace.winner_star,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

//! Dueling bandits with a bilinear skew-symmetric preference model, Borda
//! regret, and an explore-then-commit algorithm on top of the two-stage
//! estimator.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::{ecad, ArmSet, SolverOptions};
use crate::error::{Error, Result};
use crate::estimate::{gl_lowpopart, PipelineConfig, SecondDesign, SimulatedEnvironment};
use crate::glm::{Family, GlmModel};
use crate::matfun::{numerical_rank, ParamSpace};
use crate::rng::{stream, StreamRng};

/// Magnitude of the random skew-symmetric parameter.
pub const RANDOM_SCALE: f64 = 2.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DuelInstance {
    /// One feature vector per item, stored as rows.
    #[serde(with = "crate::serde_matrix")]
    pub features: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub theta_star: DMatrix<f64>,
    pub model: GlmModel,
}

impl DuelInstance {
    pub fn new(features: DMatrix<f64>, theta_star: DMatrix<f64>, model: GlmModel) -> Result<Self> {
        let inst = Self {
            features,
            theta_star,
            model,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.theta_star.shape() != (d, d) {
            return Err(Error::ShapeMismatch(format!(
                "parameter {:?} vs feature dimension {d}",
                self.theta_star.shape()
            )));
        }
        if self.model.family != Family::Bernoulli {
            return Err(Error::InvalidArgument("preference model needs a symmetric link into [0, 1]".into()));
        }
        for (k, row) in self.features.row_iter().enumerate() {
            if row.norm() > 1.0 + 1e-9 {
                return Err(Error::InvalidArgument(format!("feature {k} lies outside the unit ball")));
            }
        }
        let asym = (&self.theta_star + self.theta_star.transpose()).norm();
        if asym >= 1e-10 {
            return Err(Error::InvalidArgument(format!("parameter is not skew-symmetric ({asym:e})")));
        }
        let rank = numerical_rank(&self.features, 1e-10);
        if rank < d {
            return Err(Error::SpanDeficient { rank, dim: d });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_items(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature(&self, k: usize) -> DVector<f64> {
        self.features.row(k).transpose()
    }

    /// `P[i beats j] = mu(phi_i^T theta_star phi_j)`.
    pub fn win_probability(&self, i: usize, j: usize) -> Result<f64> {
        let k = self.num_items();
        for idx in [i, j] {
            if idx >= k {
                return Err(Error::BadIndex { index: idx, len: k });
            }
        }
        Ok(self.model.mu(self.feature(i).dot(&(&self.theta_star * self.feature(j)))))
    }

    /// Ordered pairs `(i, j)` with `i != j`, in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let k = self.num_items();
        (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).collect()
    }

    /// The matrix arms `phi_i phi_j^T` for [`Self::pairs`].
    pub fn pair_arms(&self) -> Result<ArmSet> {
        ArmSet::new(
            self.pairs()
                .into_iter()
                .map(|(i, j)| self.feature(i) * self.feature(j).transpose())
                .collect(),
        )
    }

    /// Random instance: `k` unit Gaussian features in `R^d` and a rank-`2r`
    /// skew-symmetric parameter built from orthonormal directions.
    pub fn random(d: usize, k: usize, r: usize, seed: u64) -> Result<Self> {
        if r == 0 || 2 * r > d {
            return Err(Error::BadRank { rank: 2 * r, d1: d, d2: d });
        }
        let mut rng = stream(seed, &[]);
        let features = DMatrix::from_fn(k, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let features = DMatrix::from_rows(
            &features.row_iter().map(|row| row.normalize()).collect::<Vec<_>>(),
        );
        let g = DMatrix::from_fn(d, 2 * r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = crate::harness::orthonormal_factor(&g);
        let mut theta = DMatrix::zeros(d, d);
        for l in 0..r {
            let p = q.column(2 * l);
            let s = q.column(2 * l + 1);
            theta += (p * s.transpose() - s * p.transpose()) * RANDOM_SCALE;
        }
        Self::new(features, theta, GlmModel::bernoulli())
    }
}

/// `B(phi) = (1/K) sum_k mu(phi^T theta phi_k)`.
pub fn borda_score(phi: &DVector<f64>, theta: &DMatrix<f64>, features: &DMatrix<f64>, model: &GlmModel) -> Result<f64> {
    let d = features.ncols();
    if phi.len() != d || theta.shape() != (d, d) {
        return Err(Error::ShapeMismatch(format!(
            "feature {} and parameter {:?} vs dimension {d}",
            phi.len(),
            theta.shape()
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    let row = theta.tr_mul(phi);
    let z = features * row;
    Ok(z.iter().map(|&v| model.mu(v)).sum::<f64>() / features.nrows() as f64)
}

/// Borda scores of every item under `theta`.
pub fn borda_scores(instance: &DuelInstance, theta: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..instance.num_items())
        .map(|k| borda_score(&instance.feature(k), theta, &instance.features, &instance.model))
        .collect()
}

/// Index of the largest score, lowest index on ties.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// One comparison of items `i` and `j`: 1 when `i` wins.
pub fn duel_sample(i: usize, j: usize, instance: &DuelInstance, rng: &mut StreamRng) -> Result<f64> {
    let p = instance.win_probability(i, j)?;
    Ok(if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

#[derive(Clone, Debug, Serialize)]
pub struct BordaDiagnostics {
    pub kappa_star: f64,
    pub kappa_star_b: f64,
    pub winner_index: usize,
    pub scores: Vec<f64>,
}

pub fn borda_diagnostics(instance: &DuelInstance) -> Result<BordaDiagnostics> {
    let scores = borda_scores(instance, &instance.theta_star)?;
    let winner_index = argmax_lowest(&scores);
    let z = &instance.features * &instance.theta_star * instance.features.transpose();
    let kappa_star = z.iter().map(|&v| instance.model.mu_dot(v)).fold(f64::INFINITY, f64::min);
    let k = instance.num_items() as f64;
    let kappa_star_b = z.row(winner_index).iter().map(|&v| instance.model.mu_dot(v)).sum::<f64>() / k;
    Ok(BordaDiagnostics {
        kappa_star,
        kappa_star_b,
        winner_index,
        scores,
    })
}

/// How the exploration budget is set from the horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BudgetRule {
    Fixed { n1: usize, n2: usize },
    /// `N1 = N2 = round(c T^{2/3})`.
    TwoThirds { c: f64 },
}

impl BudgetRule {
    pub fn budgets(&self, horizon: usize) -> Result<(usize, usize)> {
        let (n1, n2) = match *self {
            BudgetRule::Fixed { n1, n2 } => (n1, n2),
            BudgetRule::TwoThirds { c } => {
                let n = (c * (horizon as f64).powf(2.0 / 3.0)).round().max(1.0) as usize;
                (n, n)
            }
        };
        if n1 == 0 || n2 == 0 || n1 + n2 > horizon {
            return Err(Error::BadBudget(format!("N1 = {n1}, N2 = {n2} with horizon {horizon}")));
        }
        Ok((n1, n2))
    }
}

impl FromStr for BudgetRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidArgument(format!("budget rule '{s}', expected fixed:N1:N2 or t23:c"));
        match parts.as_slice() {
            ["fixed", a, b] => Ok(BudgetRule::Fixed {
                n1: a.parse().map_err(|_| bad())?,
                n2: b.parse().map_err(|_| bad())?,
            }),
            ["t23", c] => {
                let c: f64 = c.parse().map_err(|_| bad())?;
                if !(c > 0.0 && c.is_finite()) {
                    return Err(bad());
                }
                Ok(BudgetRule::TwoThirds { c })
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for BudgetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetRule::Fixed { n1, n2 } => write!(f, "fixed:{n1}:{n2}"),
            BudgetRule::TwoThirds { c } => write!(f, "t23:{c}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Explore,
    Commit,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub phase: Phase,
    pub pair_i: usize,
    pub pair_j: usize,
    pub inst_regret: f64,
    pub cum_regret: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegretTrace {
    pub rounds: Vec<RoundRecord>,
    pub n1: usize,
    pub n2: usize,
    pub horizon: usize,
    pub winner_hat: usize,
    pub winner_star: usize,
    #[serde(with = "crate::serde_matrix")]
    pub theta_hat: DMatrix<f64>,
}

impl RegretTrace {
    pub fn total_regret(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn regret_at(&self, round: usize) -> f64 {
        if round == 0 {
            0.0
        } else {
            self.rounds[round - 1].cum_regret
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rounds {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Settings of the explore-then-commit run beyond the budgets.
#[derive(Clone, Copy, Debug)]
pub struct DuelOptions {
    pub delta: f64,
    pub solver: SolverOptions,
}

impl Default for DuelOptions {
    fn default() -> Self {
        Self {
            delta: 0.1,
            solver: SolverOptions {
                lenient: true,
                ..SolverOptions::default()
            },
        }
    }
}

/// Explore with the two-stage estimator on the pair arms for `n1 + n2`
/// rounds, then commit to the estimated Borda winner against itself.
pub fn betc_glm_lr(
    instance: &DuelInstance,
    horizon: usize,
    n1: usize,
    n2: usize,
    options: &DuelOptions,
    rng: &mut StreamRng,
) -> Result<RegretTrace> {
    if n1 == 0 || n2 == 0 || n1 + n2 > horizon {
        return Err(Error::BadBudget(format!("N1 = {n1}, N2 = {n2} with horizon {horizon}")));
    }
    instance.validate()?;
    let d = instance.dim();
    let pairs = instance.pairs();
    let arms = instance.pair_arms()?;
    let truth = borda_scores(instance, &instance.theta_star)?;
    let winner_star = argmax_lowest(&truth);
    let best = truth[winner_star];

    let pi1 = ecad(&arms, &options.solver)?.report.design;
    let mut cfg = PipelineConfig::new(n1, n2, options.delta, ParamSpace::SkewSymmetric { d });
    cfg.gl_options = options.solver;
    cfg.budget = Some(horizon);
    let mut env = SimulatedEnvironment::new(&arms, instance.model, &instance.theta_star)?;
    let report = gl_lowpopart(&arms, &instance.model, &pi1, &SecondDesign::GlOptimal, &cfg, &mut env, rng)?;
    let winner_hat = argmax_lowest(&borda_scores(instance, &report.theta_hat)?);

    let mut rounds = Vec::with_capacity(horizon);
    // Neumaier summation keeps the cumulative regret exact to rounding.
    let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
    let mut push = |round: usize, phase: Phase, i: usize, j: usize, inst: f64| {
        let t = sum + inst;
        comp += if sum.abs() >= inst.abs() { (sum - t) + inst } else { (inst - t) + sum };
        sum = t;
        rounds.push(RoundRecord {
            round,
            phase,
            pair_i: i,
            pair_j: j,
            inst_regret: inst,
            cum_regret: sum + comp,
        });
    };
    for (t, &a) in report.pulls.iter().enumerate() {
        let (i, j) = pairs[a];
        push(t + 1, Phase::Explore, i, j, best - 0.5 * (truth[i] + truth[j]));
    }
    let commit = best - truth[winner_hat];
    for t in report.pulls.len()..horizon {
        push(t + 1, Phase::Commit, winner_hat, winner_hat, commit);
    }
    Ok(RegretTrace {
        rounds,
        n1,
        n2,
        horizon,
        winner_hat,
        winner_star,
        theta_hat: report.theta_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn rot2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    #[test]
    fn borda_examples() {
        let m = GlmModel::bernoulli();
        let feats = DMatrix::<f64>::identity(2, 2);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert!((borda_score(&e1, &DMatrix::zeros(2, 2), &feats, &m).unwrap() - 0.5).abs() < 1e-15);
        let single = DMatrix::from_row_slice(1, 2, &[0.6, 0.8]);
        let phi = DVector::from_vec(vec![0.6, 0.8]);
        assert!((borda_score(&phi, &rot2(), &single, &m).unwrap() - 0.5).abs() < 1e-15);
        let expect = (0.5 + 1.0 / (1.0 + (-1.0_f64).exp())) / 2.0;
        assert!((borda_score(&e1, &rot2(), &feats, &m).unwrap() - expect).abs() < 1e-15);
        assert!(borda_score(&DVector::zeros(3), &rot2(), &feats, &m).is_err());
    }

    #[test]
    fn diagnostics_examples() {
        let inst = DuelInstance::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), GlmModel::bernoulli()).unwrap();
        let diag = borda_diagnostics(&inst).unwrap();
        assert_eq!(diag.winner_index, 0);
        assert!((diag.kappa_star - 0.25).abs() < 1e-15 && (diag.kappa_star_b - 0.25).abs() < 1e-15);
        let inst = DuelInstance::new(DMatrix::identity(2, 2), rot2(), GlmModel::bernoulli()).unwrap();
        let diag = borda_diagnostics(&inst).unwrap();
        // B(e1) = (mu(0) + mu(1)) / 2 > B(e2) = (mu(-1) + mu(0)) / 2.
        assert_eq!(diag.winner_index, 0);
        assert!(diag.scores[0] > diag.scores[1]);
        assert!(diag.kappa_star <= diag.kappa_star_b);
    }

    #[test]
    fn pair_probabilities_are_complementary() {
        let inst = DuelInstance::random(4, 6, 2, 3).unwrap();
        for i in 0..6 {
            assert!((inst.win_probability(i, i).unwrap() - 0.5).abs() < 1e-15);
            for j in 0..6 {
                let s = inst.win_probability(i, j).unwrap() + inst.win_probability(j, i).unwrap();
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
        assert!(matches!(inst.win_probability(0, 6), Err(Error::BadIndex { .. })));
        let scores = borda_scores(&inst, &inst.theta_star).unwrap();
        assert!((scores.iter().sum::<f64>() / 6.0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fair_coin_at_zero() {
        let inst = DuelInstance::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), GlmModel::bernoulli()).unwrap();
        let mut rng = stream(1, &[]);
        let n = 100_000;
        let wins: f64 = (0..n).map(|_| duel_sample(0, 1, &inst, &mut rng).unwrap()).sum();
        assert!((wins / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn random_instance_shape() {
        let inst = DuelInstance::random(3, 10, 1, 9).unwrap();
        assert_eq!(numerical_rank(&inst.theta_star, 1e-10), 2);
        assert!(inst.features.row_iter().all(|r| (r.norm() - 1.0).abs() < 1e-12));
        assert!(DuelInstance::random(3, 10, 2, 9).is_err());
    }

    #[test]
    fn argmax_shift_invariance() {
        let scores = [0.3, 0.7, 0.7, 0.1];
        assert_eq!(argmax_lowest(&scores), 1);
        let shifted: Vec<f64> = scores.iter().map(|s| s + 12.5).collect();
        assert_eq!(argmax_lowest(&shifted), 1);
    }

    #[test]
    fn budget_rules() {
        assert_eq!("fixed:10:20".parse::<BudgetRule>().unwrap(), BudgetRule::Fixed { n1: 10, n2: 20 });
        let r: BudgetRule = "t23:0.5".parse().unwrap();
        assert_eq!(r.budgets(8000).unwrap(), (200, 200));
        assert_eq!(r.to_string(), "t23:0.5");
        assert!("t23:-1".parse::<BudgetRule>().is_err());
        assert!(BudgetRule::Fixed { n1: 10, n2: 20 }.budgets(25).is_err());
    }

    #[test]
    fn zero_parameter_has_no_commit_regret() {
        let mut rng = stream(2, &[]);
        let feats = DMatrix::from_fn(5, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let feats = DMatrix::from_rows(&feats.row_iter().map(|r| r.normalize()).collect::<Vec<_>>());
        let inst = DuelInstance::new(feats, DMatrix::zeros(3, 3), GlmModel::bernoulli()).unwrap();
        let trace = betc_glm_lr(&inst, 3000, 500, 500, &DuelOptions::default(), &mut rng).unwrap();
        assert!(trace.rounds.iter().all(|r| r.inst_regret.abs() < 1e-15));
    }

    #[test]
    fn commit_identity_and_reproducibility() {
        let inst = DuelInstance::random(3, 10, 1, 4).unwrap();
        let run = || betc_glm_lr(&inst, 20_000, 1000, 1000, &DuelOptions::default(), &mut stream(8, &[])).unwrap();
        let a = run();
        let b = run();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let truth = borda_scores(&inst, &inst.theta_star).unwrap();
        let gap = truth[a.winner_star] - truth[a.winner_hat];
        let lhs = a.regret_at(20_000) - a.regret_at(2000);
        assert!((lhs - 18_000.0 * gap).abs() <= 1e-9 * (1.0 + lhs.abs()));
        assert!(a.rounds.windows(2).all(|w| w[1].cum_regret >= w[0].cum_regret));
        assert!(a.rounds.iter().all(|r| r.inst_regret >= -1e-12));
        let skew = ParamSpace::SkewSymmetric { d: 3 };
        assert!(skew.residual(&a.theta_hat).unwrap() < 1e-9);
    }
}

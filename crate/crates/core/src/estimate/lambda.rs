use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{Family, GlmModel};

/// Which concentration regime sets the Stage I regularization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaCase {
    /// Pick from the model family.
    Auto,
    /// Residuals bounded by `m` almost surely.
    Bounded { m: f64 },
    /// `sigma`-sub-Gaussian residuals.
    SubGaussian { sigma: f64 },
    Poisson,
}

impl LambdaCase {
    /// The case used when none is given.
    pub fn resolve(self, model: &GlmModel) -> Self {
        match self {
            LambdaCase::Auto => match model.family {
                Family::Bernoulli => LambdaCase::Bounded { m: 1.0 },
                Family::Gaussian { variance } => LambdaCase::SubGaussian { sigma: variance.sqrt() },
                Family::Poisson => LambdaCase::Poisson,
            },
            other => other,
        }
    }
}

fn v_term(delta: f64, d1: usize, d2: usize) -> f64 {
    (2.0 * d1.max(d2) as f64).ln() + d1.min(d2) as f64 * (5.0 / delta).ln()
}

/// The regularization constant `f(delta, d1, d2)` before the `1/sqrt(N)` scaling.
pub fn lambda_constant(model: &GlmModel, delta: f64, d1: usize, d2: usize, case: LambdaCase) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::BadConfidence(delta));
    }
    let g = model.g_tau();
    let r_max = model.r_max_hint;
    match (case.resolve(model), model.family) {
        (LambdaCase::Bounded { m }, Family::Bernoulli) => {
            if !(m > 0.0) {
                return Err(Error::InvalidArgument(format!("bound M must be positive, got {m}")));
            }
            Ok((8.0 * r_max / g * ((d1 + d2) as f64 / delta).ln()).sqrt())
        }
        (LambdaCase::SubGaussian { sigma }, Family::Gaussian { .. } | Family::Bernoulli) => {
            if !(sigma > 0.0) {
                return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
            }
            Ok(16.0 * std::f64::consts::PI * sigma / g * v_term(delta, d1, d2).sqrt())
        }
        (LambdaCase::Poisson, Family::Poisson) => {
            let r = r_max;
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidArgument(format!("Poisson rate bound must be positive, got {r}")));
            }
            let v = v_term(delta, d1, d2);
            let e = std::f64::consts::E;
            if r > e {
                let a = 1.0 - 2.0 / r;
                let g1 = 0.5 * a * (r + 2.0 * r.ln() + 2.0 * (2.0 * a / e).ln()) + 4.0 * r * r.ln();
                Ok(g1 + 4.0 / a * v)
            } else {
                let g2 = 0.125 * (r + 4.0 * r.ln() + 4.0 * (8.0 + 2.0 * r).ln()) + 4.0 * r * r.ln();
                Ok(g2 + 8.0 * v)
            }
        }
        (case, family) => Err(Error::CaseMismatch(format!("{case:?} does not apply to {family:?}"))),
    }
}

/// Stage I regularization `f(delta, d1, d2) / sqrt(N)`.
pub fn lambda_selection(
    model: &GlmModel,
    delta: f64,
    d1: usize,
    d2: usize,
    n: usize,
    case: LambdaCase,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::BadBudget("lambda needs N >= 1".into()));
    }
    Ok(lambda_constant(model, delta, d1, d2, case)? / (n as f64).sqrt())
}

/// Smallest N for which the bounded-residual case applies.
pub fn bounded_case_min_samples(model: &GlmModel, delta: f64, d1: usize, d2: usize, m: f64) -> f64 {
    2.0 * m * m / (9.0 * model.r_max_hint * model.g_tau()) * ((d1 + d2) as f64 / delta).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_bounded_matches_experiment_setting() {
        let model = GlmModel::bernoulli();
        for delta in [0.01, 0.1, 0.5] {
            for n in [100, 10_000] {
                let lam = lambda_selection(&model, delta, 3, 3, n, LambdaCase::Auto).unwrap();
                let expect = (2.0 / n as f64 * (6.0 / delta).ln()).sqrt();
                assert!((lam - expect).abs() < 1e-15 * expect.max(1.0));
            }
        }
    }

    #[test]
    fn subgaussian_arithmetic() {
        let model = GlmModel::gaussian(1.0);
        let f = lambda_constant(&model, 0.05, 2, 2, LambdaCase::SubGaussian { sigma: 1.0 }).unwrap();
        let expect = 16.0 * std::f64::consts::PI * (4.0_f64.ln() + 2.0 * 100.0_f64.ln()).sqrt();
        assert!((f - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn quadrupling_n_halves_lambda() {
        let cases = [
            (GlmModel::bernoulli(), LambdaCase::Auto),
            (GlmModel::gaussian(2.0), LambdaCase::Auto),
            (GlmModel::poisson(), LambdaCase::Poisson),
            (GlmModel::poisson_with_hint(10.0), LambdaCase::Poisson),
        ];
        for (model, case) in cases {
            let a = lambda_selection(&model, 0.1, 3, 4, 1000, case).unwrap();
            let b = lambda_selection(&model, 0.1, 3, 4, 4000, case).unwrap();
            assert!((a / b - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_branches() {
        let v = v_term(0.1, 2, 3);
        let r: f64 = 10.0;
        let a = 1.0 - 2.0 / r;
        let g1 = 0.5 * a * (r + 2.0 * r.ln() + 2.0 * (2.0 * a / std::f64::consts::E).ln()) + 4.0 * r * r.ln();
        let f = lambda_constant(&GlmModel::poisson_with_hint(r), 0.1, 2, 3, LambdaCase::Poisson).unwrap();
        assert!((f - (g1 + 4.0 / a * v)).abs() < 1e-12 * f);
        let r: f64 = 2.0;
        let g2 = 0.125 * (r + 4.0 * r.ln() + 4.0 * (8.0 + 2.0 * r).ln()) + 4.0 * r * r.ln();
        let f = lambda_constant(&GlmModel::poisson_with_hint(r), 0.1, 2, 3, LambdaCase::Poisson).unwrap();
        assert!((f - (g2 + 8.0 * v)).abs() < 1e-12 * f);
    }

    #[test]
    fn errors() {
        let b = GlmModel::bernoulli();
        assert!(matches!(lambda_selection(&b, 1.0, 3, 3, 10, LambdaCase::Auto), Err(Error::BadConfidence(_))));
        assert!(matches!(lambda_selection(&b, 0.0, 3, 3, 10, LambdaCase::Auto), Err(Error::BadConfidence(_))));
        assert!(matches!(
            lambda_selection(&GlmModel::gaussian(1.0), 0.1, 3, 3, 10, LambdaCase::Poisson),
            Err(Error::CaseMismatch(_))
        ));
        assert!(matches!(
            lambda_selection(&GlmModel::poisson(), 0.1, 3, 3, 10, LambdaCase::Bounded { m: 1.0 }),
            Err(Error::CaseMismatch(_))
        ));
        assert!(lambda_selection(&b, 0.1, 3, 3, 10, LambdaCase::SubGaussian { sigma: 0.5 }).is_ok());
        assert!(lambda_selection(&b, 0.1, 3, 3, 0, LambdaCase::Auto).is_err());
    }
}

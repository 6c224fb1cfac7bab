//! Generalized linear observation models.
//!
//! An observation `y` taken at natural parameter `z = <X, Theta>` has density
//! proportional to `exp((y z - m(z)) / g)`, where `m` is the log-partition
//! function and `g` the dispersion. The inverse link is `mu = m'`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matfun::frobenius_inner;

/// Largest Poisson rate we are willing to sample from.
pub const POISSON_RATE_LIMIT: f64 = 1e12;

/// The supported exponential families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// Normal noise with the given variance.
    Gaussian { variance: f64 },
    /// Binary responses with the logistic link.
    Bernoulli,
    /// Counts with the exponential link.
    Poisson,
}

/// A fully specified observation model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlmModel {
    pub family: Family,
    /// Upper bound on `mu'` over the operating range. Only consulted when the
    /// estimator cannot compute a tighter value from the arm set and parameter
    /// space (Poisson with an unbounded parameter space).
    pub r_max_hint: f64,
}

impl GlmModel {
    pub fn gaussian(variance: f64) -> Self {
        Self {
            family: Family::Gaussian { variance },
            r_max_hint: 1.0,
        }
    }

    pub fn bernoulli() -> Self {
        Self {
            family: Family::Bernoulli,
            r_max_hint: 0.25,
        }
    }

    pub fn poisson() -> Self {
        Self::poisson_with_hint(std::f64::consts::E)
    }

    pub fn poisson_with_hint(r_max_hint: f64) -> Self {
        Self {
            family: Family::Poisson,
            r_max_hint,
        }
    }

    /// Dispersion `g(tau)`.
    pub fn g_tau(&self) -> f64 {
        match self.family {
            Family::Gaussian { variance } => variance,
            Family::Bernoulli | Family::Poisson => 1.0,
        }
    }

    /// Self-concordance constant: `|mu''| <= r_s * mu'`.
    pub fn r_s(&self) -> f64 {
        match self.family {
            Family::Gaussian { .. } => 0.0,
            Family::Bernoulli | Family::Poisson => 1.0,
        }
    }

    /// Log-partition function `m(z)`.
    pub fn m(&self, z: f64) -> f64 {
        match self.family {
            Family::Gaussian { .. } => 0.5 * z * z,
            Family::Bernoulli => softplus(z),
            Family::Poisson => z.exp(),
        }
    }

    /// Inverse link `mu(z) = m'(z)`.
    pub fn mu(&self, z: f64) -> f64 {
        match self.family {
            Family::Gaussian { .. } => z,
            Family::Bernoulli => sigmoid(z),
            Family::Poisson => z.exp(),
        }
    }

    pub fn mu_dot(&self, z: f64) -> f64 {
        match self.family {
            Family::Gaussian { .. } => 1.0,
            Family::Bernoulli => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Family::Poisson => z.exp(),
        }
    }

    pub fn mu_ddot(&self, z: f64) -> f64 {
        match self.family {
            Family::Gaussian { .. } => 0.0,
            Family::Bernoulli => {
                let s = sigmoid(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Family::Poisson => z.exp(),
        }
    }

    /// Whether `mu(z) + mu(-z) = 1`, as required of a comparison function.
    pub fn is_symmetric_link(&self) -> bool {
        matches!(self.family, Family::Bernoulli)
    }

    /// Minimum of `mu'(<X, theta>)` over the given arms. Only meaningful when
    /// `theta` is the true parameter, i.e. in simulations.
    pub fn kappa_star(&self, arms: &[DMatrix<f64>], theta: &DMatrix<f64>) -> f64 {
        arms.iter()
            .map(|x| self.mu_dot(frobenius_inner(x, theta)))
            .fold(f64::INFINITY, f64::min)
    }
}

impl fmt::Display for GlmModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Gaussian { variance } => write!(f, "gaussian:{variance}"),
            Family::Bernoulli => write!(f, "bernoulli"),
            Family::Poisson if self.r_max_hint == std::f64::consts::E => write!(f, "poisson"),
            Family::Poisson => write!(f, "poisson:{}", self.r_max_hint),
        }
    }
}

impl FromStr for GlmModel {
    type Err = Error;

    /// Parses `gaussian[:variance]`, `bernoulli`, `poisson[:r_max_hint]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let parse_pos = |a: &str| -> Result<f64> {
            let v: f64 = a
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad number in model tag '{s}'")))?;
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::InvalidArgument(format!("model parameter must be positive in '{s}'")))
            }
        };
        match (name.to_ascii_lowercase().as_str(), arg) {
            ("gaussian", None) => Ok(Self::gaussian(1.0)),
            ("gaussian", Some(a)) => Ok(Self::gaussian(parse_pos(a)?)),
            ("bernoulli" | "logistic", None) => Ok(Self::bernoulli()),
            ("poisson", None) => Ok(Self::poisson()),
            ("poisson", Some(a)) => Ok(Self::poisson_with_hint(parse_pos(a)?)),
            _ => Err(Error::InvalidArgument(format!("unknown model tag '{s}'"))),
        }
    }
}

impl Serialize for GlmModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GlmModel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Draws one observation at natural parameter `z`.
pub fn sample_observation<R: Rng + ?Sized>(model: &GlmModel, z: f64, rng: &mut R) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFinite(format!("natural parameter {z}")));
    }
    match model.family {
        Family::Gaussian { variance } => {
            let normal = Normal::new(z, variance.sqrt())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(normal.sample(rng))
        }
        Family::Bernoulli => {
            let u: f64 = rng.random();
            Ok(if u < sigmoid(z) { 1.0 } else { 0.0 })
        }
        Family::Poisson => {
            let rate = z.exp();
            if rate > POISSON_RATE_LIMIT {
                return Err(Error::Overflow(format!("Poisson rate {rate:e}")));
            }
            if rate == 0.0 {
                return Ok(0.0);
            }
            let poisson = Poisson::new(rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(poisson.sample(rng))
        }
    }
}

fn check_data(data: &[(DMatrix<f64>, f64)], theta: &DMatrix<f64>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    for (x, _) in data {
        if x.shape() != theta.shape() {
            return Err(Error::ShapeMismatch(format!(
                "observation {:?} vs parameter {:?}",
                x.shape(),
                theta.shape()
            )));
        }
    }
    Ok(())
}

/// Average negative log-likelihood (up to terms free of `theta`):
/// `(1/N) sum_t [m(<X_t,theta>) - y_t <X_t,theta>] / g`.
pub fn neg_log_likelihood(
    model: &GlmModel,
    data: &[(DMatrix<f64>, f64)],
    theta: &DMatrix<f64>,
) -> Result<f64> {
    check_data(data, theta)?;
    let total: f64 = data
        .iter()
        .map(|(x, y)| {
            let z = frobenius_inner(x, theta);
            model.m(z) - y * z
        })
        .sum();
    Ok(total / (data.len() as f64 * model.g_tau()))
}

/// Gradient of [`neg_log_likelihood`]: `(1/N) sum_t (mu(<X_t,theta>) - y_t) / g * X_t`.
pub fn nll_gradient(
    model: &GlmModel,
    data: &[(DMatrix<f64>, f64)],
    theta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_data(data, theta)?;
    let mut grad = DMatrix::zeros(theta.nrows(), theta.ncols());
    for (x, y) in data {
        let z = frobenius_inner(x, theta);
        grad += x * (model.mu(z) - y);
    }
    grad /= data.len() as f64 * model.g_tau();
    Ok(grad)
}

/// Bregman divergence of the log-partition, scaled by the dispersion:
/// `[m(z1) - m(z2) - mu(z2)(z1 - z2)] / g`, which equals the KL divergence of
/// the model at `z2` from the model at `z1`.
pub fn kl_bregman(model: &GlmModel, z1: f64, z2: f64) -> Result<f64> {
    if !z1.is_finite() || !z2.is_finite() {
        return Err(Error::NonFinite(format!("({z1}, {z2})")));
    }
    let d = model.m(z1) - model.m(z2) - model.mu(z2) * (z1 - z2);
    // Cancellation can leave a tiny negative value.
    Ok(d.max(0.0) / model.g_tau())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn models() -> Vec<GlmModel> {
        vec![GlmModel::gaussian(1.0), GlmModel::gaussian(2.5), GlmModel::bernoulli(), GlmModel::poisson()]
    }

    #[test]
    fn closed_forms() {
        let b = GlmModel::bernoulli();
        assert_eq!(b.mu(0.0), 0.5);
        assert!((b.m(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(b.mu_dot(0.0), 0.25);
        let g = GlmModel::gaussian(3.0);
        assert_eq!(g.g_tau(), 3.0);
        assert_eq!(g.r_s(), 0.0);
        assert_eq!(g.m(2.0), 2.0);
        let p = GlmModel::poisson();
        assert!((p.mu(3f64.ln()) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn self_concordance_on_grid() {
        for model in models() {
            for i in 0..1000 {
                let z = -10.0 + 20.0 * i as f64 / 999.0;
                assert!(model.mu_dot(z) >= 0.0);
                assert!(
                    model.mu_ddot(z).abs() <= model.r_s() * model.mu_dot(z) + 1e-12,
                    "{model} at {z}"
                );
            }
        }
    }

    #[test]
    fn bernoulli_link_symmetry() {
        let b = GlmModel::bernoulli();
        for i in 0..200 {
            let z = -20.0 + 40.0 * i as f64 / 199.0;
            assert!((b.mu(z) + b.mu(-z) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tags_round_trip() {
        for tag in ["gaussian:1", "gaussian:0.25", "bernoulli", "poisson", "poisson:5"] {
            let m: GlmModel = tag.parse().unwrap();
            assert_eq!(m.to_string(), tag);
        }
        assert_eq!("gaussian".parse::<GlmModel>().unwrap(), GlmModel::gaussian(1.0));
        assert!("gamma".parse::<GlmModel>().is_err());
        assert!("gaussian:-1".parse::<GlmModel>().is_err());
    }

    #[test]
    fn sampling_means() {
        let mut rng = stream(11, &[0]);
        let n = 100_000;
        let g = GlmModel::gaussian(1.0);
        let mean: f64 = (0..n).map(|_| sample_observation(&g, 0.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        let p = GlmModel::poisson();
        let mean: f64 =
            (0..n).map(|_| sample_observation(&p, 3f64.ln(), &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 0.05, "{mean}");
        let b = GlmModel::bernoulli();
        let ys: Vec<f64> = (0..n).map(|_| sample_observation(&b, 0.0, &mut rng).unwrap()).collect();
        assert!(ys.iter().all(|&y| y == 0.0 || y == 1.0));
        let mean = ys.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn sampling_errors() {
        let mut rng = stream(1, &[]);
        assert!(matches!(
            sample_observation(&GlmModel::bernoulli(), f64::NAN, &mut rng),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            sample_observation(&GlmModel::poisson(), 40.0, &mut rng),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn nll_trivial_values() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DMatrix::zeros(1, 1);
        let g = GlmModel::gaussian(1.0);
        assert_eq!(neg_log_likelihood(&g, &[(one.clone(), 0.0)], &zero).unwrap(), 0.0);
        let b = GlmModel::bernoulli();
        let v = neg_log_likelihood(&b, &[(one.clone(), 1.0)], &zero).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let grad = nll_gradient(&b, &[(one, 1.0)], &zero).unwrap();
        assert_eq!(grad[(0, 0)], -0.5);
    }

    #[test]
    fn nll_errors() {
        let b = GlmModel::bernoulli();
        let theta = DMatrix::zeros(2, 2);
        assert!(matches!(neg_log_likelihood(&b, &[], &theta), Err(Error::EmptyData)));
        let bad = vec![(DMatrix::zeros(3, 2), 1.0)];
        assert!(matches!(nll_gradient(&b, &bad, &theta), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn gaussian_gradient_vanishes_at_exact_fit() {
        let mut rng = stream(3, &[]);
        let theta = DMatrix::from_fn(2, 3, |_, _| rng.random::<f64>() - 0.5);
        let data: Vec<_> = (0..10)
            .map(|_| {
                let x = DMatrix::from_fn(2, 3, |_, _| rng.random::<f64>() - 0.5);
                let y = frobenius_inner(&x, &theta);
                (x, y)
            })
            .collect();
        let grad = nll_gradient(&GlmModel::gaussian(1.0), &data, &theta).unwrap();
        assert!(grad.norm() < 1e-14);
    }

    #[test]
    fn kl_values() {
        let b = GlmModel::bernoulli();
        assert_eq!(kl_bregman(&b, 0.7, 0.7).unwrap(), 0.0);
        // KL(Ber(3/4) || Ber(1/2)) = log 2 - log 4 + (3/4) log 3
        let expected = 2f64.ln() - 4f64.ln() + 0.75 * 3f64.ln();
        let direct = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();
        assert!((expected - direct).abs() < 1e-15);
        assert!((kl_bregman(&b, 0.0, 3f64.ln()).unwrap() - expected).abs() < 1e-14);
        let g = GlmModel::gaussian(1.0);
        assert!((kl_bregman(&g, 1.5, -0.5).unwrap() - 2.0).abs() < 1e-14);
        assert!(kl_bregman(&g, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn kl_nonnegative_and_zero_only_on_diagonal() {
        for model in models() {
            for i in 0..40 {
                for j in 0..40 {
                    let z1 = -4.0 + 0.2 * i as f64;
                    let z2 = -4.0 + 0.2 * j as f64;
                    let kl = kl_bregman(&model, z1, z2).unwrap();
                    assert!(kl >= 0.0);
                    if i != j {
                        assert!(kl > 0.0, "{model} {z1} {z2}");
                    }
                }
            }
        }
    }
}

use nalgebra::DMatrix;
use serde::Serialize;

use super::caratheodory::{approx_caratheodory, CaratheodoryReport};
use super::simplex::{apg_minimize, ApgState};
use super::{ArmSet, Design, DesignReport, SolverOptions, PRUNE_THRESHOLD};
use crate::error::{Error, Result};
use crate::matfun::{sym_eigen_unchecked, SortedEigen};

/// Soft-min of the spectrum and the trace-one weight matrix of its gradient.
fn soft_min(eig: &SortedEigen, beta: f64) -> (f64, DMatrix<f64>) {
    let lo = eig.min();
    let w: Vec<f64> = eig.values.iter().map(|&l| (-beta * (l - lo)).exp()).collect();
    let z: f64 = w.iter().sum();
    let n = eig.vectors.nrows();
    let mut weight = DMatrix::zeros(n, n);
    for (i, wi) in w.iter().enumerate() {
        if *wi > 1e-300 {
            let u = eig.vectors.column(i);
            weight.ger(wi / z, &u, &u, 1.0);
        }
    }
    (lo - z.ln() / beta, weight)
}

/// Tracks the best design found and the tightest upper bound on the optimum.
struct Certifier<'a> {
    arms: &'a ArmSet,
    best_x: Vec<f64>,
    best_val: f64,
    upper: f64,
}

impl Certifier<'_> {
    /// Every trace-one PSD `W` bounds the optimum by `max_a v_a^T W v_a`.
    fn offer_bound(&mut self, w: &DMatrix<f64>) {
        let ub = self.arms.quadratic_forms(w).into_iter().fold(f64::NEG_INFINITY, f64::max);
        self.upper = self.upper.min(ub);
    }

    fn offer(&mut self, x: &[f64], eig: &SortedEigen) {
        let val = eig.min();
        if val > self.best_val {
            self.best_val = val;
            self.best_x = x.to_vec();
        }
        // Averages of the bottom-k eigenprojectors.
        let n = eig.values.len();
        let mut acc = DMatrix::zeros(n, n);
        for k in 0..n {
            let u = eig.vectors.column(k);
            acc.ger(1.0, &u, &u, 1.0);
            self.offer_bound(&(&acc / (k + 1) as f64));
        }
    }

    fn gap(&self) -> f64 {
        if self.upper <= 0.0 {
            return f64::INFINITY;
        }
        ((self.upper - self.best_val) / self.upper).max(0.0)
    }
}

/// Maximizes `lambda_min(V(pi))` over the simplex.
///
/// Runs accelerated projected gradient on a soft-min smoothing whose
/// temperature is tightened geometrically, then a Frank-Wolfe tail if the
/// certificate is still open. The certificate is a duality bound, so the
/// reported relative gap is rigorous.
pub fn e_optimal_design(arms: &ArmSet, opts: &SolverOptions) -> Result<DesignReport> {
    let k = arms.len();
    let n = arms.dim() as f64;
    let x0 = vec![1.0 / k as f64; k];
    let eig0 = sym_eigen_unchecked(arms.weighted_gram(&x0));
    let mut cert = Certifier {
        arms,
        best_x: x0.clone(),
        best_val: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };
    cert.offer(&x0, &eig0);
    let scale = eig0.min().max(1e-12);
    let mut beta = 10.0 * n.ln().max(1.0) / scale;
    let mut used = 0usize;
    let mut state: Option<ApgState> = None;
    let check_every = 5;

    while cert.gap() > opts.tol && used < opts.max_iters {
        let cert_ref = &mut cert;
        let mut f = |x: &[f64]| {
            let eig = sym_eigen_unchecked(arms.weighted_gram(x));
            let (val, w) = soft_min(&eig, beta);
            let g = arms.quadratic_forms(&w);
            Some((-val, g.into_iter().map(|v| -v).collect::<Vec<_>>()))
        };
        let mut st = match state.take() {
            Some(mut s) => {
                let (fx, gx) = f(&s.x).expect("finite");
                s.fx = fx;
                s.gx = gx;
                s
            }
            None => {
                let (fx, gx) = f(&x0).expect("finite");
                ApgState {
                    x: x0.clone(),
                    fx,
                    gx,
                    lip: beta,
                }
            }
        };
        let smoothing = n.ln() / beta;
        let mut counter = 0usize;
        let tol = opts.tol;
        let ran = apg_minimize(&mut f, &mut st, opts.max_iters - used, |s| {
            counter += 1;
            // Frank-Wolfe gap of the smoothed problem.
            let gmin = s.gx.iter().copied().fold(f64::INFINITY, f64::min);
            let fw_gap: f64 = s.x.iter().zip(&s.gx).map(|(x, g)| x * g).sum::<f64>() - gmin;
            if counter % check_every == 0 || fw_gap <= smoothing {
                let eig = sym_eigen_unchecked(arms.weighted_gram(&s.x));
                cert_ref.offer(&s.x, &eig);
                let (_, w) = soft_min(&eig, beta);
                cert_ref.offer_bound(&w);
                if cert_ref.gap() <= tol {
                    return true;
                }
            }
            fw_gap <= smoothing
        });
        used += ran.max(1);
        state = Some(st);
        beta *= 4.0;
    }

    if cert.gap() > opts.tol {
        // Frank-Wolfe tail on the nonsmooth objective from the best iterate.
        let mut x = cert.best_x.clone();
        for t in 0..(opts.max_iters / 5).max(1) {
            let eig = sym_eigen_unchecked(arms.weighted_gram(&x));
            cert.offer(&x, &eig);
            if cert.gap() <= opts.tol {
                break;
            }
            let (_, w) = soft_min(&eig, beta);
            let g = arms.quadratic_forms(&w);
            let s = (0..k).fold(0, |b, a| if g[a] > g[b] { a } else { b });
            let gamma = 2.0 / (t as f64 + 3.0);
            for xi in &mut x {
                *xi *= 1.0 - gamma;
            }
            x[s] += gamma;
        }
    }

    let gap = cert.gap();
    if gap > opts.tol && !opts.lenient {
        return Err(Error::NonConvergence { iters: used, gap });
    }
    let design = Design::from_unnormalized(cert.best_x.clone())?.pruned(PRUNE_THRESHOLD);
    let objective_value = sym_eigen_unchecked(arms.weighted_gram(design.weights())).min();
    Ok(DesignReport {
        design,
        objective_value,
        certificate: gap,
        iterations: used,
        converged: gap <= opts.tol,
    })
}

/// E-optimal design followed, when its support exceeds `(d1 d2)^2`, by
/// approximate Caratheodory sparsification at tolerance `1 / (2 max(d1, d2))`.
#[derive(Clone, Debug, Serialize)]
pub struct EcadReport {
    pub report: DesignReport,
    pub e_optimal: DesignReport,
    pub sparsification: Option<CaratheodoryReport>,
}

pub fn ecad(arms: &ArmSet, opts: &SolverOptions) -> Result<EcadReport> {
    let e_optimal = e_optimal_design(arms, opts)?;
    let limit = arms.dim() * arms.dim();
    if e_optimal.design.support().len() <= limit {
        return Ok(EcadReport {
            report: e_optimal.clone(),
            e_optimal,
            sparsification: None,
        });
    }
    let epsilon = 1.0 / (2.0 * arms.d1().max(arms.d2()) as f64);
    let car = approx_caratheodory(&e_optimal.design, arms, epsilon)?;
    let objective_value = sym_eigen_unchecked(arms.weighted_gram(car.design.weights())).min();
    Ok(EcadReport {
        report: DesignReport {
            design: car.design.clone(),
            objective_value,
            certificate: e_optimal.certificate,
            iterations: e_optimal.iterations + car.iterations,
            converged: e_optimal.converged,
        },
        e_optimal,
        sparsification: Some(car),
    })
}

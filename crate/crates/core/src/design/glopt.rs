use nalgebra::DMatrix;

use super::simplex::{apg_minimize, ApgState};
use super::{
    contiguous_block_sum, guarded_inverse, strided_block_sum, ArmSet, Design, DesignReport, SolverOptions,
    PRUNE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::glm::GlmModel;
use crate::matfun::sym_eigen_unchecked;

/// `I_{d2} (x) wc + wr (x) I_{d1}` in column-major vec coordinates.
fn lift_weights(wc: &DMatrix<f64>, wr: &DMatrix<f64>, d1: usize, d2: usize) -> DMatrix<f64> {
    let n = d1 * d2;
    let mut g = DMatrix::zeros(n, n);
    for m in 0..d2 {
        let mut blk = g.view_mut((m * d1, m * d1), (d1, d1));
        blk += wc;
    }
    for k in 0..d2 {
        for l in 0..d2 {
            let w = wr[(k, l)];
            if w != 0.0 {
                for row in 0..d1 {
                    g[(row + d1 * k, row + d1 * l)] += w;
                }
            }
        }
    }
    g
}

struct GlEval {
    gl: f64,
    smoothed: f64,
    grad: Vec<f64>,
}

/// Smoothed GL: log-sum-exp over the spectra of both block sums.
fn eval_smoothed(arms: &ArmSet, curv: &[f64], x: &[f64], beta: f64) -> Option<GlEval> {
    let (d1, d2) = (arms.d1(), arms.d2());
    let w: Vec<f64> = x.iter().zip(curv).map(|(p, c)| p * c).collect();
    let (m, _) = guarded_inverse(&arms.weighted_gram(&w)).ok()?;
    let ec = sym_eigen_unchecked(contiguous_block_sum(&m, d1, d2));
    let er = sym_eigen_unchecked(strided_block_sum(&m, d1, d2));
    let top = ec.max().max(er.max());
    let z: f64 = ec.values.iter().chain(&er.values).map(|&l| (beta * (l - top)).exp()).sum();
    let smoothed = top + z.ln() / beta;
    let weight_of = |e: &crate::matfun::SortedEigen| {
        let k = e.values.len();
        let mut out = DMatrix::zeros(k, k);
        for (i, &l) in e.values.iter().enumerate() {
            let p = (beta * (l - top)).exp() / z;
            if p > 1e-300 {
                let u = e.vectors.column(i);
                out.ger(p, &u, &u, 1.0);
            }
        }
        out
    };
    let g = lift_weights(&weight_of(&ec), &weight_of(&er), d1, d2);
    let q = &m * g * &m;
    let grad = arms.quadratic_forms(&q).into_iter().zip(curv).map(|(v, c)| -c * v).collect();
    Some(GlEval { gl: top, smoothed, grad })
}

/// Value and gradient of the log-sum-exp smoothing of GL at temperature `beta`.
pub fn gl_smoothed(
    design: &Design,
    arms: &ArmSet,
    model: &GlmModel,
    theta0: &DMatrix<f64>,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    arms.check_design(design)?;
    arms.check_theta(theta0)?;
    let curv = arms.curvatures(model, theta0);
    let e = eval_smoothed(arms, &curv, design.weights(), beta)
        .ok_or_else(|| Error::SingularHessian(f64::INFINITY))?;
    Ok((e.smoothed, e.grad))
}

/// A subgradient of `pi -> GL(pi; theta0)`: the gradient of the active block
/// family's top eigenvalue (contiguous family on ties).
pub fn gl_subgradient(
    design: &Design,
    arms: &ArmSet,
    model: &GlmModel,
    theta0: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let h = super::hessian_matrix(design, arms, model, theta0)?;
    let (m, _) = guarded_inverse(&h)?;
    let (d1, d2) = (arms.d1(), arms.d2());
    let ec = sym_eigen_unchecked(contiguous_block_sum(&m, d1, d2));
    let er = sym_eigen_unchecked(strided_block_sum(&m, d1, d2));
    let top = |e: &crate::matfun::SortedEigen| {
        let u = e.vectors.column(e.values.len() - 1);
        &u * u.transpose()
    };
    let g = if ec.max() >= er.max() {
        lift_weights(&top(&ec), &DMatrix::zeros(d2, d2), d1, d2)
    } else {
        lift_weights(&DMatrix::zeros(d1, d1), &top(&er), d1, d2)
    };
    let q = &m * g * &m;
    let curv = arms.curvatures(model, theta0);
    Ok(arms.quadratic_forms(&q).into_iter().zip(curv).map(|(v, c)| -c * v).collect())
}

/// Minimizes `GL(pi; theta0)` over the simplex, starting from uniform.
///
/// The objective is convex in `pi`. It is smoothed by log-sum-exp over the
/// eigenvalues of both block sums and minimized with accelerated projected
/// gradient under a geometrically increasing temperature. The certificate
/// compares the best value with the largest lower bound seen, built from the
/// smoothed Frank-Wolfe gap plus the smoothing bias.
pub fn gl_optimal_design(
    arms: &ArmSet,
    model: &GlmModel,
    theta0: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<DesignReport> {
    arms.check_theta(theta0)?;
    let k = arms.len();
    let curv = arms.curvatures(model, theta0);
    let n_eig = (arms.d1() + arms.d2()) as f64;
    let x0 = vec![1.0 / k as f64; k];
    let start = eval_smoothed(arms, &curv, &x0, 1.0).ok_or_else(|| {
        let h = arms.weighted_gram(&x0.iter().zip(&curv).map(|(p, c)| p * c).collect::<Vec<_>>());
        guarded_inverse(&h).err().unwrap_or(Error::SingularHessian(f64::INFINITY))
    })?;
    let mut best_x = x0.clone();
    let mut best_gl = start.gl;
    let mut lower = 0.0_f64;
    let mut beta = 10.0 * n_eig.ln() / start.gl;
    let mut used = 0usize;
    let mut x = x0;
    let rel_gap = |best: f64, lower: f64| if lower > 0.0 { (best - lower) / lower } else { f64::INFINITY };

    while rel_gap(best_gl, lower) > opts.tol && used < opts.max_iters {
        let bias = n_eig.ln() / beta;
        let mut f = |p: &[f64]| eval_smoothed(arms, &curv, p, beta).map(|e| (e.smoothed, e.grad));
        let (fx, gx) = f(&x).expect("incumbent is nonsingular");
        let mut st = ApgState {
            x: x.clone(),
            fx,
            gx,
            lip: beta * start.gl * start.gl,
        };
        let tol = opts.tol;
        let ran = apg_minimize(&mut f, &mut st, opts.max_iters - used, |s| {
            let gmin = s.gx.iter().copied().fold(f64::INFINITY, f64::min);
            let fw_gap: f64 = s.x.iter().zip(&s.gx).map(|(a, g)| a * g).sum::<f64>() - gmin;
            lower = lower.max(s.fx - fw_gap - bias);
            // `s.fx` upper-bounds GL at `s.x`; evaluate GL only when it may improve.
            if s.fx - bias < best_gl {
                if let Some(e) = eval_smoothed(arms, &curv, &s.x, beta) {
                    if e.gl < best_gl {
                        best_gl = e.gl;
                        best_x.clone_from(&s.x);
                    }
                }
            }
            rel_gap(best_gl, lower) <= tol || fw_gap <= bias
        });
        used += ran.max(1);
        x = st.x;
        beta *= 4.0;
    }

    let gap = rel_gap(best_gl, lower);
    if gap > opts.tol && !opts.lenient {
        return Err(Error::NonConvergence { iters: used, gap });
    }
    let mut design = Design::from_unnormalized(best_x.clone())?.pruned(PRUNE_THRESHOLD);
    let mut value = super::gl_objective(&design, arms, model, theta0).map(|b| b.gl);
    if !matches!(value, Ok(v) if v <= best_gl * (1.0 + 1e-9)) {
        design = Design::from_unnormalized(best_x)?;
        value = super::gl_objective(&design, arms, model, theta0).map(|b| b.gl);
    }
    Ok(DesignReport {
        design,
        objective_value: value?,
        certificate: gap,
        iterations: used,
        converged: gap <= opts.tol,
    })
}

//! Accelerated projected gradient on the probability simplex.

use crate::matfun::project_simplex;

/// A smooth objective on the simplex: value and gradient, or `None` where the
/// objective is undefined (for example a singular Hessian).
pub(crate) trait SmoothObjective {
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> SmoothObjective for F {
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self(x)
    }
}

pub(crate) struct ApgState {
    pub x: Vec<f64>,
    pub fx: f64,
    pub gx: Vec<f64>,
    /// Current Lipschitz estimate.
    pub lip: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs at most `iters` iterations of FISTA with backtracking and
/// function-value restart, minimizing `f` from `state`. `stop` is consulted
/// after every accepted step. Returns the number of iterations used.
pub(crate) fn apg_minimize(
    f: &mut impl SmoothObjective,
    state: &mut ApgState,
    iters: usize,
    mut stop: impl FnMut(&ApgState) -> bool,
) -> usize {
    let mut y = state.x.clone();
    let mut fy = state.fx;
    let mut gy = state.gx.clone();
    let mut t = 1.0_f64;
    for it in 0..iters {
        let (z, fz, gz) = loop {
            let step: Vec<f64> = y.iter().zip(&gy).map(|(yi, gi)| yi - gi / state.lip).collect();
            let z = project_simplex(&step);
            let diff: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
            let model_val = fy + dot(&gy, &diff) + 0.5 * state.lip * dot(&diff, &diff);
            match f.eval(&z) {
                Some((fz, gz)) if fz.is_finite() && fz <= model_val + 1e-14 * fz.abs().max(1.0) => {
                    break (z, fz, gz)
                }
                _ => {
                    state.lip *= 2.0;
                    if state.lip > 1e30 {
                        return it;
                    }
                }
            }
        };
        if fz > state.fx {
            // Momentum made things worse: restart from the incumbent.
            y.clone_from(&state.x);
            fy = state.fx;
            gy.clone_from(&state.gx);
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let extrap: Vec<f64> = z.iter().zip(&state.x).map(|(zi, xi)| zi + beta * (zi - xi)).collect();
        let extrap = project_simplex(&extrap);
        state.x = z;
        state.fx = fz;
        state.gx = gz;
        t = t_next;
        match f.eval(&extrap) {
            Some((fe, ge)) if fe.is_finite() => {
                y = extrap;
                fy = fe;
                gy = ge;
            }
            _ => {
                y.clone_from(&state.x);
                fy = state.fx;
                gy.clone_from(&state.gx);
                t = 1.0;
            }
        }
        state.lip *= 0.9;
        if stop(state) {
            return it + 1;
        }
    }
    iters
}

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const OUTER_RESAMPLES: usize = 1000;
pub const INNER_RESAMPLES: usize = 500;
/// Below this the studentizing scale is unusable.
pub const DEGENERATE_SE: f64 = 1e-15;
/// Inner scales this small relative to the sample scale are rounding noise.
pub const RELATIVE_SE_FLOOR: f64 = 1e-9;

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn resample(values: &[f64], rng: &mut StreamRng, out: &mut Vec<f64>) {
    out.clear();
    let n = values.len();
    out.extend((0..n).map(|_| values[rng.random_range(0..n)]));
}

/// Bootstrap standard error of the mean of `values`.
fn inner_se(values: &[f64], rng: &mut StreamRng, buf: &mut Vec<f64>) -> f64 {
    let means: Vec<f64> = (0..INNER_RESAMPLES)
        .map(|_| {
            resample(values, rng, buf);
            mean(buf)
        })
        .collect();
    let m = mean(&means);
    (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt()
}

/// 95% studentized bootstrap interval for the mean, bias corrected, with a
/// percentile fallback when the studentizing scale degenerates.
pub fn bootstrap_ci(values: &[f64], rng: &mut StreamRng) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::TooFewValues {
            need: 2,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("bootstrap input".into()));
    }
    let theta = mean(values);
    let mut buf = Vec::with_capacity(values.len());
    let mut inner_buf = Vec::with_capacity(values.len());
    let se = inner_se(values, rng, &mut buf);
    let mut boot_means = Vec::with_capacity(OUTER_RESAMPLES);
    let mut t_stats = Vec::with_capacity(OUTER_RESAMPLES);
    for _ in 0..OUTER_RESAMPLES {
        resample(values, rng, &mut buf);
        let m = mean(&buf);
        boot_means.push(m);
        let s = inner_se(&buf, rng, &mut inner_buf);
        if s >= DEGENERATE_SE && s >= RELATIVE_SE_FLOOR * se {
            t_stats.push((m - theta) / s);
        }
    }
    boot_means.sort_by(f64::total_cmp);
    if se < DEGENERATE_SE || t_stats.len() < OUTER_RESAMPLES / 2 {
        return Ok((quantile_sorted(&boot_means, 0.025), quantile_sorted(&boot_means, 0.975)));
    }
    t_stats.sort_by(f64::total_cmp);
    let bias = mean(&boot_means) - theta;
    let center = theta - bias;
    Ok((
        center - quantile_sorted(&t_stats, 0.975) * se,
        center - quantile_sorted(&t_stats, 0.025) * se,
    ))
}

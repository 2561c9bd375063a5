use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imprint::ImprintBatch;
use crate::rng;

/// Minimum batch size accepted by [`tail_fit_compare`].
pub const MIN_TAIL_SAMPLES: usize = 50;

/// Pooled quantile of standardized deviations that opens the tail region.
pub const TAIL_QUANTILE: f64 = 0.95;

/// Held-out comparison of moment-matched Laplace and Gaussian element models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFitReport {
    pub generator_id: String,
    pub n_train: usize,
    pub n_holdout: usize,
    /// Elements left out because their train-split spread is at the floor.
    pub dead_elements: usize,
    /// Mean held-out log-density per element.
    pub laplace_ll: f64,
    pub gaussian_ll: f64,
    /// Tail threshold in units of the element's standard deviation.
    pub tail_threshold_sigma: f64,
    /// Fraction of held-out values that fell in the tail region.
    pub tail_fraction: f64,
    /// Mean censored tail score: log-density inside the tail region, log of
    /// the model's non-tail mass outside it.
    pub laplace_tail_ll: f64,
    pub gaussian_tail_ll: f64,
    /// `laplace_tail_ll - gaussian_tail_ll`.
    pub tail_log_ratio: f64,
    /// True when the Laplace tail score is at least the Gaussian one.
    pub laplace_fits_tails_better: bool,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn laplace_logpdf(x: f64, mu: f64, b: f64) -> f64 {
    -(2.0 * b).ln() - (x - mu).abs() / b
}

fn gaussian_logpdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
}

/// Fit both families per element on a random train split and score the
/// held-out split.
///
/// The tail comparison uses a censored likelihood rather than the density
/// restricted to tail points: conditioning on the tail alone favours whichever
/// model puts more mass there, regardless of the data. With region
/// `A = {|x - mu| > c * sigma}` each held-out value scores `log f(x)` inside
/// `A` and `log(1 - P(A))` outside, which is a proper score for both models.
pub fn tail_fit_compare(x: &ImprintBatch, holdout_fraction: f64) -> Result<TailFitReport> {
    let n = x.n();
    if n < MIN_TAIL_SAMPLES {
        return Err(Error::Precondition(format!(
            "tail fit needs at least {MIN_TAIL_SAMPLES} samples, got {n}"
        )));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "holdout fraction {holdout_fraction} is outside (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(n as u64, "tail-split"));
    let n_hold = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 2);
    let (hold, train) = order.split_at(n_hold);

    let d = x.dim();
    let mut mu = vec![0.0; d];
    for &i in train {
        mu.iter_mut().zip(x.sample(i)).for_each(|(m, v)| *m += v);
    }
    mu.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut sigma = vec![0.0; d];
    for &i in train {
        for ((s, v), m) in sigma.iter_mut().zip(x.sample(i)).zip(&mu) {
            *s += (v - m) * (v - m);
        }
    }
    sigma.iter_mut().for_each(|s| *s = (*s / train.len() as f64).sqrt());

    let floor = crate::imprint::SCALE_FLOOR * std::f64::consts::SQRT_2;
    let alive: Vec<usize> = (0..d).filter(|&j| sigma[j] > floor).collect();
    if alive.is_empty() {
        return Err(Error::Precondition(format!(
            "every element of '{}' has zero spread on the train split",
            x.generator_id
        )));
    }

    let mut z: Vec<f64> = Vec::with_capacity(train.len() * alive.len());
    for &i in train {
        let s = x.sample(i);
        z.extend(alive.iter().map(|&j| (s[j] - mu[j]).abs() / sigma[j]));
    }
    z.sort_by(f64::total_cmp);
    let c = z[((z.len() - 1) as f64 * TAIL_QUANTILE).round() as usize];

    // Non-tail mass of each model; the ratio c = |x - mu| / sigma is shared
    // and b = sigma / sqrt(2) for the Laplace model.
    let lap_in = (1.0 - (-c * std::f64::consts::SQRT_2).exp()).ln();
    let gau_tail = libm::erfc(c / std::f64::consts::SQRT_2);
    let gau_in = (1.0 - gau_tail).ln();

    let (mut ll_l, mut ll_g, mut t_l, mut t_g) = (0.0, 0.0, 0.0, 0.0);
    let mut in_tail = 0usize;
    for &i in hold {
        let s = x.sample(i);
        for &j in &alive {
            let (v, m, sd) = (s[j], mu[j], sigma[j]);
            let b = sd / std::f64::consts::SQRT_2;
            let lp = laplace_logpdf(v, m, b);
            let gp = gaussian_logpdf(v, m, sd);
            ll_l += lp;
            ll_g += gp;
            if (v - m).abs() > c * sd {
                in_tail += 1;
                t_l += lp;
                t_g += gp;
            } else {
                t_l += lap_in;
                t_g += gau_in;
            }
        }
    }
    let count = (hold.len() * alive.len()) as f64;
    let report = TailFitReport {
        generator_id: x.generator_id.clone(),
        n_train: train.len(),
        n_holdout: hold.len(),
        dead_elements: d - alive.len(),
        laplace_ll: ll_l / count,
        gaussian_ll: ll_g / count,
        tail_threshold_sigma: c,
        tail_fraction: in_tail as f64 / count,
        laplace_tail_ll: t_l / count,
        gaussian_tail_ll: t_g / count,
        tail_log_ratio: (t_l - t_g) / count,
        laplace_fits_tails_better: t_l >= t_g,
    };
    for v in [report.laplace_ll, report.gaussian_ll, report.laplace_tail_ll, report.gaussian_tail_ll] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("tail-fit likelihood of '{}'", x.generator_id)));
        }
    }
    Ok(report)
}

use crate::error::{Error, Result};
use crate::imprint::{FieldProvenance, FusionSpec, LaplaceField, SCALE_FLOOR};

/// Mean element-wise `KL(a || b)` between two Laplace fields. Not symmetric.
pub fn distribution_distance(a: &LaplaceField, b: &LaplaceField) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("field shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let total: f64 = a
        .mu()
        .iter()
        .zip(a.b())
        .zip(b.mu().iter().zip(b.b()))
        .map(|((&ma, &ba), (&mb, &bb))| laplace_kl(ma, ba, mb, bb))
        .sum();
    Ok(total / a.len() as f64)
}

/// Closed-form `KL(Laplace(mu_a, b_a) || Laplace(mu_b, b_b))`.
pub fn laplace_kl(mu_a: f64, b_a: f64, mu_b: f64, b_b: f64) -> f64 {
    let d = (mu_a - mu_b).abs();
    if d == 0.0 && b_a == b_b {
        return 0.0;
    }
    (b_b / b_a).ln() + (b_a * (-d / b_a).exp() + d) / b_b - 1.0
}

pub fn laplace_cdf(x: f64, mu: f64, b: f64) -> f64 {
    let z = (x - mu) / b;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0, |acc: f64, (i, &x)| {
        let f = cdf(x);
        acc.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Asymptotic KS critical value at significance `alpha` for `n` samples.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Parameter-level fusion: weighted averages of `mu` and of `b`. Kept for
/// comparison only; the simulator fuses imprint batches and refits.
pub fn fuse_fields(fields: &[LaplaceField], spec: &FusionSpec) -> Result<LaplaceField> {
    spec.validate()?;
    if fields.len() != spec.weights.len() {
        return Err(Error::FusionSpec(format!("{} fields for {} weights", fields.len(), spec.weights.len())));
    }
    let shape = fields[0].shape();
    if let Some(f) = fields.iter().find(|f| f.shape() != shape) {
        return Err(Error::Shape(format!("field shapes {shape:?} and {:?} differ", f.shape())));
    }
    let mut mu = vec![0.0; fields[0].len()];
    let mut b = vec![0.0; fields[0].len()];
    for (f, &w) in fields.iter().zip(&spec.weights) {
        mu.iter_mut().zip(f.mu()).for_each(|(a, v)| *a += w * v);
        b.iter_mut().zip(f.b()).for_each(|(a, v)| *a += w * v);
    }
    b.iter_mut().for_each(|v| *v = v.max(SCALE_FLOOR));
    LaplaceField::new(
        shape,
        mu,
        b,
        FieldProvenance {
            n: fields.iter().map(|f| f.provenance.n).min().unwrap_or(0),
            source_generators: spec.generator_ids.clone(),
            epsilon: SCALE_FLOOR,
        },
    )
}

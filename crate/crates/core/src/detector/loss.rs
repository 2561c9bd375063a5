use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Tensor, Var};

/// Auxiliary loss weights: `L = L_bce + alpha * (lambda_diff * L_diff + lambda_contrast * L_contrast)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_diff: f64,
    pub lambda_contrast: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_diff: 0.2,
            lambda_contrast: 1.0,
            alpha: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_diff", self.lambda_diff),
            ("lambda_contrast", self.lambda_contrast),
            ("alpha", self.alpha),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether any auxiliary term carries weight.
    pub fn uses_aux(&self) -> bool {
        self.alpha > 0.0 && (self.lambda_diff > 0.0 || self.lambda_contrast > 0.0)
    }
}

/// `l_bce + alpha * (lambda_diff * l_diff + lambda_contrast * l_contrast)`.
pub fn loss_total(l_bce: f64, l_diff: f64, l_contrast: f64, w: &LossWeights) -> f64 {
    l_bce + w.alpha * (w.lambda_diff * l_diff + w.lambda_contrast * l_contrast)
}

/// Graph form of [`loss_total`]; absent auxiliary terms count as zero.
pub fn loss_total_var<T: Real>(g: &mut Graph<T>, bce: Var, diff: Option<Var>, contrast: Option<Var>, w: &LossWeights) -> Var {
    let mut total = bce;
    for (term, lambda) in [(diff, w.lambda_diff), (contrast, w.lambda_contrast)] {
        if let Some(t) = term {
            let scaled = g.scale(t, T::lit(w.alpha * lambda));
            total = g.add(total, scaled);
        }
    }
    total
}

/// Mean squared error between projected feature differences `[n, D]` and
/// flattened latent differences (`n * D` values, row-major).
pub fn loss_diff<T: Real>(g: &mut Graph<T>, projected: Var, delta_z: &[T]) -> Result<Var> {
    let shape = g.value(projected).shape().to_vec();
    if shape.len() != 2 || shape[0] * shape[1] != delta_z.len() {
        return Err(Error::Shape(format!(
            "projector output {shape:?} vs {} latent-difference values",
            delta_z.len()
        )));
    }
    let target = g.constant(Tensor::new(&shape, delta_z.to_vec()));
    Ok(g.mse(projected, target))
}

/// Supervised contrastive loss over `features` whose first `n_real` rows are
/// real and the rest fake. Rows are L2-normalized; each real is pulled toward
/// the other reals and pushed away from every fake at temperature `tau`.
pub fn loss_contrast<T: Real>(g: &mut Graph<T>, features: Var, n_real: usize, tau: f64) -> Result<Var> {
    let n = g.value(features).shape()[0];
    let n_fake = n.saturating_sub(n_real);
    if n_real < 2 || n_fake < 1 {
        return Err(Error::Precondition(format!(
            "contrastive batch needs >= 2 reals and >= 1 fake, got {n_real} and {n_fake}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("contrastive temperature must be positive, got {tau}")));
    }
    let unit = g.l2_normalize(features);
    let anchors: Vec<bool> = (0..n).map(|i| i < n_real).collect();
    Ok(g.supcon(unit, &anchors, T::lit(tau)))
}

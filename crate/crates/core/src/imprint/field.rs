use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{fuse_batches, FusionSpec, ImprintBatch, LatentTensor};
use crate::container::{Container, NamedArray, MAGIC_FIELD};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Floor applied to every fitted scale.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldProvenance {
    pub n: usize,
    pub source_generators: Vec<String>,
    pub epsilon: f64,
}

/// Element-wise `Laplace(mu, b)` over a latent shape.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceField {
    shape: [usize; 3],
    mu: Vec<f64>,
    b: Vec<f64>,
    pub provenance: FieldProvenance,
}

impl LaplaceField {
    pub fn new(shape: [usize; 3], mu: Vec<f64>, b: Vec<f64>, provenance: FieldProvenance) -> Result<Self> {
        let n = shape.iter().product::<usize>();
        if mu.len() != n || b.len() != n {
            return Err(Error::Shape(format!(
                "field arrays of {} and {} values for shape {shape:?}",
                mu.len(),
                b.len()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Precondition("field needs finite mu and finite positive b".into()));
        }
        Ok(Self {
            shape,
            mu,
            b,
            provenance,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let meta = serde_json::json!({ "shape": self.shape, "provenance": self.provenance });
        let mut c = Container::new(config_hash, meta);
        let s = &self.shape;
        c.push(NamedArray::f64("mu", &[s[0], s[1], s[2]], self.mu.clone()));
        c.push(NamedArray::f64("b", &[s[0], s[1], s[2]], self.b.clone()));
        c.write(path, MAGIC_FIELD)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Container::read(path, MAGIC_FIELD)?;
        let bad = |e: String| Error::Format(format!("{}: {e}", path.display()));
        let shape: [usize; 3] = serde_json::from_value(c.meta["shape"].clone()).map_err(|e| bad(e.to_string()))?;
        let provenance: FieldProvenance =
            serde_json::from_value(c.meta["provenance"].clone()).map_err(|e| bad(e.to_string()))?;
        let mu = c.take("mu")?.into_f64()?;
        let b = c.take("b")?.into_f64()?;
        Self::new(shape, mu, b, provenance)
    }
}

/// Moment fit: mean over samples, population standard deviation, and
/// `b = sigma / sqrt(2)` floored at [`SCALE_FLOOR`].
pub fn fit_laplace(x: &ImprintBatch) -> Result<LaplaceField> {
    let n = x.n();
    if n == 1 {
        log::warn!(
            "fitting a Laplace field to a single sample of '{}': every scale is floored",
            x.generator_id
        );
    }
    let d = x.dim();
    let mut mu = vec![0.0; d];
    for s in x.samples() {
        for (m, &v) in mu.iter_mut().zip(s) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for s in x.samples() {
        for ((acc, &v), &m) in var.iter_mut().zip(s).zip(&mu) {
            *acc += (v - m) * (v - m);
        }
    }
    let b = var
        .iter()
        .map(|&v| ((v / n as f64).sqrt() / std::f64::consts::SQRT_2).max(SCALE_FLOOR))
        .collect();
    LaplaceField::new(
        x.shape(),
        mu,
        b,
        FieldProvenance {
            n,
            source_generators: x.contributors.clone(),
            epsilon: SCALE_FLOOR,
        },
    )
}

/// `fit_laplace(fuse_batches(batches, spec))`.
pub fn build_fused_field(batches: &[ImprintBatch], spec: &FusionSpec) -> Result<LaplaceField> {
    fit_laplace(&fuse_batches(batches, spec)?)
}

/// Inverse-CDF Laplace draw from a uniform `u` in `(-1/2, 1/2)`.
pub fn laplace_quantile(mu: f64, b: f64, u: f64) -> f64 {
    mu - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One independent draw per element.
pub fn sample_imprint(field: &LaplaceField, rng: &mut Rng) -> LatentTensor {
    let values = field
        .mu
        .iter()
        .zip(&field.b)
        .map(|(&mu, &b)| {
            let u = loop {
                let u: f64 = rng.random::<f64>() - 0.5;
                if u > -0.5 {
                    break u;
                }
            };
            if u == 0.0 {
                mu
            } else {
                laplace_quantile(mu, b, u)
            }
        })
        .collect();
    LatentTensor::new(field.shape, values).expect("finite draws of a valid field")
}

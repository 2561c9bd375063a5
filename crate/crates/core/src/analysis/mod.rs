//! Diagnostics over imprint batches and fitted fields.

mod distance;
mod pca;
mod plot;
mod tails;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub use distance::{distribution_distance, fuse_fields, ks_critical, ks_statistic, laplace_cdf, laplace_kl};
pub use pca::{convex_hull, in_convex_hull, pca_project, Centroid, ProjectedPoint, ProjectionReport};
pub use plot::emit_scatter;
pub use tails::{tail_fit_compare, TailFitReport, MIN_TAIL_SAMPLES, TAIL_QUANTILE};

use crate::error::{Error, Result};

/// Write one compact JSON object per line.
pub fn write_json_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n").expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;

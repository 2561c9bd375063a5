use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imprint::ImprintBatch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub tag: String,
    pub image_id: String,
    pub xy: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub tag: String,
    pub xy: [f64; 2],
}

/// Two-component projection of imprint samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub points: Vec<ProjectedPoint>,
    /// Share of total variance carried by each component.
    pub explained_variance_ratio: [f64; 2],
    /// One per tag, in input order.
    pub centroids: Vec<Centroid>,
    pub standardized: bool,
}

impl ProjectionReport {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self, tag: &str) -> Option<[f64; 2]> {
        self.centroids.iter().find(|c| c.tag == tag).map(|c| c.xy)
    }
}

/// Fit two principal components on the union of all samples (fused batch
/// included) and project every sample. Each component is signed so that its
/// largest-magnitude loading is positive. With `standardize`, each element is
/// scaled to unit variance first (zero-variance elements are left as is).
pub fn pca_project(batches: &[ImprintBatch], fused: Option<&ImprintBatch>, standardize: bool) -> Result<ProjectionReport> {
    let all: Vec<&ImprintBatch> = batches.iter().chain(fused).collect();
    let Some(first) = all.first() else {
        return Err(Error::EmptyDataset("no imprint batches to project".into()));
    };
    let d = first.dim();
    if let Some(bad) = all.iter().find(|b| b.dim() != d) {
        return Err(Error::Shape(format!(
            "batch '{}' has {} elements per sample, expected {d}",
            bad.generator_id,
            bad.dim()
        )));
    }
    let n: usize = all.iter().map(|b| b.n()).sum();
    if n < 2 {
        return Err(Error::Precondition(format!("projection needs at least 2 samples, got {n}")));
    }

    let mut x = DMatrix::<f64>::zeros(n, d);
    let mut row = 0;
    for b in &all {
        for s in b.samples() {
            x.row_mut(row).copy_from_slice(s);
            row += 1;
        }
    }
    let magnitude = x.norm_squared() / n as f64;
    let mean = x.row_mean();
    for mut r in x.row_iter_mut() {
        r -= &mean;
    }
    if standardize {
        for mut c in x.column_iter_mut() {
            let sd = (c.norm_squared() / n as f64).sqrt();
            if sd > 0.0 {
                c /= sd;
            }
        }
    }
    let cov = x.tr_mul(&x) / n as f64;
    // Centering leaves rounding residue on constant data; treat variance at
    // that level as zero.
    let trace = cov.trace();
    let trace = if trace <= 1e-24 * magnitude { 0.0 } else { trace };
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = DMatrix::<f64>::zeros(d, 2);
    let mut explained = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let lead = v.iter().enumerate().fold(0, |best, (i, a)| if a.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        components.set_column(k, &v);
        explained[k] = if trace > 0.0 { eig.eigenvalues[idx].max(0.0) / trace } else { 0.0 };
    }
    let proj = &x * &components;

    let mut points = Vec::with_capacity(n);
    let mut centroids = Vec::with_capacity(all.len());
    let mut row = 0;
    for b in &all {
        let mut c = [0.0; 2];
        for id in b.image_ids() {
            let xy = [proj[(row, 0)], proj[(row, 1)]];
            c[0] += xy[0];
            c[1] += xy[1];
            points.push(ProjectedPoint {
                tag: b.generator_id.clone(),
                image_id: id.clone(),
                xy,
            });
            row += 1;
        }
        centroids.push(Centroid {
            tag: b.generator_id.clone(),
            xy: [c[0] / b.n() as f64, c[1] / b.n() as f64],
        });
    }
    if points.iter().any(|p| !(p.xy[0].is_finite() && p.xy[1].is_finite())) {
        return Err(Error::NonFinite("projected coordinates".into()));
    }
    Ok(ProjectionReport {
        points,
        explained_variance_ratio: explained,
        centroids,
        standardized: standardize,
    })
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull in counter-clockwise order (monotone chain); collinear points
/// are dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

/// Whether `q` lies in the convex hull of `points`, boundary included, up to
/// an absolute tolerance `tol`.
pub fn in_convex_hull(q: [f64; 2], points: &[[f64; 2]], tol: f64) -> bool {
    let hull = convex_hull(points);
    let near = |a: [f64; 2], b: [f64; 2]| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((q[0] - a[0]) * dx + (q[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (a[0] + t * dx - q[0], a[1] + t * dy - q[1]);
        (px * px + py * py).sqrt() <= tol
    };
    match hull.len() {
        0 => false,
        1 => near(hull[0], hull[0]),
        2 => near(hull[0], hull[1]),
        k => (0..k).all(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % k]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            cross(a, b, q) >= -tol * len
        }),
    }
}

use proptest::prelude::{prop_assert, prop_assume, proptest, ProptestConfig};
use rand::Rng as _;
use rand_distr::{Exp, StandardNormal};

use super::*;
use crate::imprint::{fit_laplace, fuse_batches, FieldProvenance, FusionSpec, ImprintBatch, LaplaceField, LatentTensor};
use crate::rng;

const SHAPE: [usize; 3] = [4, 8, 8];

fn batch_from(gen: &str, n: usize, shape: [usize; 3], mut draw: impl FnMut(usize) -> f64) -> ImprintBatch {
    let d: usize = shape.iter().product();
    let samples = (0..n)
        .map(|_| LatentTensor::new(shape, (0..d).map(&mut draw).collect()).unwrap())
        .collect();
    let ids = (0..n).map(|i| format!("real/{i:05}")).collect();
    ImprintBatch::new(gen, ids, samples).unwrap()
}

/// Laplace draws as a difference of two exponentials, independent of the
/// inverse-CDF sampler under test elsewhere.
fn laplace_batch(seed: u64, n: usize) -> ImprintBatch {
    let mut r = rng::stream(seed, "laplace-oracle");
    let e = Exp::new(1.0).unwrap();
    batch_from("lap", n, SHAPE, |j| {
        let b = 0.05 + 0.01 * (j % 7) as f64;
        0.1 * (j % 3) as f64 + b * (r.sample(e) - r.sample(e))
    })
}

fn gaussian_batch(seed: u64, n: usize) -> ImprintBatch {
    let mut r = rng::stream(seed, "gauss-oracle");
    batch_from("gau", n, SHAPE, |j| {
        let s = 0.05 + 0.01 * (j % 5) as f64;
        -0.2 + s * r.sample::<f64, _>(StandardNormal)
    })
}

fn field(mu: Vec<f64>, b: Vec<f64>) -> LaplaceField {
    let n = mu.len();
    LaplaceField::new(
        [1, 1, n],
        mu,
        b,
        FieldProvenance {
            n: 1,
            source_generators: vec![],
            epsilon: 1e-6,
        },
    )
    .unwrap()
}

#[test]
fn tail_verdict_recovers_laplace() {
    for seed in 0..3 {
        let r = tail_fit_compare(&laplace_batch(seed, 400), 0.3).unwrap();
        assert!(r.laplace_fits_tails_better, "{r:?}");
        assert!(r.laplace_ll > r.gaussian_ll);
        assert_eq!(r.dead_elements, 0);
    }
}

#[test]
fn tail_verdict_rejects_gaussian() {
    for seed in 0..3 {
        let r = tail_fit_compare(&gaussian_batch(seed, 400), 0.3).unwrap();
        assert!(!r.laplace_fits_tails_better, "{r:?}");
        assert!(r.gaussian_ll > r.laplace_ll);
    }
}

#[test]
fn tail_fraction_tracks_threshold_quantile() {
    let r = tail_fit_compare(&gaussian_batch(9, 400), 0.3).unwrap();
    assert!((r.tail_fraction - (1.0 - TAIL_QUANTILE)).abs() < 0.01, "{}", r.tail_fraction);
    // Gaussian 95th percentile of |z| is 1.96.
    assert!((r.tail_threshold_sigma - 1.96).abs() < 0.05);
}

#[test]
fn tail_fit_needs_fifty_samples() {
    let err = tail_fit_compare(&gaussian_batch(0, 49), 0.3).unwrap_err();
    assert_eq!(err.tag(), "precondition");
    assert!(tail_fit_compare(&gaussian_batch(0, 50), 0.3).is_ok());
}

#[test]
fn constant_elements_are_excluded() {
    let mut r = rng::stream(4, "dead");
    let b = batch_from("mixed", 100, [1, 1, 2], |j| if j == 0 { 1.0 } else { r.random::<f64>() });
    let rep = tail_fit_compare(&b, 0.3).unwrap();
    assert_eq!(rep.dead_elements, 1);
}

#[test]
fn kl_identity_and_worked_value() {
    let a = field(vec![0.0, 1.0], vec![1.0, 0.3]);
    assert_eq!(distribution_distance(&a, &a).unwrap(), 0.0);
    let one = field(vec![0.0], vec![1.0]);
    let wide = field(vec![0.0], vec![std::f64::consts::E]);
    let d = distribution_distance(&one, &wide).unwrap();
    assert!((d - (-1.0f64).exp()).abs() < 1e-12);
    assert!((distribution_distance(&wide, &one).unwrap() - d).abs() > 1e-3);
}

#[test]
fn kl_matches_monte_carlo() {
    let (ma, ba, mb, bb) = (0.3, 0.7, -0.2, 1.5);
    let mut r = rng::stream(11, "kl-mc");
    let e = Exp::new(1.0).unwrap();
    let n = 400_000;
    let lp = |x: f64, m: f64, b: f64| -(2.0 * b).ln() - (x - m).abs() / b;
    let est = (0..n)
        .map(|_| {
            let x = ma + ba * (r.sample(e) - r.sample(e));
            lp(x, ma, ba) - lp(x, mb, bb)
        })
        .sum::<f64>()
        / n as f64;
    assert!((laplace_kl(ma, ba, mb, bb) - est).abs() < 0.01, "{est}");
}

#[test]
fn kl_shape_mismatch() {
    let a = field(vec![0.0], vec![1.0]);
    let b = field(vec![0.0, 0.0], vec![1.0, 1.0]);
    assert_eq!(distribution_distance(&a, &b).unwrap_err().tag(), "shape");
}

#[test]
fn ks_against_own_cdf_is_small() {
    let mut r = rng::stream(2, "ks");
    let e = Exp::new(1.0).unwrap();
    let xs: Vec<f64> = (0..20_000).map(|_| r.sample(e) - r.sample(e)).collect();
    let d = ks_statistic(&xs, |x| laplace_cdf(x, 0.0, 1.0));
    assert!(d < ks_critical(xs.len(), 0.01));
    let shifted = ks_statistic(&xs, |x| laplace_cdf(x, 0.2, 1.0));
    assert!(shifted > ks_critical(xs.len(), 0.01));
}

#[test]
fn ks_critical_value_at_one_percent() {
    // Asymptotic 1% constant of the Kolmogorov distribution is 1.6276.
    assert!((ks_critical(1, 0.01) - 1.6276).abs() < 1e-4);
}

#[test]
fn identical_samples_project_to_one_point() {
    let b = batch_from("flat", 10, SHAPE, |j| j as f64 * 0.01);
    let rep = pca_project(&[b], None, false).unwrap();
    assert!(rep.points.iter().all(|p| p.xy == rep.points[0].xy));
    assert!(rep.points[0].xy[0].abs() < 1e-12);
    assert_eq!(rep.explained_variance_ratio, [0.0, 0.0]);
}

#[test]
fn separated_constant_batches() {
    let a = batch_from("gen-a", 20, SHAPE, |_| 0.0);
    let b = batch_from("gen-b", 20, SHAPE, |_| 1.0);
    let rep = pca_project(&[a, b], None, false).unwrap();
    assert!((rep.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
    let (ca, cb) = (rep.centroid("gen-a").unwrap(), rep.centroid("gen-b").unwrap());
    // Distance between the two constants is sqrt(256) = 16 along PC1.
    assert!(((cb[0] - ca[0]).abs() - 16.0).abs() < 1e-9);
    assert_eq!(rep.points.len(), 40);
}

#[test]
fn first_component_matches_power_iteration() {
    let mut r = rng::stream(5, "pca");
    let b = batch_from("g", 60, [1, 1, 6], |j| (j as f64 + 1.0) * r.sample::<f64, _>(StandardNormal));
    let rep = pca_project(std::slice::from_ref(&b), None, false).unwrap();

    let d = 6;
    let n = b.n() as f64;
    let mean: Vec<f64> = (0..d).map(|j| b.samples().map(|s| s[j]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; d * d];
    for s in b.samples() {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (s[i] - mean[i]) * (s[j] - mean[j]) / n;
            }
        }
    }
    let mut v = vec![1.0; d];
    for _ in 0..2000 {
        let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[i * d + j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let lambda: f64 = (0..d).map(|i| v[i] * (0..d).map(|j| cov[i * d + j] * v[j]).sum::<f64>()).sum();
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    assert!((rep.explained_variance_ratio[0] - lambda / trace).abs() < 1e-6);

    let lead = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
    let sign = v[lead].signum();
    for (k, s) in b.samples().enumerate() {
        let p: f64 = (0..d).map(|j| (s[j] - mean[j]) * v[j] * sign).sum();
        assert!((rep.points[k].xy[0] - p).abs() < 1e-6);
    }
}

#[test]
fn projection_rejects_mismatched_dims() {
    let a = batch_from("a", 3, SHAPE, |_| 0.0);
    let b = batch_from("b", 3, [1, 1, 4], |_| 0.0);
    assert_eq!(pca_project(&[a, b], None, false).unwrap_err().tag(), "shape");
    let one = batch_from("a", 1, SHAPE, |_| 0.0);
    assert_eq!(pca_project(&[one], None, false).unwrap_err().tag(), "precondition");
}

#[test]
fn standardized_projection_ignores_element_scale() {
    let mut r = rng::stream(8, "std");
    let a = batch_from("a", 40, [1, 1, 5], |_| r.sample::<f64, _>(StandardNormal));
    let scaled = ImprintBatch::new(
        "a",
        a.image_ids().to_vec(),
        a.samples()
            .map(|s| LatentTensor::new([1, 1, 5], s.iter().enumerate().map(|(j, v)| v * (j + 1) as f64 * 10.0).collect()).unwrap())
            .collect(),
    )
    .unwrap();
    let p = pca_project(std::slice::from_ref(&a), None, true).unwrap();
    let q = pca_project(&[scaled], None, true).unwrap();
    for (x, y) in p.points.iter().zip(&q.points) {
        assert!((x.xy[0] - y.xy[0]).abs() < 1e-8 && (x.xy[1] - y.xy[1]).abs() < 1e-8);
    }
}

#[test]
fn hull_membership() {
    let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
    assert_eq!(convex_hull(&sq).len(), 4);
    assert!(in_convex_hull([0.5, 0.5], &sq, 1e-12));
    assert!(in_convex_hull([1.0, 0.5], &sq, 1e-12));
    assert!(!in_convex_hull([1.01, 0.5], &sq, 1e-12));
    let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
    assert!(in_convex_hull([1.5, 1.5], &line, 1e-12));
    assert!(!in_convex_hull([1.5, 1.0], &line, 1e-12));
}

fn gaussian_member(gen: &str, seed: u64, offset: f64) -> ImprintBatch {
    let mut r = rng::stream(seed, gen);
    batch_from(gen, 30, [2, 2, 2], |j| offset * (j % 3) as f64 + r.sample::<f64, _>(StandardNormal))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn uniform_fused_centroid_is_in_hull(seed in 0u64..1000, spread in 0.1f64..5.0) {
        let batches: Vec<ImprintBatch> = (0..4)
            .map(|i| gaussian_member(&format!("gen-{i}"), seed, spread * i as f64))
            .collect();
        let spec = FusionSpec::uniform(batches.iter().map(|b| b.generator_id.clone()).collect());
        let fused = fuse_batches(&batches, &spec).unwrap();
        let rep = pca_project(&batches, Some(&fused), false).unwrap();
        let hull: Vec<[f64; 2]> = rep.centroids[..4].iter().map(|c| c.xy).collect();
        let f = rep.centroid(crate::imprint::FUSED).unwrap();
        // Exact average of the per-model centroids by linearity.
        for k in 0..2 {
            let avg = hull.iter().map(|c| c[k]).sum::<f64>() / 4.0;
            prop_assert!((f[k] - avg).abs() < 1e-9);
        }
        prop_assert!(in_convex_hull(f, &hull, 1e-9));
    }

    #[test]
    fn explained_ratio_is_scale_invariant(seed in 0u64..1000, c in 0.01f64..100.0) {
        let a = gaussian_member("a", seed, 1.0);
        let scaled = ImprintBatch::new(
            "a",
            a.image_ids().to_vec(),
            a.samples().map(|s| LatentTensor::new([2, 2, 2], s.iter().map(|v| v * c + 3.0).collect()).unwrap()).collect(),
        ).unwrap();
        let p = pca_project(std::slice::from_ref(&a), None, false).unwrap();
        let q = pca_project(&[scaled], None, false).unwrap();
        for k in 0..2 {
            prop_assert!((p.explained_variance_ratio[k] - q.explained_variance_ratio[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_is_positive_off_diagonal(mu in -3.0f64..3.0, b in 0.01f64..5.0, dmu in 0.0f64..2.0, rb in 0.5f64..2.0) {
        prop_assume!(dmu > 1e-3 || (rb - 1.0).abs() > 1e-3);
        prop_assert!(laplace_kl(mu, b, mu + dmu, b * rb) > 0.0);
    }
}

#[test]
fn scatter_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let batches = vec![gaussian_member("gen-a", 1, 0.0), gaussian_member("gen-b", 1, 3.0)];
    let spec = FusionSpec::uniform(vec!["gen-a".into(), "gen-b".into()]);
    let fused = fuse_batches(&batches, &spec).unwrap();
    let rep = pca_project(&batches, Some(&fused), false).unwrap();
    let (p1, p2) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    emit_scatter(&rep, &p1).unwrap();
    emit_scatter(&rep, &p2).unwrap();
    let (a, b) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let err = emit_scatter(&ProjectionReport::default(), &dir.path().join("c.svg")).unwrap_err();
    assert_eq!(err.tag(), "empty-dataset");
    assert_eq!(emit_scatter(&rep, &dir.path().join("missing/x.svg")).unwrap_err().tag(), "io");
}

#[test]
fn json_lines_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let reps = vec![tail_fit_compare(&laplace_batch(1, 60), 0.3).unwrap(), tail_fit_compare(&gaussian_batch(1, 60), 0.3).unwrap()];
    write_json_lines(&path, &reps).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let back: Vec<TailFitReport> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, reps);
}

#[test]
fn fitted_fields_of_shifted_batches_are_apart() {
    let a = fit_laplace(&gaussian_member("a", 3, 0.0)).unwrap();
    let b = fit_laplace(&gaussian_member("b", 3, 2.0)).unwrap();
    assert!(distribution_distance(&a, &b).unwrap() > 0.0);
}

#[test]
fn parameter_fusion_averages_parameters() {
    let a = field(vec![0.0, 1.0], vec![1.0, 2.0]);
    let b = field(vec![2.0, 3.0], vec![3.0, 2.0]);
    let spec = FusionSpec {
        generator_ids: vec!["a".into(), "b".into()],
        weights: vec![0.25, 0.75],
    };
    let f = fuse_fields(&[a, b], &spec).unwrap();
    assert_eq!(f.mu(), &[1.5, 2.5]);
    assert_eq!(f.b(), &[2.5, 2.0]);
}

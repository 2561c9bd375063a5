use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest, ProptestConfig};
use rand::Rng as _;
use rand_distr::Exp;

use super::*;
use crate::analysis::{ks_critical, ks_statistic, laplace_cdf};
use crate::corpus::{synth_styled_corpus, synth_toy_corpus, CorpusStyle, Label, LabeledImageSet};
use crate::rng;
use crate::toygen::tests::stub_handle;

/// Codec whose latent is the per-channel image mean; reconstruction adds a
/// constant to every latent element.
struct Stub {
    offset: f64,
    size: usize,
}

impl LatentCodec for Stub {
    fn codec_id(&self) -> &str {
        "stub"
    }

    fn latent_shape(&self) -> [usize; 3] {
        [3, 1, 1]
    }

    fn encode_batch(&self, images: &[&Image]) -> Result<Vec<LatentTensor>> {
        images
            .iter()
            .map(|i| {
                let v = (0..3).map(|c| i.plane(c).iter().map(|&p| p as f64).sum::<f64>() / i.plane(c).len() as f64);
                LatentTensor::new([3, 1, 1], v.collect())
            })
            .collect()
    }

    fn decode_batch(&self, latents: &[LatentTensor]) -> Result<Vec<Image>> {
        let plane = self.size * self.size;
        latents
            .iter()
            .map(|z| {
                let px = z.values().iter().flat_map(|&v| std::iter::repeat_n(v.clamp(0.0, 1.0) as f32, plane)).collect();
                Image::new("decoded", Label::Fake, Some("stub".into()), self.size, px)
            })
            .collect()
    }
}

impl LatentReconstructor for Stub {
    fn reconstruct_batch(&self, latents: &[LatentTensor], _: &ReconstructionSettings, _: &mut crate::rng::Rng) -> Result<Vec<LatentTensor>> {
        let c = LatentTensor::new([3, 1, 1], vec![self.offset; 3])?;
        latents.iter().map(|z| z.add(&c)).collect()
    }
}

fn batch(gen: &str, ids: &[&str], rows: &[Vec<f64>], shape: [usize; 3]) -> ImprintBatch {
    let samples = rows.iter().map(|r| LatentTensor::new(shape, r.clone()).unwrap()).collect();
    ImprintBatch::new(gen, ids.iter().map(|s| s.to_string()).collect(), samples).unwrap()
}

fn random_batch(gen: &str, seed: u64, n: usize, d: usize) -> ImprintBatch {
    let mut r = rng::stream(seed, gen);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("real/{i:04}")).collect();
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    batch(gen, &ids, &rows, [1, 1, d])
}

fn single_field(mu: f64, b: f64) -> LaplaceField {
    LaplaceField::new(
        [1, 1, 1],
        vec![mu],
        vec![b],
        FieldProvenance {
            n: 0,
            source_generators: vec![],
            epsilon: SCALE_FLOOR,
        },
    )
    .unwrap()
}

fn fakes(n: usize, res: usize) -> LabeledImageSet {
    synth_styled_corpus(5, n, res, &CorpusStyle::default(), "gen-a", Label::Fake, Some("gen-a")).unwrap()
}

#[test]
fn constant_offset_reconstructor_gives_constant_imprint() {
    let img = &synth_toy_corpus(0, 1, 16).unwrap().items[0];
    let stub = Stub { offset: 0.5, size: 16 };
    let dz = extract_imprint(&stub, img, &ReconstructionSettings::default(), &mut rng::stream(0, "x")).unwrap();
    assert!(dz.values().iter().all(|&v| (v - 0.5).abs() < 1e-12));
}

#[test]
fn zero_strength_imprint_is_zero() {
    let h = stub_handle(16);
    let img = &synth_toy_corpus(0, 1, 16).unwrap().items[0];
    let s = ReconstructionSettings {
        strength: 0.0,
        ..Default::default()
    };
    let dz = extract_imprint(&h, img, &s, &mut rng::stream(0, "x")).unwrap();
    assert_eq!(dz.norm(), 0.0);
    assert_eq!(dz.shape(), h.latent_shape());
}

#[test]
fn collected_imprints_follow_sorted_ids() {
    let set = synth_toy_corpus(0, 3, 16).unwrap();
    let mut shuffled = set.clone();
    shuffled.items.reverse();
    let stub = Stub { offset: 0.5, size: 16 };
    let b = collect_imprints(&stub, &shuffled, &ReconstructionSettings::default(), &mut rng::stream(0, "x")).unwrap();
    assert_eq!(b.n(), 3);
    let mut ids: Vec<String> = set.items.iter().map(|i| i.id.clone()).collect();
    ids.sort();
    assert_eq!(b.image_ids(), ids.as_slice());
    assert_eq!(b.generator_id, "stub");

    let mut mixed = set.clone();
    mixed.extend(fakes(1, 16));
    let err = collect_imprints(&stub, &mixed, &ReconstructionSettings::default(), &mut rng::stream(0, "x")).unwrap_err();
    assert_eq!(err.tag(), "precondition");
}

#[test]
fn batch_invariants() {
    let err = ImprintBatch::new("g", vec![], vec![]).unwrap_err();
    assert_eq!(err.tag(), "empty-dataset");
    let z = LatentTensor::zeros([1, 1, 2]);
    let err = ImprintBatch::new("g", vec!["a".into(), "a".into()], vec![z.clone(), z.clone()]).unwrap_err();
    assert_eq!(err.tag(), "precondition");
    let err = ImprintBatch::new("g", vec!["a".into(), "b".into()], vec![z, LatentTensor::zeros([1, 1, 3])]).unwrap_err();
    assert_eq!(err.tag(), "shape");
    assert!(LatentTensor::new([1, 1, 1], vec![f64::NAN]).is_err());
}

#[test]
fn two_point_fit() {
    let f = fit_laplace(&batch("g", &["a", "b"], &[vec![0.0], vec![2.0]], [1, 1, 1])).unwrap();
    assert_eq!(f.mu(), &[1.0]);
    assert!((f.b()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert_eq!(f.provenance.n, 2);
}

#[test]
fn constant_and_single_batches_are_floored() {
    let f = fit_laplace(&batch("g", &["a", "b", "c"], &vec![vec![3.0, -1.0]; 3], [1, 1, 2])).unwrap();
    assert_eq!(f.mu(), &[3.0, -1.0]);
    assert_eq!(f.b(), &[SCALE_FLOOR, SCALE_FLOOR]);
    let one = fit_laplace(&batch("g", &["a"], &[vec![0.7]], [1, 1, 1])).unwrap();
    assert_eq!(one.b(), &[SCALE_FLOOR]);
}

#[test]
fn moment_fit_recovers_known_laplace() {
    let mut r = rng::stream(21, "fit-oracle");
    let e = Exp::new(1.0).unwrap();
    let n = 100_000;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![0.5 + 2.0 * (r.sample(e) - r.sample(e))]).collect();
    let samples = rows.into_iter().map(|v| LatentTensor::new([1, 1, 1], v).unwrap()).collect();
    let b = ImprintBatch::new("oracle", (0..n).map(|i| i.to_string()).collect(), samples).unwrap();
    let f = fit_laplace(&b).unwrap();
    assert!((f.mu()[0] - 0.5).abs() < 0.02, "{}", f.mu()[0]);
    assert!((f.b()[0] - 2.0).abs() < 0.03, "{}", f.b()[0]);
}

#[test]
fn fusion_identities() {
    let a = random_batch("gen-a", 1, 5, 3);
    let spec = FusionSpec::uniform(vec!["gen-a".into(); 3]);
    let f = fuse_batches(&[a.clone(), a.clone(), a.clone()], &spec).unwrap();
    for (x, y) in f.data().iter().zip(a.data()) {
        assert!((x - y).abs() < 1e-15);
    }
    let mut b = random_batch("gen-b", 2, 5, 3);
    b = ImprintBatch::new("gen-b", a.image_ids().to_vec(), b.samples().map(|s| LatentTensor::new([1, 1, 3], s.to_vec()).unwrap()).collect()).unwrap();
    let degenerate = FusionSpec {
        generator_ids: vec!["gen-a".into(), "gen-b".into()],
        weights: vec![1.0, 0.0],
    };
    let f = fuse_batches(&[a.clone(), b], &degenerate).unwrap();
    assert_eq!(f.data(), a.data());
    assert_eq!(f.generator_id, FUSED);
    assert_eq!(f.contributors, vec!["gen-a".to_string(), "gen-b".to_string()]);
}

#[test]
fn fusing_constant_zero_and_four_gives_two() {
    let ids = ["x", "y"];
    let z = batch("gen-a", &ids, &[vec![0.0; 2], vec![0.0; 2]], [1, 1, 2]);
    let f = batch("gen-b", &ids, &[vec![4.0; 2], vec![4.0; 2]], [1, 1, 2]);
    let out = fuse_batches(&[z, f], &FusionSpec::uniform(vec!["gen-a".into(), "gen-b".into()])).unwrap();
    assert!(out.data().iter().all(|&v| v == 2.0));
}

#[test]
fn fusion_errors() {
    let a = batch("gen-a", &["x", "y"], &[vec![0.0], vec![1.0]], [1, 1, 1]);
    let b = batch("gen-b", &["x", "z"], &[vec![0.0], vec![1.0]], [1, 1, 1]);
    let spec = FusionSpec::uniform(vec!["gen-a".into(), "gen-b".into()]);
    assert_eq!(fuse_batches(&[a.clone(), b], &spec).unwrap_err().tag(), "alignment");
    let bad = FusionSpec {
        weights: vec![0.5, 0.6],
        ..spec.clone()
    };
    let c = batch("gen-b", &["x", "y"], &[vec![0.0], vec![1.0]], [1, 1, 1]);
    assert_eq!(fuse_batches(&[a.clone(), c.clone()], &bad).unwrap_err().tag(), "fusion-spec");
    assert_eq!(fuse_batches(&[c, a], &spec).unwrap_err().tag(), "fusion-spec");
}

#[test]
fn fused_field_is_the_composition() {
    let a = random_batch("gen-a", 1, 40, 4);
    let b = ImprintBatch::new(
        "gen-b",
        a.image_ids().to_vec(),
        random_batch("gen-b", 2, 40, 4).samples().map(|s| LatentTensor::new([1, 1, 4], s.to_vec()).unwrap()).collect(),
    )
    .unwrap();
    let spec = FusionSpec {
        generator_ids: vec!["gen-a".into(), "gen-b".into()],
        weights: vec![0.3, 0.7],
    };
    let direct = build_fused_field(&[a.clone(), b.clone()], &spec).unwrap();
    let manual = fit_laplace(&fuse_batches(&[a.clone(), b], &spec).unwrap()).unwrap();
    assert_eq!(direct, manual);
    let single = build_fused_field(std::slice::from_ref(&a), &FusionSpec::uniform(vec!["gen-a".into()])).unwrap();
    let plain = fit_laplace(&a).unwrap();
    assert_eq!(single.mu(), plain.mu());
    assert_eq!(single.b(), plain.b());
}

#[test]
fn collapsed_scale_samples_stay_at_mu() {
    let f = single_field(1.25, SCALE_FLOOR);
    let mut r = rng::stream(3, "eps");
    for _ in 0..10_000 {
        let v = sample_imprint(&f, &mut r).values()[0];
        assert!((v - 1.25).abs() <= 25.0 * SCALE_FLOOR);
    }
}

#[test]
fn sampling_replays() {
    let f = fit_laplace(&random_batch("g", 4, 10, 6)).unwrap();
    let a = sample_imprint(&f, &mut rng::stream(1, "s"));
    let b = sample_imprint(&f, &mut rng::stream(1, "s"));
    assert_eq!(a, b);
}

#[test]
fn sampler_moments_and_ks() {
    let f = single_field(0.0, 1.0);
    let mut r = rng::stream(17, "moments");
    let mut xs: Vec<f64> = (0..1_000_000).map(|_| sample_imprint(&f, &mut r).values()[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    assert!((var - 2.0).abs() < 0.02, "{var}");
    let ks = ks_statistic(&xs[..100_000], |x| laplace_cdf(x, 0.0, 1.0));
    assert!(ks < ks_critical(100_000, 0.01), "{ks}");
    xs.sort_by(f64::total_cmp);
    let median = 0.5 * (xs[499_999] + xs[500_000]);
    assert!(median.abs() < 0.005, "{median}");
}

#[test]
fn quantile_matches_cdf() {
    for &u in &[-0.49, -0.2, 0.1, 0.3, 0.499] {
        let x = laplace_quantile(0.3, 0.8, u);
        assert!((laplace_cdf(x, 0.3, 0.8) - (u + 0.5)).abs() < 1e-12);
    }
}

#[test]
fn batch_and_field_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let b = random_batch("gen-a", 9, 6, 4);
    b.save(&dir.path().join("b.bin"), "h").unwrap();
    assert_eq!(ImprintBatch::load(&dir.path().join("b.bin")).unwrap(), b);
    let f = fit_laplace(&b).unwrap();
    f.save(&dir.path().join("f.bin"), "h").unwrap();
    assert_eq!(LaplaceField::load(&dir.path().join("f.bin")).unwrap(), f);
    assert_eq!(LaplaceField::load(&dir.path().join("b.bin")).unwrap_err().tag(), "format");
}

#[test]
fn replacement_counts() {
    for (n, p, k, want) in [(162_000, 0.02, 5, 16_200), (1_000, 0.02, 5, 100), (2_000, 0.05, 5, 500)] {
        let policy = ExpansionPolicy {
            real_fraction: p,
            variants_per_image: k,
            seed: 0,
        };
        assert_eq!(policy.replacements(n), want);
        let plan = plan_expansion(n, n, &policy, &mut rng::stream(0, "plan")).unwrap();
        assert_eq!(plan.variants.len(), want);
        assert_eq!(plan.removed.len(), want);
        let sources: std::collections::HashSet<usize> = plan.variants.iter().map(|v| v.0).collect();
        assert_eq!(sources.len(), (n as f64 * p).round() as usize);
        let pairs: std::collections::HashSet<(usize, usize)> = plan.variants.iter().copied().collect();
        assert_eq!(pairs.len(), want);
    }
}

#[test]
fn expansion_conserves_labels() {
    let mut data = synth_toy_corpus(0, 100, 16).unwrap();
    data.extend(fakes(100, 16));
    let stub = Stub { offset: 0.0, size: 16 };
    let field = LaplaceField::new(
        [3, 1, 1],
        vec![0.1; 3],
        vec![0.05; 3],
        FieldProvenance {
            n: 1,
            source_generators: vec![],
            epsilon: SCALE_FLOOR,
        },
    )
    .unwrap();
    let policy = ExpansionPolicy {
        real_fraction: 0.1,
        variants_per_image: 3,
        seed: 4,
    };
    let (out, manifest) = expand_dataset(&data, &stub, &field, &policy).unwrap();
    assert_eq!(out.count(Label::Real), 100);
    assert_eq!(out.count(Label::Fake), 100);
    assert_eq!(manifest.inserted.len(), 30);
    assert_eq!(manifest.removed_fake_ids.len(), 30);
    assert_eq!(out.counts_by_generator()[crate::corpus::SIMULATED], 30);
    let ids: std::collections::HashSet<&str> = out.items.iter().map(|i| i.id.as_str()).collect();
    assert_eq!(ids.len(), out.len());
    assert!(manifest.removed_fake_ids.iter().all(|id| !ids.contains(id.as_str())));
    assert_eq!(data.len(), 200);

    let (again, m2) = expand_dataset(&data, &stub, &field, &policy).unwrap();
    assert_eq!(again, out);
    assert_eq!(m2, manifest);

    let dir = tempfile::tempdir().unwrap();
    manifest.save(&dir.path().join("m.json")).unwrap();
    assert_eq!(ExpansionManifest::load(&dir.path().join("m.json")).unwrap(), manifest);
}

#[test]
fn zero_fraction_is_a_no_op() {
    let mut data = synth_toy_corpus(0, 20, 16).unwrap();
    data.extend(fakes(20, 16));
    let stub = Stub { offset: 0.0, size: 16 };
    let field = single_field(0.0, 1.0);
    let policy = ExpansionPolicy {
        real_fraction: 0.0,
        ..Default::default()
    };
    let (out, manifest) = expand_dataset(&data, &stub, &field, &policy).unwrap();
    assert_eq!(out, data);
    assert!(manifest.is_empty());
}

#[test]
fn too_many_replacements() {
    let mut data = synth_toy_corpus(0, 20, 16).unwrap();
    data.extend(fakes(5, 16));
    let stub = Stub { offset: 0.0, size: 16 };
    let field = LaplaceField::new([3, 1, 1], vec![0.0; 3], vec![1.0; 3], single_field(0.0, 1.0).provenance).unwrap();
    let policy = ExpansionPolicy {
        real_fraction: 0.5,
        variants_per_image: 1,
        seed: 0,
    };
    assert_eq!(expand_dataset(&data, &stub, &field, &policy).unwrap_err().tag(), "policy");
}

#[test]
fn simulation_contracts() {
    let h = stub_handle(16);
    let img = &synth_toy_corpus(0, 1, 16).unwrap().items[0];
    let shape = h.latent_shape();
    let d: usize = shape.iter().product();
    let prov = single_field(0.0, 1.0).provenance;
    let flat = LaplaceField::new(shape, vec![0.0; d], vec![SCALE_FLOOR; d], prov.clone()).unwrap();
    let x = simulate_fake(&h, img, &flat, &mut rng::stream(0, "sim")).unwrap();
    let plain = h.autoencode(img).unwrap();
    assert!(x.mse(&plain) < 1e-8);
    assert_eq!(x.label, Label::Fake);
    assert_eq!(x.generator.as_deref(), Some(crate::corpus::SIMULATED));
    assert_eq!(x.id, simulated_id(&img.id, 0));

    let wide = LaplaceField::new(shape, vec![0.0; d], vec![0.5; d], prov.clone()).unwrap();
    let a = simulate_fake(&h, img, &wide, &mut rng::stream(1, "sim")).unwrap();
    let b = simulate_fake(&h, img, &wide, &mut rng::stream(1, "sim")).unwrap();
    assert_eq!(a, b);

    let wrong = LaplaceField::new([1, 1, 1], vec![0.0], vec![1.0], prov).unwrap();
    assert_eq!(simulate_fake(&h, img, &wrong, &mut rng::stream(0, "sim")).unwrap_err().tag(), "shape");
    let fake = &fakes(1, 16).items[0];
    assert_eq!(simulate_fake(&h, fake, &flat, &mut rng::stream(0, "sim")).unwrap_err().tag(), "precondition");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fused_mean_is_weighted_mean(seed in 0u64..10_000, w in proptest::collection::vec(0.01f64..1.0, 1..5)) {
        let total: f64 = w.iter().sum();
        let weights: Vec<f64> = w.iter().map(|v| v / total).collect();
        let ids: Vec<String> = (0..weights.len()).map(crate::toygen::family_id).collect();
        let first = random_batch(&ids[0], seed, 12, 5);
        let batches: Vec<ImprintBatch> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let b = random_batch(id, seed + i as u64 * 7919, 12, 5);
                ImprintBatch::new(id.clone(), first.image_ids().to_vec(), b.samples().map(|s| LatentTensor::new([1, 1, 5], s.to_vec()).unwrap()).collect()).unwrap()
            })
            .collect();
        // The weights are renormalized above, so their sum is 1 up to rounding.
        prop_assume!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let spec = FusionSpec { generator_ids: ids, weights: weights.clone() };
        let fused = fit_laplace(&fuse_batches(&batches, &spec).unwrap()).unwrap();
        let per: Vec<LaplaceField> = batches.iter().map(|b| fit_laplace(b).unwrap()).collect();
        for j in 0..5 {
            let expect: f64 = per.iter().zip(&weights).map(|(f, w)| w * f.mu()[j]).sum();
            prop_assert!((fused.mu()[j] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_moment_identities(seed in 0u64..10_000, n in 2usize..40) {
        let b = random_batch("g", seed, n, 6);
        let f = fit_laplace(&b).unwrap();
        let grand = b.data().iter().sum::<f64>() / b.data().len() as f64;
        let mean_mu = f.mu().iter().sum::<f64>() / f.len() as f64;
        prop_assert!((grand - mean_mu).abs() < 1e-12);
        for j in 0..6 {
            let col: Vec<f64> = b.samples().map(|s| s[j]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            if var.sqrt() > SCALE_FLOOR * std::f64::consts::SQRT_2 {
                prop_assert!((2.0 * f.b()[j].powi(2) - var).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn expansion_totals_are_conserved(n_real in 1usize..60, extra in 0usize..40, p in 0.0f64..0.5, k in 1usize..4, seed in 0u64..1000) {
        let policy = ExpansionPolicy { real_fraction: p, variants_per_image: k, seed };
        let r = policy.replacements(n_real);
        let n_fake = r + extra;
        let plan = plan_expansion(n_real, n_fake, &policy, &mut rng::stream(seed, "p"));
        if r.div_ceil(k) > n_real {
            prop_assert!(plan.is_err());
        } else {
            let plan = plan.unwrap();
            prop_assert_eq!(plan.variants.len(), r);
            prop_assert_eq!(plan.removed.len(), r);
            prop_assert!(plan.removed.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(plan.removed.iter().all(|&i| i < n_fake));
        }
    }
}

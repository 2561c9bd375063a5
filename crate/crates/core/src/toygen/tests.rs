use super::*;
use crate::corpus::synth_toy_corpus;
use crate::rng;

fn tiny_cfg() -> CodecTrainConfig {
    CodecTrainConfig {
        mse_ceiling: 1.0,
        denoiser_steps: 3,
        denoiser_batch: 8,
        ..CodecTrainConfig::default()
    }
}

/// Untrained autoencoder with a briefly trained denoiser.
pub(crate) fn stub_handle(res: usize) -> GeneratorHandle {
    let corpus = synth_toy_corpus(1, 8, res).unwrap();
    let mut h = GeneratorHandle::untrained("stub", "nearest-relu-w8".parse().unwrap(), res, 3).unwrap();
    train_denoiser(&mut h, &corpus, 5, &tiny_cfg()).unwrap();
    h
}

#[test]
fn latent_shape_is_quarter_resolution() {
    let h = GeneratorHandle::untrained("g", "shuffle-tanh-w8".parse().unwrap(), 32, 0).unwrap();
    assert_eq!(h.latent_shape(), [4, 8, 8]);
    let img = &synth_toy_corpus(0, 1, 32).unwrap().items[0];
    let z = h.encode(img).unwrap();
    assert_eq!(z.shape(), [4, 8, 8]);
    assert_eq!(h.encode(img).unwrap(), z);
    let out = h.decode(&z).unwrap();
    assert_eq!(out.size(), 32);
}

#[test]
fn encode_rejects_other_resolutions() {
    let h = GeneratorHandle::untrained("g", "nearest-relu-w8".parse().unwrap(), 32, 0).unwrap();
    let big = &synth_toy_corpus(0, 1, 64).unwrap().items[0];
    assert_eq!(h.encode(big).unwrap_err().tag(), "shape");
    assert_eq!(h.decode(&LatentTensor::zeros([4, 4, 4])).unwrap_err().tag(), "shape");
}

#[test]
fn zero_latent_decodes_in_range() {
    for tag in ["nearest-relu-w8", "shuffle-lrelu-w8"] {
        let h = GeneratorHandle::untrained("g", tag.parse().unwrap(), 16, 2).unwrap();
        let img = h.decode(&LatentTensor::zeros(h.latent_shape())).unwrap();
        assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn batch_and_single_encodes_agree() {
    let h = GeneratorHandle::untrained("g", "nearest-relu-w8".parse().unwrap(), 16, 0).unwrap();
    let set = synth_toy_corpus(4, 5, 16).unwrap();
    let refs: Vec<_> = set.items.iter().collect();
    let batch = h.encode_batch(&refs).unwrap();
    for (img, z) in refs.iter().zip(&batch) {
        let single = h.encode(img).unwrap();
        for (a, b) in single.values().iter().zip(z.values()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn reconstruction_needs_a_denoiser() {
    let h = GeneratorHandle::untrained("g", "nearest-relu-w8".parse().unwrap(), 16, 0).unwrap();
    let z = LatentTensor::zeros(h.latent_shape());
    let err = h
        .reconstruct_latent(&z, &ReconstructionSettings::default(), &mut rng::stream(0, "r"))
        .unwrap_err();
    assert_eq!(err.tag(), "capability");
}

#[test]
fn zero_strength_is_identity() {
    let h = stub_handle(16);
    let img = &synth_toy_corpus(2, 1, 16).unwrap().items[0];
    let z = h.encode(img).unwrap();
    let s = ReconstructionSettings {
        strength: 0.0,
        ..Default::default()
    };
    assert_eq!(h.reconstruct_latent(&z, &s, &mut rng::stream(0, "r")).unwrap(), z);
}

#[test]
fn reconstruction_replays_under_fixed_stream() {
    let h = stub_handle(16);
    let set = synth_toy_corpus(2, 3, 16).unwrap();
    let refs: Vec<_> = set.items.iter().collect();
    let z = h.encode_batch(&refs).unwrap();
    let s = ReconstructionSettings::default();
    let a = h.reconstruct_batch(&z, &s, &mut rng::stream(9, "r")).unwrap();
    let b = h.reconstruct_batch(&z, &s, &mut rng::stream(9, "r")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], z[0]);
    // Batched noise is drawn in input order.
    let mut r = rng::stream(9, "r");
    let one_by_one: Vec<_> = z.iter().map(|zi| h.reconstruct_latent(zi, &s, &mut r).unwrap()).collect();
    for (x, y) in a.iter().zip(&one_by_one) {
        for (p, q) in x.values().iter().zip(y.values()) {
            assert!((p - q).abs() < 1e-5);
        }
    }
}

#[test]
fn settings_validation() {
    let bad = [
        ReconstructionSettings { steps: 0, ..Default::default() },
        ReconstructionSettings { strength: 1.5, ..Default::default() },
        ReconstructionSettings { guidance: f64::NAN, ..Default::default() },
    ];
    for s in bad {
        assert_eq!(s.validate().unwrap_err().tag(), "config");
    }
    let text = toml::to_string(&ReconstructionSettings::default()).unwrap();
    assert_eq!(toml::from_str::<ReconstructionSettings>(&text).unwrap(), ReconstructionSettings::default());
    assert!(toml::from_str::<ReconstructionSettings>("stepz = 3").is_err());
}

#[test]
fn generated_fakes_carry_generator_id() {
    let mut h = stub_handle(16);
    h.generator_id = "gen-x".into();
    let set = synth_toy_corpus(2, 2, 16).unwrap();
    let refs: Vec<_> = set.items.iter().collect();
    let out = h.generate(&refs, &ReconstructionSettings::default(), &mut rng::stream(0, "g")).unwrap();
    assert_eq!(out[0].id, format!("gen-x/{}", set.items[0].id));
    assert_eq!(out[0].label, Label::Fake);
    assert_eq!(out[0].generator.as_deref(), Some("gen-x"));
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let h = stub_handle(16);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.bin");
    h.save(&path, "cafe").unwrap();
    let back = GeneratorHandle::load(&path).unwrap();
    assert_eq!(back.parameters(), h.parameters());
    assert_eq!(back.denoiser_parameters(), h.denoiser_parameters());
    assert_eq!(back.provenance, h.provenance);
    assert_eq!(back.latent_shape(), h.latent_shape());
    let plain = GeneratorHandle::untrained("p", "shuffle-relu-w8".parse().unwrap(), 16, 1).unwrap();
    plain.save(&path, "cafe").unwrap();
    assert!(!GeneratorHandle::load(&path).unwrap().has_denoiser());
}

#[test]
fn training_replays_with_the_same_seed() {
    let set = synth_toy_corpus(3, 64, 16).unwrap();
    let cfg = tiny_cfg();
    let a = train_autoencoder(&set, "nearest-relu-w8", 7, 1, &cfg).unwrap();
    let b = train_autoencoder(&set, "nearest-relu-w8", 7, 1, &cfg).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    let c = train_autoencoder(&set, "nearest-relu-w8", 8, 1, &cfg).unwrap();
    assert_ne!(a.parameters(), c.parameters());
}

#[test]
fn zero_epochs_fails_the_ceiling() {
    let set = synth_toy_corpus(3, 64, 16).unwrap();
    let err = train_autoencoder(&set, "nearest-relu-w8", 7, 0, &CodecTrainConfig::default()).unwrap_err();
    match err {
        Error::TrainingFailure { final_loss, .. } => assert!(final_loss > 0.01),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn training_preconditions() {
    let small = synth_toy_corpus(3, 63, 16).unwrap();
    assert_eq!(
        train_autoencoder(&small, "nearest-relu-w8", 0, 1, &tiny_cfg()).unwrap_err().tag(),
        "precondition"
    );
    let set = synth_toy_corpus(3, 64, 16).unwrap();
    assert_eq!(train_autoencoder(&set, "bogus", 0, 1, &tiny_cfg()).unwrap_err().tag(), "config");
    assert_eq!(make_generator_family(0, &set, 0, &tiny_cfg()).unwrap_err().tag(), "precondition");
}

#[test]
fn single_member_family() {
    let set = synth_toy_corpus(3, 64, 16).unwrap();
    let cfg = CodecTrainConfig {
        epochs: 1,
        ..tiny_cfg()
    };
    let fam = make_generator_family(1, &set, 0, &cfg).unwrap();
    assert_eq!(fam.len(), 1);
    assert_eq!(fam[0].generator_id, "gen-a");
    assert!(fam[0].has_denoiser());
}

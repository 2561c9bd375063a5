use super::*;
use crate::corpus::synth_toy_corpus;
use crate::detector::tests::tiny_detector;
use crate::error::Error;
use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};

fn preds(v: &[(f64, bool)]) -> Vec<(f64, Label)> {
    v.iter()
        .map(|&(p, fake)| (p, if fake { Label::Fake } else { Label::Real }))
        .collect()
}

#[test]
fn balanced_accuracy_examples() {
    let all_right = preds(&[(0.1, false), (0.2, false), (0.9, true), (0.7, true)]);
    assert_eq!(balanced_accuracy(&all_right).unwrap(), 100.0);
    let all_real = preds(&[(0.1, false), (0.1, false), (0.1, true), (0.1, true)]);
    assert_eq!(balanced_accuracy(&all_real).unwrap(), 50.0);
    let mixed = preds(&[(0.1, false), (0.2, false), (0.8, false), (0.9, true), (0.6, true), (0.5, true)]);
    let got = balanced_accuracy(&mixed).unwrap();
    assert!((got - (200.0 / 3.0 + 100.0) / 2.0).abs() < 1e-12);
    assert!((got - 83.333).abs() < 1e-3);
}

#[test]
fn balanced_accuracy_needs_both_classes() {
    assert!(matches!(balanced_accuracy(&preds(&[(0.9, true)])), Err(Error::Precondition(_))));
    assert!(matches!(balanced_accuracy(&[]), Err(Error::Precondition(_))));
}

#[test]
fn tpr_only_examples() {
    assert_eq!(tpr_only(&[0.9, 0.9, 0.9]).unwrap(), 100.0);
    assert_eq!(tpr_only(&[0.1, 0.1]).unwrap(), 0.0);
    assert_eq!(tpr_only(&[0.5, 0.4]).unwrap(), 50.0);
    assert!(matches!(tpr_only(&[]), Err(Error::EmptyDataset(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn balanced_accuracy_ignores_order_and_monotone_rescaling(
        v in proptest::collection::vec((0.0f64..1.0, proptest::bool::ANY), 2..40),
        rot in 0usize..40,
    ) {
        let mut v = v;
        v[0].1 = false;
        v[1].1 = true;
        let p = preds(&v);
        let base = balanced_accuracy(&p).unwrap();
        let mut r = p.clone();
        let k = rot % r.len();
        r.rotate_left(k);
        r.reverse();
        prop_assert_eq!(balanced_accuracy(&r).unwrap(), base);
        // A monotone map fixing 0.5 keeps each prediction on its side.
        let squashed: Vec<(f64, Label)> = p.iter().map(|&(q, l)| (0.5 + (q - 0.5).powi(3), l)).collect();
        prop_assert_eq!(balanced_accuracy(&squashed).unwrap(), base);
    }
}

fn labeled(n_real: usize, fakes: &[(&str, usize)]) -> LabeledImageSet {
    let reals = synth_toy_corpus(1, n_real, 32).unwrap();
    let mut items = reals.items;
    for (k, (g, n)) in fakes.iter().enumerate() {
        let src = synth_toy_corpus(10 + k as u64, *n, 32).unwrap();
        items.extend(
            src.items
                .iter()
                .map(|i| i.relabeled(format!("{g}/{}", i.id), Label::Fake, Some(g.to_string()))),
        );
    }
    LabeledImageSet::new(items)
}

#[test]
fn report_splits_fakes_by_generator() {
    let set = labeled(4, &[("gen-x", 3), ("gen-y", 2)]);
    let det = tiny_detector(0);
    let m = evaluate(&det, &set, true).unwrap();
    assert_eq!(m.real_count, 4);
    assert_eq!(m.fake_count, 5);
    assert_eq!(m.per_generator.len(), 2);
    assert_eq!(m.per_generator["gen-x"].count, 3);
    let r = m.real_accuracy.unwrap();
    for gm in m.per_generator.values() {
        assert!((0.0..=100.0).contains(&gm.fake_accuracy));
        assert_eq!(gm.balanced, Some((r + gm.fake_accuracy) / 2.0));
    }
    assert_eq!(m.balanced, Some((r + m.fake_accuracy.unwrap()) / 2.0));
    assert!(evaluate(&det, &set, false).unwrap().per_generator.is_empty());
}

#[test]
fn one_generator_gives_one_column() {
    let set = labeled(3, &[("only", 3)]);
    let m = evaluate(&tiny_detector(1), &set, true).unwrap();
    assert_eq!(m.per_generator.keys().collect::<Vec<_>>(), vec!["only"]);
}

#[test]
fn evaluation_is_order_invariant() {
    let set = labeled(5, &[("a", 4), ("b", 4)]);
    let det = tiny_detector(2);
    let m = evaluate(&det, &set, true).unwrap();
    let mut items = set.items.clone();
    items.reverse();
    items.rotate_left(3);
    assert_eq!(evaluate(&det, &LabeledImageSet::new(items), true).unwrap(), m);
}

#[test]
fn untagged_fakes_are_grouped_as_unknown() {
    let mut set = labeled(2, &[]);
    let f = set.items[0].relabeled("anon", Label::Fake, None);
    set.items.push(f);
    let m = evaluate(&tiny_detector(0), &set, true).unwrap();
    assert!(m.per_generator.contains_key(UNKNOWN_GENERATOR));
}

#[test]
fn evaluate_rejects_empty_and_mismatched_sets() {
    let det = tiny_detector(0);
    assert!(matches!(evaluate(&det, &LabeledImageSet::default(), false), Err(Error::EmptyDataset(_))));
    let big = synth_toy_corpus(1, 2, 64).unwrap();
    assert!(matches!(evaluate(&det, &big, false), Err(Error::Shape(_))));
}

#[test]
fn fake_only_report_falls_back_to_fake_rate() {
    let set = labeled(0, &[("g", 3)]);
    let m = evaluate(&tiny_detector(0), &set, false).unwrap();
    assert_eq!(m.balanced, None);
    assert_eq!(m.headline(), m.fake_accuracy.unwrap());
}

#[test]
fn robustness_curves_follow_the_ladders() {
    let set = labeled(3, &[("g", 3)]);
    let det = tiny_detector(4);
    let curves = robustness_suite(&det, &set, &RobustnessOptions::default()).unwrap();
    assert_eq!(curves.len(), 2);
    let base = evaluate(&det, &set, false).unwrap().balanced.unwrap();
    for c in &curves {
        let levels: Vec<f64> = c.points.iter().map(|p| p.level).collect();
        assert_eq!(levels.as_slice(), c.kind.ladder());
        assert_eq!(c.baseline, base);
        assert!(c.points.iter().all(|p| (0.0..=100.0).contains(&p.balanced_accuracy)));
    }
    assert_eq!(curves[0].points.iter().map(|p| p.level).collect::<Vec<_>>(), vec![95.0, 90.0, 75.0, 50.0]);
    assert_eq!(curves[1].points.iter().map(|p| p.level).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);
    assert!(curves[0].at(50.0).is_some());
    let only_fakes = robustness_suite(&det, &set, &RobustnessOptions { perturb_reals: false }).unwrap();
    assert_eq!(only_fakes.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.svg");
    emit_robustness_plot(&curves, &path).unwrap();
    let svg = std::fs::read_to_string(&path).unwrap();
    assert!(svg.contains("<svg") && svg.contains("jpeg"));
    assert!(emit_robustness_plot(&[], &path).is_err());
}

#[test]
fn robustness_needs_both_classes() {
    let set = labeled(3, &[]);
    assert!(matches!(
        robustness_suite(&tiny_detector(0), &set, &RobustnessOptions::default()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn deltas_override_and_validate() {
    let base = crate::train::FitConfig::default();
    let d = ConfigDelta::parse("x", "train.loss.alpha = 0.0\nsimulator.pool_size = 2\n").unwrap();
    let c = apply_delta(&base, &d).unwrap();
    assert_eq!(c.train.loss.alpha, 0.0);
    assert_eq!(c.simulator.pool_size, 2);
    assert_eq!(c.train.loss.lambda_diff, base.train.loss.lambda_diff);

    let unknown = ConfigDelta::parse("bad", "train.loss.gamma = 1.0\n").unwrap();
    let e = apply_delta(&base, &unknown).unwrap_err().to_string();
    assert!(e.contains("bad") && e.contains("gamma"), "{e}");
    let wrong_type = ConfigDelta::parse("typed", "train.epochs = \"many\"\n").unwrap();
    assert!(matches!(apply_delta(&base, &wrong_type), Err(Error::Config(_))));
    let invalid = ConfigDelta::parse("neg", "train.learning_rate = -1.0\n").unwrap();
    assert!(apply_delta(&base, &invalid).is_err());
    assert!(ConfigDelta::parse("syntax", "a = = 1").is_err());
}

#[test]
fn standard_grids_are_valid() {
    let g = standard_grids();
    assert_eq!(g["components"].len(), 6);
    assert_eq!(g["losses"].len(), 4);
    assert_eq!(g["diversity"].len(), 4);
    assert_eq!(g["augmentation"].len(), 2);
    let base = crate::train::FitConfig::default();
    for deltas in g.values() {
        for d in deltas {
            apply_delta(&base, d).unwrap();
        }
    }
    let base_row = apply_delta(&base, &g["components"][0]).unwrap();
    assert!(!base_row.uses_simulator());
    assert!(!base_row.train.detector.branches.noise);
}

#[test]
fn ablation_table_csv() {
    let row = |tag: &str, v: &[(u64, f64, f64)]| AblationRow {
        tag: tag.into(),
        results: v
            .iter()
            .map(|&(seed, seen, unseen)| SeedResult {
                seed,
                seen,
                unseen,
                per_generator: Default::default(),
                extra: [("jpeg50".to_string(), unseen)].into(),
            })
            .collect(),
    };
    let t = AblationTable {
        train_generator: "gen-a".into(),
        test_generator: "gen-c".into(),
        rows: vec![row("base", &[(0, 90.0, 70.0), (1, 92.0, 72.0)]), row("a,b", &[(0, 95.0, 80.0)])],
    };
    assert_eq!(t.row("base").unwrap().mean_unseen(), 71.0);
    assert_eq!(t.row("base").unwrap().mean_extra("jpeg50"), Some(71.0));
    let csv = t.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "tag,seed,seen,unseen,jpeg50");
    assert_eq!(lines[1], "base,0,90.0000,70.0000,70.0000");
    assert_eq!(lines[3], "base,mean,91.0000,71.0000,71.0000");
    assert_eq!(lines[4], "\"a,b\",0,95.0000,80.0000,80.0000");
    assert_eq!(lines.len(), 6);
}

fn stub_world() -> crate::world::World {
    use crate::world::{build_world_with, WorldConfig};
    let cfg = WorldConfig {
        n_real: 12,
        n_test_real: 6,
        n_test_fake: 6,
        family_size: 2,
        train_generator: 0,
        test_generator: 1,
        ..WorldConfig::default()
    };
    let gens = (0..2)
        .map(|i| {
            let mut h = crate::toygen::tests::stub_handle(32);
            h.generator_id = crate::toygen::family_id(i);
            h
        })
        .collect();
    build_world_with(&cfg, gens).unwrap()
}

fn stub_fit_config() -> crate::train::FitConfig {
    let mut cfg = crate::train::FitConfig::default();
    cfg.simulator.pool_size = 0;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 8;
    cfg.train.detector = crate::detector::tests::tiny_config();
    cfg.train.augment = crate::corpus::AugmentPolicy::disabled();
    cfg
}

#[test]
fn ablation_cache_trains_each_run_once() {
    let world = stub_world();
    let base = stub_fit_config();
    let grid = vec![
        ConfigDelta::parse("full", "").unwrap(),
        ConfigDelta::parse("also-full", "").unwrap(),
        ConfigDelta::parse("no-aux", "train.loss.alpha = 0.0\n").unwrap(),
    ];
    let mut cache = RunCache::default();
    let t = ablation_run_cached(&base, &grid, &[0, 1], &world, &[], None, &mut cache).unwrap();
    assert_eq!(cache.len(), 4);
    assert_eq!(t.row("full").unwrap().results, t.row("also-full").unwrap().results);
    assert_eq!((t.train_generator.as_str(), t.test_generator.as_str()), ("gen-a", "gen-b"));
    for r in &t.rows {
        for s in &r.results {
            assert_eq!(s.seen, s.per_generator["gen-a"]);
            assert_eq!(s.unseen, s.per_generator["gen-b"]);
        }
    }
    let again = ablation_run_cached(&base, &grid[..1], &[1], &world, &[], None, &mut cache).unwrap();
    assert_eq!(cache.len(), 4);
    assert_eq!(again.rows[0].results[0], t.row("full").unwrap().results[1]);
    // Uncached runs are deterministic and agree with the cache.
    let fresh = ablation_run(&base, &grid[2..], &[0], &world, &[], None).unwrap();
    assert_eq!(fresh.rows[0].results[0], t.row("no-aux").unwrap().results[0]);
}

#[test]
fn ablation_probe_results_are_recorded() {
    let world = stub_world();
    let probe = |_: &crate::detector::Detector| -> crate::error::Result<std::collections::BTreeMap<String, f64>> {
        Ok([("k".to_string(), 2.5)].into_iter().collect())
    };
    let grid = [ConfigDelta::parse("full", "").unwrap()];
    let t = ablation_run(&stub_fit_config(), &grid, &[4], &world, &[], Some(&probe)).unwrap();
    assert_eq!(t.rows[0].mean_extra("k"), Some(2.5));
    let bad = [ConfigDelta::parse("broken", "train.epochs = 0\n").unwrap()];
    let e = ablation_run(&stub_fit_config(), &bad, &[0], &world, &[], None).unwrap_err();
    assert!(e.to_string().contains("ablation[broken]"), "{e}");
    assert!(ablation_run(&stub_fit_config(), &[], &[0], &world, &[], None).is_err());
}

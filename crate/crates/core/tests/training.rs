use recist_core::experiment::synthetic_corpus;
use recist_core::labels::SliceLabels;
use recist_core::losses::soft_dice;
use recist_core::synthgen::SynthSpec;
use recist_core::trainer::{self, adamax_step, AdamaxState, SegModelPair, TrainConfig, TrainSample};
use recist_core::{BinaryMask, Error, Grid};

fn tiny_corpus() -> recist_core::experiment::Corpus {
    let spec = SynthSpec {
        image_size: 20,
        lesions_per_slice: (1, 1),
        radius_range: (3.0, 6.0),
        seed: 4,
        ..Default::default()
    };
    synthetic_corpus(&spec, 6, 3).unwrap()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        layout: "1-4-4-1".parse().unwrap(),
        prepare_epochs: 2,
        total_epochs: 4,
        batch_size: 2,
        ..Default::default()
    }
}

#[test]
fn adamax_matches_reference_recurrence() {
    // f(θ) = (θ − 3)², five steps from θ = 0
    let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
    let (mut theta, mut m, mut u) = (0.0f64, 0.0f64, 0.0f64);
    let mut params = [0.0];
    let mut state = AdamaxState::new(1);
    for t in 1..=5 {
        let g = 2.0 * (theta - 3.0);
        m = b1 * m + (1.0 - b1) * g;
        u = (b2 * u).max(g.abs());
        theta -= lr / (1.0 - b1.powi(t)) * m / (u + eps);

        let g = 2.0 * (params[0] - 3.0);
        adamax_step(&mut params, &[g], &mut state, lr).unwrap();
        assert!((params[0] - theta).abs() <= 1e-12, "step {t}: {} vs {theta}", params[0]);
    }
    assert_eq!(state.t, 5);
}

#[test]
fn training_is_deterministic() {
    let corpus = tiny_corpus();
    let cfg = quick_config();
    let (a, ha) = trainer::train(&corpus.train, &corpus.test, &cfg).unwrap();
    let (b, hb) = trainer::train(&corpus.train, &corpus.test, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ha, hb);
    assert_eq!(ha.to_csv(), hb.to_csv());
}

#[test]
fn consistency_is_inert_during_preparation() {
    let corpus = tiny_corpus();
    let prep = TrainConfig {
        prepare_epochs: 3,
        total_epochs: 3,
        ..quick_config()
    };
    let (a, ha) = trainer::train(&corpus.train, &[], &prep).unwrap();
    let (b, _) = trainer::train(&corpus.train, &[], &TrainConfig { lambda: 0.0, ..prep.clone() }).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert!(ha.epochs.iter().all(|e| e.consistency == 0.0));

    // one co-training epoch later the runs must differ
    let longer = TrainConfig { total_epochs: 4, ..prep };
    let (c, hc) = trainer::train(&corpus.train, &[], &longer).unwrap();
    let (d, _) = trainer::train(&corpus.train, &[], &TrainConfig { lambda: 0.0, ..longer.clone() }).unwrap();
    assert_ne!(c.to_bytes(), d.to_bytes());
    assert!(hc.epochs[3].consistency > 0.0);
    assert_eq!(hc.switch_epoch, 3);
}

#[test]
fn checkpoint_round_trip_on_disk() {
    let corpus = tiny_corpus();
    let (model, _) = trainer::train(&corpus.train, &[], &quick_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = SegModelPair::load(&path).unwrap();
    assert_eq!(back.to_bytes(), model.to_bytes());
    assert_eq!(back.step_count(), model.step_count());
}

#[test]
fn non_finite_input_is_reported() {
    let mut corpus = tiny_corpus();
    corpus.train[1].image.as_mut_slice()[5] = f64::NAN;
    let err = trainer::train(&corpus.train, &[], &quick_config()).unwrap_err();
    let Error::NonFiniteLoss(diag) = err else { panic!("unexpected {err:?}") };
    assert_eq!(diag.epoch, 0);
    assert!(diag.slice_ids.contains(&corpus.train[1].id));
}

#[test]
fn mismatched_dims_rejected() {
    let mut corpus = tiny_corpus();
    let small = Grid::filled(10, 10, 0.0);
    corpus.train.push(TrainSample {
        id: "odd".into(),
        labels: SliceLabels::from_recists(&[], 10, 10).unwrap(),
        image: small,
    });
    assert!(matches!(
        trainer::train(&corpus.train, &[], &quick_config()),
        Err(Error::DimMismatch { .. })
    ));
}

#[test]
fn single_slice_overfits() {
    let spec = SynthSpec {
        image_size: 24,
        lesions_per_slice: (1, 1),
        radius_range: (6.0, 8.0),
        seed: 2,
        ..Default::default()
    };
    let corpus = synthetic_corpus(&spec, 1, 0).unwrap();
    let cfg = TrainConfig {
        layout: "1-8-8-8-8-8-8-8-1".parse().unwrap(),
        lambda: 0.0,
        prepare_epochs: 2000,
        total_epochs: 2000,
        batch_size: 1,
        learning_rate: 1e-2,
        flip_augment: false,
        ..Default::default()
    };
    let (model, history) = trainer::train(&corpus.train, &[], &cfg).unwrap();
    assert_eq!(history.epochs.len(), 2000);
    let sample = &corpus.train[0];
    let (q_hat, _, _) = trainer::predict_branches(&model, &sample.image).unwrap();
    let all = BinaryMask::filled(24, 24, true);
    let d = soft_dice(&q_hat, &sample.labels.q.to_prob(), &all).unwrap().value;
    assert!(d < 0.05, "soft Dice against Q after 2000 steps: {d}");
}

mod oracles;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;

use gesture_forge::model::{
    build_paper_network, fine_tune, load_checkpoint, predict, save_checkpoint, stratified_split, train, Checkpoint,
    CheckpointError, ModelError, Network, TrainConfig, TrainSample, TrainingMetadata,
};
use gesture_forge::{Shape, Tensor, TensorError};
use oracles::{rng, uniform};

/// Conv, batch-norm and fully-connected parameter counts from the layer
/// formulas: a conv has `f * c * k * k + f`, a batch norm `2 * c`, the head
/// `classes * inputs + classes`.
fn expected_parameter_count(classes: usize) -> usize {
    let conv = |f: usize, c: usize| f * c * 9 + f;
    let bn = |c: usize| 2 * c;
    let spatial = 32 / 2 / 2;
    conv(96, 3) + bn(96) + conv(32, 96) + bn(32) + conv(64, 32) + bn(64) + classes * 64 * spatial * spatial + classes
}

/// Class 1 carries a bright centered square on a dim noisy background,
/// class 0 only the background.
fn separable(n: usize, groups: usize, seed: u64) -> Vec<TrainSample<f32>> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let input = Tensor::from_fn(Shape::new(1, 3, 32, 32), |_, _, y, x| {
                let inside = (10..22).contains(&y) && (10..22).contains(&x);
                if label == 1 && inside {
                    0.9
                } else {
                    r.random_range(0.1..0.3)
                }
            });
            TrainSample { input, label, group: format!("G{}", i % groups) }
        })
        .collect()
}

fn quick_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { max_epochs: epochs, batch_size: 32, augment: false, seed, ..TrainConfig::default() }
}

fn batch(samples: &[TrainSample<f32>]) -> Tensor<f32> {
    Tensor::stack(samples.iter().map(|s| &s.input)).unwrap()
}

#[test]
fn parameter_count_matches_the_layer_formula() {
    assert_eq!(expected_parameter_count(2), 57442);
    let net = build_paper_network::<f32>(2, 0).unwrap();
    assert_eq!(net.parameter_count(), 57442);
    assert_eq!(build_paper_network::<f32>(5, 0).unwrap().parameter_count(), expected_parameter_count(5));
}

#[test]
fn two_class_head_and_finite_zero_logits() {
    let net = build_paper_network::<f32>(2, 3).unwrap();
    let fc = net.layer_params().iter().flatten().last().unwrap();
    assert_eq!(fc.bias.len(), 2);
    let logits = net.infer(&Tensor::zeros(Shape::new(1, 3, 32, 32))).unwrap();
    assert_eq!(logits.shape(), Shape::new(1, 2, 1, 1));
    assert!(logits.is_finite());
    assert!(matches!(build_paper_network::<f32>(1, 0), Err(ModelError::Topology(_))));
}

#[test]
fn serialized_topology_is_stable_per_seed() {
    let bytes = |seed| Checkpoint::new(&build_paper_network::<f32>(2, seed).unwrap(), TrainingMetadata::default()).to_bytes();
    // the CRC residue over a whole file is constant, so hash without the trailer
    let digest = |b: Vec<u8>| crc32fast::hash(&b[..b.len() - 4]);
    let a = digest(bytes(17));
    assert_eq!(a, digest(bytes(17)));
    assert_ne!(a, digest(bytes(18)));
}

#[test]
fn predict_contract() {
    let net = build_paper_network::<f32>(2, 4).unwrap();
    let x = uniform(Shape::new(6, 3, 32, 32), 0.0, 1.0, &mut rng(4));
    let (labels, probs) = predict(&net, &x).unwrap();
    assert_eq!(labels.len(), 6);
    for (row, &l) in probs.data().chunks(2).zip(&labels) {
        assert!((row[0] as f64 + row[1] as f64 - 1.0).abs() <= 1e-6);
        assert_eq!(l, usize::from(row[1] > row[0]));
    }

    let one = x.sample_tensor(0);
    let eight = Tensor::stack(std::iter::repeat_n(&one, 8)).unwrap();
    let (_, p8) = predict(&net, &eight).unwrap();
    for row in p8.data().chunks(2) {
        assert_eq!(row, &p8.data()[..2]);
    }
    assert!(matches!(predict(&net, &Tensor::zeros(Shape::new(1, 3, 16, 16))), Err(TensorError::Shape(_))));
}

#[test]
fn tied_probabilities_pick_class_zero() {
    // a zeroed head makes both logits equal
    let mut net = build_paper_network::<f32>(2, 5).unwrap();
    let fc = net.layer_params_mut().iter_mut().flatten().last().unwrap();
    fc.weights.data_mut().fill(0.0);
    fc.bias.fill(0.0);
    let (labels, probs) = predict(&net, &uniform(Shape::new(3, 3, 32, 32), 0.0, 1.0, &mut rng(5))).unwrap();
    assert_eq!(labels, vec![0, 0, 0]);
    assert!(probs.data().iter().all(|p| *p == 0.5));
}

#[test]
fn separable_set_is_fitted() {
    let samples = separable(200, 4, 6);
    let (_, log) = train(build_paper_network(2, 6).unwrap(), &samples, &quick_config(50, 6)).unwrap();
    let last = log.epochs.last().unwrap();
    assert!(last.train_accuracy >= 0.99, "{last:?}");
    assert_eq!(log.train_size + log.val_size, 200);
    assert_eq!(log.val_size, 30);
}

#[test]
fn training_is_deterministic_per_seed() {
    let samples = separable(64, 2, 7);
    let cfg = TrainConfig { augment: true, ..quick_config(3, 7) };
    let a = train(build_paper_network(2, 7).unwrap(), &samples, &cfg).unwrap();
    let b = train(build_paper_network(2, 7).unwrap(), &samples, &cfg).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0, b.0);
    let c = train(build_paper_network(2, 7).unwrap(), &samples, &TrainConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn returned_weights_are_the_best_validation_epoch() {
    let samples = separable(64, 2, 9);
    let cfg = quick_config(6, 9);
    let (best, log) = train(build_paper_network(2, 9).unwrap(), &samples, &cfg).unwrap();
    let losses: Vec<f64> =
        std::iter::once(log.initial_val_loss.unwrap()).chain(log.epochs.iter().map(|e| e.val_loss.unwrap())).collect();
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(log.best_val_loss, Some(min));
    assert_eq!(losses[log.best_epoch], min);
    // rerunning up to the best epoch reproduces the same weights
    let (again, _) =
        train(build_paper_network(2, 9).unwrap(), &samples, &TrainConfig { max_epochs: log.best_epoch, ..cfg }).unwrap();
    assert_eq!(again, best);
}

#[test]
fn training_errors() {
    let ones: Vec<_> = separable(20, 2, 10).into_iter().filter(|s| s.label == 1).collect();
    let r = train(build_paper_network(2, 0).unwrap(), &ones, &quick_config(1, 0));
    assert!(matches!(r, Err(ModelError::Dataset(_))));
    let mut bad = separable(20, 2, 10);
    bad[0].label = 2;
    assert!(matches!(train(build_paper_network(2, 0).unwrap(), &bad, &quick_config(1, 0)), Err(ModelError::Dataset(_))));
    let cfg = TrainConfig { batch_size: 0, ..quick_config(1, 0) };
    assert!(matches!(train(build_paper_network(2, 0).unwrap(), &separable(20, 2, 10), &cfg), Err(ModelError::Config(_))));
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let cfg = TrainConfig { learning_rate: 1e30, momentum: 0.0, ..quick_config(5, 11) };
    let r = train(build_paper_network(2, 11).unwrap(), &separable(40, 2, 11), &cfg);
    assert!(matches!(r, Err(ModelError::Divergence { .. })), "{r:?}");
}

#[test]
fn thousand_samples_hold_out_150() {
    let groups = ["P01", "P02", "P03", "P04", "P05", "P06", "P07"];
    let mut r = rng(12);
    let keys: Vec<(&str, usize)> =
        (0..1000).map(|_| (groups[r.random_range(0..groups.len())], usize::from(r.random_bool(0.15)))).collect();
    let (tr, val) = stratified_split(&keys, 0.15, &mut rng(13)).unwrap();
    assert_eq!(val.len(), 150);
    assert_eq!(tr.len() + val.len(), 1000);
    let mut total: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    let mut held: BTreeMap<(&str, usize), usize> = BTreeMap::new();
    for k in &keys {
        *total.entry(*k).or_default() += 1;
    }
    for &i in &val {
        *held.entry(keys[i]).or_default() += 1;
    }
    for (k, n) in total {
        let floor = (0.15 * n as f64).floor() as usize;
        let h = held.get(&k).copied().unwrap_or(0);
        assert!(h == floor || h == floor + 1, "{k:?}: {h} of {n}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn split_partitions_the_indices(labels in proptest::collection::vec(0usize..3, 1..300), frac in 0.05f64..0.9, seed in any::<u64>()) {
        let keys: Vec<(&str, usize)> = labels.iter().enumerate().map(|(i, &l)| (if i % 3 == 0 { "a" } else { "b" }, l)).collect();
        let (tr, val) = stratified_split(&keys, frac, &mut rng(seed)).unwrap();
        prop_assert_eq!(val.len(), (frac * keys.len() as f64).round() as usize);
        let mut all: Vec<usize> = tr.iter().chain(&val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..keys.len()).collect::<Vec<_>>());
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let samples = separable(32, 2, 14);
    let cfg = quick_config(2, 14);
    let (mut net, log) = train(build_paper_network(2, 14).unwrap(), &samples, &cfg).unwrap();
    // move the running statistics off their initial values
    net.forward_train(&batch(&samples)).unwrap();
    let ck = Checkpoint::new(&net, TrainingMetadata::from_log(&log, &cfg));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.gfck");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.metadata.epochs_run, 2);
    assert_eq!(back.metadata.seed, 14);
    let x = batch(&samples);
    let (l0, p0) = predict(&net, &x).unwrap();
    let (l1, p1) = predict(&back.network, &x).unwrap();
    assert_eq!(l0, l1);
    assert_eq!(p0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), p1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    // running statistics moved away from their initial values and survived
    let fresh = build_paper_network::<f32>(2, 14).unwrap();
    let stats = |n: &Network<f32>| n.layer_params()[1].as_ref().unwrap().norm.clone().unwrap();
    assert_ne!(stats(&back.network), stats(&fresh));
}

#[test]
fn damaged_checkpoints_fail_distinctly() {
    let bytes = Checkpoint::new(&build_paper_network::<f32>(2, 15).unwrap(), TrainingMetadata::default()).to_bytes();
    let truncated = &bytes[..bytes.len() - 100];
    assert!(matches!(Checkpoint::from_bytes(truncated), Err(CheckpointError::Checksum { .. })));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(CheckpointError::Truncated(_))));
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CheckpointError::Checksum { .. })));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(CheckpointError::BadMagic)));
    // a newer version with a valid checksum
    let mut v2 = bytes[..bytes.len() - 4].to_vec();
    v2[4..8].copy_from_slice(&2u32.to_le_bytes());
    let crc = crc32fast::hash(&v2);
    v2.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::VersionMismatch { found: 2, expected: 1 })));
    assert!(matches!(load_checkpoint("/nonexistent/model.gfck"), Err(CheckpointError::Io(_))));
}

#[test]
fn zero_epoch_fine_tune_keeps_the_checkpoint() {
    let net = build_paper_network::<f32>(2, 16).unwrap();
    let bytes = Checkpoint::new(&net, TrainingMetadata::default()).to_bytes();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap().network;
    let samples = separable(24, 2, 16);
    let (tuned, log) = fine_tune(&loaded, &samples, &quick_config(0, 16)).unwrap();
    assert_eq!(tuned, loaded);
    assert_eq!(log.best_epoch, 0);
    let x = batch(&samples);
    assert_eq!(predict(&tuned, &x).unwrap().1, predict(&net, &x).unwrap().1);
}

#[test]
fn fine_tune_rejects_a_different_head() {
    let three = build_paper_network::<f32>(3, 0).unwrap();
    let r = fine_tune(&three, &separable(24, 2, 17), &quick_config(1, 0));
    assert!(matches!(r, Err(ModelError::Transfer(_))));
}

#[test]
fn fine_tune_does_not_worsen_validation_loss() {
    let adults = separable(120, 3, 18);
    let (pre, _) = train(build_paper_network(2, 18).unwrap(), &adults, &quick_config(4, 18)).unwrap();
    // the child set shifts the background but keeps the separating square
    let children: Vec<_> = separable(80, 2, 19)
        .into_iter()
        .map(|mut s| {
            s.input = s.input.map(|v| if v < 0.5 { v + 0.2 } else { v });
            s
        })
        .collect();
    let (_, log) = fine_tune(&pre, &children, &quick_config(8, 19)).unwrap();
    let initial = log.initial_val_loss.unwrap();
    assert!(log.best_val_loss.unwrap() <= initial);
    assert!(log.final_val_loss().unwrap() <= initial, "{log:?}");
}

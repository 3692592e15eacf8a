use std::collections::BTreeMap;

use super::*;
use crate::model::FusionModelConfig;
use crate::synthetic::{self, SyntheticSpec};

fn groups(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut next = 0;
    sizes
        .iter()
        .map(|&n| {
            let g = (next..next + n).collect();
            next += n;
            g
        })
        .collect()
}

#[test]
fn pk_batches_have_p_labels_with_k_each() {
    let g = groups(&[10, 3, 7, 1, 12, 5, 9, 4, 6, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for pairing in [PairingMode::Aligned, PairingMode::Unaligned] {
        for _ in 0..200 {
            let batch = pk_sample(&g, BatchSpec::default(), pairing, &mut rng).unwrap();
            assert_eq!(batch.len(), 32);
            let mut counts = BTreeMap::new();
            for it in &batch {
                *counts.entry(it.label).or_insert(0) += 1;
                assert!(g[it.label].contains(&it.visible));
                assert!(g[it.label].contains(&it.infrared));
                if pairing == PairingMode::Aligned {
                    assert_eq!(it.visible, it.infrared);
                }
            }
            assert_eq!(counts.len(), 8);
            assert!(counts.values().all(|&c| c == 4));
        }
    }
}

#[test]
fn small_identities_are_sampled_with_replacement() {
    let g = groups(&[1, 1]);
    let spec = BatchSpec { p: 2, k: 4 };
    let batch = pk_sample(&g, spec, PairingMode::Aligned, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let zeros: Vec<_> = batch.iter().filter(|it| it.label == 0).map(|it| it.visible).collect();
    assert_eq!(zeros, vec![0; 4]);
    let many = groups(&[6, 6]);
    for _ in 0..50 {
        let b = pk_sample(&many, spec, PairingMode::Aligned, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut v: Vec<_> = b.iter().map(|it| it.visible).collect();
        v.sort();
        v.dedup();
        assert_eq!(v.len(), 8);
    }
}

#[test]
fn unaligned_mode_redraws_infrared() {
    let g = groups(&[10, 10]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = BatchSpec { p: 2, k: 4 };
    let differing = (0..100)
        .flat_map(|_| pk_sample(&g, spec, PairingMode::Unaligned, &mut rng).unwrap())
        .filter(|it| it.visible != it.infrared)
        .count();
    assert!(differing > 600, "{differing}");
}

#[test]
fn pk_sampling_is_reproducible_and_checks_identities() {
    let g = groups(&[4; 9]);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..10).map(|_| pk_sample(&g, BatchSpec::default(), PairingMode::Aligned, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(5), run(5));
    let few = groups(&[4; 7]);
    assert!(matches!(
        pk_sample(&few, BatchSpec::default(), PairingMode::Aligned, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn best_epoch_is_the_max_validation_map() {
    let rec = |epoch, map: Option<f64>| EpochRecord {
        epoch,
        total_loss: 1.0,
        triplet_loss: 0.5,
        ce_loss: 0.5,
        lr: 0.1,
        val: map.map(|m| Metrics { map: m, minp: m / 2.0, rank1: m }),
    };
    let log = vec![rec(0, None), rec(4, Some(0.4)), rec(9, Some(0.7)), rec(14, Some(0.6)), rec(19, Some(0.7))];
    assert_eq!(best_epoch(&log), Some(9));
    assert_eq!(best_epoch(&log[..1]), None);
    let csv = log_csv(&log);
    assert!(csv.starts_with("epoch,total_loss,triplet_loss,ce_loss,lr,val_mAP,val_mINP\n"));
    assert!(csv.contains("\n0,1,0.5,0.5,0.1,,\n"));
    assert!(csv.contains("\n9,1,0.5,0.5,0.1,0.7,0.35\n"));
}

fn toy(ids: usize) -> PairSet {
    synthetic::generate(
        &SyntheticSpec {
            n_identities: ids,
            pairs_per_identity: 6,
            image_hw: (32, 16),
            ..SyntheticSpec::default()
        },
        11,
    )
}

fn toy_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        optim: OptimConfig {
            epochs,
            warmup_epochs: 2,
            decay_epochs: vec![],
            ..OptimConfig::default()
        },
        batch: BatchSpec { p: 4, k: 4 },
        augment: AugmentConfig {
            target_hw: (32, 16),
            crop_pad: 2,
            ..AugmentConfig::default()
        },
        val_every: 2,
        ..TrainConfig::default()
    }
}

fn toy_model(kind: ModelKind, ids: usize) -> FusionModel<f32> {
    let mut cfg = FusionModelConfig::new(kind, ids);
    cfg.backbone.block_channels = vec![4, 8, 8, 16, 16];
    cfg.backbone.input_hw = (32, 16);
    cfg.man_hidden = 8;
    FusionModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(12)).unwrap()
}

#[test]
fn non_positive_learning_rate_is_refused() {
    let set = toy(6);
    let mut model = toy_model(ModelKind::BaselineConcat, 6);
    let before = model.store.values();
    let mut cfg = toy_config(1);
    cfg.optim.base_lr = 0.0;
    assert!(matches!(train(&mut model, &set, None, &cfg, 1), Err(TrainError::Config(_))));
    assert_eq!(model.store.values(), before);
}

#[test]
fn training_is_deterministic_and_keeps_the_best_epoch() {
    let set = toy(8);
    let val = toy(4);
    let run = || {
        let mut model = toy_model(ModelKind::Mmsf, 8);
        let out = train(&mut model, &set, Some(&val), &toy_config(4), 3).unwrap();
        (model.store.values(), out)
    };
    let (a, out) = run();
    let (b, out2) = run();
    assert_eq!(a, b);
    assert_eq!(out.log, out2.log);
    assert_eq!(out.log.len(), 4);
    assert!(out.log.iter().all(|r| r.total_loss.is_finite() && (r.total_loss - r.triplet_loss - r.ce_loss).abs() < 1e-4));
    assert_eq!(out.log.iter().filter(|r| r.val.is_some()).count(), 2);
    assert_eq!(out.best_epoch, best_epoch(&out.log));
}

#[test]
fn identity_count_must_match_the_classifier() {
    let set = toy(6);
    let mut model = toy_model(ModelKind::BaselineSum, 5);
    assert!(matches!(train(&mut model, &set, None, &toy_config(1), 0), Err(TrainError::Config(_))));
}

#[test]
fn masked_samples_do_not_train_their_mmsf_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, e, classes) = (8, 4, 4);
    let labels = [0, 0, 1, 1, 2, 2, 3, 3];
    let tensor = |shape: &[usize], rng: &mut ChaCha8Rng| {
        Tensor::new(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let infrared_masked = [0, 2, 4, 6];
    let partly: Vec<Option<Modality>> = (0..n).map(|k| infrared_masked.contains(&k).then_some(Modality::Infrared)).collect();
    let fully = vec![Some(Modality::Infrared); n];
    for masked in [partly, fully] {
        let tape = Tape::<f64>::new();
        let features: Vec<Var<'_, f64>> = (0..3).map(|_| tape.leaf(tensor(&[n, e], &mut rng))).collect();
        let logits: Vec<Var<'_, f64>> = (0..3).map(|_| tape.leaf(tensor(&[n, classes], &mut rng))).collect();
        let out = ModelOutput {
            embedding: tape.leaf(tensor(&[n, 3 * e], &mut rng)),
            logits: logits.clone(),
            features: features.clone(),
            attention_weights: None,
        };
        let losses = model_losses(ModelKind::Mmsf, &out, &labels, &masked, &toy_config(1)).unwrap();
        let grads = tape.backward(losses.total).unwrap();
        let rows_touched = |v: Var<'_, f64>, width: usize| -> Vec<bool> {
            grads.slice(v).map_or(vec![false; n], |g| g.chunks(width).map(|r| r.iter().any(|&x| x != 0.0)).collect())
        };
        let expected: Vec<bool> = masked.iter().map(Option::is_none).collect();
        assert_eq!(rows_touched(logits[2], classes), expected);
        assert_eq!(rows_touched(logits[0], classes), vec![true; n]);
        assert_eq!(rows_touched(logits[1], classes), vec![true; n]);
        assert!(rows_touched(features[2], e).iter().zip(&expected).all(|(&t, &ok)| ok || !t));
        assert!(grads.slice(out.embedding).is_none());
    }
}

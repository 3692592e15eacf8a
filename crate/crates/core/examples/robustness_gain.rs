//! Same architecture trained with and without ML-MDA, scored on the clean
//! test identities and on their UCD-corrupted copy.

use mmreid::augment::AugmentConfig;
use mmreid::benchmark::{corrupt, BenchmarkManifest, ProtocolKind};
use mmreid::model::{FusionModel, FusionModelConfig, ModelKind};
use mmreid::synthetic::{generate, SyntheticSpec};
use mmreid::tensor::OptimConfig;
use mmreid::training::{evaluate, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind: ModelKind = args.next().as_deref().unwrap_or("baseline_sum").parse()?;
    let epochs: usize = args.next().map_or(Ok(30), |s| s.parse())?;
    let hw = (96, 48);

    let all = generate(&SyntheticSpec::default(), 1);
    let fit = all.select_labels(&(0..20).collect::<Vec<_>>());
    let test = all.select_labels(&(20..30).collect::<Vec<_>>());
    let mut ucd = test.clone();
    for (k, plan) in BenchmarkManifest::build(ProtocolKind::Ucd, 42, "toy", &test.pair_ids).plans.iter().enumerate() {
        ucd.visible[k] = corrupt(plan, &test.visible[k])?;
        ucd.infrared[k] = corrupt(plan, &test.infrared[k])?;
    }

    for ml_mda in [false, true] {
        let mut cfg = FusionModelConfig::new(kind, 20);
        cfg.backbone.input_hw = hw;
        cfg.backbone.block_channels = vec![16, 32, 64, 64, 128];
        cfg.man_hidden = 32;
        let mut model: FusionModel<f32> = FusionModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(7))?;
        let tc = TrainConfig {
            optim: OptimConfig { epochs, warmup_epochs: 2, decay_epochs: vec![epochs * 3 / 4], ..OptimConfig::default() },
            augment: AugmentConfig { target_hw: hw, crop_pad: 4, ..AugmentConfig::default() },
            ml_mda,
            ..TrainConfig::default()
        };
        train(&mut model, &fit, None, &tc, 11)?;
        let clean = evaluate(&model, &test, &tc.augment, 64)?.metrics;
        let corrupted = evaluate(&model, &ucd, &tc.augment, 64)?.metrics;
        println!(
            "{kind} ml_mda={ml_mda:<5} clean mAP {:.3}  UCD mAP {:.3}  UCD mINP {:.3}",
            clean.map, corrupted.map, corrupted.minp
        );
    }
    Ok(())
}

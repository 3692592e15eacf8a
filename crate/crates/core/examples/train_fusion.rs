//! Trains one fusion model on a synthetic corpus and reports leave-one-out
//! retrieval on held-out identities.
//!
//! cargo run --release --example train_fusion -- mmsf 20 /tmp/mmsf.json

use mmreid::augment::AugmentConfig;
use mmreid::model::{checkpoint, FusionModel, FusionModelConfig, ModelKind};
use mmreid::synthetic::{generate, SyntheticSpec};
use mmreid::tensor::OptimConfig;
use mmreid::training::{evaluate, log_csv, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind: ModelKind = args.next().as_deref().unwrap_or("baseline_concat").parse()?;
    let epochs: usize = args.next().map_or(Ok(15), |s| s.parse())?;
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "target/train_fusion.json".into()));
    let hw = (64, 32);

    let all = generate(&SyntheticSpec { image_hw: hw, ..SyntheticSpec::default() }, 1);
    let fit = all.select_labels(&(0..20).collect::<Vec<_>>());
    let test = all.select_labels(&(20..30).collect::<Vec<_>>());

    let mut cfg = FusionModelConfig::new(kind, fit.identities.len());
    cfg.backbone.input_hw = hw;
    cfg.backbone.block_channels = vec![8, 16, 32, 32, 64];
    let mut model: FusionModel<f32> = FusionModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(7))?;
    let tc = TrainConfig {
        optim: OptimConfig { epochs, warmup_epochs: 2, decay_epochs: vec![epochs * 3 / 4], ..OptimConfig::default() },
        augment: AugmentConfig { target_hw: hw, crop_pad: 3, ..AugmentConfig::default() },
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &fit, None, &tc, 3)?;
    print!("{}", log_csv(&outcome.log));

    let m = evaluate(&model, &test, &tc.augment, 64)?.metrics;
    println!("{kind}: mAP {:.3}  mINP {:.3}  rank-1 {:.3}", m.map, m.minp, m.rank1);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    checkpoint::save(&model, &out)?;
    println!("checkpoint in {}", out.display());
    Ok(())
}

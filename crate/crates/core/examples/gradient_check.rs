//! Finite-difference check of every fusion model in double precision.

use mmreid::gradcheck::{check_model_gradients, random_tensor, GradCheckOptions};
use mmreid::losses::{cross_entropy_label_smoothing, LABEL_SMOOTHING};
use mmreid::model::{BackboneConfig, FusionModel, FusionModelConfig, Mode, ModelError, ModelKind};
use mmreid::tensor::{add, sum_all};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = GradCheckOptions::default();
    for kind in ModelKind::ALL {
        let cfg = FusionModelConfig {
            kind,
            num_identities: 3,
            man_hidden: 4,
            backbone: BackboneConfig { block_channels: vec![4, 4, 8, 8, 8], input_hw: (8, 16) },
            ..FusionModelConfig::default()
        };
        let model = FusionModel::<f64>::new(cfg, &mut rng).expect("valid config");
        let xv = random_tensor(&[2, 3, 8, 16], &mut rng);
        let xi = random_tensor(&[2, 3, 8, 16], &mut rng);
        let rep = check_model_gradients(
            &model,
            &xv,
            &xi,
            Mode::Train,
            |out| {
                let mut loss = sum_all(out.embedding);
                for &lg in &out.logits {
                    loss = add(loss, cross_entropy_label_smoothing(lg, &[0, 1], LABEL_SMOOTHING)?)?;
                }
                Ok::<_, ModelError>(loss)
            },
            opts,
        )
        .expect("forward");
        println!(
            "{kind:<16} {:6} params  max rel err {:.2e}  {}",
            rep.checked,
            rep.max_rel_error,
            if rep.passes(&opts) { "ok" } else { "FAIL" }
        );
    }
}

//! Shows what ML-MDA does to training pairs: MS-REA patches on each modality
//! and, now and then, a fully blanked modality.

use mmreid::augment::{augment, AugmentConfig, Pair};
use mmreid::dataset::CameraSetting;
use mmreid::synthetic::{appearances, render_pair};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/ml_mda".into()));
    std::fs::create_dir_all(&dir)?;
    let (v, i) = render_pair(&appearances(1, 2)[0], CameraSetting::CL, (96, 48), 1);
    let pair = Pair::new(v, i)?;
    let cfg = AugmentConfig { target_hw: (96, 48), crop_pad: 4, ..AugmentConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let blank = |data: &[u8]| data.iter().all(|&x| x == 0);
    for k in 0..24 {
        let out = augment(&pair, &cfg, true, &mut rng);
        let tag = match (blank(out.visible.data()), blank(out.infrared.data())) {
            (true, _) => "visible masked",
            (_, true) => "infrared masked",
            _ => "both kept",
        };
        out.visible.save(&dir.join(format!("{k:02}_v.png")))?;
        out.infrared.save(&dir.join(format!("{k:02}_i.png")))?;
        println!("{k:02} {tag}");
    }
    println!("images in {}", dir.display());
    Ok(())
}

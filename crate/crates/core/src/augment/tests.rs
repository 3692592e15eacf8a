use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corruptions::grayscale;
use crate::corruptions::tests::test_image;

fn pair(h: usize, w: usize, seed: u64) -> Pair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Pair::new(test_image(h, w, Modality::Visible, &mut rng), test_image(h, w, Modality::Infrared, &mut rng)).unwrap()
}

fn small_cfg() -> AugmentConfig {
    AugmentConfig {
        target_hw: (48, 24),
        crop_pad: 4,
        ..AugmentConfig::default()
    }
}

fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn default_config_is_valid() {
    AugmentConfig::default().validate().unwrap();
    let bad = AugmentConfig { mask_prob: 1.5, ..AugmentConfig::default() };
    assert!(bad.validate().is_err());
    let bad = AugmentConfig { msrea_area: (0.5, 0.1), ..AugmentConfig::default() };
    assert!(bad.validate().is_err());
    let bad = AugmentConfig { msrea_pixel_fraction: 0.0, ..AugmentConfig::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn pair_rejects_swapped_modalities() {
    let p = pair(8, 4, 0);
    assert!(Pair::new(p.infrared.clone(), p.visible.clone()).is_err());
}

#[test]
fn flip_is_an_involution_and_zero_offset_is_identity() {
    let p = pair(20, 10, 1);
    let once = crop_flip(&p.visible, 0, 0, 0, true);
    assert_ne!(once, p.visible);
    assert_eq!(crop_flip(&once, 0, 0, 0, true), p.visible);
    assert_eq!(crop_flip(&p.visible, 0, 0, 0, false), p.visible);
    assert_eq!(crop_flip(&p.visible, 6, 6, 6, false), p.visible);
}

#[test]
fn crop_shifts_in_zero_padding() {
    let img = ImageBuf::filled(4, 4, [200; 3], Modality::Visible).unwrap();
    let out = crop_flip(&img, 2, 0, 0, false);
    assert_eq!(out.pixel(0, 0), [0; 3]);
    assert_eq!(out.pixel(1, 1), [0; 3]);
    assert_eq!(out.pixel(2, 2), [200; 3]);
}

#[test]
fn preprocess_always_reaches_the_target_size() {
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (h, w) in [(96, 48), (300, 100), (17, 33)] {
        let out = base_preprocess(&pair(h, w, 3), &cfg, &mut rng);
        for m in Modality::BOTH {
            assert_eq!((out.get(m).height(), out.get(m).width()), (288, 144));
        }
        assert!(out.infrared.is_gray());
    }
}

#[test]
fn preprocess_is_joint_across_modalities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = grayscale(&test_image(40, 20, Modality::Visible, &mut rng));
    let i = ImageBuf::from_raw(40, 20, v.data().to_vec(), Modality::Infrared).unwrap();
    let p = Pair::new(v, i).unwrap();
    for _ in 0..50 {
        let out = base_preprocess(&p, &small_cfg(), &mut rng);
        assert_eq!(out.visible.data(), out.infrared.data());
    }
}

#[test]
fn ms_rea_keeps_infrared_gray_and_patches_independently() {
    let cfg = AugmentConfig { msrea_prob: 1.0, ..small_cfg() };
    let base = base_preprocess(&pair(48, 24, 5), &cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut vy, mut iy, mut vx, mut ix) = (vec![], vec![], vec![], vec![]);
    for n in 0..10_000 {
        let mut p = base.clone();
        let [v, i] = ms_rea(&mut p, &cfg, &mut rng);
        let (v, i) = (v.unwrap(), i.unwrap());
        if n < 200 {
            assert!(p.infrared.is_gray());
            let changed = |a: &ImageBuf, b: &ImageBuf| {
                a.data().chunks_exact(3).zip(b.data().chunks_exact(3)).filter(|(x, y)| x != y).count()
            };
            assert!(changed(&p.visible, &base.visible) <= (v.h * v.w + 1) / 2);
            assert!(changed(&p.infrared, &base.infrared) <= (i.h * i.w + 1) / 2);
        }
        vy.push(v.center().0);
        vx.push(v.center().1);
        iy.push(i.center().0);
        ix.push(i.center().1);
    }
    assert!(correlation(&vy, &iy).abs() < 0.05);
    assert!(correlation(&vx, &ix).abs() < 0.05);
}

#[test]
fn ms_rea_rectangles_respect_the_bounds() {
    let cfg = AugmentConfig { msrea_prob: 1.0, ..small_cfg() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = pair(48, 24, 8);
    for _ in 0..2000 {
        let mut p = base.clone();
        for r in ms_rea(&mut p, &cfg, &mut rng).into_iter().flatten() {
            let area = (r.h * r.w) as f64 / (48.0 * 24.0);
            assert!(area > 0.01 && area < 0.45, "{area}");
            assert!(r.y + r.h <= 48 && r.x + r.w <= 24);
        }
    }
}

#[test]
fn zero_probabilities_are_identities() {
    let cfg = AugmentConfig { msrea_prob: 0.0, mask_prob: 0.0, ..small_cfg() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let base = pair(48, 24, 10);
    for _ in 0..100 {
        let mut p = base.clone();
        assert_eq!(ms_rea(&mut p, &cfg, &mut rng), [None, None]);
        assert_eq!(modality_mask(&mut p, &cfg, &mut rng), None);
        assert_eq!(p, base);
    }
}

#[test]
fn modality_mask_statistics() {
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = pair(8, 4, 12);
    let (mut masked, mut visible) = (0usize, 0usize);
    let n = 80_000;
    for _ in 0..n {
        let mut p = base.clone();
        match modality_mask(&mut p, &cfg, &mut rng) {
            None => assert_eq!(p, base),
            Some(m) => {
                masked += 1;
                visible += (m == Modality::Visible) as usize;
                assert!(p.get(m).data().iter().all(|&b| b == 0));
                let other = if m == Modality::Visible { Modality::Infrared } else { Modality::Visible };
                assert_eq!(p.get(other), base.get(other));
            }
        }
    }
    let freq = masked as f64 / n as f64;
    assert!((freq - 0.125).abs() <= 0.005, "{freq}");
    let split = visible as f64 / masked as f64;
    assert!((split - 0.5).abs() <= 0.01, "{split}");
}

#[test]
fn augmented_stream_is_reproducible() {
    let base = pair(60, 30, 13);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20).map(|_| augment(&base, &small_cfg(), true, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn tensor_layout_is_nchw_scaled() {
    let img = ImageBuf::from_raw(1, 2, vec![255, 0, 51, 0, 102, 255], Modality::Visible).unwrap();
    let t = to_tensor([&img]);
    assert_eq!(t.shape(), &[1, 3, 1, 2]);
    assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.4, 0.2, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_keeps_shape_and_grayness(seed in any::<u64>(), h in 8usize..64, w in 8usize..64) {
        let base = pair(h, w, seed);
        let out = augment(&base, &small_cfg(), true, &mut ChaCha8Rng::seed_from_u64(seed));
        for m in Modality::BOTH {
            prop_assert_eq!((out.get(m).height(), out.get(m).width()), (48, 24));
            prop_assert_eq!(out.get(m).modality(), m);
        }
        prop_assert!(out.infrared.is_gray());
    }
}

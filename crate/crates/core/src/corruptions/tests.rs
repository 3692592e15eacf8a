use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Random blocky test picture with some smooth shading.
pub(crate) fn test_image(h: usize, w: usize, modality: Modality, rng: &mut impl Rng) -> ImageBuf {
    let mut data = vec![0u8; h * w * 3];
    let base: [u8; 3] = rng.random();
    for px in data.chunks_exact_mut(3) {
        px.copy_from_slice(&base);
    }
    for _ in 0..6 {
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (y1, x1) = (rng.random_range(y0..h) + 1, rng.random_range(x0..w) + 1);
        let c: [u8; 3] = rng.random();
        for y in y0..y1 {
            for x in x0..x1 {
                let shade = ((x + y) % 16) as u8;
                let i = (y * w + x) * 3;
                for k in 0..3 {
                    data[i + k] = c[k].saturating_add(shade);
                }
            }
        }
    }
    let img = ImageBuf::from_raw(h, w, data, Modality::Visible).unwrap();
    match modality {
        Modality::Visible => img,
        Modality::Infrared => {
            let g = grayscale(&img);
            ImageBuf::from_raw(h, w, g.data().to_vec(), Modality::Infrared).unwrap()
        }
    }
}

fn sev(l: u8) -> Severity {
    Severity::new(l).unwrap()
}

#[test]
fn applicability() {
    assert!(!is_applicable(CorruptionKind::Brightness, Modality::Infrared));
    assert!(is_applicable(CorruptionKind::Brightness, Modality::Visible));
    assert!(is_applicable(CorruptionKind::GaussianNoise, Modality::Infrared));
    assert_eq!(CorruptionKind::applicable(Modality::Visible).len(), 20);
    assert_eq!(CorruptionKind::applicable(Modality::Infrared).len(), 19);
}

#[test]
fn groups_follow_the_taxonomy() {
    use CorruptionGroup::*;
    let count = |g| CorruptionKind::ALL.iter().filter(|k| k.group() == g).count();
    assert_eq!([count(Noise), count(Blur), count(Weather), count(Digital)], [4, 5, 6, 5]);
    assert_eq!(CorruptionKind::Spatter.group(), Weather);
    assert_eq!(CorruptionKind::Saturate.group(), Digital);
}

#[test]
fn kind_names_parse_back() {
    for k in CorruptionKind::ALL {
        assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
    }
    assert!("blizzard".parse::<CorruptionKind>().is_err());
}

#[test]
fn severity_bounds() {
    assert!(Severity::new(0).is_err());
    assert!(Severity::new(6).is_err());
    assert_eq!(Severity::new(5).unwrap().level(), 5);
}

#[test]
fn grayscale_cases() {
    let red = ImageBuf::filled(2, 2, [255, 0, 0], Modality::Visible).unwrap();
    assert_eq!(grayscale(&red).pixel(0, 0), [76, 76, 76]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = test_image(20, 10, Modality::Visible, &mut rng);
    let g = grayscale(&img);
    assert_eq!(grayscale(&g), g);
    let gray = test_image(20, 10, Modality::Infrared, &mut rng);
    assert_eq!(grayscale(&gray), gray);
}

#[test]
fn infrared_buffers_must_be_gray() {
    assert!(matches!(
        ImageBuf::from_raw(1, 1, vec![1, 2, 3], Modality::Infrared),
        Err(ImageError::NotGray)
    ));
}

#[test]
fn inapplicable_kind_is_an_error() {
    let img = ImageBuf::filled(4, 4, [9, 9, 9], Modality::Infrared).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert!(matches!(
        apply(CorruptionKind::Brightness, sev(1), &img, &mut rng),
        Err(CorruptionError::NotApplicable { .. })
    ));
}

#[test]
fn pixelate_keeps_uniform_images() {
    for modality in Modality::BOTH {
        let rgb = if modality == Modality::Visible { [10, 200, 77] } else { [131; 3] };
        for (h, w) in [(96, 48), (37, 23)] {
            let img = ImageBuf::filled(h, w, rgb, modality).unwrap();
            for s in Severity::ALL {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let out = apply(CorruptionKind::Pixelate, s, &img, &mut rng).unwrap();
                assert_eq!(out, img);
            }
        }
    }
}

#[test]
fn gaussian_noise_std_tracks_the_ladder() {
    let img = ImageBuf::filled(256, 256, [128; 3], Modality::Visible).unwrap();
    let sigmas = constants::builtin()
        .ladder(CorruptionKind::GaussianNoise, "sigma")
        .unwrap();
    for s in Severity::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(4 + s.level() as u64);
        let out = apply(CorruptionKind::GaussianNoise, s, &img, &mut rng).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = out
                .data()
                .chunks_exact(3)
                .map(|p| p[c] as f64 / 255.0)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            let sigma = sigmas[s.index()];
            assert!(
                (var.sqrt() - sigma).abs() <= 0.05 * sigma,
                "severity {s} channel {c}: {} vs {sigma}",
                var.sqrt()
            );
        }
    }
}

#[test]
fn impulse_noise_on_infrared_stays_gray() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = test_image(64, 32, Modality::Infrared, &mut rng);
    for s in Severity::ALL {
        let out = apply(CorruptionKind::ImpulseNoise, s, &img, &mut rng).unwrap();
        assert!(out.is_gray());
        assert_ne!(out, img);
    }
}

#[test]
fn every_kind_keeps_dimensions_and_infrared_grayness() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for modality in Modality::BOTH {
        let img = test_image(40, 20, modality, &mut rng);
        for kind in CorruptionKind::applicable(modality) {
            for s in Severity::ALL {
                let out = apply(kind, s, &img, &mut rng).unwrap();
                assert_eq!((out.height(), out.width()), (40, 20), "{kind}");
                assert_eq!(out.modality(), modality);
                if modality == Modality::Infrared {
                    assert!(out.is_gray(), "{kind} severity {s}");
                }
            }
        }
    }
}

#[test]
fn same_seed_gives_identical_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for modality in Modality::BOTH {
        let img = test_image(32, 16, modality, &mut rng);
        for kind in CorruptionKind::applicable(modality) {
            let run = |seed| apply(kind, sev(3), &img, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(run(11), run(11), "{kind}");
            if kind.is_deterministic() {
                assert_eq!(run(11), run(12), "{kind}");
            }
        }
    }
}

#[test]
fn most_kinds_change_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = test_image(48, 24, Modality::Visible, &mut rng);
    for kind in CorruptionKind::ALL {
        let out = apply(kind, sev(5), &img, &mut rng).unwrap();
        assert_ne!(out, img, "{kind}");
    }
}

#[test]
fn noise_deviation_grows_with_severity() {
    let noise = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::SpeckleNoise,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for kind in noise {
        let mut violations = 0;
        let mut comparisons = 0;
        for _ in 0..100 {
            let img = test_image(32, 16, Modality::Visible, &mut rng);
            let mad: Vec<f64> = Severity::ALL
                .iter()
                .map(|&s| {
                    let out = apply(kind, s, &img, &mut rng).unwrap();
                    out.data()
                        .iter()
                        .zip(img.data())
                        .map(|(&a, &b)| (a as f64 - b as f64).abs())
                        .sum::<f64>()
                        / img.data().len() as f64
                })
                .collect();
            for pair in mad.windows(2) {
                comparisons += 1;
                if pair[1] < pair[0] {
                    violations += 1;
                }
            }
        }
        assert!(violations * 100 <= comparisons, "{kind}: {violations}/{comparisons}");
    }
}

#[test]
fn shared_seed_shares_weather_pattern() {
    // A gray visible image and its infrared twin see the same snow layout.
    let img = ImageBuf::filled(40, 20, [90; 3], Modality::Visible).unwrap();
    let ir = ImageBuf::filled(40, 20, [90; 3], Modality::Infrared).unwrap();
    for kind in [CorruptionKind::Snow, CorruptionKind::Rain, CorruptionKind::Fog] {
        let v = apply(kind, sev(3), &img, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let i = apply(kind, sev(3), &ir, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(v.data(), i.data(), "{kind}");
    }
}

#[test]
fn png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for modality in Modality::BOTH {
        let img = test_image(12, 7, modality, &mut rng);
        let path = dir.path().join(format!("{}.png", modality.tag()));
        img.save(&path).unwrap();
        assert_eq!(ImageBuf::load(&path, modality).unwrap(), img);
    }
}

#[test]
fn constants_table_is_complete_and_versioned() {
    let table = constants::builtin();
    assert_eq!(table.version, 1);
    for kind in CorruptionKind::ALL {
        assert!(!table.parameters(kind).is_empty(), "{kind}");
    }
    assert_eq!(
        table.ladder(CorruptionKind::JpegCompression, "quality"),
        Some([65.0, 58.0, 50.0, 40.0, 25.0])
    );
    assert!(Constants::parse("version 1\nfog strength 1 2 3").is_err());
    assert!(Constants::parse("fog strength 1 2 3 4 5").is_err());
}

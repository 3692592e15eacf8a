use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corruptions::tests::test_image;

fn write_corpus(root: &Path, identities: usize, pairs: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in 0..identities {
        for m in Modality::BOTH {
            let dir = root.join(format!("{id:04}")).join(m.tag());
            fs::create_dir_all(&dir).unwrap();
            for k in 0..pairs {
                test_image(24, 12, m, &mut rng).save(&dir.join(format!("{k}.png"))).unwrap();
            }
        }
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn ucd_kind_frequencies_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mut v = [0usize; 20];
    let mut i = [0usize; 20];
    for _ in 0..n {
        let p = plan_ucd("x", &mut rng);
        v[p.v_kind().unwrap() as usize] += 1;
        i[p.i_kind().unwrap() as usize] += 1;
    }
    for (k, &c) in v.iter().enumerate() {
        assert!((c as f64 / n as f64 - 0.05).abs() <= 0.005, "kind {k}: {c}");
    }
    assert_eq!(i[CorruptionKind::Brightness as usize], 0);
    for (k, &c) in i.iter().enumerate() {
        if k != CorruptionKind::Brightness as usize {
            assert!((c as f64 / n as f64 - 1.0 / 19.0).abs() <= 0.005, "kind {k}: {c}");
        }
    }
}

/// Wilson-Hilferty approximation of the chi-square upper quantile.
fn chi2_quantile(df: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn ucd_modalities_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let ir = CorruptionKind::applicable(Modality::Infrared);
    let mut table = vec![[0f64; 19]; 20];
    for _ in 0..n {
        let p = plan_ucd("x", &mut rng);
        let col = ir.iter().position(|&k| Some(k) == p.i_kind()).unwrap();
        table[p.v_kind().unwrap() as usize][col] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..19).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let mut stat = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &obs) in row.iter().enumerate() {
            let e = rows[r] * cols[c] / n as f64;
            stat += (obs - e).powi(2) / e;
        }
    }
    // z for an upper tail of 0.001
    let critical = chi2_quantile(19.0 * 18.0, 3.090_232);
    assert!(stat < critical, "chi2 {stat} >= {critical}");
}

#[test]
fn ccd_plans_follow_the_correlation_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100_000 {
        let p = plan_ccd("x", &mut rng);
        p.validate().unwrap();
        let (v, i) = (p.visible.unwrap(), p.infrared.unwrap());
        match correlation(v.0) {
            Correlation::Equal => assert_eq!(v, i),
            Correlation::SameKind => assert_eq!(v.0, i.0),
            Correlation::InfraredAtLeast => assert!(i.0 == v.0 && i.1 >= v.1),
            Correlation::Uncorrelated => {
                assert_ne!(i.0, CorruptionKind::Brightness);
                assert_eq!(correlation(i.0), Correlation::Uncorrelated);
            }
        }
    }
}

#[test]
fn ccd_conditional_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut motion = BTreeMap::new();
    let contrast_pool = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::SpeckleNoise,
        CorruptionKind::ElasticTransform,
        CorruptionKind::Saturate,
        CorruptionKind::JpegCompression,
        CorruptionKind::Pixelate,
        CorruptionKind::Contrast,
    ];
    let mut seen_rain = 0;
    for _ in 0..200_000 {
        let p = plan_ccd("x", &mut rng);
        let (v, i) = (p.visible.unwrap(), p.infrared.unwrap());
        match v {
            (CorruptionKind::Rain, l) if l.level() == 3 => {
                seen_rain += 1;
                assert_eq!(i, v);
            }
            (CorruptionKind::MotionBlur, l) if l.level() == 4 => {
                *motion.entry(i.1.level()).or_insert(0usize) += 1;
            }
            (CorruptionKind::Contrast, _) => assert!(contrast_pool.contains(&i.0)),
            _ => {}
        }
    }
    assert!(seen_rain > 0);
    assert_eq!(motion.keys().copied().collect::<Vec<_>>(), vec![4, 5]);
    let (a, b) = (motion[&4] as f64, motion[&5] as f64);
    assert!((a / (a + b) - 0.5).abs() < 0.05, "{a} {b}");
}

#[test]
fn ccdx_with_zero_fraction_matches_ccd() {
    for seed in 0..500 {
        let a = plan_ccd("x", &mut ChaCha8Rng::seed_from_u64(seed));
        let b = plan_ccdx("x", 0.0, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!((a.visible, a.infrared, a.seed), (b.visible, b.infrared, b.seed));
    }
}

#[test]
fn ccdx_clean_side_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let p = plan_ccdx("x", 1.0, &mut rng);
        let uncorrelated = correlation(p.visible.or(p.infrared).unwrap().0) == Correlation::Uncorrelated;
        let clean = p.visible.is_none() as u8 + p.infrared.is_none() as u8;
        assert_eq!(clean, uncorrelated as u8);
    }
    let (mut draws, mut clean, mut clean_v) = (0usize, 0usize, 0usize);
    while draws < 100_000 {
        let p = plan_ccdx("x", 0.5, &mut rng);
        p.validate().unwrap();
        let kind = p.visible.or(p.infrared).unwrap().0;
        if p.visible.is_some() && correlation(kind) != Correlation::Uncorrelated {
            continue;
        }
        draws += 1;
        if p.visible.is_none() || p.infrared.is_none() {
            clean += 1;
            clean_v += p.visible.is_none() as usize;
        }
    }
    let frac = clean as f64 / draws as f64;
    assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    assert!((clean_v as f64 / clean as f64 - 0.5).abs() <= 0.02);
}

#[test]
fn protocol_names_round_trip() {
    for p in [ProtocolKind::Ucd, ProtocolKind::Ccd, ProtocolKind::Ccdx(0.5), ProtocolKind::Ccdx(0.3)] {
        assert_eq!(p.to_string().parse::<ProtocolKind>().unwrap(), p);
    }
    assert_eq!("CCDX".parse::<ProtocolKind>().unwrap(), ProtocolKind::Ccdx(0.5));
    assert!("ccdx:1.5".parse::<ProtocolKind>().is_err());
    assert!("abc".parse::<ProtocolKind>().is_err());
}

#[test]
fn manifest_round_trip() {
    let ids: Vec<String> = (0..300).map(|i| format!("{:04}/{}", i / 10, i % 10)).collect();
    for (seed, protocol) in [(1, ProtocolKind::Ucd), (2, ProtocolKind::Ccd), (3, ProtocolKind::Ccdx(0.5)), (4, ProtocolKind::Ccdx(0.123456789))] {
        let m = BenchmarkManifest::build(protocol, seed, "toy corpus", &ids);
        let text = m.serialize();
        assert!(text.starts_with(MANIFEST_HEADER));
        assert_eq!(BenchmarkManifest::parse(&text).unwrap(), m);
        assert_eq!(BenchmarkManifest::build(protocol, seed, "toy corpus", &ids), m);
    }
    let empty = BenchmarkManifest::build(ProtocolKind::Ccd, 0, "none", &[]);
    assert_eq!(BenchmarkManifest::parse(&empty.serialize()).unwrap(), empty);
}

#[test]
fn plans_depend_only_on_pair_and_seed() {
    let a = BenchmarkManifest::build(ProtocolKind::Ucd, 9, "s", &["a/1".into(), "b/2".into()]);
    let b = BenchmarkManifest::build(ProtocolKind::Ucd, 9, "s", &["b/2".into()]);
    assert_eq!(a.plans[1], b.plans[0]);
}

#[test]
fn manifest_rejects_bad_input() {
    let good = BenchmarkManifest::build(ProtocolKind::Ccd, 1, "s", &["a/1".into()]).serialize();
    assert!(BenchmarkManifest::parse(&good.replacen("# mmreid", "# other", 1)).is_err());
    assert!(BenchmarkManifest::parse(&format!("{good}a/2 snow 6 snow 6 1\n")).is_err());
    assert!(BenchmarkManifest::parse(&format!("{good}a/2 fog 2 fog 3 1\n")).is_err());
    assert!(BenchmarkManifest::parse(&format!("{good}a/2 contrast 2 brightness 3 1\n")).is_err());
    assert!(BenchmarkManifest::parse(&format!("{good}a/2 contrast 2 none none 1\n")).is_err());
    assert!(BenchmarkManifest::parse(&good.replace("seed=1\n", "")).is_err());
}

#[test]
fn materialize_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("clean"), 1, 1, 0);
    let corpus = Corpus::scan(&dir.path().join("clean")).unwrap();
    let m = BenchmarkManifest::build(ProtocolKind::Ucd, 1, "s", &[]);
    let out = dir.path().join("out");
    assert_eq!(materialize(&m, &corpus, &out).unwrap(), 0);
    assert_eq!(BenchmarkManifest::load(&out.join(MANIFEST_FILE)).unwrap(), m);
    assert_eq!(tree(&out).len(), 1);
}

#[test]
fn materialize_is_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    write_corpus(&clean, 2, 5, 1);
    let corpus = Corpus::scan(&clean).unwrap();
    let m = BenchmarkManifest::for_corpus(ProtocolKind::Ucd, 42, &corpus);
    assert_eq!(m.plans.len(), 10);
    materialize(&m, &corpus, &dir.path().join("a")).unwrap();
    materialize(&m, &corpus, &dir.path().join("b")).unwrap();
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert_eq!(a.len(), 21);
    assert_eq!(a, b);
    let out = Corpus::scan(&dir.path().join("a")).unwrap();
    assert_eq!(out.pairs.len(), 10);
}

#[test]
fn clean_visible_side_is_copied() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    write_corpus(&clean, 1, 1, 2);
    let corpus = Corpus::scan(&clean).unwrap();
    let mut m = BenchmarkManifest::build(ProtocolKind::Ccdx(1.0), 0, "s", &["0000/0".into()]);
    m.plans[0].visible = None;
    m.plans[0].infrared = Some((CorruptionKind::GaussianNoise, Severity::new(3).unwrap()));
    let out = dir.path().join("out");
    materialize(&m, &corpus, &out).unwrap();
    let rel = Path::new("0000").join("V").join("0.png");
    assert_eq!(fs::read(out.join(&rel)).unwrap(), fs::read(clean.join(&rel)).unwrap());
    let rel = Path::new("0000").join("I").join("0.png");
    assert_ne!(fs::read(out.join(&rel)).unwrap(), fs::read(clean.join(&rel)).unwrap());
}

#[test]
fn missing_sources_are_itemized() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    write_corpus(&clean, 1, 2, 3);
    let corpus = Corpus::scan(&clean).unwrap();
    let ids = ["0000/0".to_string(), "0000/7".into(), "0009/1".into()];
    let m = BenchmarkManifest::build(ProtocolKind::Ccd, 0, "s", &ids);
    let out = dir.path().join("out");
    let err = materialize(&m, &corpus, &out).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("2 source pair(s)") && msg.contains("  - 0000/7") && msg.contains("  - 0009/1"), "{msg}");
    assert!(!out.exists());
}

#[test]
fn correlated_weather_shares_the_pattern() {
    let mut plan = plan_ccd("a/1", &mut ChaCha8Rng::seed_from_u64(0));
    for kind in [CorruptionKind::Snow, CorruptionKind::Rain, CorruptionKind::Fog] {
        let s = Severity::new(3).unwrap();
        plan.visible = Some((kind, s));
        plan.infrared = Some((kind, s));
        let v = ImageBuf::filled(40, 20, [90; 3], Modality::Visible).unwrap();
        let i = ImageBuf::filled(40, 20, [90; 3], Modality::Infrared).unwrap();
        plan.protocol = ProtocolKind::Ccd;
        assert_eq!(corrupt(&plan, &v).unwrap().data(), corrupt(&plan, &i).unwrap().data());
        plan.protocol = ProtocolKind::Ucd;
        assert_ne!(corrupt(&plan, &v).unwrap().data(), corrupt(&plan, &i).unwrap().data());
    }
}

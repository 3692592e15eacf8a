use super::*;
use crate::benchmark::ProtocolKind;
use crate::evaluation::expected_random_ap;
use crate::model::ModelKind;
use crate::synthetic::SyntheticSpec;

fn small_config(seed: u64, root: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.dataset.root = root.to_path_buf();
    cfg.dataset.test_identities = 4;
    cfg.dataset.folds = 1;
    cfg.synthetic = SyntheticSpec {
        n_identities: 10,
        pairs_per_identity: 6,
        image_hw: (32, 16),
        ..SyntheticSpec::default()
    };
    cfg.model.kind = ModelKind::BaselineConcat;
    cfg.model.backbone.input_hw = (32, 16);
    cfg.model.backbone.block_channels = vec![4, 4, 8, 8, 8];
    cfg.optim.epochs = 1;
    cfg.optim.warmup_epochs = 0;
    cfg.optim.decay_epochs = vec![];
    cfg.augment.crop_pad = 2;
    cfg.train.batch_p = 3;
    cfg.train.batch_k = 2;
    cfg
}

#[test]
fn missing_inputs_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let err = require(&[("first", &a), ("second", dir.path()), ("third", &b)]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.starts_with("2 missing input(s)"), "{msg}");
    assert!(msg.contains("  - first: ") && msg.contains("  - third: "), "{msg}");
}

#[test]
fn identity_split_holds_out_the_last_names() {
    let ids: Vec<String> = ["c", "a", "d", "b"].iter().map(|s| s.to_string()).collect();
    let (train, test) = split_identities(&ids, 1).unwrap();
    assert_eq!(train, ["a", "b", "c"]);
    assert_eq!(test, ["d"]);
    let (train, test) = split_identities(&ids, 0).unwrap();
    assert_eq!(train, test);
    assert!(split_identities(&ids, 4).is_err());
}

#[test]
fn validation_fold_is_disjoint_from_fit() {
    let mut cfg = RunConfig::default();
    cfg.dataset.folds = 5;
    cfg.dataset.val_fold = 2;
    let ids: Vec<String> = (0..20).map(|i| format!("{i:02}")).collect();
    let (fit, val) = validation_split(&cfg, &ids).unwrap();
    let val = val.unwrap();
    assert_eq!((fit.len(), val.len()), (16, 4));
    assert!(val.iter().all(|v| !fit.contains(v)));
    cfg.dataset.val_fold = 5;
    assert!(validation_split(&cfg, &ids).is_err());
}

#[test]
fn output_guard_removes_uncommitted_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    {
        let o = Output::create(&out, false).unwrap();
        o.write("x", "1").unwrap();
    }
    assert!(!out.exists());
    Output::create(&out, false).unwrap().commit();
    assert!(matches!(Output::create(&out, false), Err(PipelineError::Exists(_))));
    assert!(Output::create(&out, true).is_ok());
}

#[test]
fn random_embeddings_rank_at_chance() {
    let labels: Vec<usize> = (0..100).map(|i| i / 10).collect();
    let ids: Vec<String> = (0..100).map(|i| i.to_string()).collect();
    let chance = expected_random_ap(99, 9);
    let normal = rand_distr::StandardNormal;
    use rand::Rng;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..100 * 16).map(|_| rng.sample(normal)).collect();
        let emb = crate::tensor::Tensor::new(&[100, 16], data).unwrap();
        let m = evaluation::looq_evaluate(&emb, &labels, &ids).unwrap().metrics;
        assert!((m.map - chance).abs() <= 0.05, "seed {seed}: mAP {} vs chance {chance}", m.map);
    }
}

#[test]
fn untrained_evaluation_summary_matches_query_table() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    let mut cfg = small_config(9, &root);
    cfg.dataset.test_identities = 0;
    gen_synthetic(&cfg, &root, false).unwrap();
    let out = dir.path().join("eval");
    let s = evaluate(&cfg, None, None, &out, false).unwrap();
    assert_eq!(s.protocol, "clean");
    let csv = fs::read_to_string(out.join(QUERIES_FILE)).unwrap();
    let aps: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(aps.len(), 60);
    assert!((aps.iter().sum::<f64>() / 60.0 - s.map).abs() < 1e-12);
    assert_eq!(Summary::load(&out.join(SUMMARY_FILE)).unwrap(), s);
}

#[test]
fn ccdx_benchmark_manifest_obeys_the_rules() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    let mut cfg = small_config(4, &root);
    gen_synthetic(&cfg, &root, false).unwrap();
    cfg.protocol = Protocol::Corrupted(ProtocolKind::Ccdx(0.5));
    let out = dir.path().join("bench");
    assert_eq!(build_benchmark(&cfg, &out, false).unwrap(), 60);
    let m = BenchmarkManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.protocol, ProtocolKind::Ccdx(0.5));
    for p in &m.plans {
        p.validate().unwrap();
    }
    assert!(matches!(build_benchmark(&cfg, &out, false), Err(PipelineError::Exists(_))));
    cfg.protocol = Protocol::Clean;
    assert!(build_benchmark(&cfg, &dir.path().join("b2"), true).is_err());
}

#[test]
fn report_of_two_summaries_copies_values() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [
        Summary::new("clean", "mmsf", evaluation::Metrics { map: 0.1 + 0.2, minp: 1.0 / 7.0, rank1: 0.9 }),
        Summary::new("ucd", "man", evaluation::Metrics { map: 2.0 / 3.0, minp: 0.25, rank1: 1.0 }),
    ];
    let paths: Vec<PathBuf> = rows
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let p = dir.path().join(format!("s{k}.json"));
            fs::write(&p, s.to_json()).unwrap();
            p
        })
        .collect();
    let out = dir.path().join("report");
    report(&paths, &out, false).unwrap();
    let csv = fs::read_to_string(out.join(REPORT_CSV_FILE)).unwrap();
    let lines: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(lines.len(), 2);
    for (line, s) in lines.iter().zip(&rows) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], s.model);
        assert_eq!(f[1], s.protocol);
        assert_eq!(f[2].parse::<f64>().unwrap(), s.map);
        assert_eq!(f[3].parse::<f64>().unwrap(), s.minp);
        assert_eq!(f[4].parse::<f64>().unwrap(), s.rank1);
    }
    assert!(out.join(REPORT_PNG_FILE).exists());
    let missing = report(&[dir.path().join("nope.json")], &dir.path().join("r2"), false).unwrap_err();
    assert!(matches!(missing, PipelineError::Missing(ref m) if m.len() == 1));
    assert!(!dir.path().join("r2").exists());
}

#[test]
fn small_pipeline_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let base = dir.path().join(tag);
        let root = base.join("corpus");
        let mut cfg = small_config(21, &root);
        gen_synthetic(&cfg, &root, false).unwrap();
        train(&cfg, &base.join("train"), false).unwrap();
        cfg.protocol = Protocol::Corrupted(ProtocolKind::Ucd);
        evaluate(&cfg, Some(&base.join("train").join(CHECKPOINT_FILE)), None, &base.join("eval"), false).unwrap();
        base
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["train/checkpoint.json", "train/train_log.csv", "eval/summary.json", "eval/queries.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

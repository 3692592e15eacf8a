//! The workbench commands behind the `mmreid` binary. Each command reads a
//! [`RunConfig`], writes into one output directory and removes that
//! directory again when it fails.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::benchmark::{self, corrupt, derive_seed, BenchmarkManifest, MANIFEST_FILE};
use crate::config::{Protocol, RunConfig};
use crate::dataset::{Corpus, PairSet, METADATA_FILE};
use crate::evaluation::{self, Summary};
use crate::model::{checkpoint, FusionModel, FusionModelConfig};
use crate::report;
use crate::synthetic;
use crate::training::{self, TrainOutcome};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const QUERIES_FILE: &str = "queries.csv";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_PNG_FILE: &str = "report.png";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{} missing input(s):\n{}", .0.len(), itemize(.0))]
    Missing(Vec<String>),
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Benchmark(#[from] benchmark::BenchmarkError),
    #[error(transparent)]
    Synthetic(#[from] synthetic::SyntheticError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Corruption(#[from] crate::corruptions::CorruptionError),
}

type Result<T> = std::result::Result<T, PipelineError>;

fn itemize(items: &[String]) -> String {
    items.iter().map(|s| format!("  - {s}")).collect::<Vec<_>>().join("\n")
}

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Fails with every absent path listed, before any work starts.
pub fn require(inputs: &[(&str, &Path)]) -> Result<()> {
    let missing: Vec<String> = inputs
        .iter()
        .filter(|(_, p)| !p.exists())
        .map(|(what, p)| format!("{what}: {}", p.display()))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Missing(missing))
    }
}

fn corpus_inputs(root: &Path) -> [(&'static str, PathBuf); 2] {
    [("corpus directory", root.to_path_buf()), ("corpus metadata", root.join(METADATA_FILE))]
}

/// Output directory that is deleted on drop unless the command committed it.
struct Output {
    dir: PathBuf,
    committed: bool,
}

impl Output {
    fn create(dir: &Path, force: bool) -> Result<Self> {
        if dir.exists() {
            if !force {
                return Err(PipelineError::Exists(dir.display().to_string()));
            }
            fs::remove_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            committed: false,
        })
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        Ok(path)
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Output {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

/// Sorted identities split into (train, test): the last `test` of them are
/// held out. With `test == 0` both halves are the full list.
pub fn split_identities(identities: &[String], test: usize) -> Result<(Vec<String>, Vec<String>)> {
    let mut ids = identities.to_vec();
    ids.sort();
    if test == 0 {
        return Ok((ids.clone(), ids));
    }
    if test >= ids.len() {
        return Err(PipelineError::Invalid(format!(
            "test_identities = {test} leaves no training identity out of {}",
            ids.len()
        )));
    }
    let held = ids.split_off(ids.len() - test);
    Ok((ids, held))
}

/// Training identities minus the validation fold, and the validation fold.
pub fn validation_split(cfg: &RunConfig, train: &[String]) -> Result<(Vec<String>, Option<Vec<String>>)> {
    let d = &cfg.dataset;
    if d.folds < 2 {
        return Ok((train.to_vec(), None));
    }
    if d.val_fold >= d.folds {
        return Err(PipelineError::Invalid(format!("val_fold {} outside 0..{}", d.val_fold, d.folds)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "folds"));
    let (fit, val) = evaluation::kfold_split(train, d.folds, &mut rng)?.swap_remove(d.val_fold);
    let mut fit = fit;
    fit.sort();
    let mut val = val;
    val.sort();
    Ok((fit, Some(val)))
}

pub fn model_config(cfg: &RunConfig, num_identities: usize) -> FusionModelConfig {
    FusionModelConfig {
        num_identities,
        ..cfg.model.clone()
    }
}

pub fn init_model(cfg: &RunConfig, num_identities: usize) -> Result<FusionModel<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init"));
    Ok(FusionModel::new(model_config(cfg, num_identities), &mut rng)?)
}

pub fn gen_synthetic(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    synthetic::gen_synthetic(&cfg.synthetic, cfg.seed, out, force)?;
    Ok(())
}

/// Materializes the configured protocol over every pair of the corpus.
pub fn build_benchmark(cfg: &RunConfig, out: &Path, force: bool) -> Result<usize> {
    let root = &cfg.dataset.root;
    let [a, b] = corpus_inputs(root);
    require(&[(a.0, &a.1), (b.0, &b.1)])?;
    let Protocol::Corrupted(protocol) = cfg.protocol else {
        return Err(PipelineError::Invalid("build-benchmark needs a corrupted protocol (ucd, ccd or ccdx:p)".into()));
    };
    let corpus = Corpus::scan(root)?;
    let manifest = BenchmarkManifest::for_corpus(protocol, cfg.seed, &corpus);
    if out.exists() {
        if !force {
            return Err(PipelineError::Exists(out.display().to_string()));
        }
        fs::remove_dir_all(out).map_err(|e| io(out, e))?;
    }
    Ok(benchmark::materialize(&manifest, &corpus, out)?)
}

/// Trains on the training split and writes the checkpoint and the epoch log.
pub fn train(cfg: &RunConfig, out: &Path, force: bool) -> Result<TrainOutcome> {
    let root = &cfg.dataset.root;
    let [a, b] = corpus_inputs(root);
    require(&[(a.0, &a.1), (b.0, &b.1)])?;
    let corpus = Corpus::scan(root)?;
    let (train_ids, _) = split_identities(&corpus.identities, cfg.dataset.test_identities)?;
    let (fit_ids, val_ids) = validation_split(cfg, &train_ids)?;
    let tc = cfg.train_config();
    tc.validate()?;
    let mut model = init_model(cfg, fit_ids.len())?;
    let output = Output::create(out, force)?;
    let fit = corpus.load(Some(&fit_ids))?;
    let val = val_ids.map(|ids| corpus.load(Some(&ids))).transpose()?;
    let outcome = training::train(&mut model, &fit, val.as_ref(), &tc, derive_seed(cfg.seed, "train"))?;
    output.write(CHECKPOINT_FILE, checkpoint::to_json(&model)?)?;
    output.write(TRAIN_LOG_FILE, training::log_csv(&outcome.log))?;
    output.commit();
    Ok(outcome)
}

/// The test split of `corpus` under the requested protocol. A corpus built
/// by `build-benchmark` carries its own protocol; a clean corpus is
/// corrupted in memory when the config asks for a protocol.
pub fn test_set(cfg: &RunConfig, corpus_root: &Path) -> Result<(PairSet, String)> {
    let corpus = Corpus::scan(corpus_root)?;
    let (_, test_ids) = split_identities(&corpus.identities, cfg.dataset.test_identities)?;
    let mut set = corpus.load(Some(&test_ids))?;
    let manifest_path = corpus_root.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let manifest = BenchmarkManifest::load(&manifest_path)?;
        if let Protocol::Corrupted(p) = cfg.protocol {
            if p != manifest.protocol {
                return Err(PipelineError::Invalid(format!(
                    "requested protocol {p} but {} was built with {}",
                    corpus_root.display(),
                    manifest.protocol
                )));
            }
        }
        return Ok((set, manifest.protocol.to_string()));
    }
    match cfg.protocol {
        Protocol::Clean => Ok((set, Protocol::Clean.to_string())),
        Protocol::Corrupted(p) => {
            let manifest = BenchmarkManifest::build(p, cfg.seed, "memory", &set.pair_ids);
            for (k, plan) in manifest.plans.iter().enumerate() {
                set.visible[k] = corrupt(plan, &set.visible[k])?;
                set.infrared[k] = corrupt(plan, &set.infrared[k])?;
            }
            Ok((set, p.to_string()))
        }
    }
}

/// Evaluates a checkpoint (or, without one, a freshly initialized model) on
/// the test split and writes the summary and the per-query table.
pub fn evaluate(cfg: &RunConfig, checkpoint_path: Option<&Path>, corpus: Option<&Path>, out: &Path, force: bool) -> Result<Summary> {
    let root = corpus.unwrap_or(&cfg.dataset.root);
    let [a, b] = corpus_inputs(root);
    let mut inputs = vec![(a.0, a.1), (b.0, b.1)];
    if let Some(c) = checkpoint_path {
        inputs.push(("checkpoint", c.to_path_buf()));
    }
    require(&inputs.iter().map(|(w, p)| (*w, p.as_path())).collect::<Vec<_>>())?;
    let model = match checkpoint_path {
        Some(p) => checkpoint::load::<f32>(p)?,
        None => init_model(cfg, 1)?,
    };
    let (set, protocol) = test_set(cfg, root)?;
    let tc = cfg.train_config();
    let aug = crate::augment::AugmentConfig {
        target_hw: model.config.backbone.input_hw,
        ..tc.augment
    };
    let output = Output::create(out, force)?;
    let looq = training::evaluate(&model, &set, &aug, tc.eval_batch)?;
    let summary = Summary::new(&protocol, &cfg.label(), looq.metrics);
    output.write(SUMMARY_FILE, summary.to_json())?;
    output.write(QUERIES_FILE, looq.query_csv(&set.identities))?;
    output.commit();
    Ok(summary)
}

/// Aggregates summaries into the comparison table and chart.
pub fn report(summaries: &[PathBuf], out: &Path, force: bool) -> Result<Vec<Summary>> {
    if summaries.is_empty() {
        return Err(PipelineError::Invalid("report needs at least one summary".into()));
    }
    require(&summaries.iter().map(|p| ("summary", p.as_path())).collect::<Vec<_>>())?;
    let rows = summaries.iter().map(|p| Summary::load(p)).collect::<std::result::Result<Vec<_>, _>>()?;
    let output = Output::create(out, force)?;
    output.write(REPORT_CSV_FILE, report::report_csv(&rows))?;
    let png = output.dir.join(REPORT_PNG_FILE);
    report::report_chart(&rows).save(&png).map_err(|e| io(&png, e))?;
    output.commit();
    Ok(rows)
}

#[cfg(test)]
mod tests;

//! Corrupted evaluation sets: per-pair corruption plans, the manifest that
//! records them, and materialization onto disk.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::corruptions::{self, constants, CorruptionError, CorruptionGroup, CorruptionKind, ImageBuf, Modality, Severity};
use crate::dataset::{Corpus, PairRecord, METADATA_FILE};

pub const MANIFEST_HEADER: &str = "# mmreid-benchmark-manifest v1";
pub const MANIFEST_FILE: &str = "manifest.txt";
const HEADER_KEYS: [&str; 4] = ["protocol", "seed", "constants", "source"];

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("protocol {0:?}: expected ucd, ccd or ccdx[:p] with p in [0, 1]")]
    Protocol(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("{} source pair(s) missing from the clean corpus:\n{}", .0.len(), itemize(.0))]
    MissingSources(Vec<String>),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
}

fn itemize(items: &[String]) -> String {
    items.iter().map(|s| format!("  - {s}")).collect::<Vec<_>>().join("\n")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProtocolKind {
    Ucd,
    Ccd,
    /// CCD where a fraction `p` of the uncorrelated draws leave one modality clean.
    Ccdx(f64),
}

impl ProtocolKind {
    pub const DEFAULT_CLEAN_FRACTION: f64 = 0.5;

    pub fn ccdx(p: f64) -> Result<Self, BenchmarkError> {
        if (0.0..=1.0).contains(&p) {
            Ok(Self::Ccdx(p))
        } else {
            Err(BenchmarkError::Protocol(format!("ccdx:{p}")))
        }
    }

    pub fn plan<R: Rng + ?Sized>(self, pair_id: &str, rng: &mut R) -> CorruptionPlan {
        match self {
            Self::Ucd => plan_ucd(pair_id, rng),
            Self::Ccd => plan_ccd(pair_id, rng),
            Self::Ccdx(p) => plan_ccdx(pair_id, p, rng),
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ucd => write!(f, "ucd"),
            Self::Ccd => write!(f, "ccd"),
            Self::Ccdx(p) => write!(f, "ccdx:{p}"),
        }
    }
}

impl FromStr for ProtocolKind {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "ucd" => Ok(Self::Ucd),
            "ccd" => Ok(Self::Ccd),
            "ccdx" | "ccd-x" => Ok(Self::Ccdx(Self::DEFAULT_CLEAN_FRACTION)),
            _ => {
                let p = lower
                    .strip_prefix("ccdx:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| BenchmarkError::Protocol(s.to_string()))?;
                Self::ccdx(p).map_err(|_| BenchmarkError::Protocol(s.to_string()))
            }
        }
    }
}

impl serde::Serialize for ProtocolKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ProtocolKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How the corruption drawn for V constrains the one applied to I under CCD.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Correlation {
    /// Same kind and same level.
    Equal,
    /// Same kind, independent level.
    SameKind,
    /// Same kind, infrared level at least the visible one.
    InfraredAtLeast,
    Uncorrelated,
}

pub fn correlation(kind: CorruptionKind) -> Correlation {
    use CorruptionKind::*;
    match kind {
        Fog | Frost | Snow | Rain => Correlation::Equal,
        Spatter | DefocusBlur | GaussianBlur | GlassBlur | ZoomBlur => Correlation::SameKind,
        MotionBlur => Correlation::InfraredAtLeast,
        _ => Correlation::Uncorrelated,
    }
}

/// Uncorrelated kinds that can be applied to infrared images.
pub fn infrared_uncorrelated() -> Vec<CorruptionKind> {
    CorruptionKind::applicable(Modality::Infrared)
        .into_iter()
        .filter(|&k| correlation(k) == Correlation::Uncorrelated)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionPlan {
    pub pair_id: String,
    pub visible: Option<(CorruptionKind, Severity)>,
    pub infrared: Option<(CorruptionKind, Severity)>,
    pub protocol: ProtocolKind,
    /// Root of the per-pair corruption randomness.
    pub seed: u64,
}

impl CorruptionPlan {
    pub fn v_kind(&self) -> Option<CorruptionKind> {
        self.visible.map(|(k, _)| k)
    }

    pub fn i_kind(&self) -> Option<CorruptionKind> {
        self.infrared.map(|(k, _)| k)
    }

    pub fn get(&self, modality: Modality) -> Option<(CorruptionKind, Severity)> {
        match modality {
            Modality::Visible => self.visible,
            Modality::Infrared => self.infrared,
        }
    }

    /// Whether both modalities draw their pattern from one shared stream.
    pub fn shares_pattern(&self) -> bool {
        self.protocol != ProtocolKind::Ucd
            && matches!((self.visible, self.infrared), (Some((v, _)), Some((i, _)))
                if v == i && v.group() == CorruptionGroup::Weather)
    }

    pub fn corruption_seed(&self, modality: Modality) -> u64 {
        let label = if self.shares_pattern() { "shared" } else { modality.tag() };
        derive_seed(self.seed, label)
    }

    /// Checks the correlation rules of the plan's protocol.
    pub fn validate(&self) -> Result<(), String> {
        if self.i_kind() == Some(CorruptionKind::Brightness) {
            return Err("brightness assigned to infrared".into());
        }
        let (v, i) = match (self.visible, self.infrared, self.protocol) {
            (Some(v), Some(i), _) => (v, i),
            (None, None, _) => return Err("both modalities clean".into()),
            (Some(v), None, ProtocolKind::Ccdx(_)) | (None, Some(v), ProtocolKind::Ccdx(_)) => {
                return if correlation(v.0) == Correlation::Uncorrelated {
                    Ok(())
                } else {
                    Err(format!("clean modality next to correlated {}", v.0))
                };
            }
            _ => return Err(format!("clean modality under {}", self.protocol)),
        };
        if self.protocol == ProtocolKind::Ucd {
            return Ok(());
        }
        let ok = match correlation(v.0) {
            Correlation::Equal => i == v,
            Correlation::SameKind => i.0 == v.0,
            Correlation::InfraredAtLeast => i.0 == v.0 && i.1 >= v.1,
            Correlation::Uncorrelated => correlation(i.0) == Correlation::Uncorrelated && i.0 != v.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("{} {} paired with {} {}", v.0, v.1, i.0, i.1))
        }
    }
}

fn severity<R: Rng + ?Sized>(rng: &mut R, from: u8) -> Severity {
    Severity::new(rng.random_range(from..=5)).expect("level in range")
}

fn pick<R: Rng + ?Sized>(kinds: &[CorruptionKind], rng: &mut R) -> CorruptionKind {
    *kinds.choose(rng).expect("non-empty kind list")
}

/// Independent uniform draws of kind and level for each modality.
pub fn plan_ucd<R: Rng + ?Sized>(pair_id: &str, rng: &mut R) -> CorruptionPlan {
    let v = pick(&CorruptionKind::ALL, rng);
    let v_level = severity(rng, 1);
    let i = pick(&CorruptionKind::applicable(Modality::Infrared), rng);
    let i_level = severity(rng, 1);
    CorruptionPlan {
        pair_id: pair_id.to_string(),
        visible: Some((v, v_level)),
        infrared: Some((i, i_level)),
        protocol: ProtocolKind::Ucd,
        seed: rng.random(),
    }
}

fn correlated_draw<R: Rng + ?Sized>(rng: &mut R) -> ((CorruptionKind, Severity), (CorruptionKind, Severity)) {
    let v = pick(&CorruptionKind::ALL, rng);
    let v_level = severity(rng, 1);
    let i = match correlation(v) {
        Correlation::Equal => (v, v_level),
        Correlation::SameKind => (v, severity(rng, 1)),
        Correlation::InfraredAtLeast => (v, severity(rng, v_level.level())),
        Correlation::Uncorrelated => {
            let pool: Vec<_> = infrared_uncorrelated().into_iter().filter(|&k| k != v).collect();
            (pick(&pool, rng), severity(rng, 1))
        }
    };
    ((v, v_level), i)
}

pub fn plan_ccd<R: Rng + ?Sized>(pair_id: &str, rng: &mut R) -> CorruptionPlan {
    let (v, i) = correlated_draw(rng);
    CorruptionPlan {
        pair_id: pair_id.to_string(),
        visible: Some(v),
        infrared: Some(i),
        protocol: ProtocolKind::Ccd,
        seed: rng.random(),
    }
}

pub fn plan_ccdx<R: Rng + ?Sized>(pair_id: &str, p: f64, rng: &mut R) -> CorruptionPlan {
    let (v, i) = correlated_draw(rng);
    let seed = rng.random();
    let mut plan = CorruptionPlan {
        pair_id: pair_id.to_string(),
        visible: Some(v),
        infrared: Some(i),
        protocol: ProtocolKind::Ccdx(p),
        seed,
    };
    if correlation(v.0) == Correlation::Uncorrelated && rng.random_bool(p) {
        if rng.random_bool(0.5) {
            plan.visible = None;
        } else {
            plan.infrared = None;
        }
    }
    plan
}

/// Mixes a seed with a label into a new 64-bit seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkManifest {
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub source: String,
    pub constants: String,
    pub plans: Vec<CorruptionPlan>,
}

impl BenchmarkManifest {
    /// Plans every pair with a stream derived from the global seed and the
    /// pair id, so a plan does not depend on the other pairs.
    pub fn build(protocol: ProtocolKind, seed: u64, source: &str, pair_ids: &[String]) -> Self {
        let plans = pair_ids
            .iter()
            .map(|id| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id));
                protocol.plan(id, &mut rng)
            })
            .collect();
        Self {
            protocol,
            seed,
            source: source.to_string(),
            constants: constants::version_tag(),
            plans,
        }
    }

    pub fn for_corpus(protocol: ProtocolKind, seed: u64, corpus: &Corpus) -> Self {
        let ids: Vec<String> = corpus.pairs.iter().map(PairRecord::pair_id).collect();
        let source = corpus
            .meta
            .as_ref()
            .map(|m| m.name.clone())
            .unwrap_or_else(|| corpus.root.display().to_string());
        Self::build(protocol, seed, &source, &ids)
    }

    pub fn serialize(&self) -> String {
        let mut out = format!(
            "{MANIFEST_HEADER}\nprotocol={}\nseed={}\nconstants={}\nsource={}\n",
            self.protocol, self.seed, self.constants, self.source
        );
        let field = |c: Option<(CorruptionKind, Severity)>| match c {
            Some((k, s)) => (k.name().to_string(), s.to_string()),
            None => ("none".into(), "none".into()),
        };
        for p in &self.plans {
            let (vk, vl) = field(p.visible);
            let (ik, il) = field(p.infrared);
            out.push_str(&format!("{} {vk} {vl} {ik} {il} {}\n", p.pair_id, p.seed));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, BenchmarkError> {
        let err = |line: usize, msg: String| BenchmarkError::Manifest { line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => return Err(err(1, format!("expected {MANIFEST_HEADER:?}"))),
        }
        let mut header: HashMap<&str, &str> = HashMap::new();
        let mut plans = Vec::new();
        let mut protocol = None;
        for (n, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some((k, v)) = line.split_once('=').filter(|(k, _)| plans.is_empty() && HEADER_KEYS.contains(k)) {
                if k == "protocol" {
                    protocol = Some(v.parse::<ProtocolKind>().map_err(|e| err(n + 1, e.to_string()))?);
                }
                header.insert(k, v);
                continue;
            }
            let protocol = protocol.ok_or_else(|| err(n + 1, "plan before protocol line".into()))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(err(n + 1, format!("expected 6 fields, got {}", f.len())));
            }
            let side = |k: &str, l: &str| -> Result<Option<(CorruptionKind, Severity)>, BenchmarkError> {
                match (k, l) {
                    ("none", "none") => Ok(None),
                    _ => {
                        let kind = k.parse().map_err(|e: CorruptionError| err(n + 1, e.to_string()))?;
                        let level = l
                            .parse::<u8>()
                            .ok()
                            .and_then(|l| Severity::new(l).ok())
                            .ok_or_else(|| err(n + 1, format!("bad severity {l:?}")))?;
                        Ok(Some((kind, level)))
                    }
                }
            };
            let plan = CorruptionPlan {
                pair_id: f[0].to_string(),
                visible: side(f[1], f[2])?,
                infrared: side(f[3], f[4])?,
                protocol,
                seed: f[5].parse().map_err(|_| err(n + 1, format!("bad seed {:?}", f[5])))?,
            };
            plan.validate().map_err(|m| err(n + 1, m))?;
            plans.push(plan);
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| err(0, format!("missing {k}= header line")));
        Ok(Self {
            protocol: protocol.ok_or_else(|| err(0, "missing protocol= header line".into()))?,
            seed: get("seed")?.parse().map_err(|_| err(0, "bad seed header".into()))?,
            constants: get("constants")?.to_string(),
            source: get("source")?.to_string(),
            plans,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchmarkError> {
        fs::write(path, self.serialize()).map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, BenchmarkError> {
        Self::parse(&fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }
}

fn io_error(path: &Path, e: impl fmt::Display) -> BenchmarkError {
    BenchmarkError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Applies one side of a plan; a clean side returns the image unchanged.
pub fn corrupt(plan: &CorruptionPlan, image: &ImageBuf) -> Result<ImageBuf, CorruptionError> {
    let modality = image.modality();
    match plan.get(modality) {
        None => Ok(image.clone()),
        Some((kind, level)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.corruption_seed(modality));
            corruptions::apply(kind, level, image, &mut rng)
        }
    }
}

/// Writes the corrupted corpus under `out` in the same layout as the clean
/// one, plus the manifest and the clean corpus metadata. A failed run leaves
/// no output behind when `out` did not exist before.
pub fn materialize(manifest: &BenchmarkManifest, corpus: &Corpus, out: &Path) -> Result<usize, BenchmarkError> {
    let index: HashMap<String, &PairRecord> = corpus.pairs.iter().map(|p| (p.pair_id(), p)).collect();
    let missing: Vec<String> = manifest
        .plans
        .iter()
        .filter(|p| !index.contains_key(&p.pair_id))
        .map(|p| p.pair_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(BenchmarkError::MissingSources(missing));
    }
    let existed = out.exists();
    let result = write_tree(manifest, corpus, &index, out);
    if result.is_err() && !existed {
        let _ = fs::remove_dir_all(out);
    }
    result
}

fn write_tree(
    manifest: &BenchmarkManifest,
    corpus: &Corpus,
    index: &HashMap<String, &PairRecord>,
    out: &Path,
) -> Result<usize, BenchmarkError> {
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    let meta = corpus.root.join(METADATA_FILE);
    if meta.exists() {
        let dest = out.join(METADATA_FILE);
        fs::copy(&meta, &dest).map_err(|e| io_error(&dest, e))?;
    }
    manifest.plans.par_iter().try_for_each(|plan| {
        let record = index[&plan.pair_id];
        for (modality, src) in [(Modality::Visible, &record.visible), (Modality::Infrared, &record.infrared)] {
            let dir = out.join(&record.identity).join(modality.tag());
            fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            let dest = dir.join(format!("{}.png", record.index));
            if plan.get(modality).is_none() && modality == Modality::Visible {
                fs::copy(src, &dest).map_err(|e| io_error(&dest, e))?;
                continue;
            }
            let image = ImageBuf::load(src, modality).map_err(CorruptionError::from)?;
            let image = corrupt(plan, &image)?;
            image.save(&dest).map_err(CorruptionError::from)?;
        }
        Ok::<_, BenchmarkError>(())
    })?;
    Ok(manifest.plans.len())
}

#[cfg(test)]
mod tests;

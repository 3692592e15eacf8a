//! Paired V-I corpora on disk: `<root>/<identity>/<V|I>/<idx>.png` plus an
//! optional `corpus.json` metadata file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corruptions::{ImageBuf, ImageError, Modality};

pub const METADATA_FILE: &str = "corpus.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}: corpus metadata: {1}")]
    Metadata(String, serde_json::Error),
    #[error("corpus {0} contains no image pairs")]
    Empty(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CameraSetting {
    /// Co-located cameras: both modalities see the same pose.
    CL,
    /// Not co-located: poses differ between modalities.
    NCL,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub name: String,
    pub camera: Option<CameraSetting>,
    /// Free-form per-identity records (appearance parameters for synthetic
    /// corpora).
    #[serde(default)]
    pub identities: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub identity: String,
    pub index: String,
    pub visible: PathBuf,
    pub infrared: PathBuf,
}

impl PairRecord {
    pub fn pair_id(&self) -> String {
        format!("{}/{}", self.identity, self.index)
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub meta: Option<CorpusMeta>,
    /// Sorted identity names; a pair's label is the position of its identity.
    pub identities: Vec<String>,
    pub pairs: Vec<PairRecord>,
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>, DatasetError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort_by(|a, b| natural_key(&a.0).cmp(&natural_key(&b.0)));
    Ok(out)
}

fn natural_key(s: &str) -> (u64, String) {
    (s.parse().unwrap_or(u64::MAX), s.to_string())
}

impl Corpus {
    /// Reads the directory layout. Visible and infrared images of one
    /// identity are paired in sorted file order.
    pub fn scan(root: &Path) -> Result<Self, DatasetError> {
        let meta_path = root.join(METADATA_FILE);
        let meta = if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| DatasetError::Metadata(meta_path.display().to_string(), e))?,
            )
        } else {
            None
        };
        let mut identities = Vec::new();
        for entry in fs::read_dir(root).map_err(io_err(root))? {
            let path = entry.map_err(io_err(root))?.path();
            if path.is_dir() {
                if let Some(name) = path.file_name().and_then(|s| s.to_str()) {
                    identities.push(name.to_string());
                }
            }
        }
        identities.sort();
        let mut pairs = Vec::new();
        let mut kept = Vec::new();
        for id in identities {
            let v = png_stems(&root.join(&id).join(Modality::Visible.tag()))?;
            let i = png_stems(&root.join(&id).join(Modality::Infrared.tag()))?;
            if v.is_empty() || i.is_empty() {
                continue;
            }
            for ((stem, vp), (_, ip)) in v.into_iter().zip(i) {
                pairs.push(PairRecord {
                    identity: id.clone(),
                    index: stem,
                    visible: vp,
                    infrared: ip,
                });
            }
            kept.push(id);
        }
        if pairs.is_empty() {
            return Err(DatasetError::Empty(root.display().to_string()));
        }
        Ok(Self {
            root: root.to_path_buf(),
            meta,
            identities: kept,
            pairs,
        })
    }

    pub fn label_of(&self, identity: &str) -> Option<usize> {
        self.identities.binary_search_by(|s| s.as_str().cmp(identity)).ok()
    }

    pub fn find(&self, pair_id: &str) -> Option<&PairRecord> {
        self.pairs.iter().find(|p| p.pair_id() == pair_id)
    }

    /// Loads every pair into memory, keeping only the given identities.
    pub fn load(&self, identities: Option<&[String]>) -> Result<PairSet, DatasetError> {
        let keep = |id: &String| identities.is_none_or(|ids| ids.contains(id));
        let names: Vec<String> = self.identities.iter().filter(|i| keep(i)).cloned().collect();
        let mut set = PairSet {
            identities: names.clone(),
            ..PairSet::default()
        };
        for p in self.pairs.iter().filter(|p| keep(&p.identity)) {
            set.visible.push(ImageBuf::load(&p.visible, Modality::Visible)?);
            set.infrared.push(ImageBuf::load(&p.infrared, Modality::Infrared)?);
            set.labels
                .push(names.binary_search(&p.identity).expect("kept identity"));
            set.pair_ids.push(p.pair_id());
        }
        Ok(set)
    }
}

/// In-memory paired images with dense labels `0..identities.len()`.
#[derive(Clone, Debug, Default)]
pub struct PairSet {
    pub identities: Vec<String>,
    pub pair_ids: Vec<String>,
    pub visible: Vec<ImageBuf>,
    pub infrared: Vec<ImageBuf>,
    pub labels: Vec<usize>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Indices of the pairs of every label.
    pub fn by_label(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.identities.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// The pairs whose labels are in `labels`, relabelled densely.
    pub fn select_labels(&self, labels: &[usize]) -> PairSet {
        let mut sorted = labels.to_vec();
        sorted.sort_unstable();
        let mut out = PairSet {
            identities: sorted.iter().map(|&l| self.identities[l].clone()).collect(),
            ..PairSet::default()
        };
        for i in 0..self.len() {
            if let Ok(new) = sorted.binary_search(&self.labels[i]) {
                out.pair_ids.push(self.pair_ids[i].clone());
                out.visible.push(self.visible[i].clone());
                out.infrared.push(self.infrared[i].clone());
                out.labels.push(new);
            }
        }
        out
    }
}

//! Two-stream backbones and the fusion architectures built on them.

pub mod checkpoint;
pub mod fusion;
pub mod layers;
pub mod params;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{add, concat_channels, global_avg_pool, Real, Tape, Tensor, TensorError, Var};
use fusion::{fuse_vectors, man_fuse, ManModule, MmtmModule, MsafModule};
use layers::{Backbone, Dense};
pub use params::{Bound, Mode, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("model input: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    UnimodalV,
    UnimodalI,
    BaselineSum,
    BaselineConcat,
    Man,
    Mmtm,
    Msaf,
    Mmsf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::UnimodalV,
        ModelKind::UnimodalI,
        ModelKind::BaselineSum,
        ModelKind::BaselineConcat,
        ModelKind::Man,
        ModelKind::Mmtm,
        ModelKind::Msaf,
        ModelKind::Mmsf,
    ];

    pub fn is_multimodal(self) -> bool {
        !matches!(self, ModelKind::UnimodalV | ModelKind::UnimodalI)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::UnimodalV => "unimodal_v",
            ModelKind::UnimodalI => "unimodal_i",
            ModelKind::BaselineSum => "baseline_sum",
            ModelKind::BaselineConcat => "baseline_concat",
            ModelKind::Man => "man",
            ModelKind::Mmtm => "mmtm",
            ModelKind::Msaf => "msaf",
            ModelKind::Mmsf => "mmsf",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| ModelError::Config(format!("unknown model kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorFusion {
    Sum,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub block_channels: Vec<usize>,
    /// `(height, width)` of the input images.
    pub input_hw: (usize, usize),
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            block_channels: vec![16, 32, 64, 128, 256],
            input_hw: (288, 144),
        }
    }
}

impl BackboneConfig {
    pub const BLOCKS: usize = 5;

    pub fn embedding_dim(&self) -> usize {
        *self.block_channels.last().unwrap_or(&0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionModelConfig {
    pub kind: ModelKind,
    pub vector_fusion: VectorFusion,
    pub mmsf_l: usize,
    pub msaf_splits: usize,
    pub man_hidden: usize,
    pub num_identities: usize,
    pub backbone: BackboneConfig,
}

impl Default for FusionModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::BaselineConcat,
            vector_fusion: VectorFusion::Concat,
            mmsf_l: 4,
            msaf_splits: 4,
            man_hidden: 64,
            num_identities: 1,
            backbone: BackboneConfig::default(),
        }
    }
}

impl FusionModelConfig {
    pub fn new(kind: ModelKind, num_identities: usize) -> Self {
        Self {
            kind,
            num_identities,
            ..Self::default()
        }
    }

    /// Fusion of pooled vectors for the kinds that fuse vectors.
    pub fn effective_fusion(&self) -> VectorFusion {
        match self.kind {
            ModelKind::BaselineSum => VectorFusion::Sum,
            ModelKind::BaselineConcat => VectorFusion::Concat,
            _ => self.vector_fusion,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        let d = self.backbone.embedding_dim();
        match self.kind {
            ModelKind::UnimodalV | ModelKind::UnimodalI => d,
            ModelKind::Mmsf => 3 * d,
            _ => match self.effective_fusion() {
                VectorFusion::Sum => d,
                VectorFusion::Concat => 2 * d,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ch = &self.backbone.block_channels;
        if ch.len() != BackboneConfig::BLOCKS || ch.contains(&0) {
            return Err(ModelError::Config(format!(
                "block_channels must be {} positive integers, got {ch:?}",
                BackboneConfig::BLOCKS
            )));
        }
        let (h, w) = self.backbone.input_hw;
        if h == 0 || w == 0 {
            return Err(ModelError::Config("input_hw must be positive".into()));
        }
        if self.num_identities == 0 {
            return Err(ModelError::Config("num_identities must be positive".into()));
        }
        match self.kind {
            ModelKind::Mmsf if self.mmsf_l >= BackboneConfig::BLOCKS => {
                Err(ModelError::Config(format!(
                    "mmsf_l must be in 0..=4, got {}",
                    self.mmsf_l
                )))
            }
            ModelKind::Msaf => {
                let n = self.msaf_splits;
                match ch[3..].iter().find(|&&c| n == 0 || c % n != 0) {
                    Some(c) => Err(ModelError::Config(format!(
                        "MSAF cannot split {c} channels into {n} groups"
                    ))),
                    None => Ok(()),
                }
            }
            ModelKind::Man if self.man_hidden == 0 => {
                Err(ModelError::Config("man_hidden must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Visible,
    Infrared,
}

#[derive(Clone, Debug)]
enum Attention {
    None,
    Man(ManModule),
    Mmtm([MmtmModule; 2]),
    Msaf([MsafModule; 2]),
}

#[derive(Clone, Debug)]
enum Arch {
    Unimodal {
        modality: Modality,
        stream: Backbone,
        head: Dense,
    },
    TwoStream {
        visible: Backbone,
        infrared: Backbone,
        attention: Attention,
        head: Dense,
    },
    Mmsf {
        visible: Backbone,
        infrared: Backbone,
        middle: Backbone,
        heads: [Dense; 3],
    },
}

/// Forward products of a fusion model.
pub struct ModelOutput<'t, T: Real> {
    /// Matching embedding `[N, E]`.
    pub embedding: Var<'t, T>,
    /// Classifier logits; MMSF emits one head per stream (V, middle, I).
    pub logits: Vec<Var<'t, T>>,
    /// Pooled per-stream features in stream order.
    pub features: Vec<Var<'t, T>>,
    /// MAN soft weights `[N, 2]`.
    pub attention_weights: Option<Var<'t, T>>,
}

/// A configured network together with its parameters.
#[derive(Clone, Debug)]
pub struct FusionModel<T: Real> {
    pub config: FusionModelConfig,
    pub store: ParamStore<T>,
    arch: Arch,
}

/// Block after which MMTM/MSAF modules refactor the streams.
pub const ATTENTION_BLOCKS: [usize; 2] = [3, 4];

impl<T: Real> FusionModel<T> {
    pub fn new(config: FusionModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let ch = config.backbone.block_channels.clone();
        let d = config.backbone.embedding_dim();
        let ids = config.num_identities;
        let e = config.embedding_dim();
        let arch = match config.kind {
            ModelKind::UnimodalV | ModelKind::UnimodalI => {
                let modality = if config.kind == ModelKind::UnimodalV {
                    Modality::Visible
                } else {
                    Modality::Infrared
                };
                Arch::Unimodal {
                    modality,
                    stream: Backbone::new(&mut store, "stream", &ch, 0, rng),
                    head: Dense::new(&mut store, "head", d, ids, rng),
                }
            }
            ModelKind::Mmsf => {
                let visible = Backbone::new(&mut store, "visible", &ch, 0, rng);
                let infrared = Backbone::new(&mut store, "infrared", &ch, 0, rng);
                let middle = Backbone::new(&mut store, "middle", &ch, config.mmsf_l, rng);
                let heads = [
                    Dense::new(&mut store, "head_v", d, ids, rng),
                    Dense::new(&mut store, "head_m", d, ids, rng),
                    Dense::new(&mut store, "head_i", d, ids, rng),
                ];
                Arch::Mmsf {
                    visible,
                    infrared,
                    middle,
                    heads,
                }
            }
            kind => {
                let visible = Backbone::new(&mut store, "visible", &ch, 0, rng);
                let infrared = Backbone::new(&mut store, "infrared", &ch, 0, rng);
                let attention = match kind {
                    ModelKind::Man => {
                        Attention::Man(ManModule::new(&mut store, d, config.man_hidden, rng))
                    }
                    ModelKind::Mmtm => Attention::Mmtm(ATTENTION_BLOCKS.map(|l| {
                        MmtmModule::new(&mut store, &format!("mmtm{l}"), ch[l], rng)
                    })),
                    ModelKind::Msaf => {
                        let [a, b] = ATTENTION_BLOCKS;
                        Attention::Msaf([
                            MsafModule::new(&mut store, &format!("msaf{a}"), ch[a], config.msaf_splits, rng)?,
                            MsafModule::new(&mut store, &format!("msaf{b}"), ch[b], config.msaf_splits, rng)?,
                        ])
                    }
                    _ => Attention::None,
                };
                Arch::TwoStream {
                    visible,
                    infrared,
                    attention,
                    head: Dense::new(&mut store, "head", e, ids, rng),
                }
            }
        };
        Ok(Self {
            config,
            store,
            arch,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, mode: Mode) -> Bound<'t, T> {
        Bound::new(tape, &self.store, mode)
    }

    fn check_input(&self, x: &Tensor<T>, what: &str) -> Result<(), ModelError> {
        match x.shape() {
            [_, 3, h, w] if *h > 0 && *w > 0 => Ok(()),
            s => Err(ModelError::Input(format!(
                "{what} batch must be [N, 3, H, W], got {s:?}"
            ))),
        }
    }

    fn require<'a>(
        &self,
        x: Option<&'a Tensor<T>>,
        what: &str,
    ) -> Result<&'a Tensor<T>, ModelError> {
        let x = x.ok_or_else(|| {
            ModelError::Input(format!("{} requires the {what} modality", self.kind()))
        })?;
        self.check_input(x, what)?;
        Ok(x)
    }

    /// Runs the configured architecture on a paired batch.
    pub fn forward<'t>(
        &self,
        b: &Bound<'t, T>,
        visible: Option<&Tensor<T>>,
        infrared: Option<&Tensor<T>>,
    ) -> Result<ModelOutput<'t, T>, ModelError> {
        let tape = b.tape();
        let blocks = BackboneConfig::BLOCKS;
        match &self.arch {
            Arch::Unimodal {
                modality,
                stream,
                head,
            } => {
                let x = match modality {
                    Modality::Visible => self.require(visible, "visible")?,
                    Modality::Infrared => self.require(infrared, "infrared")?,
                };
                let f = global_avg_pool(stream.run(b, tape.constant(x.clone()), 0, blocks)?)?;
                Ok(ModelOutput {
                    embedding: f,
                    logits: vec![head.forward(b, f)?],
                    features: vec![f],
                    attention_weights: None,
                })
            }
            Arch::TwoStream {
                visible: vs,
                infrared: is,
                attention,
                head,
            } => {
                let xv = self.require(visible, "visible")?;
                let xi = self.require(infrared, "infrared")?;
                if xv.shape() != xi.shape() {
                    return Err(ModelError::Input(format!(
                        "visible {:?} and infrared {:?} batches differ",
                        xv.shape(),
                        xi.shape()
                    )));
                }
                let mut fv = tape.constant(xv.clone());
                let mut fi = tape.constant(xi.clone());
                let mut done = 0;
                for (slot, &l) in ATTENTION_BLOCKS.iter().enumerate() {
                    fv = vs.run(b, fv, done, l + 1)?;
                    fi = is.run(b, fi, done, l + 1)?;
                    done = l + 1;
                    (fv, fi) = match attention {
                        Attention::Mmtm(m) => m[slot].forward(b, fv, fi)?,
                        Attention::Msaf(m) => m[slot].forward(b, fv, fi)?,
                        _ => (fv, fi),
                    };
                }
                fv = vs.run(b, fv, done, blocks)?;
                fi = is.run(b, fi, done, blocks)?;
                let (pv, pi) = (global_avg_pool(fv)?, global_avg_pool(fi)?);
                let fusion = self.config.effective_fusion();
                let (embedding, attention_weights) = match attention {
                    Attention::Man(m) => {
                        let (w, fused) = man_fuse(pv, pi, &m.vars(b), fusion)?;
                        (fused, Some(w))
                    }
                    _ => (fuse_vectors(pv, pi, fusion)?, None),
                };
                Ok(ModelOutput {
                    embedding,
                    logits: vec![head.forward(b, embedding)?],
                    features: vec![pv, pi],
                    attention_weights,
                })
            }
            Arch::Mmsf {
                visible: vs,
                infrared: is,
                middle,
                heads,
            } => {
                let xv = self.require(visible, "visible")?;
                let xi = self.require(infrared, "infrared")?;
                if xv.shape() != xi.shape() {
                    return Err(ModelError::Input(format!(
                        "visible {:?} and infrared {:?} batches differ",
                        xv.shape(),
                        xi.shape()
                    )));
                }
                let l = self.config.mmsf_l;
                let before_v = vs.run(b, tape.constant(xv.clone()), 0, l)?;
                let before_i = is.run(b, tape.constant(xi.clone()), 0, l)?;
                let fm = add(before_v, before_i)?;
                let pv = global_avg_pool(vs.run(b, before_v, l, blocks)?)?;
                let pi = global_avg_pool(is.run(b, before_i, l, blocks)?)?;
                let pm = global_avg_pool(middle.run(b, fm, l, blocks)?)?;
                let logits = vec![
                    heads[0].forward(b, pv)?,
                    heads[1].forward(b, pm)?,
                    heads[2].forward(b, pi)?,
                ];
                Ok(ModelOutput {
                    embedding: concat_channels(&[pv, pm, pi])?,
                    logits,
                    features: vec![pv, pm, pi],
                    attention_weights: None,
                })
            }
        }
    }

    /// Evaluation-mode embeddings for a batch.
    pub fn embed(
        &self,
        visible: Option<&Tensor<T>>,
        infrared: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>, ModelError> {
        let tape = Tape::inference();
        let b = self.bind(&tape, Mode::Eval);
        let out = self.forward(&b, visible, infrared)?;
        tape.check()?;
        let emb = out.embedding.value();
        Ok((*emb).clone())
    }

    /// Same architecture with parameters converted to another element type.
    pub fn cast<U: Real>(&self) -> FusionModel<U> {
        FusionModel {
            config: self.config.clone(),
            store: self.store.cast(),
            arch: self.arch.clone(),
        }
    }
}

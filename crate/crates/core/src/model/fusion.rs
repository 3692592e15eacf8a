//! Cross-modal fusion mechanisms.
//!
//! * [`man_fuse`]: soft attention over the two pooled modality vectors,
//!   `[s_v, s_i] = softmax(W2 tanh(W1 [f_v, f_i] + b1) + b2)`.
//! * [`mmtm_refactor`]: squeeze both feature maps, form a joint descriptor
//!   `J = W [gap(F_v); gap(F_i)] + b`, and excite each modality with
//!   `2 * sigmoid(W_m J + b_m)`.
//! * [`msaf_refactor`]: split channels into `n` groups, sum the groups and
//!   squeeze them per modality, build a shared descriptor from the sum of
//!   both, and gate every split with its own sigmoid excitation.

use rand::Rng;

use super::layers::{Dense, Norm};
use super::params::{Bound, ParamStore};
use super::{ModelError, VectorFusion};
use crate::tensor::{
    add, concat_channels, dense, global_avg_pool, mul_channels, narrow_channels, relu, reshape,
    scale, sigmoid, softmax_rows, tanh, Real, Result as TensorResult, Var,
};

/// Fuses two `[N, d]` vectors by element-wise sum or concatenation.
pub fn fuse_vectors<'t, T: Real>(
    a: Var<'t, T>,
    b: Var<'t, T>,
    fusion: VectorFusion,
) -> TensorResult<Var<'t, T>> {
    match fusion {
        VectorFusion::Sum => add(a, b),
        VectorFusion::Concat => concat_channels(&[a, b]),
    }
}

fn scale_rows<'t, T: Real>(x: Var<'t, T>, s: Var<'t, T>) -> TensorResult<Var<'t, T>> {
    let shape = x.shape();
    let rows = reshape(x, &[shape[0], 1, shape[1]])?;
    reshape(mul_channels(rows, s)?, &shape)
}

/// Weights of the modality attention network.
pub struct ManVars<'t, T: Real> {
    /// `[k, 2d]`
    pub w1: Var<'t, T>,
    /// `[k]`
    pub b1: Var<'t, T>,
    /// `[2, k]`
    pub w2: Var<'t, T>,
    /// `[2]`
    pub b2: Var<'t, T>,
}

/// Returns the `[N, 2]` soft weights `(s_v, s_i)` and the fused vector.
pub fn man_fuse<'t, T: Real>(
    f_v: Var<'t, T>,
    f_i: Var<'t, T>,
    vars: &ManVars<'t, T>,
    fusion: VectorFusion,
) -> Result<(Var<'t, T>, Var<'t, T>), ModelError> {
    let (sv, si) = (f_v.shape(), f_i.shape());
    if sv.len() != 2 || sv != si {
        return Err(ModelError::Config(format!(
            "MAN needs matching [N, d] vectors, got {sv:?} and {si:?}"
        )));
    }
    let joint = concat_channels(&[f_v, f_i])?;
    let hidden = tanh(dense(joint, vars.w1, vars.b1)?);
    let weights = softmax_rows(dense(hidden, vars.w2, vars.b2)?)?;
    let w_v = scale_rows(f_v, narrow_channels(weights, 0, 1)?)?;
    let w_i = scale_rows(f_i, narrow_channels(weights, 1, 1)?)?;
    Ok((weights, fuse_vectors(w_v, w_i, fusion)?))
}

pub struct MmtmVars<'t, T: Real> {
    /// `[C_J, 2C]`
    pub joint_w: Var<'t, T>,
    pub joint_b: Var<'t, T>,
    /// `[C, C_J]`
    pub gate_v_w: Var<'t, T>,
    pub gate_v_b: Var<'t, T>,
    pub gate_i_w: Var<'t, T>,
    pub gate_i_b: Var<'t, T>,
}

fn check_pair<T: Real>(what: &str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<(), ModelError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 4 || sa != sb {
        return Err(ModelError::Config(format!(
            "{what} needs matching [N, C, H, W] maps, got {sa:?} and {sb:?}"
        )));
    }
    Ok(())
}

/// Channel re-weighting of both maps from their joint squeeze descriptor.
pub fn mmtm_refactor<'t, T: Real>(
    f_v: Var<'t, T>,
    f_i: Var<'t, T>,
    vars: &MmtmVars<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>), ModelError> {
    check_pair("MMTM", &f_v, &f_i)?;
    let squeezed = concat_channels(&[global_avg_pool(f_v)?, global_avg_pool(f_i)?])?;
    let joint = dense(squeezed, vars.joint_w, vars.joint_b)?;
    let two = T::cst(2.0);
    let gate_v = scale(sigmoid(dense(joint, vars.gate_v_w, vars.gate_v_b)?), two);
    let gate_i = scale(sigmoid(dense(joint, vars.gate_i_w, vars.gate_i_b)?), two);
    Ok((mul_channels(f_v, gate_v)?, mul_channels(f_i, gate_i)?))
}

pub struct MsafVars<'t, T: Real> {
    /// `[C/n, C/n]`
    pub reduce_w: Var<'t, T>,
    pub reduce_b: Var<'t, T>,
    /// One `(weight [C/n, C/n], bias [C/n])` per split.
    pub gates_v: Vec<(Var<'t, T>, Var<'t, T>)>,
    pub gates_i: Vec<(Var<'t, T>, Var<'t, T>)>,
}

/// Split attention over `n` channel groups. `normalize` is applied to the
/// shared descriptor between its dense layer and the ReLU.
pub fn msaf_refactor<'t, T: Real>(
    f_v: Var<'t, T>,
    f_i: Var<'t, T>,
    splits: usize,
    vars: &MsafVars<'t, T>,
    normalize: impl FnOnce(Var<'t, T>) -> TensorResult<Var<'t, T>>,
) -> Result<(Var<'t, T>, Var<'t, T>), ModelError> {
    check_pair("MSAF", &f_v, &f_i)?;
    let c = f_v.shape()[1];
    if splits == 0 || c % splits != 0 {
        return Err(ModelError::Config(format!(
            "MSAF cannot split {c} channels into {splits} groups"
        )));
    }
    if vars.gates_v.len() != splits || vars.gates_i.len() != splits {
        return Err(ModelError::Config(format!(
            "MSAF has {} / {} gates for {splits} splits",
            vars.gates_v.len(),
            vars.gates_i.len()
        )));
    }
    let width = c / splits;
    let split = |x: Var<'t, T>| -> TensorResult<Vec<Var<'t, T>>> {
        (0..splits).map(|s| narrow_channels(x, s * width, width)).collect()
    };
    let descriptor = |parts: &[Var<'t, T>]| -> TensorResult<Var<'t, T>> {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = add(acc, p)?;
        }
        global_avg_pool(acc)
    };
    let parts_v = split(f_v)?;
    let parts_i = split(f_i)?;
    let shared = add(descriptor(&parts_v)?, descriptor(&parts_i)?)?;
    let shared = relu(normalize(dense(shared, vars.reduce_w, vars.reduce_b)?)?);
    let excite = |parts: &[Var<'t, T>], gates: &[(Var<'t, T>, Var<'t, T>)]| {
        let weighted = parts
            .iter()
            .zip(gates)
            .map(|(&p, &(w, b))| mul_channels(p, sigmoid(dense(shared, w, b)?)))
            .collect::<TensorResult<Vec<_>>>()?;
        concat_channels(&weighted)
    };
    Ok((excite(&parts_v, &vars.gates_v)?, excite(&parts_i, &vars.gates_i)?))
}

/// Learning-rate multiplier for the attention network.
pub const MAN_LR_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct ManModule {
    pub hidden: Dense,
    pub out: Dense,
}

impl ManModule {
    /// The output layer starts at zero, so training begins from equal
    /// weights `(0.5, 0.5)`.
    pub fn new<T: Real>(store: &mut ParamStore<T>, d: usize, k: usize, rng: &mut impl Rng) -> Self {
        let m = Self {
            hidden: Dense::new(store, "man.hidden", 2 * d, k, rng),
            out: Dense::zeros(store, "man.out", k, 2),
        };
        for id in [m.hidden.weight, m.hidden.bias, m.out.weight, m.out.bias] {
            store.param_mut(id).lr_scale = MAN_LR_SCALE;
        }
        m
    }

    pub fn vars<'t, T: Real>(&self, b: &Bound<'t, T>) -> ManVars<'t, T> {
        ManVars {
            w1: b.var(self.hidden.weight),
            b1: b.var(self.hidden.bias),
            w2: b.var(self.out.weight),
            b2: b.var(self.out.bias),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MmtmModule {
    pub joint: Dense,
    pub gate_v: Dense,
    pub gate_i: Dense,
}

impl MmtmModule {
    /// Joint width `C_J = 2C / 4`.
    pub fn joint_dim(channels: usize) -> usize {
        (2 * channels / 4).max(1)
    }

    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let cj = Self::joint_dim(channels);
        Self {
            joint: Dense::new(store, &format!("{name}.joint"), 2 * channels, cj, rng),
            gate_v: Dense::new(store, &format!("{name}.gate_v"), cj, channels, rng),
            gate_i: Dense::new(store, &format!("{name}.gate_i"), cj, channels, rng),
        }
    }

    pub fn forward<'t, T: Real>(
        &self,
        b: &Bound<'t, T>,
        f_v: Var<'t, T>,
        f_i: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>), ModelError> {
        let vars = MmtmVars {
            joint_w: b.var(self.joint.weight),
            joint_b: b.var(self.joint.bias),
            gate_v_w: b.var(self.gate_v.weight),
            gate_v_b: b.var(self.gate_v.bias),
            gate_i_w: b.var(self.gate_i.weight),
            gate_i_b: b.var(self.gate_i.bias),
        };
        mmtm_refactor(f_v, f_i, &vars)
    }
}

#[derive(Clone, Debug)]
pub struct MsafModule {
    pub splits: usize,
    pub reduce: Dense,
    pub norm: Norm,
    pub gates_v: Vec<Dense>,
    pub gates_i: Vec<Dense>,
}

impl MsafModule {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        splits: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if splits == 0 || channels % splits != 0 {
            return Err(ModelError::Config(format!(
                "MSAF cannot split {channels} channels into {splits} groups"
            )));
        }
        let w = channels / splits;
        let reduce = Dense::new(store, &format!("{name}.reduce"), w, w, rng);
        let norm = Norm::new(store, &format!("{name}.norm"), w);
        let gates_v = (0..splits)
            .map(|s| Dense::new(store, &format!("{name}.gate_v{s}"), w, w, rng))
            .collect();
        let gates_i = (0..splits)
            .map(|s| Dense::new(store, &format!("{name}.gate_i{s}"), w, w, rng))
            .collect();
        Ok(Self {
            splits,
            reduce,
            norm,
            gates_v,
            gates_i,
        })
    }

    pub fn forward<'t, T: Real>(
        &self,
        b: &Bound<'t, T>,
        f_v: Var<'t, T>,
        f_i: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>), ModelError> {
        let pairs = |gates: &[Dense]| {
            gates
                .iter()
                .map(|d| (b.var(d.weight), b.var(d.bias)))
                .collect()
        };
        let vars = MsafVars {
            reduce_w: b.var(self.reduce.weight),
            reduce_b: b.var(self.reduce.bias),
            gates_v: pairs(&self.gates_v),
            gates_i: pairs(&self.gates_i),
        };
        msaf_refactor(f_v, f_i, self.splits, &vars, |x| self.norm.forward(b, x))
    }
}

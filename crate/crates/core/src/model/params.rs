use std::cell::RefCell;

use rand::Rng;

use crate::tensor::{BatchStats, Gradients, Parameter, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferId(pub(crate) usize);

/// Named trainable parameters plus non-trainable buffers (running statistics).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real> {
    pub params: Vec<Parameter<T>>,
    pub buffers: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        self.buffers.push((name.into(), value));
        BufferId(self.buffers.len() - 1)
    }

    /// Kaiming-uniform weight: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn kaiming(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| T::cst(rng.random_range(-bound..bound)));
        self.add(name, t)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].1
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Values of every parameter, in registration order.
    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_values(&mut self, values: &[Tensor<T>]) {
        assert_eq!(values.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(values) {
            assert_eq!(p.value.shape(), v.shape());
            p.value = v.clone();
        }
    }

    /// Copies the parameters and buffers into another element type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }
}

/// Whether normalization layers use batch statistics (and report them) or
/// the frozen running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) struct StatUpdate<T> {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchStats<T>,
}

/// Parameters of a store placed on a tape for one forward pass.
pub struct Bound<'t, T: Real> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) buffers: Vec<Tensor<T>>,
    pub(crate) vars: Vec<Var<'t, T>>,
    pub(crate) mode: Mode,
    pub(crate) stats: RefCell<Vec<StatUpdate<T>>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn new(tape: &'t Tape<T>, store: &ParamStore<T>, mode: Mode) -> Self {
        let vars = store
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect();
        Self {
            tape,
            buffers: store.buffers.iter().map(|(_, t)| t.clone()).collect(),
            vars,
            mode,
            stats: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub(crate) fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0]
    }

    pub(crate) fn record_stats(&self, update: StatUpdate<T>) {
        self.stats.borrow_mut().push(update);
    }

    /// Adds the gradients of a backward sweep into the store's parameters.
    pub fn accumulate_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        for (p, &v) in store.params.iter_mut().zip(&self.vars) {
            match grads.slice(v) {
                Some(g) => p.accumulate_grad(g),
                None => {
                    let zeros = vec![T::zero(); p.value.numel()];
                    p.accumulate_grad(&zeros)
                }
            }
        }
    }

    /// Folds recorded batch statistics into the running averages.
    pub fn update_running_stats(&self, store: &mut ParamStore<T>, momentum: f64) {
        let m = T::cst(momentum);
        for up in self.stats.borrow().iter() {
            for (buf, new) in [(up.mean, &up.stats.mean), (up.var, &up.stats.var_unbiased)] {
                let t = &mut store.buffers[buf.0].1;
                for (r, &v) in t.data_mut().iter_mut().zip(new) {
                    *r = (T::one() - m) * *r + m * v;
                }
            }
        }
    }
}

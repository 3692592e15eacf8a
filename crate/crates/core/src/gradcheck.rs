//! Central finite-difference oracle for reverse-mode gradients.
//!
//! Evaluates the loss at `theta +- h` for every scalar entry and compares the
//! quotient against the analytic gradient. Entries where the loss is not
//! smooth at the scale of `h` (a ReLU kink inside the stencil) show up as
//! disagreeing one-sided slopes or as a central quotient that moves when `h`
//! is halved; those are counted separately instead of being reported as
//! mismatches, and a check fails if they exceed 1% of the entries.

use rand::Rng;

use crate::model::{FusionModel, ModelError, ModelOutput, Mode};
use crate::tensor::{Result, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub nonsmooth: usize,
    pub max_rel_error: f64,
    /// `(tensor index, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    pub fn passes(&self, opts: &GradCheckOptions) -> bool {
        self.max_rel_error <= opts.tolerance && self.nonsmooth * 100 <= self.checked.max(1)
    }

    pub fn merge(&mut self, other: GradReport, offset: usize) {
        self.checked += other.checked;
        self.nonsmooth += other.nonsmooth;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.map(|(t, e, a, n)| (t + offset, e, a, n));
        }
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn compare_with_finite_differences(
    params: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    mut loss: impl FnMut(&[Tensor<f64>]) -> f64,
    opts: GradCheckOptions,
) -> GradReport {
    let mut report = GradReport::default();
    let base = loss(params);
    let mut sides = |params: &mut [Tensor<f64>], t: usize, e: usize, h: f64| {
        let orig = params[t].data()[e];
        params[t].data_mut()[e] = orig + h;
        let up = loss(params);
        params[t].data_mut()[e] = orig - h;
        let down = loss(params);
        params[t].data_mut()[e] = orig;
        ((up - base) / h, (base - down) / h)
    };
    for t in 0..params.len() {
        for e in 0..params[t].numel() {
            let a = analytic[t].data()[e];
            let (fwd, bwd) = sides(params, t, e, opts.step);
            let numeric = 0.5 * (fwd + bwd);
            let mut err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > opts.tolerance {
                let (hf, hb) = sides(params, t, e, opts.step / 2.0);
                let half = 0.5 * (hf + hb);
                // A kink inside the stencil: one-sided slopes disagree by
                // far more than curvature explains, or halving h moves the
                // central quotient.
                let one_sided = (fwd - bwd).abs() > 1e3 * opts.step * fwd.abs().max(bwd.abs()).max(1.0);
                if one_sided || relative_error(numeric, half, opts.floor) > opts.tolerance {
                    report.nonsmooth += 1;
                    continue;
                }
                err = err.min(relative_error(a, half, opts.floor));
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((t, e, a, numeric));
            }
        }
    }
    report
}

/// Checks the gradient of `f` with respect to every tensor in `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> GradReport
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars).expect("forward");
    let grads = tape.backward(out).expect("backward");
    let analytic: Vec<_> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let mut params = inputs.to_vec();
    compare_with_finite_differences(
        &mut params,
        &analytic,
        |p| {
            let tape = Tape::inference();
            let vars: Vec<_> = p.iter().map(|t| tape.constant(t.clone())).collect();
            f(&tape, &vars).expect("forward").value().item()
        },
        GradCheckOptions::default(),
    )
}

/// Tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Finite-difference check of a whole model: every parameter entry of
/// `model` is perturbed and the scalar built by `loss` from the forward
/// products is re-evaluated.
pub fn check_model_gradients<F>(
    model: &FusionModel<f64>,
    visible: &Tensor<f64>,
    infrared: &Tensor<f64>,
    mode: Mode,
    loss: F,
    opts: GradCheckOptions,
) -> std::result::Result<GradReport, ModelError>
where
    F: for<'t> Fn(&ModelOutput<'t, f64>) -> std::result::Result<Var<'t, f64>, ModelError>,
{
    let tape = Tape::new();
    let bound = model.bind(&tape, mode);
    let out = model.forward(&bound, Some(visible), Some(infrared))?;
    let grads = tape.backward(loss(&out)?)?;
    let mut store = model.store.clone();
    store.zero_grad();
    bound.accumulate_grads(&grads, &mut store);
    let analytic: Vec<_> = store
        .params
        .iter()
        .map(|p| p.grad.clone().expect("accumulated"))
        .collect();

    let mut probe = model.clone();
    let mut params = model.store.values();
    let report = compare_with_finite_differences(
        &mut params,
        &analytic,
        |values| {
            probe.store.set_values(values);
            let tape = Tape::inference();
            let bound = probe.bind(&tape, mode);
            let out = probe
                .forward(&bound, Some(visible), Some(infrared))
                .expect("forward");
            loss(&out).expect("loss").value().item()
        },
        opts,
    );
    Ok(report)
}

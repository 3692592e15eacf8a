//! Metric-learning and classification losses.

use serde::{Deserialize, Serialize};

use crate::tensor::{shape_err, Real, Result, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: 0.3 }
    }
}

pub const LABEL_SMOOTHING: f64 = 0.1;

fn pairwise_distances<T: Real>(x: &[T], n: usize, e: usize) -> Vec<T> {
    let mut d = vec![T::zero(); n * n];
    for a in 0..n {
        for b in a + 1..n {
            let s = x[a * e..(a + 1) * e]
                .iter()
                .zip(&x[b * e..(b + 1) * e])
                .fold(T::zero(), |acc, (&u, &v)| acc + (u - v) * (u - v));
            d[a * n + b] = s.sqrt();
            d[b * n + a] = d[a * n + b];
        }
    }
    d
}

/// Batch-hard triplet loss on Euclidean distances:
/// `mean_a max(0, margin + max_p d(a, p) - min_n d(a, n))`.
pub fn batch_hard_triplet<'t, T: Real>(
    embeddings: Var<'t, T>,
    labels: &[usize],
    margin: f64,
) -> Result<Var<'t, T>> {
    let xv = embeddings.value();
    let &[n, e] = xv.shape() else {
        return Err(shape_err("triplet", format!("expected [N, E], got {:?}", xv.shape())));
    };
    if labels.len() != n {
        return Err(shape_err("triplet", format!("{} labels for {n} rows", labels.len())));
    }
    for (a, &la) in labels.iter().enumerate() {
        let count = labels.iter().filter(|&&l| l == la).count();
        if count < 2 {
            return Err(TensorError::Usage(format!(
                "label {la} appears once; batch-hard needs at least two instances"
            )));
        }
        if count == n {
            return Err(TensorError::Usage(format!(
                "anchor {a} has no negative in the batch"
            )));
        }
    }
    let d = pairwise_distances(xv.data(), n, e);
    let m = T::cst(margin);
    // (anchor, hardest positive, hardest negative) of every active hinge.
    let mut active = Vec::new();
    let mut total = T::zero();
    for a in 0..n {
        let row = &d[a * n..(a + 1) * n];
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for b in 0..n {
            if b == a {
                continue;
            }
            if labels[b] == labels[a] {
                if pos.is_none_or(|p| row[b] > row[p]) {
                    pos = Some(b);
                }
            } else if neg.is_none_or(|q| row[b] < row[q]) {
                neg = Some(b);
            }
        }
        let (p, q) = (pos.expect("checked"), neg.expect("checked"));
        let hinge = m + row[p] - row[q];
        if hinge > T::zero() {
            total += hinge;
            active.push((a, p, q));
        }
    }
    let nf = T::cst(n as f64);
    let out = Tensor::scalar(total / nf);
    let saved = xv.clone();
    Ok(embeddings.tape().push_op(
        "batch_hard_triplet",
        out,
        &[embeddings],
        Box::new(move |g, _| {
            let x = saved.data();
            let scale = g[0] / nf;
            let mut dx = vec![T::zero(); n * e];
            let mut pull = |a: usize, b: usize, sign: T| {
                let dist = d[a * n + b];
                if dist <= T::zero() {
                    return;
                }
                let k = sign * scale / dist;
                for i in 0..e {
                    let diff = (x[a * e + i] - x[b * e + i]) * k;
                    dx[a * e + i] += diff;
                    dx[b * e + i] -= diff;
                }
            };
            for &(a, p, q) in &active {
                pull(a, p, T::one());
                pull(a, q, -T::one());
            }
            vec![Some(dx)]
        }),
    ))
}

/// Cross-entropy against smoothed targets: `1 - eps + eps / C` on the true
/// class and `eps / C` on every other class, averaged over the batch.
pub fn cross_entropy_label_smoothing<'t, T: Real>(
    logits: Var<'t, T>,
    labels: &[usize],
    eps: f64,
) -> Result<Var<'t, T>> {
    let lv = logits.value();
    let &[n, c] = lv.shape() else {
        return Err(shape_err("cross_entropy", format!("expected [N, C], got {:?}", lv.shape())));
    };
    if labels.len() != n {
        return Err(shape_err("cross_entropy", format!("{} labels for {n} rows", labels.len())));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(TensorError::Usage(format!("label smoothing {eps} outside [0, 1)")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(TensorError::Usage(format!("label {l} >= {c} classes")));
    }
    let off = T::cst(eps / c as f64);
    let on = T::cst(1.0 - eps) + off;
    let mut probs = vec![T::zero(); n * c];
    let mut total = T::zero();
    for ((row, dst), &y) in lv.data().chunks(c).zip(probs.chunks_mut(c)).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let z = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp());
        let log_z = z.ln() + max;
        for (k, (d, &v)) in dst.iter_mut().zip(row).enumerate() {
            let logp = v - log_z;
            *d = logp.exp();
            let q = if k == y { on } else { off };
            total -= q * logp;
        }
    }
    let nf = T::cst(n as f64);
    let labels = labels.to_vec();
    Ok(logits.tape().push_op(
        "cross_entropy",
        Tensor::scalar(total / nf),
        &[logits],
        Box::new(move |g, _| {
            let scale = g[0] / nf;
            let mut dx = probs.clone();
            for (row, &y) in dx.chunks_mut(c).zip(&labels) {
                for (k, v) in row.iter_mut().enumerate() {
                    let q = if k == y { on } else { off };
                    *v = (*v - q) * scale;
                }
            }
            vec![Some(dx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gradcheck::{check_gradients, random_tensor, GradCheckOptions};
    use crate::tensor::Tape;

    fn triplet_value(x: &Tensor<f64>, labels: &[usize], margin: f64) -> f64 {
        let tape = Tape::inference();
        batch_hard_triplet(tape.constant(x.clone()), labels, margin)
            .unwrap()
            .value()
            .item()
    }

    /// Enumerates every (anchor, positive, negative) triple explicitly.
    fn brute_force_triplet(x: &[Vec<f64>], labels: &[usize], margin: f64) -> f64 {
        let dist = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt()
        };
        let n = x.len();
        let mut total = 0.0;
        for a in 0..n {
            let mut worst = f64::NEG_INFINITY;
            for p in (0..n).filter(|&p| p != a && labels[p] == labels[a]) {
                for q in (0..n).filter(|&q| labels[q] != labels[a]) {
                    worst = worst.max(margin + dist(&x[a], &x[p]) - dist(&x[a], &x[q]));
                }
            }
            total += worst.max(0.0);
        }
        total / n as f64
    }

    fn rows(x: &Tensor<f64>) -> Vec<Vec<f64>> {
        x.data().chunks(x.shape()[1]).map(<[f64]>::to_vec).collect()
    }

    #[test]
    fn separated_clusters_have_zero_loss() {
        let x = Tensor::new(&[4, 1], vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        assert_eq!(triplet_value(&x, &[0, 0, 1, 1], 0.3), 0.0);
    }

    #[test]
    fn identical_embeddings_cost_the_margin() {
        let x = Tensor::full(&[6, 3], 0.7);
        let v = triplet_value(&x, &[0, 0, 1, 1, 2, 2], 0.3);
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_case_matches_brute_force() {
        let x = Tensor::new(&[4, 1], vec![0.0, 0.1, 0.2, 0.3]).unwrap();
        let labels = [0, 0, 1, 1];
        let expect = brute_force_triplet(&rows(&x), &labels, 0.3);
        // Hinges per anchor: 0.2, 0.3, 0.3, 0.2.
        assert!((expect - 0.25).abs() < 1e-12);
        assert!((triplet_value(&x, &labels, 0.3) - expect).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let p = rng.random_range(2..5);
            let k = rng.random_range(2..4);
            let e = rng.random_range(1..6);
            let labels: Vec<usize> = (0..p * k).map(|i| i / k).collect();
            let x = random_tensor(&[p * k, e], &mut rng);
            let got = triplet_value(&x, &labels, 0.3);
            let want = brute_force_triplet(&rows(&x), &labels, 0.3);
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn singleton_label_is_rejected() {
        let tape = Tape::inference();
        let x = tape.constant(Tensor::<f64>::zeros(&[3, 2]));
        assert!(matches!(
            batch_hard_triplet(x, &[0, 0, 1], 0.3),
            Err(TensorError::Usage(_))
        ));
    }

    #[test]
    fn triplet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let labels = [0, 0, 1, 1, 2, 2];
        let x = random_tensor(&[6, 4], &mut rng);
        let report = check_gradients(&[x], |_, v| batch_hard_triplet(v[0], &labels, 0.3));
        assert!(report.passes(&GradCheckOptions::default()), "{report:?}");
    }

    #[test]
    fn zero_smoothing_is_plain_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let logits = random_tensor(&[5, 4], &mut rng);
        let labels = [0, 3, 2, 1, 3];
        let tape = Tape::inference();
        let got = cross_entropy_label_smoothing(tape.constant(logits.clone()), &labels, 0.0)
            .unwrap()
            .value()
            .item();
        let want = logits
            .data()
            .chunks(4)
            .zip(labels)
            .map(|(row, y)| {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[y].exp() / z).ln()
            })
            .sum::<f64>()
            / 5.0;
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn uniform_logits_cost_log_classes() {
        for eps in [0.0, 0.1, 0.5] {
            let tape = Tape::inference();
            let x = tape.constant(Tensor::<f64>::full(&[3, 7], 2.5));
            let v = cross_entropy_label_smoothing(x, &[0, 4, 6], eps)
                .unwrap()
                .value()
                .item();
            assert!((v - 7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_hand_case() {
        let tape = Tape::inference();
        let x = tape.constant(Tensor::new(&[1, 2], vec![3f64.ln(), 0.0]).unwrap());
        let v = cross_entropy_label_smoothing(x, &[0], 0.1)
            .unwrap()
            .value()
            .item();
        let want = -(0.95 * 0.75f64.ln() + 0.05 * 0.25f64.ln());
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let tape = Tape::inference();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 2]));
        assert!(cross_entropy_label_smoothing(x, &[2], 0.1).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let x = random_tensor(&[4, 5], &mut rng);
        let report = check_gradients(&[x], |_, v| {
            cross_entropy_label_smoothing(v[0], &[1, 0, 4, 2], LABEL_SMOOTHING)
        });
        assert!(report.passes(&GradCheckOptions::default()), "{report:?}");
    }

    proptest! {
        #[test]
        fn losses_are_non_negative(
            data in proptest::collection::vec(-3.0f64..3.0, 12),
            margin in 0.0f64..1.0,
        ) {
            let x = Tensor::new(&[4, 3], data).unwrap();
            let labels = [0, 0, 1, 1];
            let v = triplet_value(&x, &labels, margin);
            prop_assert!(v >= 0.0);
            let tape = Tape::inference();
            let ce = cross_entropy_label_smoothing(tape.constant(x.clone()), &[0, 1, 2, 1], 0.1)
                .unwrap().value().item();
            prop_assert!(ce >= 0.0);
        }

        #[test]
        fn triplet_zero_iff_every_anchor_satisfies_margin(
            data in proptest::collection::vec(-2.0f64..2.0, 8),
            margin in 0.0f64..0.5,
        ) {
            let x = Tensor::new(&[4, 2], data).unwrap();
            let labels = [0, 1, 0, 1];
            let r = rows(&x);
            let dist = |a: usize, b: usize| {
                ((r[a][0] - r[b][0]).powi(2) + (r[a][1] - r[b][1]).powi(2)).sqrt()
            };
            let all_ok = (0..4).all(|a| {
                let p = (0..4).filter(|&p| p != a && labels[p] == labels[a]).map(|p| dist(a, p)).fold(0.0, f64::max);
                let q = (0..4).filter(|&q| labels[q] != labels[a]).map(|q| dist(a, q)).fold(f64::INFINITY, f64::min);
                margin + p - q <= 0.0
            });
            prop_assert_eq!(triplet_value(&x, &labels, margin) == 0.0, all_ok);
        }
    }
}

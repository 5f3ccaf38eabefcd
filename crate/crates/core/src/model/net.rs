//! Forward pass, tempered softmax cross-entropy, and its exact gradient.

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams, NormOrder};
use crate::scalar::Scalar;

fn batch_rows<T: Scalar>(p: &ModelParams<T>, batch: &[T]) -> Result<usize> {
    let d = p.layout().input_dim;
    if batch.len() % d != 0 {
        return Err(Error::arg(format!(
            "batch of {} values is not a multiple of input_dim {d}",
            batch.len()
        )));
    }
    Ok(batch.len() / d)
}

/// Activations of every layer: index 0 is the input, the last entry holds
/// the logits. Hidden activations are post-ReLU.
pub(crate) fn forward_all<T: Scalar>(p: &ModelParams<T>, batch: &[T], rows: usize) -> Vec<Vec<T>> {
    let spans = p.layout().spans();
    let values = p.values();
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(spans.len() + 1);
    acts.push(batch.to_vec());
    for (l, span) in spans.iter().enumerate() {
        let input = &acts[l];
        let w = &values[span.weights..span.bias];
        let b = &values[span.bias..span.end()];
        let mut out = vec![T::zero(); rows * span.outputs];
        for r in 0..rows {
            let x = &input[r * span.inputs..(r + 1) * span.inputs];
            let z = &mut out[r * span.outputs..(r + 1) * span.outputs];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * span.inputs..(o + 1) * span.inputs];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(x) {
                    acc += *wi * *xi;
                }
                *zo = acc;
            }
        }
        if l + 1 < spans.len() {
            for v in &mut out {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        acts.push(out);
    }
    acts
}

/// Logits `[B × num_classes]` for a row-major `[B × input_dim]` batch.
pub fn forward<T: Scalar>(p: &ModelParams<T>, batch: &[T]) -> Result<Vec<T>> {
    let rows = batch_rows(p, batch)?;
    Ok(forward_all(p, batch, rows).pop().expect("at least one layer"))
}

/// Row-wise `softmax(logits / temperature)`.
pub fn softmax_rows<T: Scalar>(logits: &[T], classes: usize, temperature: T) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| ((z - max) / temperature).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

/// Mean over the batch of `-log softmax(logits / T)[label]`.
pub fn loss<T: Scalar>(logits: &[T], labels: &[usize], temperature: T) -> T {
    if labels.is_empty() {
        return T::zero();
    }
    let classes = logits.len() / labels.len();
    let mut total = T::zero();
    for (row, &y) in logits.chunks(classes).zip(labels) {
        let scaled: Vec<T> = row.iter().map(|&z| z / temperature).collect();
        let (arg, max) = scaled
            .iter()
            .copied()
            .enumerate()
            .fold((0, T::neg_infinity()), |best, (j, s)| if s > best.1 { (j, s) } else { best });
        let rest: T = scaled
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != arg)
            .map(|(_, &s)| (s - max).exp())
            .sum();
        total += (max - scaled[y]) + rest.ln_1p();
    }
    (total / T::of(labels.len() as f64)).max(T::zero())
}

/// Gradient of the mean batch cross-entropy only. Returns `(loss, grads)`.
pub(crate) fn cross_entropy_grad<T: Scalar>(
    p: &ModelParams<T>,
    batch: &[T],
    labels: &[usize],
    temperature: T,
) -> Result<(T, Gradients<T>)> {
    let rows = batch_rows(p, batch)?;
    if rows != labels.len() {
        return Err(Error::arg(format!("{rows} samples but {} labels", labels.len())));
    }
    let layout = p.layout();
    let classes = layout.num_classes;
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::arg(format!("label {bad} out of range for {classes} classes")));
    }
    let spans = layout.spans();
    let acts = forward_all(p, batch, rows);
    let logits = acts.last().expect("logits");
    let value = loss(logits, labels, temperature);

    // dL/dz = (softmax(z/T) - onehot) / (T * B)
    let mut delta = softmax_rows(logits, classes, temperature);
    let scale = T::one() / (temperature * T::of(rows as f64));
    for (r, &y) in labels.iter().enumerate() {
        delta[r * classes + y] -= T::one();
    }
    for d in &mut delta {
        *d *= scale;
    }

    let mut grads = Gradients::zeros(layout.clone());
    let values = p.values();
    for l in (0..spans.len()).rev() {
        let span = spans[l];
        let input = &acts[l];
        {
            let g = grads.values_mut();
            let (gw, gb) = g[span.weights..span.end()].split_at_mut(span.inputs * span.outputs);
            for r in 0..rows {
                let x = &input[r * span.inputs..(r + 1) * span.inputs];
                let dr = &delta[r * span.outputs..(r + 1) * span.outputs];
                for (o, &d) in dr.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * span.inputs..(o + 1) * span.inputs];
                    for (gi, &xi) in row.iter_mut().zip(x) {
                        *gi += d * xi;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = &values[span.weights..span.bias];
        let mut prev = vec![T::zero(); rows * span.inputs];
        for r in 0..rows {
            let dr = &delta[r * span.outputs..(r + 1) * span.outputs];
            let pr = &mut prev[r * span.inputs..(r + 1) * span.inputs];
            for (o, &d) in dr.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let row = &w[o * span.inputs..(o + 1) * span.inputs];
                for (pi, &wi) in pr.iter_mut().zip(row) {
                    *pi += d * wi;
                }
            }
        }
        // ReLU derivative, taken from the stored post-activation values.
        for (pv, &a) in prev.iter_mut().zip(input) {
            if a <= T::zero() {
                *pv = T::zero();
            }
        }
        delta = prev;
    }
    Ok((value, grads))
}

/// Adds the gradient of `prox_mu / 2 · ||p − anchor||²`.
pub(crate) fn add_proximal<T: Scalar>(
    grads: &mut Gradients<T>,
    p: &ModelParams<T>,
    anchor: &ModelParams<T>,
    prox_mu: T,
) -> Result<()> {
    if !p.same_shape(anchor) {
        return Err(Error::arg("proximal anchor layout differs from parameters"));
    }
    for ((g, &v), &a) in grads.values_mut().iter_mut().zip(p.values()).zip(anchor.values()) {
        *g += prox_mu * (v - a);
    }
    Ok(())
}

/// Exact gradient of the mean tempered cross-entropy, plus the proximal
/// term `prox_mu / 2 · ||p − anchor||²` when `prox_mu > 0`.
pub fn backward<T: Scalar>(
    p: &ModelParams<T>,
    batch: &[T],
    labels: &[usize],
    temperature: T,
    prox_mu: T,
    anchor: Option<&ModelParams<T>>,
) -> Result<Gradients<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::arg("temperature must be positive"));
    }
    let (_, mut grads) = cross_entropy_grad(p, batch, labels, temperature)?;
    if prox_mu > T::zero() {
        let anchor = anchor.ok_or_else(|| Error::arg("prox_mu > 0 requires an anchor"))?;
        add_proximal(&mut grads, p, anchor, prox_mu)?;
    }
    Ok(grads)
}

/// L1 or L2 norm of the final layer's weight and bias gradients.
pub fn last_layer_grad_norm<T: Scalar>(g: &Gradients<T>, order: NormOrder) -> T {
    let last = g.last_layer();
    match order {
        NormOrder::L1 => last.iter().map(|v| v.abs()).sum(),
        NormOrder::L2 => last.iter().map(|&v| v * v).sum::<T>().sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelLayout};

    #[test]
    fn zero_network_gives_zero_logits() {
        let p = ModelParams::<f64>::zeros(ModelLayout::new(3, vec![4], 2));
        let logits = forward(&p, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(logits, vec![0.0; 4]);
    }

    #[test]
    fn single_linear_unit() {
        let p = ModelParams::from_values(ModelLayout::new(1, vec![], 1), vec![2.5, -0.5]).unwrap();
        assert_eq!(forward(&p, &[0.4]).unwrap(), vec![2.5 * 0.4 - 0.5]);
    }

    #[test]
    fn batched_forward_matches_per_sample() {
        let layout = ModelLayout::new(5, vec![7], 3);
        let p: ModelParams<f64> = init_params(&layout, 1).unwrap();
        let batch: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let all = forward(&p, &batch).unwrap();
        for r in 0..4 {
            let one = forward(&p, &batch[r * 5..(r + 1) * 5]).unwrap();
            for c in 0..3 {
                assert!((one[c] - all[r * 3 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_ragged_batch() {
        let p = ModelParams::<f64>::zeros(ModelLayout::new(3, vec![], 2));
        assert!(forward(&p, &[0.0; 4]).is_err());
    }

    #[test]
    fn uniform_two_class_loss_is_ln2() {
        assert!((loss(&[0.3, 0.3], &[1], 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_loss_matches_closed_form() {
        // -log sigmoid(20) = log(1 + e^-20)
        let expected = (-20.0f64).exp().ln_1p();
        let got = loss(&[10.0, -10.0], &[0], 1.0);
        assert!((got - expected).abs() < 1e-18, "{got} vs {expected}");
        assert!((got - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn loss_is_temperature_homogeneous() {
        let logits = [1.5, -0.25, 0.75];
        let base = loss(&logits, &[2], 1.0);
        for k in [0.5, 3.0, 17.0] {
            let scaled: Vec<f64> = logits.iter().map(|z| z * k).collect();
            assert!((loss(&scaled, &[2], k) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = softmax_rows(&[1.0, 2.0, 3.0, -5.0, 0.0, 5.0], 3, 0.7);
        for row in s.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn proximal_term_vanishes_at_anchor() {
        let layout = ModelLayout::new(4, vec![5], 3);
        let p: ModelParams<f64> = init_params(&layout, 2).unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let y = [0, 2];
        let plain = backward(&p, &x, &y, 1.0, 0.0, None).unwrap();
        let prox = backward(&p, &x, &y, 1.0, 0.5, Some(&p)).unwrap();
        assert_eq!(plain, prox);
        assert!(backward(&p, &x, &y, 1.0, 0.5, None).is_err());
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let layout = ModelLayout::new(4, vec![5], 3);
        let p: ModelParams<f64> = init_params(&layout, 3).unwrap();
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.9).cos().abs()).collect();
        let y = [1, 0];
        let mut x2 = x.clone();
        x2.extend_from_slice(&x);
        let g1 = backward(&p, &x, &y, 1.0, 0.0, None).unwrap();
        let g2 = backward(&p, &x2, &[1, 0, 1, 0], 1.0, 0.0, None).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn last_layer_norms() {
        let layout = ModelLayout::new(1, vec![], 1);
        let g = Gradients::from_values(layout, vec![-2.0f64, 0.0]).unwrap();
        assert_eq!(last_layer_grad_norm(&g, NormOrder::L1), 2.0);
        // Hand example: entries {1, -2, 2}.
        let layout = ModelLayout::new(1, vec![], 2);
        let g = Gradients::from_values(layout.clone(), vec![1.0f64, -2.0, 2.0, 0.0]).unwrap();
        assert_eq!(last_layer_grad_norm(&g, NormOrder::L1), 5.0);
        assert_eq!(last_layer_grad_norm(&g, NormOrder::L2), 3.0);
        let z = Gradients::<f64>::zeros(layout);
        assert_eq!(last_layer_grad_norm(&z, NormOrder::L1), 0.0);
        assert_eq!(last_layer_grad_norm(&z, NormOrder::L2), 0.0);
    }
}

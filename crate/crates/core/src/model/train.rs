//! Client-side local training and evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataspace::{ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::model::net::{add_proximal, cross_entropy_grad, forward};
use crate::model::{last_layer_grad_norm, loss, sgd_step, MomentumState, ModelParams, OptConfig};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    #[default]
    L1,
    L2,
}

/// Per-batch last-layer gradient norms of one client's first local epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradNormTrace {
    pub client_id: usize,
    pub per_batch_norms: Vec<f64>,
    pub norm_order: NormOrder,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalOutcome<T> {
    pub params: ModelParams<T>,
    pub trace: Option<GradNormTrace>,
    /// Optimiser steps taken.
    pub steps: usize,
}

/// Trains a copy of `p0` on one shard.
///
/// Each epoch visits the shard in a fresh seeded permutation, in
/// mini-batches of `opt.batch_size`. When `collect_norms` is set, the
/// last-layer norm of the cross-entropy gradient is recorded per batch of
/// the first epoch (full batches only, see [`recorded_batches`]): straight from the training backprops when `norm_batch`
/// equals the training batch size, otherwise from a measurement pass over
/// the first epoch's permutation at `p0` before any step is taken.
///
/// With `opt.prox_mu > 0`, `p0` is the proximal anchor.
pub fn local_train<T: Scalar>(
    p0: &ModelParams<T>,
    c: &ClientDataset<T>,
    opt: &OptConfig,
    collect_norms: Option<NormOrder>,
    norm_batch: usize,
    seed: u64,
) -> Result<LocalOutcome<T>> {
    if c.is_empty() {
        return Err(Error::arg(format!("client {} has an empty shard", c.client_id)));
    }
    opt.validate()?;
    if collect_norms.is_some() && norm_batch == 0 {
        return Err(Error::arg("norm batch size must be at least 1"));
    }
    let data = &c.data;
    let temperature = T::of(opt.temperature);
    let prox_mu = T::of(opt.prox_mu);
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);

    let from_training = collect_norms.is_some() && norm_batch == opt.batch_size && opt.local_epochs > 0;
    let recorded = recorded_batches(data.len(), norm_batch.max(1));
    let mut norms = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());

    if let (Some(norm_order), false) = (collect_norms, from_training) {
        for chunk in order.chunks(norm_batch).take(recorded) {
            data.gather(chunk, &mut xs, &mut ys);
            let (_, g) = cross_entropy_grad(p0, &xs, &ys, temperature)?;
            norms.push(last_layer_grad_norm(&g, norm_order).as_f64());
        }
    }

    let mut params = p0.clone();
    let mut state = MomentumState::new(&params);
    let mut steps = 0;
    for epoch in 0..opt.local_epochs {
        if epoch > 0 {
            order.shuffle(&mut rng);
        }
        for (b, chunk) in order.chunks(opt.batch_size).enumerate() {
            data.gather(chunk, &mut xs, &mut ys);
            let (_, mut g) = cross_entropy_grad(&params, &xs, &ys, temperature)?;
            if epoch == 0 && from_training && b < recorded {
                let norm_order = collect_norms.expect("collecting");
                norms.push(last_layer_grad_norm(&g, norm_order).as_f64());
            }
            if prox_mu > T::zero() {
                add_proximal(&mut g, &params, p0, prox_mu)?;
            }
            sgd_step(&mut params, &g, opt, &mut state)?;
            steps += 1;
        }
    }

    let trace = collect_norms.map(|norm_order| GradNormTrace {
        client_id: c.client_id,
        per_batch_norms: norms,
        norm_order,
        batch_size: norm_batch,
    });
    Ok(LocalOutcome {
        params,
        trace,
        steps,
    })
}

/// Batches that enter a norm trace: the full ones only, unless fewer than
/// two are full, in which case the short tail batch is kept as well.
fn recorded_batches(n: usize, norm_batch: usize) -> usize {
    let full = n / norm_batch;
    if full >= 2 || n % norm_batch == 0 {
        full
    } else {
        full + 1
    }
}

const EVAL_CHUNK: usize = 256;

/// Top-1 accuracy; ties go to the lowest class index.
pub fn evaluate<T: Scalar>(p: &ModelParams<T>, d: &Dataset<T>) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let classes = p.layout().num_classes;
    let indices: Vec<usize> = (0..d.len()).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        d.gather(chunk, &mut xs, &mut ys);
        let logits = forward(p, &xs)?;
        for (row, &y) in logits.chunks(classes).zip(&ys) {
            let mut best = 0;
            for (c, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = c;
                }
            }
            correct += usize::from(best == y);
        }
    }
    Ok(correct as f64 / d.len() as f64)
}

/// Mean tempered cross-entropy over a dataset.
pub fn mean_loss<T: Scalar>(p: &ModelParams<T>, d: &Dataset<T>, temperature: f64) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::arg("cannot compute loss on an empty dataset"));
    }
    let indices: Vec<usize> = (0..d.len()).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        d.gather(chunk, &mut xs, &mut ys);
        let logits = forward(p, &xs)?;
        total += loss(&logits, &ys, T::of(temperature)).as_f64() * chunk.len() as f64;
    }
    Ok(total / d.len() as f64)
}

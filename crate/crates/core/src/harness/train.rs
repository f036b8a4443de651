//! Minibatch SGD on the toy dataset.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Adventurer, ModelConfig};
use crate::rng::SplitRng;
use crate::tensor::Graph;

use super::data::ToyDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainOptions {
    pub steps: usize,
    /// Peak learning rate; decays to zero along a half cosine.
    pub lr: f32,
    pub batch: usize,
    /// Seeds both the initial weights and the minibatch order.
    pub seed: u64,
    /// Rescales the gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f32>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.02,
            batch: 8,
            seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainTrace {
    /// Minibatch loss before each update.
    pub losses: Vec<f32>,
    pub lrs: Vec<f32>,
    /// Global gradient norm before clipping.
    pub grad_norms: Vec<f32>,
    /// Mean loss and accuracy over the whole set after the last update.
    pub final_loss: f32,
    pub final_acc: f32,
    /// Op fingerprint of the first training step.
    pub fingerprint: u64,
    pub macs_per_step: u64,
}

/// Learning rate at `step` of `steps`.
pub fn cosine_lr(lr: f32, step: usize, steps: usize) -> f32 {
    let t = step as f64 / steps.max(1) as f64;
    (lr as f64 * 0.5 * (1.0 + (PI * t).cos())) as f32
}

/// Builds a fresh model from `cfg` and trains it.
pub fn train_toy(cfg: &ModelConfig, data: &ToyDataset, opts: TrainOptions) -> Result<(Adventurer, TrainTrace)> {
    let mut model = Adventurer::new(cfg.clone(), opts.seed)?;
    let trace = train(&mut model, data, opts)?;
    Ok((model, trace))
}

/// Trains `model` in place.
pub fn train(model: &mut Adventurer, data: &ToyDataset, opts: TrainOptions) -> Result<TrainTrace> {
    let cfg = model.config().clone();
    if cfg.num_classes != data.classes() {
        return Err(Error::Config(format!(
            "model has {} classes, dataset has {}",
            cfg.num_classes,
            data.classes()
        )));
    }
    if let Some(im) = data.images.first() {
        if im.shape() != [3, cfg.image, cfg.image] {
            return Err(Error::Config(format!(
                "model expects {}x{} images, dataset has {:?}",
                cfg.image,
                cfg.image,
                im.shape()
            )));
        }
    }
    if opts.batch == 0 || data.is_empty() {
        return Err(Error::Config("batch size and dataset must be non-empty".into()));
    }
    let batch = opts.batch.min(data.len());
    let mut order_rng = SplitRng::stream(opts.seed, 0x6f72_6465);
    let mut order: Vec<usize> = Vec::new();
    let mut trace = TrainTrace {
        losses: Vec::with_capacity(opts.steps),
        lrs: Vec::with_capacity(opts.steps),
        grad_norms: Vec::with_capacity(opts.steps),
        final_loss: f32::NAN,
        final_acc: f32::NAN,
        fingerprint: 0,
        macs_per_step: 0,
    };
    for step in 0..opts.steps {
        if order.len() < batch {
            let mut epoch: Vec<usize> = (0..data.len()).collect();
            epoch.shuffle(&mut order_rng);
            order.extend(epoch);
        }
        let idx: Vec<usize> = order.drain(..batch).collect();
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let images: Vec<_> = idx.iter().map(|&i| g.constant(data.images[i].clone())).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let logits = model.batch_logits(&mut g, &p, &images)?;
        let loss = g.cross_entropy(logits, &labels)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            let culprit = g
                .first_non_finite()
                .map(|(v, op)| format!("node {} ({op})", v.index()))
                .unwrap_or_else(|| "none recorded".into());
            return Err(Error::NonFinite(format!(
                "loss {value} at step {step}; first non-finite tensor: {culprit}"
            )));
        }
        g.backward(loss)?;
        if step == 0 {
            trace.fingerprint = g.counter().fingerprint();
            trace.macs_per_step = g.counter().macs;
        }
        let lr = cosine_lr(opts.lr, step, opts.steps);
        model.store.zero_grad();
        model.store.absorb_grads(&g, &p);
        let norm = model.store.grad_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {norm} at step {step}")));
        }
        let scale = match opts.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        model.store.sgd_step(lr * scale);
        trace.grad_norms.push(norm);
        trace.losses.push(value);
        trace.lrs.push(lr);
    }
    let (loss, acc) = evaluate(model, data)?;
    trace.final_loss = loss;
    trace.final_acc = acc;
    Ok(trace)
}

/// Mean cross-entropy and accuracy over the whole dataset.
pub fn evaluate(model: &Adventurer, data: &ToyDataset) -> Result<(f32, f32)> {
    let mut g = Graph::new();
    let p = model.store.bind_frozen(&mut g);
    let images: Vec<_> = data.images.iter().map(|im| g.constant(im.clone())).collect();
    let logits = model.batch_logits(&mut g, &p, &images)?;
    let loss = g.cross_entropy(logits, &data.labels)?;
    let c = data.classes();
    let scores = g.value(logits).data();
    let correct = data
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row = &scores[i * c..(i + 1) * c];
            let best = (0..c).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == l
        })
        .count();
    Ok((g.value(loss).item(), correct as f32 / data.len() as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.2, 0, 100), 0.2);
        assert!((cosine_lr(0.2, 50, 100) - 0.1).abs() < 1e-7);
        assert!(cosine_lr(0.2, 99, 100) < 1e-3);
    }
}

//! Conditional flow-matching training.
//!
//! Path `x_t = (1 - t) x0 + t x1`, target velocity `x1 - x0`, loss
//! `|v(x_t, t, c) - (x1 - x0)|^2 / d`, minimized with minibatch Adam over all
//! network parameters and the embedding table.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, forward_cached, AdamState, ParamGradients};
use crate::checkpoint::Checkpoint;
use crate::dataset::{DatasetSpec, TrainingPair};
use crate::error::{Error, Result};
use crate::field::{Condition, FieldSpec, InitOptions, Latent, VelocityField};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            iterations: 20_000,
            lr: 2e-3,
            seed: 0,
            latent_dim: 8,
            cond_dim: 16,
            hidden: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        self.field_spec(1).validate()
    }

    pub fn field_spec(&self, vocab: usize) -> FieldSpec {
        FieldSpec {
            latent_dim: self.latent_dim,
            cond_dim: self.cond_dim,
            vocab,
            hidden: self.hidden.clone(),
        }
    }

    /// Learning rate at `iteration`: constant, then a linear ramp to zero
    /// over the last 20% of iterations.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let decay_start = self.iterations - self.iterations / 5;
        if iteration < decay_start {
            self.lr
        } else {
            let span = (self.iterations - decay_start).max(1) as f64;
            self.lr * (self.iterations - iteration) as f64 / span
        }
    }
}

/// Point on the straight path between data and noise.
pub fn interpolate(x0: &Latent, x1: &Latent, t: f64) -> Latent {
    Latent::from_vec_unchecked(
        x0.as_slice()
            .iter()
            .zip(x1.as_slice())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect(),
    )
}

pub fn flow_matching_loss(
    field: &VelocityField,
    x0: &Latent,
    x1: &Latent,
    t: f64,
    cond: &Condition,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("t = {t} outside [0, 1]")));
    }
    let xt = interpolate(x0, x1, t);
    let v = field.eval_velocity(&xt, t, cond)?;
    let d = v.dim() as f64;
    Ok(v.as_slice()
        .iter()
        .zip(x0.as_slice().iter().zip(x1.as_slice()))
        .map(|(vi, (a, b))| {
            let r = vi - (b - a);
            r * r
        })
        .sum::<f64>()
        / d)
}

/// Mean loss of `field` on `samples` pairs drawn from a dedicated stream.
pub fn evaluate_loss(
    field: &VelocityField,
    spec: &DatasetSpec,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng::stream(seed, Stream::Trial, u64::MAX >> 8);
    let mut total = 0.0;
    for _ in 0..samples {
        let pair = spec.sample_pair(&mut rng);
        let t: f64 = rng.random();
        let cond = field.embed_condition(pair.token)?;
        total += flow_matching_loss(field, &pair.x0, &pair.x1, t, &cond)?;
    }
    Ok(total / samples as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// `(iteration, mean minibatch loss)`.
    pub loss_curve: Vec<(usize, f64)>,
}

impl TrainOutcome {
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "loss"])?;
        for (i, loss) in &self.loss_curve {
            w.write_record([i.to_string(), loss.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Accumulates the gradient of `scale * |v - u|^2` for one example into `grads`
/// and returns the unscaled per-example loss.
fn accumulate_example(
    field: &VelocityField,
    pair: &TrainingPair,
    t: f64,
    scale: f64,
    grads: &mut ParamGradients,
) -> f64 {
    let xt = interpolate(&pair.x0, &pair.x1, t);
    let emb = field.embedding(pair.token).expect("trained token in vocab");
    let cache = forward_cached(field, field.assemble_input(xt.as_slice(), t, emb));
    let residual: Vec<f64> = cache
        .output()
        .iter()
        .zip(pair.x0.as_slice().iter().zip(pair.x1.as_slice()))
        .map(|(v, (a, b))| v - (b - a))
        .collect();
    let d = residual.len() as f64;
    let grad_out: Vec<f64> = residual.iter().map(|r| 2.0 * scale * r).collect();
    let grad_in = backward(field, &cache, &grad_out, Some(grads));
    let d_c = field.cond_dim();
    let row = pair.token as usize * d_c;
    let offset = field.latent_dim() + 1;
    grads.embeddings[row..row + d_c]
        .iter_mut()
        .zip(&grad_in[offset..])
        .for_each(|(g, x)| *g += x);
    residual.iter().map(|r| r * r).sum::<f64>() / d
}

/// Trains a field on `spec`. Fully determined by `config.seed`.
pub fn train(spec: &DatasetSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(spec, config, |_, _| {})
}

/// As [`train`], calling `progress(iteration, loss)` after every update.
pub fn train_with_progress(
    spec: &DatasetSpec,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    spec.validate()?;
    config.validate()?;
    if spec.latent_dim != config.latent_dim {
        return Err(Error::shape(
            "dataset latent dim",
            config.latent_dim,
            spec.latent_dim,
        ));
    }
    let mut field = VelocityField::init(
        config.field_spec(spec.vocab),
        config.seed,
        InitOptions::default(),
    )?;
    field.registry = spec.registry();
    let mut params = field.flatten_parameters();
    let mut adam = AdamState::new(params.len(), config.lr);
    let mut loss_curve = Vec::with_capacity(config.iterations);
    let scale = 1.0 / (config.batch_size as f64 * config.latent_dim as f64);

    for iteration in 0..config.iterations {
        let mut rng = rng::stream(config.seed, Stream::Batch, iteration as u64);
        let mut grads = ParamGradients::zeros_like(&field);
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let pair = spec.sample_pair(&mut rng);
            let t: f64 = rng.random();
            loss += accumulate_example(&field, &pair, t, scale, &mut grads);
        }
        loss /= config.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Training { iteration, loss });
        }
        adam.lr = config.lr_at(iteration);
        adam.step(&mut params, &grads.flatten())?;
        assign_parameters(&mut field, &params);
        loss_curve.push((iteration, loss));
        progress(iteration, loss);
    }
    field.validate()?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            field,
            dataset: spec.clone(),
            train: config.clone(),
        },
        loss_curve,
    })
}

fn assign_parameters(field: &mut VelocityField, params: &[f64]) {
    let mut rest = params;
    let mut fill = |dst: &mut [f64]| {
        let (head, tail) = rest.split_at(dst.len());
        dst.copy_from_slice(head);
        rest = tail;
    };
    for layer in &mut field.layers {
        fill(&mut layer.weights);
        fill(&mut layer.bias);
    }
    fill(&mut field.embeddings);
}

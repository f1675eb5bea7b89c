//! Reverse-mode gradients through the fixed MLP topology, and Adam.
//!
//! There is no general tape: [`forward_cached`] keeps each layer's output and
//! [`backward`] walks the layers in reverse. The same kernels serve training
//! (parameter gradients) and null-embedding optimization (input gradients).

use crate::error::{Error, Result};
use crate::field::{DenseLayer, Latent, VelocityField};
use crate::sampler::cfg_combine;

/// Layer outputs of one forward pass. `activations[0]` is the network input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty cache")
    }
}

pub fn forward_cached(field: &VelocityField, input: Vec<f64>) -> ForwardCache {
    let last = field.layers.len() - 1;
    let mut activations = Vec::with_capacity(field.layers.len() + 1);
    activations.push(input);
    for (li, layer) in field.layers.iter().enumerate() {
        let mut out = Vec::with_capacity(layer.outputs);
        layer.forward_into(activations.last().unwrap(), &mut out);
        if li != last {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        activations.push(out);
    }
    ForwardCache { activations }
}

/// Gradients mirroring a [`VelocityField`]'s parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub layers: Vec<DenseLayer>,
    /// Same shape as the field's embedding table.
    pub embeddings: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros_like(field: &VelocityField) -> Self {
        ParamGradients {
            layers: field
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.inputs, l.outputs))
                .collect(),
            embeddings: vec![0.0; field.embeddings.len()],
        }
    }

    /// Adds `other` into `self`, element by element.
    pub fn accumulate(&mut self, other: &ParamGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        self.embeddings
            .iter_mut()
            .zip(&other.embeddings)
            .for_each(|(x, y)| *x += y);
    }

    /// Flattened in the order of [`VelocityField::flatten_parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(&self.embeddings);
        out
    }
}

/// Backpropagates `grad_out` (dL/d output) through the network.
///
/// Parameter gradients are accumulated into `params` when given. Returns
/// dL/d input.
pub fn backward(
    field: &VelocityField,
    cache: &ForwardCache,
    grad_out: &[f64],
    mut params: Option<&mut ParamGradients>,
) -> Vec<f64> {
    let last = field.layers.len() - 1;
    let mut grad = grad_out.to_vec();
    for li in (0..field.layers.len()).rev() {
        let layer = &field.layers[li];
        if li != last {
            // tanh' = 1 - tanh^2, using the cached post-activation
            for (g, a) in grad.iter_mut().zip(&cache.activations[li + 1]) {
                *g *= 1.0 - a * a;
            }
        }
        let input = &cache.activations[li];
        if let Some(p) = params.as_deref_mut() {
            let pl = &mut p.layers[li];
            for (o, g) in grad.iter().enumerate() {
                pl.bias[o] += g;
                let row = &mut pl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(w, x)| *w += g * x);
            }
        }
        let mut grad_in = vec![0.0; layer.inputs];
        for (o, g) in grad.iter().enumerate() {
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            grad_in.iter_mut().zip(row).for_each(|(gi, w)| *gi += g * w);
        }
        grad = grad_in;
    }
    grad
}

/// One predicted Euler step whose squared error against a reference latent
/// is the null-embedding objective.
#[derive(Debug, Clone, Copy)]
pub struct StepObjective<'a> {
    /// Embedding in the conditional slot of the guidance combination.
    pub cond_embedding: &'a [f64],
    /// Time the step lands on.
    pub t_next: f64,
    /// Reference latent at `t_next`.
    pub target: &'a Latent,
    /// Guidance scale.
    pub guidance: f64,
}

fn predicted_residual(
    field: &VelocityField,
    z: &Latent,
    t: f64,
    v_uncond: &[f64],
    objective: &StepObjective<'_>,
) -> Vec<f64> {
    let v_cond = field.eval_raw(z.as_slice(), t, objective.cond_embedding);
    let guided = cfg_combine(v_uncond, &v_cond, objective.guidance);
    let dt = objective.t_next - t;
    z.as_slice()
        .iter()
        .zip(&guided)
        .zip(objective.target.as_slice())
        .map(|((zi, vi), ri)| (zi + dt * vi) - ri)
        .collect()
}

fn check_objective(
    field: &VelocityField,
    z: &Latent,
    uncond: &[f64],
    objective: &StepObjective<'_>,
) -> Result<()> {
    field.check_inputs(z.as_slice(), uncond)?;
    field.check_inputs(objective.target.as_slice(), objective.cond_embedding)?;
    if !objective.guidance.is_finite() {
        return Err(Error::Config("guidance scale must be finite".into()));
    }
    Ok(())
}

fn mean_square(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64
}

/// Squared mean L2 error of the guided Euler prediction; forward only.
pub fn step_loss(
    field: &VelocityField,
    z: &Latent,
    t: f64,
    uncond: &[f64],
    objective: &StepObjective<'_>,
) -> Result<f64> {
    check_objective(field, z, uncond, objective)?;
    let v_uncond = field.eval_raw(z.as_slice(), t, uncond);
    let loss = mean_square(&predicted_residual(field, z, t, &v_uncond, objective));
    if !loss.is_finite() {
        return Err(Error::Numeric {
            context: format!("step loss at t = {t}"),
        });
    }
    Ok(loss)
}

/// Step loss and its exact gradient with respect to the unconditional
/// embedding.
pub fn grad_loss_wrt_embedding(
    field: &VelocityField,
    z: &Latent,
    t: f64,
    uncond: &[f64],
    objective: &StepObjective<'_>,
) -> Result<(f64, Vec<f64>)> {
    check_objective(field, z, uncond, objective)?;
    let cache = forward_cached(field, field.assemble_input(z.as_slice(), t, uncond));
    let residual = predicted_residual(field, z, t, cache.output(), objective);
    let loss = mean_square(&residual);
    if !loss.is_finite() {
        return Err(Error::Numeric {
            context: format!("step loss at t = {t}"),
        });
    }
    // d guided / d v_uncond = (1 - w); d z_pred / d guided = dt
    let d = residual.len() as f64;
    let scale = 2.0 / d * (objective.t_next - t) * (1.0 - objective.guidance);
    let grad_out: Vec<f64> = residual.iter().map(|r| scale * r).collect();
    let grad_in = backward(field, &cache, &grad_out, None);
    let offset = field.latent_dim() + 1;
    let grad = grad_in[offset..].to_vec();
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            context: format!("embedding gradient at t = {t}"),
        });
    }
    Ok((loss, grad))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to `target` in place.
    pub fn step(&mut self, target: &mut [f64], grad: &[f64]) -> Result<()> {
        if target.len() != self.m.len() {
            return Err(Error::shape("adam target", self.m.len(), target.len()));
        }
        if grad.len() != self.m.len() {
            return Err(Error::shape("adam gradient", self.m.len(), grad.len()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((x, g), m), v) in target
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

//! Sharpness φ: the largest relative increase of the training loss inside a
//! coordinate-wise box around the weights,
//! `φ = 100 · (max_z L(w + z) − L(w)) / (1 + L(w))` with
//! `|z_i| ≤ ε (|w_i| + 1)`.
//!
//! The maximization is projected sign-gradient ascent: each step moves every
//! coordinate by `ε/10 · (|w_i| + 1)` in the direction of its gradient sign,
//! clips into the box, and halves the step until the loss does not drop.

use serde::{Deserialize, Serialize};

use crate::datasets::Equation;
use crate::error::{Error, Result};
use crate::model::{loss_and_grads, ForwardNoise, TransformerParams};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessConfig {
    pub epsilon: f64,
    pub ascent_steps: usize,
    /// Step length as a fraction of the box half-width.
    pub step_fraction: f64,
    /// Maximum number of step halvings before the ascent gives up.
    pub max_backoffs: usize,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            ascent_steps: 20,
            step_fraction: 0.1,
            max_backoffs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ascent {
    pub phi: f64,
    pub base_loss: f64,
    pub max_loss: f64,
    /// Loss after every accepted step, starting with the base loss.
    pub trace: Vec<f64>,
    pub epsilon: f64,
}

/// Runs the ascent for a loss given as `w -> (L(w), ∇L(w))`.
pub fn maximize_in_box<F>(w: &[f64], config: &SharpnessConfig, mut loss_grad: F) -> Result<Ascent>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(config.epsilon >= 0.0) || config.step_fraction <= 0.0 {
        return Err(Error::Config(format!("invalid sharpness settings: {config:?}")));
    }
    let finite = |l: f64| {
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::NonFinite {
                what: "loss during sharpness ascent",
                step: 0,
                value: l,
            })
        }
    };
    let radius: Vec<f64> = w.iter().map(|x| config.epsilon * (x.abs() + 1.0)).collect();
    let (base, mut grad) = loss_grad(w)?;
    let base = finite(base)?;
    let mut trace = vec![base];
    let mut current = base;
    let mut z = vec![0.0; w.len()];
    let mut point = w.to_vec();
    let mut scale = config.step_fraction;

    'ascent: for _ in 0..config.ascent_steps {
        let mut backoffs = 0;
        loop {
            let cand: Vec<f64> = z
                .iter()
                .zip(&grad)
                .zip(&radius)
                .map(|((&zi, &g), &r)| {
                    let dir = if g > 0.0 {
                        1.0
                    } else if g < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    (zi + scale * r * dir).clamp(-r, r)
                })
                .collect();
            for ((p, &wi), &zi) in point.iter_mut().zip(w).zip(&cand) {
                *p = wi + zi;
            }
            let (loss, g) = loss_grad(&point)?;
            let loss = finite(loss)?;
            if loss >= current {
                z = cand;
                current = loss;
                grad = g;
                trace.push(loss);
                break;
            }
            backoffs += 1;
            if backoffs > config.max_backoffs {
                break 'ascent;
            }
            scale /= 2.0;
        }
    }
    Ok(Ascent {
        phi: 100.0 * (current - base) / (1.0 + base),
        base_loss: base,
        max_loss: current,
        trace,
        epsilon: config.epsilon,
    })
}

/// Mean cross-entropy over all of `equations` and its gradient, computed in
/// chunks and reweighted by chunk size.
pub fn full_loss_and_grads(
    params: &TransformerParams<f32>,
    equations: &[Equation],
) -> Result<(f64, Vec<Tensor<f32>>)> {
    const CHUNK: usize = 1024;
    if equations.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let n = equations.len() as f64;
    let mut total = 0.0;
    let mut grads: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
    for chunk in equations.chunks(CHUNK) {
        let w = chunk.len() as f64 / n;
        let (loss, g) = loss_and_grads(params, chunk, ForwardNoise::default(), None)?;
        total += w * loss;
        for (acc, t) in grads.iter_mut().zip(&g) {
            for (a, &x) in acc.iter_mut().zip(t.data()) {
                *a += w * x as f64;
            }
        }
    }
    let grads = grads
        .into_iter()
        .zip(&params.tensors)
        .map(|(g, t)| Tensor::new(t.shape().to_vec(), g.into_iter().map(|x| x as f32).collect()))
        .collect::<Result<_>>()?;
    Ok((total, grads))
}

/// φ of trained weights on their training set.
pub fn sharpness_phi(
    params: &TransformerParams<f32>,
    train: &[Equation],
    config: &SharpnessConfig,
) -> Result<Ascent> {
    let w: Vec<f64> = params.flatten().iter().map(|&x| x as f64).collect();
    let mut probe = params.clone();
    maximize_in_box(&w, config, |point| {
        let flat: Vec<f32> = point.iter().map(|&x| x as f32).collect();
        probe.set_flat(&flat)?;
        let (loss, grads) = full_loss_and_grads(&probe, train)?;
        let g = grads
            .iter()
            .flat_map(|t| t.data().iter().map(|&x| x as f64))
            .collect();
        Ok((loss, g))
    })
}

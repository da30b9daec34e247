//! Adam-family updates, the nine optimizer variants, the warmup schedule
//! and minibatch construction.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamKind;
use crate::numerics::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "adam_fullbatch")]
    AdamFullbatch,
    #[serde(rename = "adam_minibatch")]
    AdamMinibatch,
    #[serde(rename = "adam_fullbatch_update_noise")]
    AdamFullbatchUpdateNoise,
    #[serde(rename = "adam_dropout")]
    AdamDropout,
    #[serde(rename = "adamw_wd1")]
    AdamwWd1,
    #[serde(rename = "adamw_wd1_toward_init")]
    AdamwWd1TowardInit,
    #[serde(rename = "adam_lr_3e-4")]
    AdamLr3e4,
    #[serde(rename = "adam_lr_3e-3")]
    AdamLr3e3,
    #[serde(rename = "adam_weight_noise")]
    AdamWeightNoise,
}

impl Variant {
    /// In the order the ablation figure reads them.
    pub const ALL: [Variant; 9] = [
        Variant::AdamFullbatch,
        Variant::AdamMinibatch,
        Variant::AdamFullbatchUpdateNoise,
        Variant::AdamDropout,
        Variant::AdamwWd1,
        Variant::AdamwWd1TowardInit,
        Variant::AdamLr3e4,
        Variant::AdamLr3e3,
        Variant::AdamWeightNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::AdamFullbatch => "adam_fullbatch",
            Variant::AdamMinibatch => "adam_minibatch",
            Variant::AdamFullbatchUpdateNoise => "adam_fullbatch_update_noise",
            Variant::AdamDropout => "adam_dropout",
            Variant::AdamwWd1 => "adamw_wd1",
            Variant::AdamwWd1TowardInit => "adamw_wd1_toward_init",
            Variant::AdamLr3e4 => "adam_lr_3e-4",
            Variant::AdamLr3e3 => "adam_lr_3e-3",
            Variant::AdamWeightNoise => "adam_weight_noise",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::AdamFullbatch => "Adam, full-batch gradients",
            Variant::AdamMinibatch => "Adam, minibatches",
            Variant::AdamFullbatchUpdateNoise => "Adam, full batch, unit Gaussian noise on the update",
            Variant::AdamDropout => "Adam, residual dropout 0.1",
            Variant::AdamwWd1 => "AdamW, weight decay 1 toward the origin",
            Variant::AdamwWd1TowardInit => "AdamW, weight decay 1 toward the initialization",
            Variant::AdamLr3e4 => "Adam, learning rate 3e-4",
            Variant::AdamLr3e3 => "Adam, learning rate 3e-3",
            Variant::AdamWeightNoise => "Adam, Gaussian weight noise 0.01 in the forward pass",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == wanted || v.name().replace('_', "-") == wanted)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown optimizer variant {s:?}; expected one of: {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayTarget {
    Origin,
    Init,
}

/// Fully resolved optimizer settings. [`OptimConfig::new`] fills in the
/// values implied by a variant; individual fields may be overridden after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub variant: Variant,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_target: DecayTarget,
    /// Whether decay also shrinks token/positional embeddings and the
    /// unembedding. Layer-norm parameters are never decayed.
    pub decay_embeddings: bool,
    pub warmup_steps: u64,
    pub max_batch_size: usize,
    pub full_batch: bool,
    pub update_noise: bool,
    pub dropout: f64,
    pub weight_noise: f64,
}

impl OptimConfig {
    pub fn new(variant: Variant) -> Self {
        let mut c = Self {
            variant,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            decay_target: DecayTarget::Origin,
            decay_embeddings: true,
            warmup_steps: 10,
            max_batch_size: 512,
            full_batch: false,
            update_noise: false,
            dropout: 0.0,
            weight_noise: 0.0,
        };
        match variant {
            Variant::AdamFullbatch => c.full_batch = true,
            Variant::AdamMinibatch => {}
            Variant::AdamFullbatchUpdateNoise => {
                c.full_batch = true;
                c.update_noise = true;
            }
            Variant::AdamDropout => c.dropout = 0.1,
            Variant::AdamwWd1 => c.weight_decay = 1.0,
            Variant::AdamwWd1TowardInit => {
                c.weight_decay = 1.0;
                c.decay_target = DecayTarget::Init;
            }
            Variant::AdamLr3e4 => c.lr = 3e-4,
            Variant::AdamLr3e3 => c.lr = 3e-3,
            Variant::AdamWeightNoise => c.weight_noise = 0.01,
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.max_batch_size > 0
            && (0.0..1.0).contains(&self.dropout)
            && self.weight_noise >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings: {self:?}")));
        }
        Ok(())
    }

    /// Linear warmup, constant afterwards. Update `step` counts from 1.
    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(self.lr, self.warmup_steps, step)
    }

    pub fn batch_size(&self, n_train: usize) -> usize {
        if self.full_batch {
            n_train
        } else {
            minibatch_size(n_train, self.max_batch_size)
        }
    }
}

pub fn lr_at(base_lr: f64, warmup_steps: u64, step: u64) -> f64 {
    if warmup_steps == 0 {
        return base_lr;
    }
    base_lr * (step as f64 / warmup_steps as f64).min(1.0)
}

/// `min(cap, ceil(n / 2))`, at least 1.
pub fn minibatch_size(n_train: usize, cap: usize) -> usize {
    n_train.div_ceil(2).min(cap).max(1)
}

/// Per-epoch shuffle seed derived from the run's training seed.
pub fn epoch_seed(train_seed: u64, epoch: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = train_seed
        .wrapping_add(epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One epoch of index batches over `0..n_train`. A full batch keeps table
/// order; smaller batches come from a seeded reshuffle and the final short
/// batch is kept.
pub fn make_batches(n_train: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_train).collect();
    if batch_size < n_train {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Moment buffers and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T = f32> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Number of updates applied so far.
    pub step: u64,
    /// Parameters at initialization, kept for decay toward init.
    pub init: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &[Tensor<T>], keep_init: bool) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
            init: keep_init.then(|| params.iter().map(|p| p.data().to_vec()).collect()),
        }
    }

    fn check(&self, params: &[Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        let same = params.len() == grads.len()
            && params.len() == self.m.len()
            && params
                .iter()
                .zip(grads)
                .zip(&self.m)
                .all(|((p, g), m)| p.shape() == g.shape() && p.numel() == m.len());
        if !same {
            return Err(Error::Shape(
                "parameters, gradients and optimizer moments disagree".into(),
            ));
        }
        Ok(())
    }
}

/// Shared Adam coefficients.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&OptimConfig> for AdamHyper {
    fn from(c: &OptimConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
}

/// Advances the moments by one step and returns, per tensor, the Adam
/// update direction `-m̂ / (sqrt(v̂) + eps)`.
fn adam_directions<T: Scalar>(
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    hyper: AdamHyper,
) -> Vec<Vec<T>> {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let one = T::one();
    let c1 = T::from_f64(1.0 - hyper.beta1.powi(t));
    let c2 = T::from_f64(1.0 - hyper.beta2.powi(t));
    let eps = T::from_f64(hyper.eps);
    grads
        .iter()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .map(|(g, (m, v))| {
            g.data()
                .iter()
                .zip(m.iter_mut().zip(v.iter_mut()))
                .map(|(&gi, (mi, vi))| {
                    *mi = b1 * *mi + (one - b1) * gi;
                    *vi = b2 * *vi + (one - b2) * gi * gi;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    -(m_hat / (v_hat.sqrt() + eps))
                })
                .collect()
        })
        .collect()
}

/// Adds unit Gaussian noise to every entry of an update direction.
pub fn add_update_noise<T: Scalar>(update: &mut [Vec<T>], rng: &mut ChaCha8Rng) {
    for u in update.iter_mut().flatten() {
        let e: f64 = StandardNormal.sample(rng);
        *u = *u + T::from_f64(e);
    }
}

fn apply_direction<T: Scalar>(params: &mut [Tensor<T>], directions: &[Vec<T>], lr: f64) {
    let lr = T::from_f64(lr);
    for (p, d) in params.iter_mut().zip(directions) {
        for (w, &u) in p.data_mut().iter_mut().zip(d) {
            *w = *w + lr * u;
        }
    }
}

/// Standard bias-corrected Adam: `W <- W + lr * ΔW`.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    state.check(params, grads)?;
    let dirs = adam_directions(grads, state, hyper);
    apply_direction(params, &dirs, lr);
    Ok(())
}

/// Decoupled decay `W <- W - lr * wd * (W - target)` on the tensors selected
/// by `decay_mask`.
pub fn apply_decay<T: Scalar>(
    params: &mut [Tensor<T>],
    state: &OptimState<T>,
    lr: f64,
    weight_decay: f64,
    target: DecayTarget,
    decay_mask: &[bool],
) -> Result<()> {
    if weight_decay == 0.0 {
        return Ok(());
    }
    let init = match target {
        DecayTarget::Origin => None,
        DecayTarget::Init => Some(state.init.as_ref().ok_or_else(|| {
            Error::Config("decay toward init needs an initial parameter snapshot".into())
        })?),
    };
    let shrink = T::from_f64(lr * weight_decay);
    for (i, p) in params.iter_mut().enumerate() {
        if !decay_mask[i] {
            continue;
        }
        match init {
            None => {
                for w in p.data_mut() {
                    *w = *w - shrink * (*w - T::zero());
                }
            }
            Some(init) => {
                for (w, &t) in p.data_mut().iter_mut().zip(&init[i]) {
                    *w = *w - shrink * (*w - t);
                }
            }
        }
    }
    Ok(())
}

/// Adam followed by decoupled weight decay toward `target`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    lr: f64,
    hyper: AdamHyper,
    weight_decay: f64,
    target: DecayTarget,
    decay_mask: &[bool],
) -> Result<()> {
    adam_step(params, grads, state, lr, hyper)?;
    apply_decay(params, state, lr, weight_decay, target, decay_mask)
}

/// Which tensors the configured decay touches.
pub fn decay_mask(config: &OptimConfig, kinds: &[ParamKind]) -> Vec<bool> {
    kinds
        .iter()
        .map(|k| match k {
            ParamKind::Matrix => true,
            ParamKind::Embedding => config.decay_embeddings,
            ParamKind::NormGain | ParamKind::NormBias => false,
        })
        .collect()
}

/// One optimizer update for `config`; returns the learning rate used.
pub fn step<T: Scalar>(
    config: &OptimConfig,
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimState<T>,
    decay_mask: &[bool],
    noise_rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    state.check(params, grads)?;
    let noise_rng = match (config.update_noise, noise_rng) {
        (true, None) => return Err(Error::Config("update noise needs an rng".into())),
        (true, rng) => rng,
        (false, _) => None,
    };
    let lr = config.lr_at(state.step + 1);
    let mut dirs = adam_directions(grads, state, config.into());
    if let Some(rng) = noise_rng {
        add_update_noise(&mut dirs, rng);
    }
    apply_direction(params, &dirs, lr);
    apply_decay(
        params,
        state,
        lr,
        config.weight_decay,
        config.decay_target,
        decay_mask,
    )?;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_f64([1], &[w]).unwrap()]
    }

    const HYPER: AdamHyper = AdamHyper {
        beta1: 0.9,
        beta2: 0.98,
        eps: 1e-8,
    };

    #[test]
    fn warmup_schedule() {
        let c = OptimConfig::new(Variant::AdamwWd1);
        assert!((c.lr_at(5) - 0.5e-3).abs() < 1e-18);
        assert_eq!(c.lr_at(10), 1e-3);
        assert_eq!(c.lr_at(100_000), 1e-3);
        assert!((c.lr_at(1) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn batch_size_rule() {
        assert_eq!(minibatch_size(4656, 512), 512);
        assert_eq!(minibatch_size(600, 512), 300);
        assert_eq!(minibatch_size(7, 512), 4);
        let full = OptimConfig::new(Variant::AdamFullbatch);
        assert_eq!(full.batch_size(4656), 4656);
        assert_eq!(make_batches(4656, 4656, 1).len(), 1);
    }

    #[test]
    fn batches_cover_each_index_once() {
        let batches = make_batches(1001, 300, 42);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), [300, 300, 300, 101]);
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..1001).collect::<Vec<_>>());
        assert_eq!(batches, make_batches(1001, 300, 42));
        assert_ne!(batches, make_batches(1001, 300, epoch_seed(42, 1)));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // f(w) = w^2/2, gradient w
        let mut w = scalar(1.0);
        let mut state = OptimState::new(&w, false);
        let g = scalar(1.0);
        adam_step(&mut w, &g, &mut state, 1e-3, HYPER).unwrap();
        assert!((w[0].data()[0] - (1.0 - 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_leaves_params_alone() {
        let mut w = scalar(0.7);
        let mut state = OptimState::new(&w, false);
        for _ in 0..20 {
            adam_step(&mut w, &scalar(0.0), &mut state, 1e-3, HYPER).unwrap();
        }
        assert_eq!(w[0].data()[0], 0.7);
    }

    #[test]
    fn pure_decay_shrinks_geometrically() {
        let mut w = scalar(2.0);
        let mut state = OptimState::new(&w, false);
        adamw_step(&mut w, &scalar(0.0), &mut state, 1e-3, HYPER, 1.0, DecayTarget::Origin, &[true])
            .unwrap();
        assert!((w[0].data()[0] - 2.0 * (1.0 - 1e-3)).abs() < 1e-15);
    }

    #[test]
    fn decay_toward_init_fixed_point() {
        let mut w = scalar(0.3);
        let mut state = OptimState::new(&w, true);
        for _ in 0..10 {
            adamw_step(&mut w, &scalar(0.0), &mut state, 1e-3, HYPER, 1.0, DecayTarget::Init, &[true])
                .unwrap();
        }
        assert_eq!(w[0].data()[0], 0.3);
    }

    #[test]
    fn variant_names_parse() {
        assert_eq!(Variant::ALL.len(), 9);
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("sgd".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_defaults() {
        assert_eq!(OptimConfig::new(Variant::AdamLr3e4).lr, 3e-4);
        assert_eq!(OptimConfig::new(Variant::AdamLr3e3).lr, 3e-3);
        assert_eq!(OptimConfig::new(Variant::AdamDropout).dropout, 0.1);
        assert_eq!(OptimConfig::new(Variant::AdamWeightNoise).weight_noise, 0.01);
        assert_eq!(OptimConfig::new(Variant::AdamMinibatch).weight_decay, 0.0);
        let init = OptimConfig::new(Variant::AdamwWd1TowardInit);
        assert_eq!((init.weight_decay, init.decay_target), (1.0, DecayTarget::Init));
    }

    #[test]
    fn decay_mask_skips_norms() {
        let c = OptimConfig::new(Variant::AdamwWd1);
        let kinds = [
            ParamKind::Embedding,
            ParamKind::Matrix,
            ParamKind::NormGain,
            ParamKind::NormBias,
        ];
        assert_eq!(decay_mask(&c, &kinds), [true, true, false, false]);
        let c = OptimConfig {
            decay_embeddings: false,
            ..c
        };
        assert_eq!(decay_mask(&c, &kinds), [false, true, false, false]);
    }
}

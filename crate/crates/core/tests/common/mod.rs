//! Finite-difference gradient checking shared by the integration tests.
#![allow(dead_code)]

use grokking_core::datasets::{build_table, Equation, OperationKind, OperationSpec, Vocabulary};
use grokking_core::model::{loss_and_grads, ForwardNoise, TransformerConfig, TransformerParams};
use grokking_core::numerics::{Tape, Tensor, Var};
use grokking_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
const REL_TOL: f64 = 1e-3;
const ABS_TOL: f64 = 1e-5;

pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_TOL || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces any output to a scalar with fixed random weights so every output
/// coordinate contributes to the checked gradient.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var) -> Var {
    if tape.value(out).numel() == 1 {
        return out;
    }
    let w = tape.constant(random(tape.shape(out), 999));
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

/// Compares tape gradients of `f` with respect to each input against finite
/// differences of the same function.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        let root = weighted_sum(&mut tape, out);
        tape.value(root).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let root = weighted_sum(&mut tape, out);
    tape.backward(root).unwrap();

    for (i, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[j];
            assert!(
                close(a, numeric),
                "{name}: input {i} coordinate {j}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

pub fn tiny_model(seed: u64) -> (TransformerParams<f64>, Vec<Equation>) {
    let spec = OperationSpec::new(OperationKind::ModAdd, 5).unwrap();
    let vocab = Vocabulary::for_spec(&spec);
    let cfg = TransformerConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_mlp: 32,
        max_seq: 5,
        vocab_size: vocab.len(),
        init_seed: seed,
        // larger than the training init so attention is not near-uniform
        init_std: 0.5,
    };
    let params = TransformerParams::<f64>::init(&cfg).unwrap();
    let table = build_table(&spec).unwrap();
    let eqs = table.iter().step_by(3).copied().collect();
    (params, eqs)
}

pub fn model_check(noise: ForwardNoise) {
    let (params, eqs) = tiny_model(3);
    let rng = || ChaCha8Rng::seed_from_u64(77);
    let loss = |p: &TransformerParams<f64>| loss_and_grads(p, &eqs, noise, Some(&mut rng())).unwrap().0;
    let (_, grads) = loss_and_grads(&params, &eqs, noise, Some(&mut rng())).unwrap();
    for (ti, g) in grads.iter().enumerate() {
        for j in 0..g.numel() {
            let mut plus = params.clone();
            plus.tensors[ti].data_mut()[j] += H;
            let mut minus = params.clone();
            minus.tensors[ti].data_mut()[j] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let a = g.data()[j];
            assert!(
                close(a, numeric),
                "tensor {ti} coordinate {j}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

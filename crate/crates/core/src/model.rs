//! Two-layer decoder-only transformer over the five-token equation format.
//!
//! Pre-norm residual blocks (`x + attn(ln(x))`, `x + mlp(ln(x))`), a final
//! layer norm, and an unembedding matrix separate from the token embedding.
//! Attention and MLP projections carry no biases.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::algebra::{coset_partition, subgroup_closure, CosetSide, Permutation};
use crate::datasets::{Equation, OperationSpec, Vocabulary, ANSWER_POSITION, EQUATION_LEN};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
    pub init_seed: u64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.02
}

impl TransformerConfig {
    /// 2 layers, width 128, 4 heads, MLP width 512.
    pub fn standard(vocab_size: usize, init_seed: u64) -> Self {
        Self {
            n_layers: 2,
            d_model: 128,
            n_heads: 4,
            d_mlp: 512,
            max_seq: EQUATION_LEN,
            vocab_size,
            init_seed,
            init_std: default_init_std(),
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.vocab_size == 0 {
            return bad(format!("degenerate model dimensions: {self:?}"));
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.d_mlp != 4 * self.d_model {
            return bad(format!("d_mlp {} must equal 4 * d_model", self.d_mlp));
        }
        if self.max_seq < EQUATION_LEN {
            return bad(format!("max_seq {} is shorter than an equation", self.max_seq));
        }
        if !(self.init_std > 0.0) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }
}

/// Role of a parameter tensor; decides weight decay eligibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Token/positional embeddings and the unembedding.
    Embedding,
    /// Attention and MLP projection weights.
    Matrix,
    NormGain,
    NormBias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

const PER_LAYER: usize = 10;
const LN1_GAIN: usize = 0;
const LN1_BIAS: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WO: usize = 5;
const LN2_GAIN: usize = 6;
const LN2_BIAS: usize = 7;
const W_IN: usize = 8;
const W_OUT: usize = 9;

/// Names, roles and shapes of every parameter tensor, in storage order.
pub fn param_layout(config: &TransformerConfig) -> Vec<ParamInfo> {
    let d = config.d_model;
    let info = |name: String, kind, shape: &[usize]| ParamInfo {
        name,
        kind,
        shape: shape.to_vec(),
    };
    let mut out = vec![
        info("token_embed".into(), ParamKind::Embedding, &[config.vocab_size, d]),
        info("pos_embed".into(), ParamKind::Embedding, &[config.max_seq, d]),
    ];
    for l in 0..config.n_layers {
        let n = |s: &str| format!("layer{l}.{s}");
        out.extend([
            info(n("ln1_gain"), ParamKind::NormGain, &[d]),
            info(n("ln1_bias"), ParamKind::NormBias, &[d]),
            info(n("wq"), ParamKind::Matrix, &[d, d]),
            info(n("wk"), ParamKind::Matrix, &[d, d]),
            info(n("wv"), ParamKind::Matrix, &[d, d]),
            info(n("wo"), ParamKind::Matrix, &[d, d]),
            info(n("ln2_gain"), ParamKind::NormGain, &[d]),
            info(n("ln2_bias"), ParamKind::NormBias, &[d]),
            info(n("w_in"), ParamKind::Matrix, &[d, config.d_mlp]),
            info(n("w_out"), ParamKind::Matrix, &[config.d_mlp, d]),
        ]);
    }
    out.extend([
        info("final_ln_gain".into(), ParamKind::NormGain, &[d]),
        info("final_ln_bias".into(), ParamKind::NormBias, &[d]),
        info("unembed".into(), ParamKind::Embedding, &[d, config.vocab_size]),
    ]);
    out
}

/// All learnable weights, stored flat in [`param_layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams<T = f32> {
    pub config: TransformerConfig,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> TransformerParams<T> {
    /// Normal weights truncated at two standard deviations by resampling and
    /// rescaled so their standard deviation is `init_std`; layer-norm gains 1
    /// and biases 0.
    pub fn init(config: &TransformerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let tensors = param_layout(config)
            .into_iter()
            .map(|info| {
                let numel: usize = info.shape.iter().product();
                let data: Vec<T> = match info.kind {
                    ParamKind::NormGain => vec![T::one(); numel],
                    ParamKind::NormBias => vec![T::zero(); numel],
                    ParamKind::Embedding | ParamKind::Matrix => (0..numel)
                        .map(|_| T::from_f64(truncated_normal(&mut rng) * config.init_std / TRUNCATED_STD))
                        .collect(),
                };
                Tensor::new(info.shape, data)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config: *config,
            tensors,
        })
    }

    pub fn from_tensors(config: TransformerConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != tensors.len()
            || layout.iter().zip(&tensors).any(|(i, t)| i.shape != t.shape())
        {
            return Err(Error::Shape(
                "parameter tensors do not match the model layout".into(),
            ));
        }
        Ok(Self { config, tensors })
    }

    pub fn layout(&self) -> Vec<ParamInfo> {
        param_layout(&self.config)
    }

    pub fn cast<U: Scalar>(&self) -> TransformerParams<U> {
        TransformerParams {
            config: self.config,
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn token_embed(&self) -> &Tensor<T> {
        &self.tensors[0]
    }

    pub fn unembed(&self) -> &Tensor<T> {
        self.tensors.last().expect("unembedding present")
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Attention and MLP weight count.
    pub fn non_embedding_count(&self) -> usize {
        self.layout()
            .iter()
            .zip(&self.tensors)
            .filter(|(i, _)| i.kind == ParamKind::Matrix)
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }
}

/// Standard deviation of a unit normal truncated to [-2, 2].
const TRUNCATED_STD: f64 = 0.879_625_7;

fn truncated_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Stochastic regularizers active during a training forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForwardNoise {
    /// Residual dropout rate.
    pub dropout: f64,
    /// Standard deviation of Gaussian noise added to every weight.
    pub weight_noise: f64,
}

impl ForwardNoise {
    pub fn is_active(&self) -> bool {
        self.dropout > 0.0 || self.weight_noise > 0.0
    }
}

/// Which sequence positions produce logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    AllPositions,
    /// Only the final input position. The last block then computes queries,
    /// the MLP and the unembedding for that position alone.
    LastPosition,
}

pub struct Graph {
    /// One leaf per parameter tensor, in layout order.
    pub params: Vec<Var>,
    /// `[B, T, V]` for [`Readout::AllPositions`], `[B, 1, V]` otherwise.
    pub logits: Var,
}

fn dropout<T: Scalar>(tape: &mut Tape<T>, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    let keep = 1.0 - rate;
    let scale = T::from_f64(1.0 / keep);
    let shape = tape.shape(x).to_vec();
    let numel = tape.value(x).numel();
    let mask = (0..numel)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

/// Records the forward pass for a row-major `[batch, seq_len]` token matrix.
///
/// With `track_grads` the parameters become trainable leaves. Noise is only
/// sampled when `noise` is active, in which case `rng` must be supplied.
pub fn build_graph<T: Scalar>(
    tape: &mut Tape<T>,
    params: &TransformerParams<T>,
    tokens: &[usize],
    seq_len: usize,
    readout: Readout,
    track_grads: bool,
    noise: ForwardNoise,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Graph> {
    let cfg = &params.config;
    if seq_len == 0 || seq_len > cfg.max_seq || tokens.len() % seq_len != 0 || tokens.is_empty() {
        return Err(Error::Shape(format!(
            "{} tokens cannot form sequences of length {seq_len} (max {})",
            tokens.len(),
            cfg.max_seq
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Domain(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    if noise.is_active() && rng.is_none() {
        return Err(Error::Config("stochastic forward pass needs an rng".into()));
    }
    let batch = tokens.len() / seq_len;
    let d = cfg.d_model;

    let mut leaves = Vec::with_capacity(params.tensors.len());
    for t in &params.tensors {
        let value = if noise.weight_noise > 0.0 {
            let rng = rng.as_deref_mut().expect("checked above");
            let sigma = noise.weight_noise;
            let data = t
                .data()
                .iter()
                .map(|&w| {
                    let e: f64 = StandardNormal.sample(rng);
                    w + T::from_f64(sigma * e)
                })
                .collect();
            Tensor::new(t.shape().to_vec(), data)?
        } else {
            t.clone()
        };
        leaves.push(if track_grads {
            tape.param(value)
        } else {
            tape.constant(value)
        });
    }
    let p = |i: usize| leaves[i];
    let layer = |l: usize, i: usize| leaves[2 + l * PER_LAYER + i];
    let n_final = 2 + cfg.n_layers * PER_LAYER;

    let emb = tape.embedding(p(0), tokens)?;
    let emb = tape.reshape(emb, &[batch, seq_len, d])?;
    let pos = tape.reshape(p(1), &[1, cfg.max_seq, d])?;
    let pos = tape.narrow_seq(pos, 0, seq_len)?;
    let pos = tape.reshape(pos, &[seq_len, d])?;
    let mut x = tape.add_broadcast(emb, pos)?;

    let mut causal = vec![false; seq_len * seq_len];
    for i in 0..seq_len {
        for j in i + 1..seq_len {
            causal[i * seq_len + j] = true;
        }
    }
    let attn_scale = T::from_f64(1.0 / (cfg.d_head() as f64).sqrt());

    for l in 0..cfg.n_layers {
        let last_only = readout == Readout::LastPosition && l + 1 == cfg.n_layers;
        let h = tape.layer_norm(x, layer(l, LN1_GAIN), layer(l, LN1_BIAS))?;
        let k = tape.matmul(h, layer(l, WK))?;
        let v = tape.matmul(h, layer(l, WV))?;
        let (hq, xq, q_len) = if last_only {
            (
                tape.narrow_seq(h, seq_len - 1, 1)?,
                tape.narrow_seq(x, seq_len - 1, 1)?,
                1,
            )
        } else {
            (h, x, seq_len)
        };
        let q = tape.matmul(hq, layer(l, WQ))?;
        let qh = tape.split_heads(q, cfg.n_heads)?;
        let kh = tape.split_heads(k, cfg.n_heads)?;
        let vh = tape.split_heads(v, cfg.n_heads)?;
        let scores = tape.batch_matmul(qh, kh, true)?;
        let mut scores = tape.scale(scores, attn_scale);
        if q_len == seq_len {
            scores = tape.masked_fill(scores, &causal, &[seq_len, seq_len])?;
        }
        let att = tape.softmax(scores);
        let o = tape.batch_matmul(att, vh, false)?;
        let o = tape.concat_heads(o, cfg.n_heads)?;
        let mut o = tape.matmul(o, layer(l, WO))?;
        if noise.dropout > 0.0 {
            o = dropout(tape, o, noise.dropout, rng.as_deref_mut().expect("checked"))?;
        }
        x = tape.add(xq, o)?;

        let h2 = tape.layer_norm(x, layer(l, LN2_GAIN), layer(l, LN2_BIAS))?;
        let m = tape.matmul(h2, layer(l, W_IN))?;
        let m = tape.gelu(m);
        let mut m = tape.matmul(m, layer(l, W_OUT))?;
        if noise.dropout > 0.0 {
            m = dropout(tape, m, noise.dropout, rng.as_deref_mut().expect("checked"))?;
        }
        x = tape.add(x, m)?;
    }
    let x = tape.layer_norm(x, p(n_final), p(n_final + 1))?;
    let logits = tape.matmul(x, p(n_final + 2))?;
    Ok(Graph {
        params: leaves,
        logits,
    })
}

/// Deterministic logits `[B, T, V]` for `[B, T]` token rows.
pub fn forward<T: Scalar>(params: &TransformerParams<T>, rows: &[Vec<usize>]) -> Result<Tensor<T>> {
    let seq_len = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != seq_len) {
        return Err(Error::Shape("token rows have unequal lengths".into()));
    }
    let flat: Vec<usize> = rows.iter().flatten().copied().collect();
    let mut tape = Tape::new();
    let g = build_graph(
        &mut tape,
        params,
        &flat,
        seq_len,
        Readout::AllPositions,
        false,
        ForwardNoise::default(),
        None,
    )?;
    Ok(tape.value(g.logits).clone())
}

/// Slice of `[B, T, V]` logits at the `=` position, which predicts the
/// answer token.
pub fn answer_logits<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 3 || s[1] <= ANSWER_POSITION {
        return Err(Error::Shape(format!(
            "answer_logits: expected [B, T>{ANSWER_POSITION}, V], got {s:?}"
        )));
    }
    let (batch, seq, vocab) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(batch * vocab);
    for b in 0..batch {
        let at = (b * seq + ANSWER_POSITION) * vocab;
        out.extend_from_slice(&logits.data()[at..at + vocab]);
    }
    Tensor::new([batch, vocab], out)
}

/// `a <op> b =` prefixes of the given equations, flattened.
pub fn prompt_tokens(equations: &[Equation]) -> Vec<usize> {
    equations
        .iter()
        .flat_map(|e| e.tokens[..=ANSWER_POSITION].iter().copied())
        .collect()
}

/// Answer-position logits `[B, V]` without gradient tracking.
pub fn predict_answers<T: Scalar>(
    params: &TransformerParams<T>,
    equations: &[Equation],
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let g = build_graph(
        &mut tape,
        params,
        &prompt_tokens(equations),
        ANSWER_POSITION + 1,
        Readout::LastPosition,
        false,
        ForwardNoise::default(),
        None,
    )?;
    let logits = tape.value(g.logits).clone();
    let vocab = params.config.vocab_size;
    logits.reshaped([equations.len(), vocab])
}

/// Mean answer cross-entropy over `equations` and its gradient with respect
/// to every parameter tensor (layout order).
pub fn loss_and_grads<T: Scalar>(
    params: &TransformerParams<T>,
    equations: &[Equation],
    noise: ForwardNoise,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let g = build_graph(
        &mut tape,
        params,
        &prompt_tokens(equations),
        ANSWER_POSITION + 1,
        Readout::LastPosition,
        true,
        noise,
        rng,
    )?;
    let vocab = params.config.vocab_size;
    let logits = tape.reshape(g.logits, &[equations.len(), vocab])?;
    let targets: Vec<usize> = equations.iter().map(Equation::c).collect();
    let mask = vec![true; equations.len()];
    let loss = tape.softmax_cross_entropy(logits, &targets, &mask)?;
    tape.backward(loss)?;
    let value = tape.value(loss).item().to_f64();
    let grads = g
        .params
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| {
            tape.take_grad(v)
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();
    Ok((value, grads))
}

/// Rows of the output layer, one per vocabulary symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingExport {
    pub symbols: Vec<String>,
    /// Coloring label per row: residue mod 8 for residues, coset id of
    /// `<(0,3)(1,4), (1,2)(3,4)>` for permutations, `-` for `<op>`/`=`.
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f32>>,
}

pub fn export_embeddings(
    params: &TransformerParams<f32>,
    spec: &OperationSpec,
) -> Result<EmbeddingExport> {
    let vocab = Vocabulary::for_spec(spec);
    let cfg = &params.config;
    if vocab.len() != cfg.vocab_size {
        return Err(Error::Config(format!(
            "operation vocabulary has {} symbols but the model has {}",
            vocab.len(),
            cfg.vocab_size
        )));
    }
    let unembed = params.unembed().data();
    let (d, v) = (cfg.d_model, cfg.vocab_size);
    let rows = (0..v)
        .map(|tok| (0..d).map(|i| unembed[i * v + tok]).collect())
        .collect();
    let coset_labels = if spec.kind.is_permutation_group() {
        let h = subgroup_closure(&[
            Permutation::from_cycles("(0,3)(1,4)")?,
            Permutation::from_cycles("(1,2)(3,4)")?,
        ]);
        Some(coset_partition(&h, CosetSide::Left)?.labels)
    } else {
        None
    };
    let labels = (0..v)
        .map(|tok| {
            if tok >= vocab.num_elements() {
                "-".to_string()
            } else if let Some(l) = &coset_labels {
                l[tok].to_string()
            } else {
                (tok % 8).to_string()
            }
        })
        .collect();
    Ok(EmbeddingExport {
        symbols: vocab.symbols().to_vec(),
        labels,
        rows,
    })
}

/// `symbol,label,v0..v{d-1}` with 9 significant digits per value.
pub fn write_embeddings_csv(path: &Path, export: &EmbeddingExport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = export.rows.first().map_or(0, Vec::len);
    let mut header = vec!["symbol".to_string(), "label".to_string()];
    header.extend((0..d).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for ((sym, label), row) in export.symbols.iter().zip(&export.labels).zip(&export.rows) {
        let mut rec = vec![sym.clone(), label.clone()];
        rec.extend(row.iter().map(|x| format!("{x:.8e}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_embeddings_csv(path: &Path) -> Result<EmbeddingExport> {
    let mut r = csv::Reader::from_path(path)?;
    let mut export = EmbeddingExport {
        symbols: Vec::new(),
        labels: Vec::new(),
        rows: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec?;
        export.symbols.push(rec[0].to_string());
        export.labels.push(rec[1].to_string());
        let row = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f32>()
                    .map_err(|e| Error::Config(format!("bad embedding value {s:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        export.rows.push(row);
    }
    Ok(export)
}

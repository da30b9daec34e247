//! The training loop: minibatches, forward/backward, optimizer updates,
//! periodic full-split evaluation, JSONL metrics and checkpoints.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{
    build_table, inject_outliers, split, validate_fraction, DatasetSplit, Equation, OperationKind,
    OperationSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::{
    loss_and_grads, param_layout, predict_answers, ForwardNoise, TransformerConfig,
    TransformerParams,
};
use crate::numerics::Tensor;
use crate::optim::{self, decay_mask, epoch_seed, DecayTarget, OptimConfig, OptimState, Variant};

/// Width and depth of the transformer; the MLP is always four times wider
/// than the residual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            n_layers: 2,
            d_model: 128,
            n_heads: 4,
        }
    }
}

/// Everything that determines a run. Serialized verbatim into `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub op: OperationSpec,
    pub fraction: f64,
    pub split_seed: u64,
    pub init_seed: u64,
    /// Drives batch order and any optimizer/forward noise.
    pub train_seed: u64,
    #[serde(default)]
    pub outliers: usize,
    #[serde(default)]
    pub outlier_seed: u64,
    pub optim: OptimConfig,
    #[serde(default)]
    pub model: ModelShape,
    pub max_steps: u64,
    pub eval_every: u64,
    /// Stop once validation accuracy reaches this level.
    #[serde(default)]
    pub stop_at_val_acc: Option<f64>,
    /// Must be a multiple of `eval_every`.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    /// Record elapsed seconds in the metrics; off by default so metric files
    /// of identical runs are byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
}

pub const DEFAULT_BUDGET: u64 = 100_000;
pub const DEFAULT_EVAL_EVERY: u64 = 100;

impl TrainConfig {
    pub fn new(op: OperationSpec, fraction: f64, variant: Variant) -> Self {
        Self {
            op,
            fraction,
            split_seed: 0,
            init_seed: 0,
            train_seed: 0,
            outliers: 0,
            outlier_seed: 0,
            optim: OptimConfig::new(variant),
            model: ModelShape::default(),
            max_steps: DEFAULT_BUDGET,
            eval_every: DEFAULT_EVAL_EVERY,
            stop_at_val_acc: None,
            checkpoint_every: None,
            record_wall_time: false,
        }
    }

    /// Sets split, init and training seeds (and the outlier seed) to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split_seed = seed;
        self.init_seed = seed;
        self.train_seed = seed;
        self.outlier_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.op.validate()?;
        validate_fraction(self.fraction)?;
        self.optim.validate()?;
        self.transformer_config(1).validate()?;
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if let Some(c) = self.checkpoint_every {
            if c == 0 || c % self.eval_every != 0 {
                return Err(Error::Config(format!(
                    "checkpoint_every ({c}) must be a positive multiple of eval_every ({})",
                    self.eval_every
                )));
            }
        }
        if let Some(t) = self.stop_at_val_acc {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("stop_at_val_acc {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn transformer_config(&self, vocab_size: usize) -> TransformerConfig {
        let m = self.model;
        TransformerConfig {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_mlp: 4 * m.d_model,
            ..TransformerConfig::standard(vocab_size, self.init_seed)
        }
    }

    /// Vocabulary and the (possibly outlier-injected) train/validation split.
    pub fn dataset(&self) -> Result<(Vocabulary, DatasetSplit)> {
        let vocab = Vocabulary::for_spec(&self.op);
        let table = build_table(&self.op)?;
        let data = split(&table, self.fraction, self.split_seed)?;
        let data = inject_outliers(&data, self.outliers, self.outlier_seed)?;
        if data.train.is_empty() || data.val.is_empty() {
            return Err(Error::Config(format!(
                "fraction {} leaves an empty split of the {}-equation table",
                self.fraction,
                table.len()
            )));
        }
        Ok((vocab, data))
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Compact, filesystem-safe run identifier.
    pub fn run_id(&self) -> String {
        let mut id = format!(
            "{}_{}_f{:.3}_s{}",
            self.op.label(),
            self.optim.variant,
            self.fraction,
            self.init_seed
        );
        if self.outliers > 0 {
            id.push_str(&format!("_k{}", self.outliers));
        }
        id.push('_');
        id.push_str(&self.hash()[..8]);
        id
    }
}

/// Contents of `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub config_hash: String,
    pub config: TrainConfig,
}

impl RunManifest {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            config: config.clone(),
        }
    }
}

/// One evaluation line of `metrics.jsonl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// Ran the whole budget.
    Completed,
    /// Validation accuracy hit the stop threshold.
    Stopped,
    /// Returned early on request; can be checkpointed and resumed.
    Paused,
    /// The training loss stopped being finite at `step`.
    Diverged { step: u64, loss: f64 },
}

/// Mean answer cross-entropy and accuracy; never touches the parameters.
pub fn evaluate(params: &TransformerParams<f32>, equations: &[Equation]) -> Result<(f64, f64)> {
    const CHUNK: usize = 2048;
    if equations.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty set".into()));
    }
    let vocab = params.config.vocab_size;
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for chunk in equations.chunks(CHUNK) {
        let logits = predict_answers(params, chunk)?;
        for (row, eq) in logits.data().chunks(vocab).zip(chunk) {
            let (l, hit) = answer_loss(row, eq.c());
            loss += l;
            correct += usize::from(hit);
        }
    }
    let n = equations.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Cross-entropy of one logit row against `target`, and whether the
/// first maximal logit is the target.
fn answer_loss(row: &[f32], target: usize) -> (f64, bool) {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    let max = row[best] as f64;
    let lse = row.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln() + max;
    (lse - row[target] as f64, best == target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// First logged step at which the accuracy on `which` is at least
/// `threshold`.
pub fn steps_to_threshold(metrics: &[MetricsRecord], threshold: f64, which: Split) -> Option<u64> {
    metrics
        .iter()
        .find(|m| {
            let acc = match which {
                Split::Train => m.train_acc,
                Split::Val => m.val_acc,
            };
            acc >= threshold
        })
        .map(|m| m.step)
}

/// Seeds the per-step noise stream independently of batch order.
fn noise_rng(train_seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
    rng.set_stream(step);
    rng
}

/// Snapshot from which training resumes bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub params: TransformerParams<f32>,
    pub state: OptimState<f32>,
}

/// A run in progress. All randomness after initialization is a pure
/// function of `(train_seed, step)`, so no generator state is carried.
pub struct Trainer {
    config: TrainConfig,
    vocab: Vocabulary,
    data: DatasetSplit,
    params: TransformerParams<f32>,
    state: OptimState<f32>,
    decay_mask: Vec<bool>,
    batch_size: usize,
    epoch: Option<(u64, Vec<Vec<usize>>)>,
    clock: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (vocab, data) = config.dataset()?;
        let params = TransformerParams::init(&config.transformer_config(vocab.len()))?;
        let keep_init = config.optim.decay_target == DecayTarget::Init;
        let state = OptimState::new(&params.tensors, keep_init);
        Ok(Self::assemble(config, vocab, data, params, state))
    }

    pub fn resume(checkpoint: Checkpoint) -> Result<Self> {
        let Checkpoint {
            config,
            step,
            params,
            state,
        } = checkpoint;
        config.validate()?;
        let (vocab, data) = config.dataset()?;
        if params.config != config.transformer_config(vocab.len()) || state.step != step {
            return Err(Error::Config(
                "checkpoint does not belong to its recorded configuration".into(),
            ));
        }
        Ok(Self::assemble(config, vocab, data, params, state))
    }

    fn assemble(
        config: TrainConfig,
        vocab: Vocabulary,
        data: DatasetSplit,
        params: TransformerParams<f32>,
        state: OptimState<f32>,
    ) -> Self {
        let kinds: Vec<_> = params.layout().iter().map(|i| i.kind).collect();
        Self {
            decay_mask: decay_mask(&config.optim, &kinds),
            batch_size: config.optim.batch_size(data.train.len()),
            config,
            vocab,
            data,
            params,
            state,
            epoch: None,
            clock: Instant::now(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn data(&self) -> &DatasetSplit {
        &self.data
    }

    pub fn params(&self) -> &TransformerParams<f32> {
        &self.params
    }

    /// Updates applied so far.
    pub fn step(&self) -> u64 {
        self.state.step
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step(),
            params: self.params.clone(),
            state: self.state.clone(),
        }
    }

    pub fn into_params(self) -> TransformerParams<f32> {
        self.params
    }

    /// Evaluates both splits at the current step.
    pub fn evaluate(&self) -> Result<MetricsRecord> {
        let (train_loss, train_acc) = evaluate(&self.params, &self.data.train)?;
        let (val_loss, val_acc) = evaluate(&self.params, &self.data.val)?;
        let step = self.step();
        Ok(MetricsRecord {
            step,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            lr: if step == 0 { 0.0 } else { self.config.optim.lr_at(step) },
            wall_time_s: if self.config.record_wall_time {
                self.clock.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }

    fn batch_for(&mut self, update: u64) -> Vec<Equation> {
        let n = self.data.train.len();
        let per_epoch = n.div_ceil(self.batch_size) as u64;
        let (epoch, index) = (update / per_epoch, (update % per_epoch) as usize);
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            let seed = epoch_seed(self.config.train_seed, epoch);
            self.epoch = Some((epoch, optim::make_batches(n, self.batch_size, seed)));
        }
        let batches = &self.epoch.as_ref().expect("filled above").1;
        batches[index].iter().map(|&i| self.data.train[i]).collect()
    }

    /// Applies one optimizer update and returns the minibatch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let update = self.step();
        let batch = self.batch_for(update);
        let oc = &self.config.optim;
        let noise = ForwardNoise {
            dropout: oc.dropout,
            weight_noise: oc.weight_noise,
        };
        let mut rng = noise_rng(self.config.train_seed, update);
        let (loss, grads) = loss_and_grads(&self.params, &batch, noise, Some(&mut rng))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "training loss",
                step: update + 1,
                value: loss,
            });
        }
        optim::step(
            &self.config.optim,
            &mut self.params.tensors,
            &grads,
            &mut self.state,
            &self.decay_mask,
            Some(&mut rng),
        )?;
        Ok(loss)
    }

    /// Trains until the budget, the stop threshold, divergence, or `pause_at`
    /// updates. Emits a record at step 0 (fresh runs only), every multiple of
    /// `eval_every`, and the final step.
    pub fn run(
        &mut self,
        pause_at: Option<u64>,
        on_record: &mut dyn FnMut(&Trainer, &MetricsRecord) -> Result<()>,
    ) -> Result<RunStatus> {
        let max = self.config.max_steps;
        if self.step() == 0 {
            let rec = self.evaluate()?;
            on_record(self, &rec)?;
            if self.should_stop(&rec) {
                return Ok(RunStatus::Stopped);
            }
        }
        while self.step() < max {
            if pause_at.is_some_and(|p| self.step() >= p) {
                return Ok(RunStatus::Paused);
            }
            match self.train_step() {
                Ok(_) => {}
                Err(Error::NonFinite { step, value, .. }) => {
                    return Ok(RunStatus::Diverged { step, loss: value });
                }
                Err(e) => return Err(e),
            }
            let step = self.step();
            if step % self.config.eval_every == 0 || step == max {
                let rec = self.evaluate()?;
                on_record(self, &rec)?;
                if self.should_stop(&rec) {
                    return Ok(RunStatus::Stopped);
                }
            }
        }
        Ok(RunStatus::Completed)
    }

    fn should_stop(&self, rec: &MetricsRecord) -> bool {
        self.config.stop_at_val_acc.is_some_and(|t| rec.val_acc >= t)
    }
}

/// Trains in memory, collecting the metric stream.
pub fn train(config: TrainConfig) -> Result<(Vec<MetricsRecord>, RunStatus, TransformerParams<f32>)> {
    let mut trainer = Trainer::new(config)?;
    let mut metrics = Vec::new();
    let status = trainer.run(None, &mut |_, r| {
        metrics.push(*r);
        Ok(())
    })?;
    Ok((metrics, status, trainer.into_params()))
}

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const STATUS_FILE: &str = "status.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const FINAL_CHECKPOINT_FILE: &str = "final.bin";

/// Where a run lives on disk and what it leaves behind.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
    pub save_final: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<MetricsRecord>,
    pub status: RunStatus,
    pub params: TransformerParams<f32>,
}

/// Trains `config` inside `dir`, writing `config.json`, `metrics.jsonl`
/// (appended as the run goes) and `status.json`. If a checkpoint for the
/// same configuration is present, the run resumes from it.
pub fn train_in_dir(config: &TrainConfig, dir: &RunDir) -> Result<RunOutcome> {
    let root = &dir.path;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_json(&root.join(CONFIG_FILE), &RunManifest::new(config))?;
    let metrics_path = root.join(METRICS_FILE);
    let ckpt_path = root.join(CHECKPOINT_FILE);

    let (mut trainer, mut metrics) = match ckpt_path.exists() {
        true => {
            let ckpt = load_checkpoint(&ckpt_path)?;
            if ckpt.config != *config {
                return Err(Error::Checkpoint {
                    path: ckpt_path,
                    reason: "written by a different configuration".into(),
                });
            }
            let step = ckpt.step;
            let kept: Vec<_> = read_metrics(&metrics_path)?
                .into_iter()
                .filter(|m| m.step <= step)
                .collect();
            (Trainer::resume(ckpt)?, kept)
        }
        false => (Trainer::new(config.clone())?, Vec::new()),
    };
    let mut writer = BufWriter::new(File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?);
    for m in &metrics {
        write_jsonl_line(&mut writer, m, &metrics_path)?;
    }
    writer.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let status = trainer.run(None, &mut |t, rec| {
        metrics.push(*rec);
        write_jsonl_line(&mut writer, rec, &metrics_path)?;
        writer.flush().map_err(|e| Error::io(&metrics_path, e))?;
        if let Some(every) = config.checkpoint_every {
            if rec.step > 0 && rec.step % every == 0 {
                save_checkpoint(&ckpt_path, &t.checkpoint())?;
            }
        }
        Ok(())
    })?;
    drop(writer);
    write_json(&root.join(STATUS_FILE), &status)?;
    if dir.save_final {
        save_checkpoint(&root.join(FINAL_CHECKPOINT_FILE), &trainer.checkpoint())?;
    }
    if ckpt_path.exists() {
        fs::remove_file(&ckpt_path).map_err(|e| Error::io(&ckpt_path, e))?;
    }
    Ok(RunOutcome {
        metrics,
        status,
        params: trainer.into_params(),
    })
}

fn write_jsonl_line<W: Write, T: Serialize>(w: &mut W, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_status(path: &Path) -> Result<RunStatus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

const MAGIC: &[u8; 8] = b"GROKCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: TrainConfig,
    step: u64,
    shapes: Vec<Vec<usize>>,
    has_init: bool,
}

/// Layout: magic, format version (u32 LE), header length (u64 LE), JSON
/// header, then little-endian f32 blocks: parameters, first moments,
/// second moments and, when present, the initial parameters.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = CheckpointHeader {
        config: ckpt.config.clone(),
        step: ckpt.step,
        shapes: ckpt.params.tensors.iter().map(|t| t.shape().to_vec()).collect(),
        has_init: ckpt.state.init.is_some(),
    };
    let header = serde_json::to_vec(&header)?;
    let tmp = path.with_extension("tmp");
    let io = |e| Error::io(&tmp, e);
    let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    let blocks = ckpt
        .params
        .tensors
        .iter()
        .map(Tensor::data)
        .chain(ckpt.state.m.iter().map(Vec::as_slice))
        .chain(ckpt.state.v.iter().map(Vec::as_slice))
        .chain(ckpt.state.init.iter().flatten().map(Vec::as_slice));
    for block in blocks {
        for x in block {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.into_inner()
        .map_err(|e| io(e.into_error()))?
        .sync_all()
        .map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
    if body.len() < header_len {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..header_len]).map_err(|e| bad(&format!("header: {e}")))?;
    let mut floats = body[header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    if (body.len() - header_len) % 4 != 0 {
        return Err(bad("payload is not a whole number of f32 values"));
    }
    let mut take = |shape: &[usize]| -> Result<Vec<f32>> {
        let n: usize = shape.iter().product();
        let block: Vec<f32> = floats.by_ref().take(n).collect();
        if block.len() != n {
            return Err(bad("truncated payload"));
        }
        Ok(block)
    };
    let mut blocks = |count: usize| -> Result<Vec<Vec<f32>>> {
        header.shapes.iter().take(count).map(|s| take(s)).collect()
    };
    let n = header.shapes.len();
    let tensors = blocks(n)?
        .into_iter()
        .zip(&header.shapes)
        .map(|(d, s)| Tensor::new(s.clone(), d))
        .collect::<Result<Vec<_>>>()?;
    let m = blocks(n)?;
    let v = blocks(n)?;
    let init = if header.has_init { Some(blocks(n)?) } else { None };
    if floats.next().is_some() {
        return Err(bad("trailing bytes after payload"));
    }

    let vocab = Vocabulary::for_spec(&header.config.op);
    let model = header.config.transformer_config(vocab.len());
    let layout = param_layout(&model);
    if layout.len() != n || layout.iter().zip(&header.shapes).any(|(l, s)| &l.shape != s) {
        return Err(bad("tensor shapes do not match the recorded model"));
    }
    Ok(Checkpoint {
        params: TransformerParams::from_tensors(model, tensors)?,
        state: OptimState {
            m,
            v,
            step: header.step,
            init,
        },
        step: header.step,
        config: header.config,
    })
}

/// Default configuration used by smoke tests: tiny modulus, AdamW.
pub fn smoke_config(kind: OperationKind, modulus: u64, fraction: f64) -> Result<TrainConfig> {
    let op = OperationSpec::new(kind, modulus)?;
    let mut c = TrainConfig::new(op, fraction, Variant::AdamwWd1);
    c.max_steps = 5_000;
    c.eval_every = 50;
    Ok(c)
}

mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use grokking_core::datasets::{
    build_table, inject_outliers, split, write_split_csv, OperationKind, OperationSpec, Vocabulary,
};
use grokking_core::experiments::sharpness::{sharpness_phi, SharpnessConfig};
use grokking_core::experiments::{report, run_sweep, SweepSpec};
use grokking_core::model::{export_embeddings, write_embeddings_csv};
use grokking_core::optim::Variant;
use grokking_core::trainer::{
    load_checkpoint, steps_to_threshold, train_in_dir, ModelShape, RunDir, RunStatus, Split,
    TrainConfig, DEFAULT_BUDGET, DEFAULT_EVAL_EVERY, FINAL_CHECKPOINT_FILE,
};

use args::{out_dir, Cli, Command, ExportArgs, GenDataArgs, ReportArgs, SharpnessArgs, SweepArgs, TrainArgs};

const DEFAULT_P: u64 = 97;
const DEFAULT_FRACTION: f64 = 0.5;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => a.resolve().and_then(|a| gen_data(&a)),
        Command::Train(a) => a.resolve().and_then(|a| train(&a)),
        Command::Sweep(a) => a.resolve().and_then(|a| sweep(&a)),
        Command::Sharpness(a) => a.resolve().and_then(|a| sharpness(&a)),
        Command::ExportEmbeddings(a) => a.resolve().and_then(|a| export(&a)),
        Command::Report(a) => a.resolve().and_then(|a| rebuild_report(&a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // configuration mistakes share clap's usage exit code
            let usage = e.chain().any(|c| {
                matches!(
                    c.downcast_ref::<grokking_core::Error>(),
                    Some(grokking_core::Error::Config(_))
                ) || c.downcast_ref::<serde_json::Error>().is_some()
            });
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn operation(op: Option<OperationKind>, p: Option<u64>) -> Result<OperationSpec> {
    let Some(kind) = op else {
        bail!(grokking_core::Error::Config(format!(
            "--op is required; one of: {}",
            OperationKind::ALL.map(|k| k.name()).join(", ")
        )));
    };
    Ok(OperationSpec::new(kind, p.unwrap_or(DEFAULT_P))?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = operation(a.op, a.p)?;
    let table = build_table(&spec)?;
    let data = split(&table, a.fraction.unwrap_or(DEFAULT_FRACTION), a.split_seed.unwrap_or(0))?;
    let data = inject_outliers(&data, a.outliers.unwrap_or(0), a.outlier_seed.unwrap_or(0))?;
    let dir = out_dir(&a.out_dir);
    create_dir(&dir)?;
    let path = dir.join(format!("{}.csv", spec.label()));
    write_split_csv(&path, &Vocabulary::for_spec(&spec), &data)?;
    println!(
        "{}: {} equations ({} train, {} validation)",
        path.display(),
        data.len(),
        data.train.len(),
        data.val.len()
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let spec = operation(a.op, a.p)?;
    let variant = a.variant.unwrap_or(Variant::AdamwWd1);
    let seed = a.seed.unwrap_or(0);
    let mut c = TrainConfig::new(spec, a.fraction.unwrap_or(DEFAULT_FRACTION), variant).with_seed(seed);
    c.split_seed = a.split_seed.unwrap_or(c.split_seed);
    c.init_seed = a.init_seed.unwrap_or(c.init_seed);
    c.train_seed = a.train_seed.unwrap_or(c.train_seed);
    c.outlier_seed = a.outlier_seed.unwrap_or(c.outlier_seed);
    c.outliers = a.outliers.unwrap_or(0);
    c.max_steps = a.budget.unwrap_or(DEFAULT_BUDGET);
    c.eval_every = a.eval_every.unwrap_or(DEFAULT_EVAL_EVERY);
    c.stop_at_val_acc = a.stop_at_val_acc;
    c.checkpoint_every = a.checkpoint_every;
    c.record_wall_time = a.wall_time.unwrap_or(false);
    if let Some(lr) = a.lr {
        c.optim.lr = lr;
    }
    if let Some(wd) = a.weight_decay {
        c.optim.weight_decay = wd;
    }
    if a.no_decay_embeddings.unwrap_or(false) {
        c.optim.decay_embeddings = false;
    }
    let d = ModelShape::default();
    c.model = ModelShape {
        n_layers: a.n_layers.unwrap_or(d.n_layers),
        d_model: a.d_model.unwrap_or(d.d_model),
        n_heads: a.n_heads.unwrap_or(d.n_heads),
    };
    c.validate()?;
    Ok(c)
}

fn train(a: &TrainArgs) -> Result<()> {
    let config = train_config(a)?;
    let dir = a
        .run_dir
        .clone()
        .unwrap_or_else(|| out_dir(&a.out_dir).join(config.run_id()));
    eprintln!("training {} in {}", config.run_id(), dir.display());
    let outcome = train_in_dir(
        &config,
        &RunDir {
            path: dir.clone(),
            save_final: true,
        },
    )?;
    let last = outcome.metrics.last().context("run produced no metrics")?;
    let fmt = |s: Option<u64>| s.map_or("never".to_string(), |s| s.to_string());
    println!(
        "step {}: train acc {:.4}, val acc {:.4}; 99% train at {}, 99% val at {}",
        last.step,
        last.train_acc,
        last.val_acc,
        fmt(steps_to_threshold(&outcome.metrics, 0.99, Split::Train)),
        fmt(steps_to_threshold(&outcome.metrics, 0.99, Split::Val)),
    );
    if let RunStatus::Diverged { step, loss } = outcome.status {
        bail!("training diverged at step {step} (loss {loss}); metrics kept in {}", dir.display());
    }
    Ok(())
}

fn sweep_spec(a: &SweepArgs) -> Result<SweepSpec> {
    let Some(study) = a.study else {
        bail!(grokking_core::Error::Config(
            "--study is required; one of: data_efficiency, learning_time, ablation, outlier, sharpness".into()
        ));
    };
    let mut s = if a.paper_scale.unwrap_or(false) {
        SweepSpec::paper(study)
    } else {
        SweepSpec::desk(study)
    };
    if let Some(ops) = &a.op {
        let p = a.p.unwrap_or(DEFAULT_P);
        s.ops = ops
            .iter()
            .map(|&k| OperationSpec::new(k, p))
            .collect::<grokking_core::Result<_>>()?;
    } else if let Some(p) = a.p {
        for o in &mut s.ops {
            o.modulus = p;
        }
    }
    if let Some(f) = &a.fractions {
        s.fractions = f.clone();
    }
    if let Some(seeds) = &a.seeds {
        s.seeds = seeds.clone();
    }
    if let Some(b) = a.budget {
        s.budget = b;
    }
    if let Some(v) = &a.variants {
        s.variants = v.clone();
    }
    if let Some(k) = &a.outliers {
        s.outliers = k.clone();
    }
    if let Some(e) = a.eval_every {
        s.eval_every = e;
    }
    if a.stop_at_val_acc.is_some() {
        s.stop_at_val_acc = a.stop_at_val_acc;
    }
    if let Some(eps) = a.epsilon {
        s.sharpness.epsilon = eps;
    }
    s.validate()?;
    Ok(s)
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let spec = sweep_spec(a)?;
    let dir = out_dir(&a.out_dir);
    let total = spec.configs()?.len();
    eprintln!("{} sweep: {total} runs into {}", spec.study, dir.display());
    let done = std::sync::atomic::AtomicUsize::new(0);
    let rows = run_sweep(&spec, &dir, a.jobs.unwrap_or(1), &|c, r| {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        match r {
            Ok(()) => eprintln!("[{n}/{total}] {}", c.run_id()),
            Err(e) => eprintln!("[{n}/{total}] {} failed: {e}", c.run_id()),
        }
    })?;
    print_aggregates(&rows);
    Ok(())
}

fn print_aggregates(rows: &[grokking_core::experiments::SummaryRow]) {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v}"));
    for r in rows.iter().filter(|r| r.row_type == "aggregate") {
        println!(
            "{} {} f={} k={}: best val {:.4}, median steps to 99% val {} ({} of {} censored){}",
            r.op,
            r.variant,
            r.fraction,
            r.outliers,
            r.best_val_acc,
            opt(r.steps_to_99_val),
            r.censored,
            r.n_runs,
            r.spearman_phi_val
                .map(|rho| format!(", spearman(phi, val) {rho:.4} p={}", opt(r.spearman_p)))
                .unwrap_or_default()
        );
    }
}

fn checkpoint_path(p: &Option<PathBuf>) -> Result<PathBuf> {
    let p = p.clone().ok_or_else(|| grokking_core::Error::Config("--checkpoint is required".into()))?;
    Ok(if p.is_dir() { p.join(FINAL_CHECKPOINT_FILE) } else { p })
}

fn sharpness(a: &SharpnessArgs) -> Result<()> {
    let ckpt = load_checkpoint(&checkpoint_path(&a.checkpoint)?)?;
    let (_, data) = ckpt.config.dataset()?;
    let d = SharpnessConfig::default();
    let cfg = SharpnessConfig {
        epsilon: a.epsilon.unwrap_or(d.epsilon),
        ascent_steps: a.steps.unwrap_or(d.ascent_steps),
        ..d
    };
    let ascent = sharpness_phi(&ckpt.params, &data.train, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&ascent)?);
    Ok(())
}

fn export(a: &ExportArgs) -> Result<()> {
    let ckpt = load_checkpoint(&checkpoint_path(&a.checkpoint)?)?;
    let rows = export_embeddings(&ckpt.params, &ckpt.config.op)?;
    let path = match &a.out {
        Some(p) => p.clone(),
        None => {
            let dir = out_dir(&a.out_dir);
            create_dir(&dir)?;
            dir.join("embeddings.csv")
        }
    };
    write_embeddings_csv(&path, &rows)?;
    println!("{}: {} rows", path.display(), rows.rows.len());
    Ok(())
}

fn rebuild_report(a: &ReportArgs) -> Result<()> {
    let dir = a
        .runs_dir
        .clone()
        .ok_or_else(|| grokking_core::Error::Config("--runs-dir is required".into()))?;
    let rows = report(&dir)?;
    print_aggregates(&rows);
    Ok(())
}

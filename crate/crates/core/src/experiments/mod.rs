//! The five studies as reproducible sweeps: a [`SweepSpec`] expands into
//! independent training runs, each in its own directory, and `summary.csv`
//! is always recomputed from what those directories contain.

pub mod sharpness;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{OperationKind, OperationSpec};
use crate::error::{Error, Result};
use crate::optim::Variant;
use crate::trainer::{
    read_manifest, read_metrics, read_status, steps_to_threshold, train_in_dir, write_json,
    MetricsRecord, ModelShape, RunDir, RunManifest, RunStatus, Split, TrainConfig, CONFIG_FILE,
    METRICS_FILE, STATUS_FILE,
};
use sharpness::{sharpness_phi, Ascent, SharpnessConfig};
use stats::{censored_median, mean, spearman_test};

pub const SWEEP_FILE: &str = "sweep.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SHARPNESS_FILE: &str = "sharpness.json";
pub const RUNS_DIR: &str = "runs";
pub const SPEARMAN_PERMUTATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    DataEfficiency,
    LearningTime,
    Ablation,
    Outlier,
    Sharpness,
}

impl Study {
    pub const ALL: [Study; 5] = [
        Study::DataEfficiency,
        Study::LearningTime,
        Study::Ablation,
        Study::Outlier,
        Study::Sharpness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::DataEfficiency => "data_efficiency",
            Study::LearningTime => "learning_time",
            Study::Ablation => "ablation",
            Study::Outlier => "outlier",
            Study::Sharpness => "sharpness",
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().replace('-', "_"))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown study {s:?}; expected one of: data_efficiency, learning_time, ablation, outlier, sharpness"
                ))
            })
    }
}

/// A grid of runs: every combination of operation, variant, outlier count,
/// fraction and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub study: Study,
    pub ops: Vec<OperationSpec>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub budget: u64,
    pub variants: Vec<Variant>,
    pub outliers: Vec<usize>,
    pub eval_every: u64,
    pub stop_at_val_acc: Option<f64>,
    #[serde(default)]
    pub model: ModelShape,
    #[serde(default)]
    pub sharpness: SharpnessConfig,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| ((lo + i as f64 * step) * 1e6).round() / 1e6).collect()
}

fn op(kind: OperationKind, p: u64) -> OperationSpec {
    OperationSpec { kind, modulus: p }
}

impl SweepSpec {
    fn base(study: Study, ops: Vec<OperationSpec>, fractions: Vec<f64>, seeds: u64, budget: u64) -> Self {
        Self {
            study,
            ops,
            fractions,
            seeds: (0..seeds).collect(),
            budget,
            variants: vec![Variant::AdamwWd1],
            outliers: vec![0],
            eval_every: 100,
            stop_at_val_acc: None,
            model: ModelShape::default(),
            sharpness: SharpnessConfig::default(),
        }
    }

    /// Grids sized for a single workstation core, calibrated so that each
    /// study shows its effect within a few hours.
    pub fn desk(study: Study) -> Self {
        use OperationKind::*;
        match study {
            Study::DataEfficiency => Self::base(
                study,
                vec![op(ModSub, 97), op(ModDiv, 97), op(CubeXxxXyyY, 23)],
                vec![0.3, 0.5, 0.7],
                3,
                10_000,
            ),
            Study::LearningTime => Self {
                stop_at_val_acc: Some(0.99),
                ..Self::base(study, vec![op(ModDivOddElseSub, 97)], vec![0.5, 0.6, 0.7], 7, 20_000)
            },
            Study::Ablation => Self {
                variants: Variant::ALL.to_vec(),
                stop_at_val_acc: Some(0.99),
                ..Self::base(study, vec![op(ModDiv, 97)], vec![0.3, 0.4, 0.5], 1, 5_000)
            },
            Study::Outlier => Self {
                outliers: vec![0, 10],
                ..Self::base(study, vec![op(ModDiv, 97)], vec![0.5], 2, 3_000)
            },
            Study::Sharpness => Self::base(study, vec![op(S5Compose, 97)], vec![0.6], 20, 3_500),
        }
    }

    /// The full grids of the original studies.
    pub fn paper(study: Study) -> Self {
        use OperationKind::*;
        match study {
            Study::DataEfficiency => Self::base(
                study,
                OperationKind::ALL.iter().map(|&k| op(k, 97)).collect(),
                grid(0.05, 0.95, 0.05),
                3,
                100_000,
            ),
            Study::LearningTime => Self {
                stop_at_val_acc: Some(0.99),
                ..Self::base(study, vec![op(S5Compose, 97)], grid(0.2, 0.6, 0.05), 7, 500_000)
            },
            Study::Ablation => Self {
                variants: Variant::ALL.to_vec(),
                ..Self::base(study, vec![op(S5Compose, 97)], grid(0.1, 0.9, 0.1), 3, 100_000)
            },
            Study::Outlier => Self {
                outliers: vec![0, 10, 100, 1000, 2000, 3000],
                ..Self::base(study, vec![op(ModDiv, 97)], grid(0.3, 0.9, 0.1), 3, 100_000)
            },
            Study::Sharpness => Self::base(study, vec![op(S5Compose, 97)], vec![0.5], 30, 3_000),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.ops.is_empty() || self.variants.is_empty() || self.outliers.is_empty() {
            return bad("a sweep needs at least one operation, variant and outlier count".into());
        }
        if self.seeds.is_empty() {
            return bad("a sweep needs at least one seed".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad(format!("seeds must be distinct: {:?}", self.seeds));
        }
        if self.fractions.is_empty()
            || self.fractions.iter().any(|&f| !(f > 0.0 && f < 1.0))
            || self.fractions.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!(
                "fractions must be strictly increasing inside (0, 1): {:?}",
                self.fractions
            ));
        }
        for o in &self.ops {
            o.validate()?;
        }
        if self.budget == 0 || self.eval_every == 0 {
            return bad("budget and eval_every must be positive".into());
        }
        Ok(())
    }

    /// Every run of the sweep. Outlier counts larger than a training split
    /// are skipped.
    pub fn configs(&self) -> Result<Vec<TrainConfig>> {
        self.validate()?;
        let mut out = Vec::new();
        for &op in &self.ops {
            let table_len = crate::datasets::build_table(&op)?.len();
            for &variant in &self.variants {
                for &k in &self.outliers {
                    for &fraction in &self.fractions {
                        let n_train = (fraction * table_len as f64).round() as usize;
                        if k > n_train {
                            continue;
                        }
                        for &seed in &self.seeds {
                            let mut c = TrainConfig::new(op, fraction, variant).with_seed(seed);
                            c.outliers = k;
                            c.max_steps = self.budget;
                            c.eval_every = self.eval_every;
                            c.stop_at_val_acc = self.stop_at_val_acc;
                            c.model = self.model;
                            out.push(c);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Written next to a sharpness-study run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessRecord {
    pub run_id: String,
    pub final_val_acc: f64,
    pub ascent: Ascent,
}

fn run_is_complete(dir: &Path, config: &TrainConfig, study: Study) -> bool {
    let done = dir.join(STATUS_FILE).exists()
        && read_manifest(&dir.join(CONFIG_FILE)).is_ok_and(|m| m.config_hash == config.hash());
    done && (study != Study::Sharpness || dir.join(SHARPNESS_FILE).exists())
}

fn execute_run(config: &TrainConfig, dir: &Path, study: Study, sharp: &SharpnessConfig) -> Result<()> {
    let outcome = train_in_dir(
        config,
        &RunDir {
            path: dir.to_path_buf(),
            save_final: false,
        },
    )?;
    if study == Study::Sharpness {
        let (_, data) = config.dataset()?;
        let ascent = sharpness_phi(&outcome.params, &data.train, sharp)?;
        let record = SharpnessRecord {
            run_id: config.run_id(),
            final_val_acc: outcome.metrics.last().map_or(0.0, |m| m.val_acc),
            ascent,
        };
        write_json(&dir.join(SHARPNESS_FILE), &record)?;
    }
    Ok(())
}

/// Runs every configuration of `spec` under `out_dir/runs/`, `jobs` at a
/// time, then writes `summary.csv`. Runs that already finished with the
/// same configuration are not repeated.
pub fn run_sweep(
    spec: &SweepSpec,
    out_dir: &Path,
    jobs: usize,
    on_done: &(dyn Fn(&TrainConfig, &Result<()>) + Sync),
) -> Result<Vec<SummaryRow>> {
    let configs = spec.configs()?;
    let runs = out_dir.join(RUNS_DIR);
    fs::create_dir_all(&runs).map_err(|e| Error::io(&runs, e))?;
    write_json(&out_dir.join(SWEEP_FILE), spec)?;

    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(configs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(config) = configs.get(i) else { break };
                let dir = runs.join(config.run_id());
                let result = if run_is_complete(&dir, config, spec.study) {
                    Ok(())
                } else {
                    execute_run(config, &dir, spec.study, &spec.sharpness)
                };
                on_done(config, &result);
                if let Err(e) = result {
                    failures.lock().expect("no panics hold the lock").push(format!("{}: {e}", config.run_id()));
                }
            });
        }
    });
    let failures = failures.into_inner().expect("threads joined");
    if !failures.is_empty() {
        return Err(Error::Config(format!(
            "{} run(s) failed: {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    report(out_dir)
}

/// Everything a finished run left on disk.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub path: PathBuf,
    pub manifest: RunManifest,
    pub metrics: Vec<MetricsRecord>,
    pub status: RunStatus,
    pub sharpness: Option<SharpnessRecord>,
}

impl RunRecord {
    pub fn config(&self) -> &TrainConfig {
        &self.manifest.config
    }

    pub fn best_val_acc(&self) -> f64 {
        self.metrics.iter().map(|m| m.val_acc).fold(0.0, f64::max)
    }

    pub fn steps_to(&self, threshold: f64, which: Split) -> Option<u64> {
        steps_to_threshold(&self.metrics, threshold, which)
    }
}

/// Loads every complete run below `runs_dir`, ordered by configuration.
pub fn load_runs(runs_dir: &Path) -> Result<Vec<RunRecord>> {
    let entries = fs::read_dir(runs_dir).map_err(|e| Error::io(runs_dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(runs_dir, e))?.path();
        if !path.join(STATUS_FILE).exists() {
            continue;
        }
        let sharp_path = path.join(SHARPNESS_FILE);
        let sharpness = match sharp_path.exists() {
            true => {
                let text = fs::read_to_string(&sharp_path).map_err(|e| Error::io(&sharp_path, e))?;
                Some(serde_json::from_str(&text)?)
            }
            false => None,
        };
        out.push(RunRecord {
            manifest: read_manifest(&path.join(CONFIG_FILE))?,
            metrics: read_metrics(&path.join(METRICS_FILE))?,
            status: read_status(&path.join(STATUS_FILE))?,
            sharpness,
            path,
        });
    }
    out.sort_by(|a, b| {
        group_key(a.config())
            .cmp(&group_key(b.config()))
            .then(a.config().init_seed.cmp(&b.config().init_seed))
            .then(a.manifest.config_hash.cmp(&b.manifest.config_hash))
    });
    Ok(out)
}

type GroupKey = (String, usize, usize, u64);

fn group_key(c: &TrainConfig) -> GroupKey {
    let variant = Variant::ALL
        .iter()
        .position(|&v| v == c.optim.variant)
        .expect("known variant");
    (c.op.label(), variant, c.outliers, (c.fraction * 1e9).round() as u64)
}

/// One line of `summary.csv`: a run, or an aggregate over the seeds of one
/// (operation, variant, outliers, fraction) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub row_type: String,
    pub study: String,
    pub op: String,
    pub variant: String,
    pub fraction: f64,
    pub outliers: usize,
    pub seed: Option<u64>,
    pub n_runs: usize,
    pub run_id: String,
    pub config_hash: String,
    pub status: String,
    pub final_step: f64,
    pub final_train_acc: f64,
    pub final_val_acc: f64,
    /// Per run: maximum over the metric stream. Aggregate: mean over seeds.
    pub best_val_acc: f64,
    /// Per run: first logged step at 99%. Aggregate: median with never-
    /// reached runs counted as +∞; empty when that median is censored.
    pub steps_to_99_train: Option<f64>,
    pub steps_to_99_val: Option<f64>,
    pub steps_to_100_train: Option<f64>,
    /// Runs that never reached 99% validation accuracy.
    pub censored: usize,
    pub phi: Option<f64>,
    pub spearman_phi_val: Option<f64>,
    pub spearman_p: Option<f64>,
}

fn status_name(s: &RunStatus) -> &'static str {
    match s {
        RunStatus::Completed => "completed",
        RunStatus::Stopped => "stopped",
        RunStatus::Paused => "paused",
        RunStatus::Diverged { .. } => "diverged",
    }
}

fn run_row(study: &str, r: &RunRecord) -> SummaryRow {
    let c = r.config();
    let last = r.metrics.last();
    let opt = |s: Option<u64>| s.map(|v| v as f64);
    SummaryRow {
        row_type: "run".into(),
        study: study.into(),
        op: c.op.label(),
        variant: c.optim.variant.to_string(),
        fraction: c.fraction,
        outliers: c.outliers,
        seed: Some(c.init_seed),
        n_runs: 1,
        run_id: c.run_id(),
        config_hash: r.manifest.config_hash.clone(),
        status: status_name(&r.status).into(),
        final_step: last.map_or(0.0, |m| m.step as f64),
        final_train_acc: last.map_or(0.0, |m| m.train_acc),
        final_val_acc: last.map_or(0.0, |m| m.val_acc),
        best_val_acc: r.best_val_acc(),
        steps_to_99_train: opt(r.steps_to(0.99, Split::Train)),
        steps_to_99_val: opt(r.steps_to(0.99, Split::Val)),
        steps_to_100_train: opt(r.steps_to(1.0, Split::Train)),
        censored: usize::from(r.steps_to(0.99, Split::Val).is_none()),
        phi: r.sharpness.as_ref().map(|s| s.ascent.phi),
        spearman_phi_val: None,
        spearman_p: None,
    }
}

fn aggregate_row(study: &str, group: &[&RunRecord]) -> Result<SummaryRow> {
    let first = group[0];
    let c = first.config();
    let times = |t: f64, w: Split| -> Vec<Option<u64>> { group.iter().map(|r| r.steps_to(t, w)).collect() };
    let col = |f: &dyn Fn(&RunRecord) -> f64| -> f64 {
        mean(&group.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(0.0)
    };
    let last = |r: &RunRecord| *r.metrics.last().expect("runs log step 0");
    let val99 = censored_median(&times(0.99, Split::Val));

    let mut hashes: Vec<&str> = group.iter().map(|r| r.manifest.config_hash.as_str()).collect();
    hashes.sort_unstable();
    let group_hash: String = Sha256::digest(hashes.join(",").as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();

    let statuses: Vec<&str> = group.iter().map(|r| status_name(&r.status)).collect();
    let status = if statuses.iter().all(|s| *s == statuses[0]) {
        statuses[0]
    } else {
        "mixed"
    };

    let (mut rho, mut p) = (None, None);
    if group.iter().all(|r| r.sharpness.is_some()) {
        let phis: Vec<f64> = group.iter().map(|r| r.sharpness.as_ref().expect("checked").ascent.phi).collect();
        let vals: Vec<f64> = group.iter().map(|r| last(r).val_acc).collect();
        if let Some(t) = spearman_test(&phis, &vals, SPEARMAN_PERMUTATIONS, 0)? {
            rho = Some(t.rho);
            p = Some(t.p_value);
        }
    }

    Ok(SummaryRow {
        row_type: "aggregate".into(),
        study: study.into(),
        op: c.op.label(),
        variant: c.optim.variant.to_string(),
        fraction: c.fraction,
        outliers: c.outliers,
        seed: None,
        n_runs: group.len(),
        run_id: String::new(),
        config_hash: group_hash,
        status: status.into(),
        final_step: censored_median(&group.iter().map(|r| Some(last(r).step)).collect::<Vec<_>>())
            .value
            .unwrap_or(0.0),
        final_train_acc: col(&|r| last(r).train_acc),
        final_val_acc: col(&|r| last(r).val_acc),
        best_val_acc: col(&|r| r.best_val_acc()),
        steps_to_99_train: censored_median(&times(0.99, Split::Train)).value,
        steps_to_99_val: val99.value,
        steps_to_100_train: censored_median(&times(1.0, Split::Train)).value,
        censored: val99.censored,
        phi: None,
        spearman_phi_val: rho,
        spearman_p: p,
    })
}

/// Per-run rows followed by one aggregate row per cell.
pub fn summarize(study: &str, runs: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    let mut rows: Vec<SummaryRow> = runs.iter().map(|r| run_row(study, r)).collect();
    let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        groups.entry(group_key(r.config())).or_default().push(r);
    }
    for group in groups.values() {
        rows.push(aggregate_row(study, group)?);
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Recomputes `summary.csv` of a sweep directory from its run directories.
pub fn report(sweep_dir: &Path) -> Result<Vec<SummaryRow>> {
    let spec_path = sweep_dir.join(SWEEP_FILE);
    let study = match spec_path.exists() {
        true => {
            let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
            serde_json::from_str::<SweepSpec>(&text)?.study.to_string()
        }
        false => "adhoc".to_string(),
    };
    let runs_dir = match sweep_dir.join(RUNS_DIR) {
        d if d.is_dir() => d,
        _ => sweep_dir.to_path_buf(),
    };
    let rows = summarize(&study, &load_runs(&runs_dir)?)?;
    write_summary_csv(&sweep_dir.join(SUMMARY_FILE), &rows)?;
    Ok(rows)
}

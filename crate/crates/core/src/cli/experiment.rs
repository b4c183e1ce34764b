use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::{load_dataset, save_dataset, split, synthesize, Dataset, DatasetStats, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{AggregateMetrics, EvalConfig, MetricReport};
use crate::model::{fit, EpochRecord, ModelKind, SharedBottomModel};

/// Per-seed outcome of `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model_kind: ModelKind,
    pub config_hash: String,
    pub seed: u64,
    pub train_stats: DatasetStats,
    pub test_stats: DatasetStats,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: MetricReport,
}

/// Seed sweep summary written next to the per-seed reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub model_kind: ModelKind,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub test: AggregateMetrics,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub runs: Vec<RunReport>,
    pub aggregate: AggregateReport,
    pub models: Vec<SharedBottomModel>,
    pub test_sets: Vec<Dataset>,
}

/// Generates or loads the configured data, then projects onto `keep_tasks`.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = match (&cfg.synth, &cfg.dataset) {
        (Some(s), None) => synthesize(s)?,
        (None, Some(path)) => load_dataset(path)?,
        _ => return Err(Error::Config("exactly one of `synth` and `dataset` must be given".into())),
    };
    match &cfg.keep_tasks {
        Some(tasks) => ds.project_tasks(tasks),
        None => Ok(ds),
    }
}

/// Splits, trains and tests once per seed. The run seed drives the split, the
/// initialisation and the batch order; the data itself comes from the synth seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let hash = cfg.hash();
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut models = Vec::with_capacity(cfg.seeds.len());
    let mut test_sets = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (train, valid, test) = split(&data, cfg.split, seed)?;
        let model_cfg = crate::model::ModelConfig { seed, ..cfg.model.clone() };
        let (model, report) = fit(&model_cfg, &cfg.eval, &train, &valid)?;
        let metrics = model.evaluate(&test, &cfg.eval)?;
        log::info!("{} seed {seed}: {}", cfg.model.kind.name(), describe(&metrics));
        runs.push(RunReport {
            model_kind: cfg.model.kind,
            config_hash: hash.clone(),
            seed,
            train_stats: train.stats(),
            test_stats: test.stats(),
            epochs: report.epochs,
            best_epoch: report.best_epoch,
            test: metrics,
        });
        models.push(model);
        test_sets.push(test);
    }
    let reports: Vec<MetricReport> = runs.iter().map(|r| r.test.clone()).collect();
    let aggregate = AggregateReport {
        model_kind: cfg.model.kind,
        config_hash: hash,
        seeds: cfg.seeds.clone(),
        test: AggregateMetrics::from_reports(&reports),
    };
    Ok(TrainOutcome { runs, aggregate, models, test_sets })
}

/// Paths written by [`write_outcome`], in write order.
pub fn write_outcome(cfg: &ExperimentConfig, outcome: &TrainOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    put("config.toml".into(), cfg.to_toml_string()?.as_bytes())?;
    for ((run, model), test) in outcome.runs.iter().zip(&outcome.models).zip(&outcome.test_sets) {
        let mut ckpt = Vec::new();
        model.write_checkpoint(&mut ckpt)?;
        put(format!("seed{}.ckpt", run.seed), &ckpt)?;
        let mut data = Vec::new();
        crate::data::write_dataset(test, &mut data)?;
        put(format!("seed{}.test.tsv", run.seed), &data)?;
        put(format!("seed{}.report.json", run.seed), &to_json(run)?)?;
    }
    put("aggregate.json".into(), &to_json(&outcome.aggregate)?)?;
    put("summary.txt".into(), summary(outcome).as_bytes())?;
    Ok(written)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Human-readable table of the seed sweep.
pub fn summary(outcome: &TrainOutcome) -> String {
    let agg = &outcome.aggregate;
    let mut s = String::new();
    let _ = writeln!(s, "model   {}", agg.model_kind.name());
    let _ = writeln!(s, "config  {}", agg.config_hash);
    let _ = writeln!(s, "seeds   {:?}", agg.seeds);
    let _ = writeln!(s);
    let mut header = format!("{:<8}{:>10}", "seed", "AUC");
    for k in agg.test.ndcg_at.keys() {
        let _ = write!(header, "{:>10}", format!("NDCG@{k}"));
    }
    let _ = writeln!(s, "{header}");
    for run in &outcome.runs {
        let mut line = format!("{:<8}{:>10}", run.seed, fmt_opt(run.test.auc));
        for v in run.test.ndcg_at.values() {
            let _ = write!(line, "{v:>10.4}");
        }
        let _ = writeln!(s, "{line}");
    }
    let mut mean = format!("{:<8}{:>10}", "mean", format!("{:.4}", agg.test.auc.mean));
    let mut std = format!("{:<8}{:>10}", "std", format!("{:.4}", agg.test.auc.std));
    for v in agg.test.ndcg_at.values() {
        let _ = write!(mean, "{:>10.4}", v.mean);
        let _ = write!(std, "{:>10.4}", v.std);
    }
    let _ = writeln!(s, "{mean}");
    let _ = writeln!(s, "{std}");
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

pub fn describe(m: &MetricReport) -> String {
    let mut s = format!("AUC {}", fmt_opt(m.auc));
    for (k, v) in &m.ndcg_at {
        let _ = write!(s, "  NDCG@{k} {v:.4}");
    }
    let _ = write!(s, "  ({} impressions)", m.impressions);
    s
}

/// Writes the synthetic dataset described by `synth` and returns its statistics.
pub fn synth_to_file(synth: &SynthConfig, out: &Path) -> Result<DatasetStats> {
    let ds = synthesize(synth)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_dataset(&ds, out)?;
    Ok(ds.stats())
}

/// Evaluates a checkpoint on a dataset whose schema must match the checkpoint's.
pub fn evaluate_checkpoint(checkpoint: &Path, dataset: &Path, eval: &EvalConfig) -> Result<MetricReport> {
    let model = SharedBottomModel::load(checkpoint)?;
    let ds = load_dataset(dataset)?;
    let mismatched = model.schema().mismatches(&ds.schema);
    if !mismatched.is_empty() {
        return Err(Error::SchemaMismatch(mismatched));
    }
    model.evaluate(&ds, eval)
}

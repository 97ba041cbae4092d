//! Steering metrics, the path ablation matrix and feature export.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auxnet::PathId;
use crate::data::container::write_tensor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mainnet::{Level, LstmState, MainNet, MainNetConfig};
use crate::tensor::Tensor;
use crate::trainer::{MimicTargets, TrainConfig, Trainer};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::usage("metric over an empty set"));
    }
    if pred.len() != truth.len() {
        return Err(Error::usage(format!(
            "metric operands differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ms = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(ms.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub count: usize,
    pub mean: f64,
    pub max_abs: f64,
    pub median_abs: f64,
    pub p90_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub rmse: f64,
    pub residuals: ResidualSummary,
    /// SHA-256 of the configuration the predictions came from.
    pub fingerprint: String,
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

impl EvalReport {
    pub fn from_predictions(pred: &[f64], truth: &[f64], fingerprint: String) -> Result<Self> {
        let mae = mae(pred, truth)?;
        let rmse = rmse(pred, truth)?;
        let res: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
        let mut abs: Vec<f64> = res.iter().map(|r| r.abs()).collect();
        abs.sort_by(f64::total_cmp);
        Ok(Self {
            mae,
            rmse,
            residuals: ResidualSummary {
                count: res.len(),
                mean: res.iter().sum::<f64>() / res.len() as f64,
                max_abs: *abs.last().unwrap(),
                median_abs: quantile(&abs, 0.5),
                p90_abs: quantile(&abs, 0.9),
            },
            fingerprint,
        })
    }
}

/// Predicted steering angle of every clip, in clip order. Each chain starts
/// from a zero LSTM state and zero previous prediction.
pub fn predict_angles(net: &MainNet<f32>, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = vec![0.0; data.len()];
    for chain in data.chains() {
        let mut state = LstmState::zeros(net.config().lstm_hidden)?;
        let mut prev = [0.0; 3];
        for i in chain {
            let o = net.predict_normalized(&data.clips[i].frames, prev, &state)?;
            out[i] = o.prediction.angle;
            prev = o.normalized;
            state = o.lstm_state;
        }
    }
    Ok(out)
}

pub fn evaluate(net: &MainNet<f32>, data: &Dataset, fingerprint: String) -> Result<EvalReport> {
    let pred = predict_angles(net, data)?;
    let truth: Vec<f64> = data.targets().iter().map(|s| s.angle).collect();
    EvalReport::from_predictions(&pred, &truth, fingerprint)
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub paths: Vec<PathId>,
}

/// The seven path combinations of the standard ablation.
pub fn path_rows() -> Vec<AblationRow> {
    let row = |name: &str, paths: &[&str]| AblationRow {
        name: name.into(),
        paths: paths.iter().map(|p| p.parse().expect("valid path name")).collect(),
    };
    vec![
        row("Without feat. mimick", &[]),
        row("PH + FH", &["PH", "FH"]),
        row("PM + FM", &["PM", "FM"]),
        row("PL + FL", &["PL", "FL"]),
        row("PH + PM + PL", &["PH", "PM", "PL"]),
        row("FH + FM + FL", &["FH", "FM", "FL"]),
        row("With full feat. mimick", &["PL", "PM", "PH", "FL", "FM", "FH"]),
    ]
}

pub fn rows_for_preset(name: &str) -> Result<Vec<AblationRow>> {
    match name {
        "paths" => Ok(path_rows()),
        other => Err(Error::config(format!("unknown ablation preset {other:?} (known: paths)"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: String,
    pub seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub row: String,
    pub mean_mae: f64,
    pub mean_rmse: f64,
    /// Population standard deviation of the per-seed MAE.
    pub std: f64,
}

/// Worker count from `FMNET_THREADS`, defaulting to the available cores.
pub fn thread_count() -> usize {
    std::env::var("FMNET_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    net: &'a MainNetConfig,
    train: &'a TrainConfig,
    seed: u64,
}

/// Train and evaluate every row for every seed. Rows of one seed share a
/// single stage-1 run (stage 1 never sees the paths); seeds run in
/// parallel on up to [`thread_count`] workers. Results are ordered by row,
/// then seed.
pub fn ablate(
    net_cfg: &MainNetConfig,
    train_cfg: &TrainConfig,
    rows: &[AblationRow],
    seeds: &[u64],
    train: &Dataset,
    val: &Dataset,
    targets: Arc<MimicTargets>,
) -> Result<Vec<AblationResult>> {
    if rows.is_empty() || seeds.is_empty() {
        return Err(Error::usage("ablation needs at least one row and one seed"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
    let per_seed: Vec<Result<Vec<AblationResult>>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let cfg = TrainConfig {
                    seed,
                    paths: Vec::new(),
                    ..train_cfg.clone()
                };
                let mut base = Trainer::new(net_cfg.clone(), cfg, train, targets.clone())?;
                base.run_stage1(train)?;
                info!("seed {seed}: stage 1 done");
                rows.iter()
                    .map(|row| {
                        let mut t = base.clone();
                        t.set_paths(&row.paths)?;
                        t.run_stage2(train)?;
                        let id = RunIdentity {
                            net: net_cfg,
                            train: t.config(),
                            seed,
                        };
                        let report = evaluate(t.net(), val, fingerprint(&id))?;
                        info!("seed {seed} row {:?}: MAE {:.6}", row.name, report.mae);
                        Ok(AblationResult {
                            row: row.name.clone(),
                            seed,
                            report,
                        })
                    })
                    .collect()
            })
            .collect()
    });
    let mut by_seed = Vec::new();
    for r in per_seed {
        by_seed.push(r?);
    }
    let mut out = Vec::with_capacity(rows.len() * seeds.len());
    for (ri, _) in rows.iter().enumerate() {
        for seed_results in &by_seed {
            out.push(seed_results[ri].clone());
        }
    }
    Ok(out)
}

/// Per-row means over seeds, in first-appearance row order.
pub fn summarize(results: &[AblationResult]) -> Vec<AblationSummary> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in results {
        if !groups.contains_key(r.row.as_str()) {
            order.push(r.row.as_str());
        }
        groups.entry(&r.row).or_default().push(&r.report);
    }
    order
        .into_iter()
        .map(|name| {
            let reps = &groups[name];
            let n = reps.len() as f64;
            let mean_mae = reps.iter().map(|r| r.mae).sum::<f64>() / n;
            let mean_rmse = reps.iter().map(|r| r.rmse).sum::<f64>() / n;
            let var = reps.iter().map(|r| (r.mae - mean_mae).powi(2)).sum::<f64>() / n;
            AblationSummary {
                row: name.to_string(),
                mean_mae,
                mean_rmse,
                std: var.sqrt(),
            }
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))
}

/// `ablation.csv` (row_name, seed, mae, rmse) and `ablation_summary.csv`
/// (row_name, mean_mae, mean_rmse, std) under `dir`.
pub fn write_ablation(dir: impl AsRef<Path>, results: &[AblationResult]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("ablation.csv");
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: csv::Error| Error::io(&p, e.into())
    };
    let mut w = csv_writer(&path)?;
    w.write_record(["row_name", "seed", "mae", "rmse"]).map_err(io(&path))?;
    for r in results {
        w.write_record([
            r.row.clone(),
            r.seed.to_string(),
            r.report.mae.to_string(),
            r.report.rmse.to_string(),
        ])
        .map_err(io(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("ablation_summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["row_name", "mean_mae", "mean_rmse", "std"]).map_err(io(&path))?;
    for s in summarize(results) {
        w.write_record([
            s.row,
            s.mean_mae.to_string(),
            s.mean_rmse.to_string(),
            s.std.to_string(),
        ])
        .map_err(io(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Which activations to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Tap(Level),
    /// The compact per-clip vector that feeds the LSTM.
    Feature,
}

impl EmbeddingSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(EmbeddingSource::Feature),
            other => Level::parse(other).map(EmbeddingSource::Tap).map_err(|_| {
                Error::config(format!(
                    "unknown embedding level {other:?} (known: low, middle, high, feature)"
                ))
            }),
        }
    }
}

/// Matrix with one row per clip: the flattened activations followed by the
/// ground-truth steering angle.
pub fn embeddings(net: &MainNet<f32>, data: &Dataset, source: EmbeddingSource) -> Result<Tensor<f64>> {
    if data.is_empty() {
        return Err(Error::usage("cannot export embeddings of an empty dataset"));
    }
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; data.len()];
    for chain in data.chains() {
        let mut state = LstmState::zeros(net.config().lstm_hidden)?;
        let mut prev = [0.0; 3];
        for i in chain {
            let o = net.predict_normalized(&data.clips[i].frames, prev, &state)?;
            let feats = match source {
                EmbeddingSource::Tap(level) => &o.taps[&level],
                EmbeddingSource::Feature => &o.feature,
            };
            let mut row: Vec<f64> = feats.data().iter().map(|&v| v as f64).collect();
            row.push(data.clips[i].target().angle);
            rows[i] = Some(row);
            prev = o.normalized;
            state = o.lstm_state;
        }
    }
    let width = rows[0].as_ref().unwrap().len();
    let flat: Vec<f64> = rows.into_iter().flat_map(|r| r.unwrap()).collect();
    Tensor::new(vec![data.len(), width], flat)
}

/// Writes `embeddings_<level>` (f64 container) and `angles.csv`.
pub fn export_embeddings(
    net: &MainNet<f32>,
    data: &Dataset,
    level: &str,
    dir: impl AsRef<Path>,
) -> Result<Tensor<f64>> {
    let source = EmbeddingSource::parse(level)?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = embeddings(net, data, source)?;
    write_tensor(dir.join(format!("embeddings_{level}")), &m)?;
    let path = dir.join("angles.csv");
    let mut w = csv_writer(&path)?;
    let io = |e: csv::Error| Error::io(&path, e.into());
    w.write_record(["clip_id", "angle"]).map_err(io)?;
    for c in &data.clips {
        w.write_record([c.id.clone(), c.target().angle.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(m)
}

use std::fs;
use std::path::{Path, PathBuf};

use fmnet::auxnet::PathId;
use fmnet::config::RunConfig;
use fmnet::data::{read_dataset, write_dataset, Dataset};
use fmnet::evaluator::{ablate, evaluate, export_embeddings, fingerprint, rows_for_preset, write_ablation};
use fmnet::mainnet::{checkpoint, checkpoint_inflation, inflation_trials};
use fmnet::{trainer, Error, Result};
use log::{info, warn};

use crate::{Cli, Command};

/// Tolerance of the inflation check.
pub const INFLATION_TOL: f64 = 1e-5;

pub enum Outcome {
    Success,
    /// A verification command ran but its check did not hold.
    CheckFailed,
}

fn parse_paths(list: &str) -> Result<Vec<PathId>> {
    if list.trim().eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    list.split(',')
        .map(|p| p.trim().parse::<PathId>().map_err(|e| Error::usage(format!("--paths: {e}"))))
        .collect()
}

fn resolve(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.set_seed(seed);
    }
    if let Some(list) = &cli.common.paths {
        cfg.train.paths = parse_paths(list)?;
    }
    cfg.validate()?;
    let out = cli
        .common
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.out = Some(out.display().to_string());
    Ok((cfg, out))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Copy the resolved config and seed next to the artifacts.
fn record_run(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.json"), &cfg.to_json())?;
    write_file(&out.join("seed.txt"), &format!("{}\n", cfg.seed))
}

fn load_data(cfg: &RunConfig, dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
    match dir {
        Some(d) => Ok((read_dataset(d.join("train"))?, read_dataset(d.join("val"))?)),
        None => {
            info!("no --data given, generating in memory");
            cfg.generate_data()
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_file(path, &text)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let (cfg, out) = resolve(&cli)?;
    record_run(&cfg, &out)?;
    match &cli.command {
        Command::GenData => {
            let (train, val) = cfg.generate_data()?;
            write_dataset(out.join("data").join("train"), &train)?;
            write_dataset(out.join("data").join("val"), &val)?;
            info!("wrote {} train and {} val clips", train.len(), val.len());
        }
        Command::Train { data } => {
            let (train, val) = load_data(&cfg, data.as_deref())?;
            let targets = cfg.mimic_targets(&train)?;
            let t = trainer::train(cfg.net.clone(), cfg.train.clone(), &train, targets, Some(&out))?;
            if val.is_empty() {
                warn!("validation set is empty, skipping evaluation");
                return Ok(Outcome::Success);
            }
            let report = evaluate(t.net(), &val, fingerprint(&cfg))?;
            info!("validation MAE {:.6} RMSE {:.6}", report.mae, report.rmse);
            write_json(&out.join("eval.json"), &report)?;
        }
        Command::Eval { checkpoint: dir, data } => {
            let ck = checkpoint::load::<f32>(dir)?;
            let manifest = checkpoint::read_manifest(dir)?;
            let (_, val) = load_data(&cfg, data.as_deref())?;
            let report = evaluate(&ck.net, &val, fingerprint(&manifest))?;
            println!("MAE {:.6} RMSE {:.6}", report.mae, report.rmse);
            write_json(&out.join("eval.json"), &report)?;
        }
        Command::Ablate { preset, data } => {
            let rows = rows_for_preset(preset.as_deref().unwrap_or(&cfg.ablation.preset))?;
            let (train, val) = load_data(&cfg, data.as_deref())?;
            let targets = cfg.mimic_targets(&train)?;
            let results = ablate(&cfg.net, &cfg.train, &rows, &cfg.ablation.seeds, &train, &val, targets)?;
            write_ablation(&out, &results)?;
            info!("wrote {} ablation results", results.len());
        }
        Command::CheckInflate { checkpoint: dir, trials } => {
            let check = match dir {
                Some(d) => checkpoint_inflation(&checkpoint::load::<f32>(d)?.net, cfg.seed)?,
                None => {
                    if *trials == 0 {
                        return Err(Error::usage("--trials must be ≥ 1"));
                    }
                    inflation_trials(&cfg.net, cfg.seed, *trials)?
                }
            };
            let pass = check.max_err <= INFLATION_TOL;
            let line = if pass {
                format!("PASS, max_err ≤ 1e-5 (max_err = {:e}, {} frames)", check.max_err, check.frames_compared)
            } else {
                format!("FAIL, max_err = {:e} > 1e-5", check.max_err)
            };
            println!("{line}");
            write_file(&out.join("check_inflate.txt"), &format!("{line}\n"))?;
            if !pass {
                return Ok(Outcome::CheckFailed);
            }
        }
        Command::ExportEmbeddings { checkpoint: dir, level, data } => {
            let ck = checkpoint::load::<f32>(dir)?;
            let (_, val) = load_data(&cfg, data.as_deref())?;
            let m = export_embeddings(&ck.net, &val, level, out.join("embeddings"))?;
            info!("exported {:?} embeddings", m.shape());
        }
    }
    Ok(Outcome::Success)
}

//! Two-stage training behaviour on a tiny synthetic run.

mod common;

use fmnet::auxnet::{init_phi, AuxKind, PathId};
use fmnet::evaluator::{ablate, evaluate, fingerprint, AblationRow};
use fmnet::trainer::{train, Trainer};
use fmnet::ParamStore;

fn ids(names: &[&str]) -> Vec<PathId> {
    names.iter().map(|n| n.parse().unwrap()).collect()
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn identical_config_and_seed_reproduce_the_run() {
    let cfg = common::small_run();
    let (data, _) = cfg.generate_data().unwrap();
    let targets = cfg.mimic_targets(&data).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ta = train(cfg.net.clone(), cfg.train.clone(), &data, targets.clone(), Some(a.path())).unwrap();
    let tb = train(cfg.net.clone(), cfg.train.clone(), &data, targets, Some(b.path())).unwrap();
    assert_eq!(ta.log().len(), tb.log().len());
    for (x, y) in ta.log().iter().zip(tb.log()) {
        assert!((x.loss.total - y.loss.total).abs() <= 1e-6);
    }
    let fin = |d: &tempfile::TempDir| dir_bytes(&d.path().join("checkpoints").join("final"));
    assert!(fin(&a) == fin(&b));
    assert_eq!(
        std::fs::read(a.path().join("metrics.csv")).unwrap(),
        std::fs::read(b.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn mimicking_is_off_in_stage_one_and_on_in_stage_two() {
    let cfg = common::small_run();
    let (data, _) = cfg.generate_data().unwrap();
    let targets = cfg.mimic_targets(&data).unwrap();
    let mut t = Trainer::new(cfg.net.clone(), cfg.train.clone(), &data, targets).unwrap();
    t.run_stage1(&data).unwrap();
    assert!(t.phi().is_empty());
    let stage1_steps = t.log().len();
    for r in t.log() {
        assert_eq!(r.stage, 1);
        assert_eq!(r.loss.mimic.len(), 6);
        assert!(r.loss.mimic.values().all(|&m| m == 0.0));
        assert_eq!(r.loss.mimic_weighted(), 0.0);
    }
    assert!(t.set_paths(&ids(&["PH", "FL"])).is_ok());
    t.run_stage2(&data).unwrap();
    assert!(t.set_paths(&ids(&["PM"])).is_err());

    let mut initial = ParamStore::<f32>::new();
    for p in t.enabled_paths() {
        init_phi(&mut initial, p, cfg.net.tap_dims(p.id.level).c, cfg.seed).unwrap();
    }
    assert_eq!(t.phi().len(), 2);
    for (name, v) in t.phi().iter() {
        assert!(!v.bit_eq(initial.get(name).unwrap()), "{name} never moved");
    }
    let stage2 = &t.log()[stage1_steps..];
    assert!(!stage2.is_empty());
    for r in stage2 {
        assert_eq!(r.stage, 2);
        assert!(r.loss.mimic.values().all(|&m| m > 0.0));
        assert!(r.loss.mimic_weighted() > 0.0);
    }
}

#[test]
fn zero_beta_matches_a_run_without_paths() {
    let mut with = common::small_run();
    for kind in AuxKind::ALL {
        with.train.weights.beta.insert(kind, 0.0);
    }
    let mut without = with.clone();
    without.train.paths.clear();
    let (data, _) = with.generate_data().unwrap();
    let targets = with.mimic_targets(&data).unwrap();
    let a = train(with.net.clone(), with.train.clone(), &data, targets.clone(), None).unwrap();
    let b = train(without.net.clone(), without.train.clone(), &data, targets, None).unwrap();
    assert!(a.net().params().bit_eq(b.net().params()));
    for (x, y) in a.log().iter().zip(b.log()) {
        assert_eq!(x.loss.total.to_bits(), y.loss.total.to_bits());
    }
}

#[test]
fn ablation_row_equals_an_independent_run() {
    let cfg = common::small_run();
    let (data, val) = cfg.generate_data().unwrap();
    let targets = cfg.mimic_targets(&data).unwrap();
    let row = AblationRow {
        name: "PM + FM".into(),
        paths: ids(&["PM", "FM"]),
    };
    let seed = 11;
    let results = ablate(&cfg.net, &cfg.train, std::slice::from_ref(&row), &[seed], &data, &val, targets.clone()).unwrap();
    let mut solo = cfg.clone();
    solo.set_seed(seed);
    solo.train.paths = row.paths.clone();
    let t = train(solo.net.clone(), solo.train.clone(), &data, targets, None).unwrap();
    let report = evaluate(t.net(), &val, fingerprint(&0)).unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0].report.mae.to_bits(), report.mae.to_bits());
    assert_eq!(results[0].report.rmse.to_bits(), report.rmse.to_bits());
}

#[test]
fn five_episodes_on_fifty_clips_reduce_the_loss() {
    let mut cfg = common::small_run();
    cfg.data.train_sequences = 3;
    cfg.data.raw_frames = 200;
    cfg.train.episodes = 5;
    cfg.train.stage1_episodes = 5;
    let (data, _) = cfg.generate_data().unwrap();
    assert!(data.len() >= 50, "{} clips", data.len());
    let targets = cfg.mimic_targets(&data).unwrap();
    let t = train(cfg.net.clone(), cfg.train.clone(), &data, targets, None).unwrap();
    let mean = |ep: usize| {
        let v: Vec<f64> = t.log().iter().filter(|r| r.episode == ep).map(|r| r.loss.total).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(5) < mean(1), "episode 1 {} vs episode 5 {}", mean(1), mean(5));
}

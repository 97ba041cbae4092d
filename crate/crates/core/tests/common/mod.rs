//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use fmnet::auxnet::{phi_transform, MimicPath, PathId};
use fmnet::losses::{graph_loss, MimicTerm};
use fmnet::mainnet::lstm_step;
use fmnet::tensor::gradcheck::{check_fn, check_with, GradCheckReport};
use fmnet::tensor::ResampleMode;
use fmnet::{Graph, ParamStore, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-6;

/// A run small enough for debug-mode tests: three short sequences of
/// 24×24 five-frame clips and a narrow network.
pub fn small_run() -> fmnet::config::RunConfig {
    let mut cfg = fmnet::config::RunConfig::default();
    cfg.data.train_sequences = 2;
    cfg.data.val_sequences = 1;
    cfg.data.raw_frames = 60;
    cfg.data.prep.clip_len = 5;
    cfg.data.prep.out_hw = [24, 24];
    cfg.net.clip_len = 5;
    cfg.net.input_hw = [24, 24];
    cfg.net.stem_width = 4;
    cfg.net.block_widths = vec![4, 6, 8];
    cfg.net.depth = 1;
    cfg.net.fc_dim = 8;
    cfg.net.lstm_hidden = 6;
    cfg.train.batch_size = 3;
    cfg.train.episodes = 4;
    cfg.train.stage1_episodes = 2;
    cfg
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

/// Values bounded away from zero so ReLU is never probed at its kink.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .unwrap()
}

/// Contract an output with fixed random weights so every element carries a
/// distinct gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(rand_tensor(&mut rng, g.shape(y)));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn named(pairs: Vec<(&str, Tensor<f64>)>) -> Vec<(String, Tensor<f64>)> {
    pairs.into_iter().map(|(n, t)| (n.to_string(), t)).collect()
}

fn store(vals: &[(String, Tensor<f64>)], names: &[&str]) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    for (n, t) in vals {
        if names.contains(&n.as_str()) {
            p.insert(n.clone(), t.clone()).unwrap();
        }
    }
    p
}

fn value(vals: &[(String, Tensor<f64>)], name: &str) -> Tensor<f64> {
    vals.iter().find(|(n, _)| n == name).unwrap().1.clone()
}

fn path(id: &str, target: [usize; 3], beta: f64) -> MimicPath {
    MimicPath {
        id: id.parse::<PathId>().unwrap(),
        target,
        beta,
    }
}

type Case = Box<dyn Fn(&mut ChaCha8Rng, u64) -> Result<GradCheckReport>>;

fn cases() -> Vec<(&'static str, Case)> {
    let mut v: Vec<(&'static str, Case)> = Vec::new();
    v.push((
        "conv2d",
        Box::new(|rng, s| {
            let ins = named(vec![("x", rand_tensor(rng, &[5, 6, 2])), ("k", rand_tensor(rng, &[3, 3, 2, 3]))]);
            check_fn(&ins, FD_EPS, |g, x| {
                let y = g.conv2d(x[0], x[1], 2, 1)?;
                project(g, y, s)
            })
        }),
    ));
    v.push((
        "conv3d",
        Box::new(|rng, s| {
            let ins = named(vec![("x", rand_tensor(rng, &[4, 4, 5, 2])), ("k", rand_tensor(rng, &[3, 3, 3, 2, 2]))]);
            check_fn(&ins, FD_EPS, |g, x| {
                let y = g.conv3d(x[0], x[1], 1, 1)?;
                project(g, y, s)
            })
        }),
    ));
    v.push((
        "add_bias",
        Box::new(|rng, s| {
            let ins = named(vec![("x", rand_tensor(rng, &[3, 3, 4])), ("b", rand_tensor(rng, &[4]))]);
            check_fn(&ins, FD_EPS, |g, x| {
                let y = g.add_bias(x[0], x[1])?;
                project(g, y, s)
            })
        }),
    ));
    v.push((
        "avg_pool_channels",
        Box::new(|rng, s| {
            let ins = named(vec![("x", rand_tensor(rng, &[3, 4, 6]))]);
            check_fn(&ins, FD_EPS, |g, x| {
                let y = g.avg_pool_channels(x[0], 3)?;
                project(g, y, s)
            })
        }),
    ));
    v.push((
        "resample_bilinear",
        Box::new(|rng, s| {
            let ins = named(vec![("x", rand_tensor(rng, &[4, 5, 2]))]);
            check_fn(&ins, FD_EPS, |g, x| {
                let up = g.resample(x[0], (7, 9), ResampleMode::Bilinear)?;
                let down = g.resample(up, (3, 2), ResampleMode::Bilinear)?;
                let a = project(g, up, s)?;
                let b = project(g, down, s ^ 1)?;
                g.add(a, b)
            })
        }),
    ));
    v.push((
        "spatial_mean",
        Box::new(|rng, s| {
            let ins = named(vec![("x", rand_tensor(rng, &[2, 3, 3, 4]))]);
            check_fn(&ins, FD_EPS, |g, x| {
                let y = g.spatial_mean(x[0])?;
                project(g, y, s)
            })
        }),
    ));
    v.push((
        "dense",
        Box::new(|rng, s| {
            let ins = named(vec![
                ("x", rand_tensor(rng, &[6])),
                ("w", rand_tensor(rng, &[6, 4])),
                ("b", rand_tensor(rng, &[4])),
            ]);
            check_fn(&ins, FD_EPS, |g, x| {
                let y = g.dense(x[0], x[1], x[2])?;
                project(g, y, s)
            })
        }),
    ));
    v.push((
        "relu",
        Box::new(|rng, s| {
            let ins = named(vec![("x", off_kink(rng, &[12]))]);
            check_fn(&ins, FD_EPS, |g, x| {
                let y = g.relu(x[0]);
                project(g, y, s)
            })
        }),
    ));
    v.push((
        "tanh",
        Box::new(|rng, s| {
            let ins = named(vec![("x", rand_tensor(rng, &[12]).map(|v| 2.0 * v))]);
            check_fn(&ins, FD_EPS, |g, x| {
                let y = g.tanh(x[0]);
                project(g, y, s)
            })
        }),
    ));
    v.push((
        "sigmoid",
        Box::new(|rng, s| {
            let ins = named(vec![("x", rand_tensor(rng, &[12]).map(|v| 3.0 * v))]);
            check_fn(&ins, FD_EPS, |g, x| {
                let y = g.sigmoid(x[0]);
                project(g, y, s)
            })
        }),
    ));
    v.push((
        "lstm_step",
        Box::new(|rng, s| {
            let (input, hidden) = (3, 4);
            let ins = named(vec![
                ("x", rand_tensor(rng, &[input])),
                ("h", rand_tensor(rng, &[hidden])),
                ("c", rand_tensor(rng, &[hidden])),
                ("l.w", rand_tensor(rng, &[input + hidden, 4 * hidden])),
                ("l.b", rand_tensor(rng, &[4 * hidden])),
            ]);
            check_with(&ins, FD_EPS, |g, vals| {
                let params = store(vals, &["l.w", "l.b"]);
                let x = g.param("x", &value(vals, "x"));
                let h = g.param("h", &value(vals, "h"));
                let c = g.param("c", &value(vals, "c"));
                let (h1, c1) = lstm_step(g, &params, "l", x, h, c)?;
                let a = project(g, h1, s)?;
                let b = project(g, c1, s ^ 1)?;
                g.add(a, b)
            })
        }),
    ));
    v.push((
        "phi",
        Box::new(|rng, s| {
            let p = path("FM", [5, 7, 3], 0.2);
            let name = p.phi_param();
            let ins = vec![
                ("tap".to_string(), rand_tensor(rng, &[3, 4, 4])),
                (name.clone(), rand_tensor(rng, &[1, 1, 4, 3])),
            ];
            check_with(&ins, FD_EPS, |g, vals| {
                let params = store(vals, &[name.as_str()]);
                let tap = g.param("tap", &value(vals, "tap"));
                let y = phi_transform(g, &params, &p, tap)?;
                project(g, y, s)
            })
        }),
    ));
    for (label, which) in [("steering_loss", 0usize), ("multi_task_loss", 1), ("mimic_loss", 2)] {
        v.push((
            label,
            Box::new(move |rng, _| {
                let batch = 3;
                let mut ins = Vec::new();
                for i in 0..batch {
                    ins.push((format!("pred{i}"), rand_tensor(rng, &[3])));
                }
                let p = path("PH", [2, 3, 2], 0.7);
                for i in 0..batch {
                    ins.push((format!("phi{i}"), rand_tensor(rng, &[2, 3, 2])));
                }
                let targets: Vec<[f64; 3]> = (0..batch)
                    .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                    .collect();
                let psi: Vec<Tensor<f64>> = (0..batch).map(|_| rand_tensor(rng, &[2, 3, 2])).collect();
                let alpha = [0.8, 1.3];
                check_with(&ins, FD_EPS, |g, vals| {
                    let preds: Vec<Var> = (0..batch).map(|i| g.param(&format!("pred{i}"), &vals[i].1)).collect();
                    let phis: Vec<Var> = (0..batch).map(|i| g.param(&format!("phi{i}"), &vals[batch + i].1)).collect();
                    let term = MimicTerm {
                        path: p,
                        phi: phis,
                        psi: psi.clone(),
                    };
                    let lv = graph_loss(g, &preds, &targets, &alpha, std::slice::from_ref(&term))?;
                    Ok(match which {
                        0 => lv.steer,
                        1 => {
                            let a = g.scale(lv.multi[0], alpha[0]);
                            let b = g.scale(lv.multi[1], alpha[1]);
                            g.add(a, b)?
                        }
                        _ => lv.mimic[&p.id],
                    })
                })
            }),
        ));
    }
    v
}

#[derive(Debug, Clone)]
pub struct OpGradient {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

/// Central finite-difference check of every differentiable operation on
/// `instances` random draws each (64-bit).
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<OpGradient> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases()
        .into_iter()
        .map(|(op, case)| {
            let mut worst: f64 = 0.0;
            for i in 0..instances {
                let r = case(&mut rng, seed ^ (i as u64 + 1)).unwrap();
                assert!(r.checked > 0);
                worst = worst.max(r.max_rel_error);
            }
            OpGradient {
                op,
                instances,
                max_rel_error: worst,
            }
        })
        .collect()
}


/// Write and read back `count` random tensors of both precisions with
/// arbitrary bit patterns (NaN payloads, infinities, subnormals included).
/// Returns how many survived bit-exactly.
pub fn container_round_trips(count: usize, seed: u64, dir: &std::path::Path) -> usize {
    use fmnet::data::container::{read_tensor, write_tensor};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0;
    for i in 0..count {
        let ndim = rng.gen_range(1..=4);
        let shape: Vec<usize> = (0..ndim).map(|_| rng.gen_range(1..=6)).collect();
        let path = dir.join(format!("t{i}"));
        let exact = if i % 2 == 0 {
            let t = Tensor::<f32>::from_fn(&shape, |_| f32::from_bits(rng.gen())).unwrap();
            write_tensor(&path, &t).unwrap();
            read_tensor::<f32>(&path).unwrap().bit_eq(&t)
        } else {
            let t = Tensor::<f64>::from_fn(&shape, |_| f64::from_bits(rng.gen())).unwrap();
            write_tensor(&path, &t).unwrap();
            read_tensor::<f64>(&path).unwrap().bit_eq(&t)
        };
        ok += exact as usize;
    }
    ok
}

/// Each way of damaging a container header, paired with whether decoding
/// it was rejected as a data error.
pub fn header_corruptions() -> Vec<(&'static str, bool)> {
    use fmnet::data::container::{decode, decode_any, encode};
    let good = encode(&Tensor::<f64>::from_fn(&[2, 3], |i| i as f64).unwrap());
    let damaged = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = good.clone();
        f(&mut b);
        b
    };
    let is_data = |r: Result<()>| matches!(r, Err(fmnet::Error::Data { .. }));
    let any = |b: Vec<u8>| is_data(decode_any(&b).map(|_| ()));
    vec![
        ("bad magic", any(damaged(&|b| b[1] = b'?'))),
        ("unknown dtype", any(damaged(&|b| b[4..8].copy_from_slice(&7u32.to_le_bytes())))),
        ("zero ndim", any(damaged(&|b| b[8..12].copy_from_slice(&0u32.to_le_bytes())))),
        ("huge ndim", any(damaged(&|b| b[8..12].copy_from_slice(&1000u32.to_le_bytes())))),
        ("reserved set", any(damaged(&|b| b[12] = 1))),
        ("zero dim", any(damaged(&|b| b[16..24].copy_from_slice(&0u64.to_le_bytes())))),
        ("overflowing dim", any(damaged(&|b| b[16..24].copy_from_slice(&u64::MAX.to_le_bytes())))),
        ("truncated header", any(good[..10].to_vec())),
        ("truncated payload", any(good[..good.len() - 1].to_vec())),
        ("trailing bytes", any(damaged(&|b| b.extend_from_slice(&[0, 0])))),
        ("dtype mismatch", is_data(decode::<f32>(&good).map(|_| ()))),
    ]
}

/// Reference `h × w × c` of each path, in PL, PM, PH, FL, FM, FH order.
pub const UDACITY_DIMS: [[usize; 3]; 6] = [[30, 30, 16], [30, 30, 16], [30, 30, 3], [32, 40, 16], [8, 10, 32], [8, 10, 32]];
pub const COMMAAI_DIMS: [[usize; 3]; 6] = [[30, 30, 16], [30, 30, 16], [30, 30, 3], [12, 20, 32], [12, 20, 32], [3, 5, 64]];

#[derive(Debug)]
pub struct PathDims {
    pub preset: &'static str,
    pub path: PathId,
    pub expected: [usize; 3],
    pub psi: Vec<usize>,
    pub phi: Vec<usize>,
}

/// Run Ψ on a random auxiliary map and Φ on the default network's tap for
/// every path of the `udacity` and `commaai` presets.
pub fn reference_path_dims() -> Vec<PathDims> {
    use fmnet::auxnet::{init_phi, preset, psi_transform};
    use fmnet::mainnet::MainNetConfig;
    let net = MainNetConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut out = Vec::new();
    for (name, dims) in [("udacity", UDACITY_DIMS), ("commaai", COMMAAI_DIMS)] {
        let paths = preset(name).unwrap();
        assert_eq!(paths.len(), 6);
        for (p, expected) in paths.iter().zip(dims) {
            let aux = rand_tensor(&mut rng, &[17, 23, 2 * p.target[2]]);
            let psi = psi_transform(&aux, p).unwrap();
            let tap = net.tap_dims(p.id.level);
            let mut params = ParamStore::<f64>::new();
            init_phi(&mut params, p, tap.c, 1).unwrap();
            let mut g = Graph::new();
            let x = g.constant(rand_tensor(&mut rng, &[tap.h, tap.w, tap.c]));
            let y = phi_transform(&mut g, &params, p, x).unwrap();
            out.push(PathDims {
                preset: name,
                path: p.id,
                expected,
                psi: psi.shape().to_vec(),
                phi: g.shape(y).to_vec(),
            });
        }
    }
    out
}

#[derive(Debug)]
pub struct Decomposition {
    pub batches: usize,
    /// Largest gap between the stored total and the independent sum.
    pub max_gap: f64,
    /// Every batch with all weights zero totalled exactly its steering loss.
    pub zero_weights_exact: bool,
}

fn plain_mse(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

/// Random batches through the graph objective, compared with MSEs summed
/// by hand from the raw inputs.
pub fn loss_decomposition(batches: usize, seed: u64) -> Decomposition {
    let paths = fmnet::auxnet::preset("desk").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_gap: f64 = 0.0;
    let mut zero_weights_exact = true;
    for _ in 0..batches {
        let n = rng.gen_range(1..6);
        let preds: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-2.0..2.0))).collect();
        let truths: Vec<[f64; 3]> = (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-2.0..2.0))).collect();
        let alpha = vec![rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)];
        let chosen: Vec<MimicPath> = paths
            .iter()
            .filter_map(|p| {
                let keep = rng.gen_bool(0.6);
                keep.then(|| MimicPath { beta: rng.gen_range(0.0..1.0), ..*p })
            })
            .collect();
        let phi_vals: Vec<Vec<Tensor<f64>>> = chosen
            .iter()
            .map(|p| (0..n).map(|_| rand_tensor(&mut rng, &p.target)).collect())
            .collect();
        let psi_vals: Vec<Vec<Tensor<f64>>> = chosen
            .iter()
            .map(|p| (0..n).map(|_| rand_tensor(&mut rng, &p.target)).collect())
            .collect();

        let run = |alpha: &[f64], zero_beta: bool| {
            let mut g = Graph::<f64>::new();
            let pv: Vec<Var> = preds.iter().map(|p| g.constant(Tensor::vector(p.to_vec()).unwrap())).collect();
            let terms: Vec<MimicTerm<f64>> = chosen
                .iter()
                .zip(&phi_vals)
                .zip(&psi_vals)
                .map(|((p, phi), psi)| MimicTerm {
                    path: MimicPath { beta: if zero_beta { 0.0 } else { p.beta }, ..*p },
                    phi: phi.iter().map(|t| g.constant(t.clone())).collect(),
                    psi: psi.clone(),
                })
                .collect();
            let vars = graph_loss(&mut g, &pv, &truths, alpha, &terms).unwrap();
            let b = vars.breakdown(&g, alpha, &terms).unwrap();
            assert_eq!(b.total.to_bits(), g.value(vars.total).data()[0].to_bits());
            b
        };

        let stored = run(&alpha, false);
        let col = |v: &[[f64; 3]], k: usize| v.iter().map(|x| x[k]).collect::<Vec<_>>();
        let mut want = plain_mse(&col(&preds, 0), &col(&truths, 0));
        for (k, a) in alpha.iter().enumerate() {
            want += a * plain_mse(&col(&preds, k + 1), &col(&truths, k + 1));
        }
        for (i, p) in chosen.iter().enumerate() {
            let a: Vec<f64> = phi_vals[i].iter().flat_map(|t| t.data().to_vec()).collect();
            let b: Vec<f64> = psi_vals[i].iter().flat_map(|t| t.data().to_vec()).collect();
            want += p.beta * plain_mse(&a, &b);
        }
        max_gap = max_gap.max((stored.total - want).abs());

        let zero = run(&[0.0, 0.0], true);
        zero_weights_exact &= zero.total == zero.steer;
    }
    Decomposition { batches, max_gap, zero_weights_exact }
}

/// Worst relative disagreement between the library metrics and a direct
/// recomputation over `count` random vectors, and whether rmse ≥ mae held
/// on every one.
pub fn metric_oracle(count: usize, seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut ordered = true;
    for _ in 0..count {
        let n = rng.gen_range(1..200);
        let scale = 10f64.powi(rng.gen_range(-3..4));
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let (mut abs, mut sq) = (0.0, 0.0);
        for i in 0..n {
            let d = p[i] - t[i];
            abs += d.abs();
            sq += d * d;
        }
        let (want_mae, want_rmse) = (abs / n as f64, (sq / n as f64).sqrt());
        let mae = fmnet::evaluator::mae(&p, &t).unwrap();
        let rmse = fmnet::evaluator::rmse(&p, &t).unwrap();
        let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { ((a - b) / b).abs() };
        worst = worst.max(rel(mae, want_mae)).max(rel(rmse, want_rmse));
        ordered &= rmse >= mae;
    }
    (worst, ordered)
}

#[derive(Debug)]
pub struct Gating {
    pub stage1_steps: usize,
    /// Every stage-1 step logged zero mimicking loss on every path.
    pub stage1_mimic_zero: bool,
    /// No Φ parameter existed (and so none moved) before stage 2.
    pub stage1_phi_untouched: bool,
    pub stage2_steps: usize,
    pub stage2_mimic_nonzero: bool,
    /// Every Φ parameter differs from its initial value after stage 2.
    pub phi_moved: bool,
}

pub fn stage_gating(cfg: &fmnet::config::RunConfig) -> Gating {
    use fmnet::trainer::Trainer;
    let (data, _) = cfg.generate_data().unwrap();
    let targets = cfg.mimic_targets(&data).unwrap();
    let mut t = Trainer::new(cfg.net.clone(), cfg.train.clone(), &data, targets).unwrap();
    t.run_stage1(&data).unwrap();
    let stage1_steps = t.log().len();
    let stage1_phi_untouched = t.phi().is_empty();
    t.run_stage2(&data).unwrap();
    let mut initial = ParamStore::<f32>::new();
    for p in t.enabled_paths() {
        fmnet::auxnet::init_phi(&mut initial, p, cfg.net.tap_dims(p.id.level).c, cfg.seed).unwrap();
    }
    let (s1, s2) = t.log().split_at(stage1_steps);
    let n_paths = t.enabled_paths().len();
    Gating {
        stage1_steps,
        stage1_mimic_zero: s1.iter().all(|r| {
            r.stage == 1 && r.loss.mimic.len() == n_paths && r.loss.mimic.values().all(|&m| m == 0.0)
        }),
        stage1_phi_untouched,
        stage2_steps: s2.len(),
        stage2_mimic_nonzero: s2
            .iter()
            .all(|r| r.stage == 2 && r.loss.mimic_weighted() > 0.0 && r.loss.mimic.values().all(|&m| m > 0.0)),
        phi_moved: !t.phi().is_empty()
            && t.phi().len() == initial.len()
            && t.phi().iter().all(|(name, v)| !v.bit_eq(initial.get(name).unwrap())),
    }
}

/// Largest per-step total-loss gap between two identical runs, and whether
/// their final checkpoints match byte for byte.
pub fn repeat_run(cfg: &fmnet::config::RunConfig) -> (f64, bool) {
    let (data, _) = cfg.generate_data().unwrap();
    let targets = cfg.mimic_targets(&data).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<_> = dirs
        .iter()
        .map(|d| fmnet::trainer::train(cfg.net.clone(), cfg.train.clone(), &data, targets.clone(), Some(d.path())).unwrap())
        .collect();
    let mut gap: f64 = if runs[0].log().len() == runs[1].log().len() { 0.0 } else { f64::INFINITY };
    for (a, b) in runs[0].log().iter().zip(runs[1].log()) {
        gap = gap.max((a.loss.total - b.loss.total).abs());
    }
    let files = |d: &tempfile::TempDir| {
        let dir = d.path().join("checkpoints").join("final");
        let mut v: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let fa = files(&dirs[0]);
    (gap, !fa.is_empty() && fa == files(&dirs[1]))
}

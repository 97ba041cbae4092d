//! Mimicking paths, the Ψ/Φ adapters and the auxiliary providers.

mod common;

use fmnet::auxnet::{preset, psi_transform, MimicPath, PathId, Provider, ProviderKind};
use fmnet::data::{read_dataset, write_dataset, Dataset};
use fmnet::trainer::MimicTargets;
use fmnet::{Error, Tensor};

#[test]
fn udacity_and_commaai_presets_produce_their_dims() {
    let rows = common::reference_path_dims();
    assert_eq!(rows.len(), 12);
    let order: Vec<String> = rows[..6].iter().map(|r| r.path.to_string()).collect();
    assert_eq!(order, ["PL", "PM", "PH", "FL", "FM", "FH"]);
    for r in rows {
        assert_eq!(r.psi, r.expected, "{} {} Ψ", r.preset, r.path);
        assert_eq!(r.phi, r.expected, "{} {} Φ", r.preset, r.path);
    }
}

#[test]
fn psi_averages_channel_groups_before_resampling() {
    let path = MimicPath {
        id: "FH".parse().unwrap(),
        target: [2, 2, 2],
        beta: 0.2,
    };
    // Channels (a, b, c, d) per pixel pool to ((a+b)/2, (c+d)/2).
    let f = Tensor::<f64>::from_fn(&[2, 2, 4], |i| i as f64).unwrap();
    let y = psi_transform(&f, &path).unwrap();
    let want: Vec<f64> = (0..4).flat_map(|p| [4.0 * p as f64 + 0.5, 4.0 * p as f64 + 2.5]).collect();
    assert_eq!(y.data(), &want[..]);
    let bad = Tensor::<f64>::zeros(&[2, 2, 3]).unwrap();
    assert!(matches!(psi_transform(&bad, &path), Err(Error::Config(_))));
}

#[test]
fn fixture_sidecars_reproduce_the_oracle_after_a_round_trip() {
    let cfg = common::small_run();
    let (train, _) = cfg.generate_data().unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &train).unwrap();
    let mut back = read_dataset(dir.path()).unwrap();
    for c in &mut back.clips {
        c.aux.clear();
    }
    let paths = preset("desk").unwrap();
    let fixture = Provider::new(ProviderKind::Fixture, 0, &paths).unwrap();
    let oracle = Provider::new(ProviderKind::Oracle, 0, &paths).unwrap();
    for clip in &back.clips {
        let a = fixture.provide(clip, &paths).unwrap();
        let b = oracle.provide(clip, &paths).unwrap();
        for p in &paths {
            assert!(a[&p.id].bit_eq(&b[&p.id]), "{} {}", clip.id, p.id);
        }
    }
}

#[test]
fn missing_fixture_is_a_configuration_error() {
    let cfg = common::small_run();
    let (mut train, _) = cfg.generate_data().unwrap();
    let paths = preset("desk").unwrap();
    train.clips[0].aux.remove(&"PM".parse::<PathId>().unwrap());
    let provider = Provider::new(ProviderKind::Fixture, 0, &paths).unwrap();
    let err = MimicTargets::build(&provider, &train, &paths).unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("PM")), "{err}");
}

#[test]
fn frozen_random_features_depend_only_on_the_seed() {
    let cfg = common::small_run();
    let (train, _) = cfg.generate_data().unwrap();
    let paths = preset("desk").unwrap();
    let clip = &train.clips[0];
    let run = |seed| Provider::new(ProviderKind::FrozenRandom, seed, &paths).unwrap().provide(clip, &paths).unwrap();
    let (a, b, c) = (run(5), run(5), run(6));
    for p in &paths {
        assert!(a[&p.id].bit_eq(&b[&p.id]));
        assert!(!a[&p.id].bit_eq(&c[&p.id]));
        assert_eq!(a[&p.id].shape()[2], 2 * p.target[2]);
    }
    let one = Dataset::new(vec![clip.clone()]);
    let provider = Provider::new(ProviderKind::FrozenRandom, 5, &paths).unwrap();
    let t = MimicTargets::build(&provider, &one, &paths).unwrap();
    for p in &paths {
        assert_eq!(t.per_clip[0][&p.id].shape(), &p.target[..]);
    }
}

use std::path::Path;

use dualsim::pipeline::{chrono_split, DataConfig, Experiment, ExperimentConfig};
use dualsim::synthworld::{generate, WorldConfig};
use dualsim::Stage;

mod common;

#[test]
fn chrono_split_matches_oracle_on_100_instances() {
    let pool = generate(&WorldConfig {
        trajectories: 400,
        users: 100,
        visitors_per_merchant: 5,
        seed: 4,
        ..WorldConfig::default()
    })
    .unwrap()
    .trajectories;
    common::check_chrono_split(&pool, 100, 99).unwrap();
}

#[test]
fn chrono_split_rejects_degenerate_input() {
    let pool = generate(&WorldConfig {
        trajectories: 10,
        users: 10,
        visitors_per_merchant: 2,
        ..WorldConfig::default()
    })
    .unwrap()
    .trajectories;
    for f in [0.0, 1.0, -0.5, f64::NAN] {
        assert!(chrono_split(&pool, f).is_err());
    }
    assert!(chrono_split(&[], 0.2).is_err());
}

fn world(dir: &Path, seed: u64) {
    generate(&WorldConfig {
        trajectories: 3000,
        users: 500,
        seed,
        ..WorldConfig::default()
    })
    .unwrap()
    .write(dir)
    .unwrap();
}

fn experiment(dir: &Path, lambda: f64) -> Experiment {
    let mut cfg = ExperimentConfig::new(DataConfig {
        trajectories: "trajectories.jsonl".into(),
        visitors: Some("visitors.jsonl".into()),
        latent_truth: Some("latent_truth.json".into()),
        output_dir: format!("out-{lambda}").into(),
        registry: None,
        model: None,
        mining_fraction: 0.2,
    });
    cfg.mining.k = 3;
    cfg.mining.min_cluster_size = 15;
    cfg.fitting.rounds = 30;
    cfg.aggregation.samples = 200;
    cfg.aggregation.lambda = lambda;
    Experiment::new(cfg, dir).unwrap()
}

#[test]
fn lambda_endpoints_reduce_to_single_branches() {
    let dir = tempfile::tempdir().unwrap();
    world(dir.path(), 6);
    let half = experiment(dir.path(), 0.5).run().unwrap();
    for lambda in [0.0, 1.0] {
        let report = experiment(dir.path(), lambda).run().unwrap();
        for (a, b) in [(&report.vs_empirical, &half.vs_empirical), (&report.vs_oracle.unwrap(), &half.vs_oracle.unwrap())] {
            let single = if lambda == 0.0 { a.fit } else { a.reason };
            assert_eq!(a.fused, single);
            // Branch means do not depend on lambda.
            assert_eq!((a.reason, a.fit), (b.reason, b.fit));
        }
        for m in &report.merchants {
            let single = if lambda == 0.0 { m.fit_mean } else { m.reason_mean };
            assert_eq!(m.hybrid_rate, single);
        }
    }
}

#[test]
fn reruns_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    world(dir.path(), 2);
    let exp = experiment(dir.path(), 0.5);
    exp.run().unwrap();
    let first = std::fs::read(exp.artifact("report.json")).unwrap();
    let first_csv = std::fs::read(exp.artifact("breakdown.csv")).unwrap();
    exp.run().unwrap();
    assert_eq!(first, std::fs::read(exp.artifact("report.json")).unwrap());
    assert_eq!(first_csv, std::fs::read(exp.artifact("breakdown.csv")).unwrap());
}

#[test]
fn missing_registry_is_a_train_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    world(dir.path(), 1);
    let mut exp = experiment(dir.path(), 0.5);
    exp.cfg.data.registry = Some("nowhere/registry.json".into());
    let err = exp.train().unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Train), "{err}");
    let err = exp.simulate().unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Simulate), "{err}");
}

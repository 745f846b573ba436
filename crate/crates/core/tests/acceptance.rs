//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use dualsim::aggregator::{PolicySignal, SimulationConfig, Simulator, VisitorPool};
use dualsim::clustering::{hdbscan, kmeans};
use dualsim::domain::{Category, Intervention, PolicyRegistry, Tier};
use dualsim::encoder::EncoderConfig;
use dualsim::fitting::{train, BoostingConfig, Dataset};
use dualsim::io;
use dualsim::metrics::{breakdown, gse, gse_sd, kendall_tau, MerchantRatePair};
use dualsim::miner::MiningVariant;
use dualsim::pipeline::{evaluation_scenes, run_experiment, DataConfig, EvaluationReport, Experiment, ExperimentConfig, ModelArtifact};
use dualsim::synthworld::{generate, WorldConfig};

mod common;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Outcome = Result<String, String>;

/// A generated world on disk with its `experiment.json`.
struct Setup {
    _dir: TempDir,
    config: PathBuf,
}

impl Setup {
    fn new(world: WorldConfig) -> Setup {
        let dir = tempfile::tempdir().expect("temp dir");
        generate(&world).expect("world").write(dir.path()).expect("write world");
        let mut cfg = ExperimentConfig::new(DataConfig {
            trajectories: "trajectories.jsonl".into(),
            visitors: None,
            latent_truth: Some("latent_truth.json".into()),
            output_dir: "out".into(),
            registry: None,
            model: None,
            mining_fraction: 0.2,
        });
        cfg.seed = Some(world.seed);
        cfg.mining.k = world.personas.len();
        cfg.mining.min_cluster_size = 30;
        cfg.mining.encoder = EncoderConfig::new(512, 1, 1, 0).expect("encoder");
        let config = dir.path().join("experiment.json");
        io::write_json(&config, &cfg).expect("write config");
        Setup { _dir: dir, config }
    }

    fn experiment(&self) -> Experiment {
        Experiment::load(&self.config).expect("config")
    }
}

fn default_world(seed: u64) -> WorldConfig {
    WorldConfig {
        seed,
        ..WorldConfig::default()
    }
}

fn oracle(report: &EvaluationReport) -> dualsim::pipeline::TargetScores {
    report.vs_oracle.expect("world truth is configured")
}

/// Fused GSE against the oracle for one mining variant.
fn variant_gse(exp: &Experiment, variant: MiningVariant) -> dualsim::Result<f64> {
    let (mining, test) = exp.split()?;
    let (registry, _) = exp.mine_variant(&mining, variant)?;
    let artifact = exp.fit(&registry, &mining, PolicySignal::Mined)?;
    let estimates = exp.simulate_with(&registry, &artifact, &test, &exp.cfg.aggregation)?;
    Ok(oracle(&exp.score(&estimates, exp.latent_truth()?.as_ref())?).fused.gse)
}

/// Fitting-branch GSE against the oracle with and without the policy signal.
fn policy_fit_gse(exp: &Experiment) -> dualsim::Result<(f64, f64)> {
    let (mining, test) = exp.split()?;
    let (registry, _) = exp.mine_variant(&mining, MiningVariant::Full)?;
    let truth = exp.latent_truth()?;
    let mut out = [0.0; 2];
    for (slot, signal) in [PolicySignal::Mined, PolicySignal::Withheld].into_iter().enumerate() {
        let artifact = exp.fit(&registry, &mining, signal)?;
        let estimates = exp.simulate_with(&registry, &artifact, &test, &exp.cfg.aggregation)?;
        out[slot] = oracle(&exp.score(&estimates, truth.as_ref())?).fit.gse;
    }
    Ok((out[0], out[1]))
}

struct DefaultRuns {
    setups: Vec<Setup>,
    reports: Vec<EvaluationReport>,
    first_elapsed: Duration,
}

fn default_runs() -> DefaultRuns {
    let mut setups = Vec::new();
    let mut reports = Vec::new();
    let mut first_elapsed = Duration::ZERO;
    for seed in SEEDS {
        let start = Instant::now();
        let setup = Setup::new(default_world(seed));
        reports.push(run_experiment(&setup.config).expect("pipeline run"));
        if seed == SEEDS[0] {
            first_elapsed = start.elapsed();
        }
        setups.push(setup);
    }
    DefaultRuns {
        setups,
        reports,
        first_elapsed,
    }
}

fn a1(runs: &DefaultRuns) -> Outcome {
    let fused = oracle(&runs.reports[0]).fused.gse;
    let secs = runs.first_elapsed.as_secs_f64();
    let detail = format!("fused GSE {fused:.2} (limit 3.0), {secs:.1}s (limit 600s), seed {}", SEEDS[0]);
    if fused <= 3.0 && secs <= 600.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a2(runs: &DefaultRuns) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (seed, r) in SEEDS.iter().zip(&runs.reports) {
        let s = oracle(r);
        let ok = s.fused.gse <= s.reason.gse.min(s.fit.gse);
        wins += usize::from(ok);
        parts.push(format!("s{seed} {:.2}/{:.2}/{:.2}", s.fused.gse, s.reason.gse, s.fit.gse));
    }
    let detail = format!("{wins}/5 seeds fused <= min(reason, fit) [fused/reason/fit: {}]", parts.join(", "));
    if wins >= 4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a3() -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let setup = Setup::new(WorldConfig {
            seed,
            ..WorldConfig::duality()
        });
        let (with, without) = policy_fit_gse(&setup.experiment()).map_err(|e| e.to_string())?;
        wins += usize::from(with < without);
        parts.push(format!("s{seed} {with:.2}/{without:.2}"));
    }
    let detail = format!("{wins}/5 seeds with-policy fit GSE < without [with/without: {}]", parts.join(", "));
    if wins == 5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a4(runs: &DefaultRuns) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (setup, report) in runs.setups.iter().zip(&runs.reports) {
        let exp = setup.experiment();
        let none = variant_gse(&exp, MiningVariant::NoClustering).map_err(|e| e.to_string())?;
        let kmeans_only = variant_gse(&exp, MiningVariant::KMeansOnly).map_err(|e| e.to_string())?;
        let full = oracle(report).fused.gse;
        wins += usize::from(none > kmeans_only && kmeans_only > full);
        parts.push(format!("s{} {none:.2}/{kmeans_only:.2}/{full:.2}", report.seed));
    }
    let detail = format!("{wins}/5 seeds NoClustering > KMeansOnly > Full [{}]", parts.join(", "));
    if wins >= 3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn a5() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let mut split = 0;
    for case in 0..200 {
        let points = common::blobs(&mut r);
        let mcs = r.random_range(2..=8);
        let ms = r.random_range(1..=mcs + 2);
        let got = hdbscan(&points, mcs, ms).map_err(|e| e.to_string())?;
        if got.labels != common::hdbscan_reference(&points, mcs, ms) {
            return Err(format!("HDBSCAN differs from the reference on instance {case}"));
        }
        split += usize::from(got.cluster_count >= 2);
    }
    for case in 0..100 {
        let dim = r.random_range(1..4);
        let points: Vec<Vec<f64>> = (0..r.random_range(5..60))
            .map(|_| (0..dim).map(|_| r.random_range(-50.0..50.0)).collect())
            .collect();
        let k = r.random_range(1..=5);
        let seed = r.random();
        let a = kmeans(&points, k, seed, 100, 0.0).map_err(|e| e.to_string())?;
        if a.inertia_history.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-12) {
            return Err(format!("k-means inertia rose on run {case}: {:?}", a.inertia_history));
        }
        let (s1, s2) = (
            kmeans(&points, k, seed, 0, 0.0).map_err(|e| e.to_string())?,
            kmeans(&points, k, seed, 0, 0.0).map_err(|e| e.to_string())?,
        );
        let bytes = |c: &[Vec<f64>]| c.iter().flatten().flat_map(|x| x.to_bits().to_le_bytes()).collect::<Vec<u8>>();
        if bytes(&s1.centroids) != bytes(&s2.centroids) || a != kmeans(&points, k, seed, 100, 0.0).map_err(|e| e.to_string())? {
            return Err(format!("k-means++ not deterministic on run {case}"));
        }
    }
    Ok(format!("HDBSCAN equals reference on 200 instances ({split} with 2+ clusters); k-means monotone and deterministic on 100 runs"))
}

fn a6() -> Outcome {
    let (data, cfg) = common::stump_example();
    let one = train(&data, &BoostingConfig { rounds: 1, ..cfg.clone() }).map_err(|e| e.to_string())?;
    if (one.raw_score(&[0.0]) + 0.05).abs() > 1e-9 || (one.raw_score(&[1.0]) - 0.05).abs() > 1e-9 {
        return Err("one-round leaves differ from the hand computation".into());
    }
    let two = train(&data, &cfg).map_err(|e| e.to_string())?;
    let (left, right) = common::stump_example_expectation();
    if (two.predict_values(&[0.0]) - left).abs() > 1e-9 || (two.predict_values(&[1.0]) - right).abs() > 1e-9 {
        return Err("two-round prediction differs from the hand computation".into());
    }
    common::check_loss_monotone(50, 77)?;
    let flat = Dataset::from_rows("fp", vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0], vec![5.0]], vec![1, 0, 1, 1, 0])
        .map_err(|e| e.to_string())?;
    let m0 = train(
        &flat,
        &BoostingConfig {
            rounds: 0,
            ..BoostingConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    if m0.predict_values(&[3.0]) != m0.base_rate || m0.base_rate != 0.6 {
        return Err(format!("M=0 predicts {} for base rate 0.6", m0.predict_values(&[3.0])));
    }
    Ok("hand example within 1e-9, loss non-increasing on 50 datasets, M=0 equals base rate".into())
}

fn a7() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for case in 0..1000 {
        let n = r.random_range(2..=12);
        let mut perm = || {
            let mut p: Vec<usize> = (1..=n).collect();
            rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut r);
            p
        };
        let (a, b) = (perm(), perm());
        if kendall_tau(&a, &b).map_err(|e| e.to_string())? != common::tau_pair_count(&a, &b) {
            return Err(format!("tau differs from the pair-count oracle on pair {case}"));
        }
    }
    for case in 0..200 {
        let pairs: Vec<MerchantRatePair> = (0..r.random_range(2..60))
            .map(|i| MerchantRatePair {
                merchant_id: format!("m{i}"),
                predicted_rate: r.random(),
                true_rate: r.random(),
                tier: Tier::ALL[r.random_range(0..3)],
                category: Category::ALL[r.random_range(0..5)],
            })
            .collect();
        let errs: Vec<f64> = pairs.iter().map(|p| 100.0 * (p.predicted_rate - p.true_rate).abs()).collect();
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        let total = gse(&pairs).map_err(|e| e.to_string())?;
        if (total - mean).abs() > 1e-12 || (gse_sd(&pairs).map_err(|e| e.to_string())? - sd).abs() > 1e-12 {
            return Err(format!("GSE or GSE-SD off on set {case}"));
        }
        let rows = breakdown(&pairs);
        for by in ["tier", "category"] {
            let weighted: f64 = rows
                .iter()
                .filter(|row| row.group_by == by)
                .map(|row| row.gse * row.merchants as f64)
                .sum::<f64>()
                / n;
            if (weighted - total).abs() > 1e-9 {
                return Err(format!("{by} breakdown does not recombine on set {case}"));
            }
        }
    }
    Ok("tau exact on 1000 pairs, GSE/GSE-SD within 1e-12, breakdown identity within 1e-9".into())
}

/// Pooled over six scenes of the seed-0 run: one scene's ratio over 30
/// seeds has a standard error near 0.37.
fn a8(runs: &DefaultRuns) -> Outcome {
    let exp = runs.setups[0].experiment();
    let registry: PolicyRegistry = io::read_json(&exp.registry_path()).map_err(|e| e.to_string())?;
    let artifact: ModelArtifact = io::read_json(&exp.model_path()).map_err(|e| e.to_string())?;
    let (_, test) = exp.split().map_err(|e| e.to_string())?;
    let visitors = exp.visitors(&test).map_err(|e| e.to_string())?;
    let sim = Simulator {
        registry: &registry,
        model: &artifact.model,
        layout: &artifact.layout,
        backend: exp.backend(),
    };
    let (mut small, mut large) = (0.0, 0.0);
    for (scene, _, _) in evaluation_scenes(&test).into_iter().take(6) {
        let pool = VisitorPool::build(&registry, &visitors[&scene.merchant_id], &scene.merchant_id).map_err(|e| e.to_string())?;
        let mixture = pool.mixture(&scene.merchant_id, registry.len());
        let spread = |n: usize| -> Result<f64, String> {
            let rates = (0..30)
                .map(|seed| {
                    let cfg = SimulationConfig {
                        samples: n,
                        seed: 1000 + seed,
                        ..SimulationConfig::default()
                    };
                    sim.simulate(&mixture, &pool, &scene, &Intervention::identity(), &cfg)
                        .map(|e| e.hybrid_rate)
                        .map_err(|e| e.to_string())
                })
                .collect::<Result<Vec<f64>, String>>()?;
            let m = rates.iter().sum::<f64>() / 30.0;
            Ok(rates.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 29.0)
        };
        small += spread(1000)?;
        large += spread(4000)?;
    }
    let ratio = (small / large).sqrt();
    let detail = format!("std ratio {ratio:.2} between N=1000 and N=4000 (target 2.0 +/- 30%)");
    if (1.4..=2.6).contains(&ratio) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["report.json", "breakdown.csv", "estimates.json"]
        .iter()
        .map(|f| ((*f).to_owned(), std::fs::read(dir.join(f)).unwrap_or_default()))
        .collect()
}

fn a9(runs: &DefaultRuns) -> Outcome {
    let setup = &runs.setups[0];
    let out = setup.experiment().output_dir();
    let before = snapshot(&out);
    run_experiment(&setup.config).map_err(|e| e.to_string())?;
    let after = snapshot(&out);
    for ((name, a), (_, b)) in before.iter().zip(&after) {
        if a.is_empty() || a != b {
            return Err(format!("{name} differs between identical runs"));
        }
    }
    Ok("report.json, breakdown.csv and estimates.json byte-identical across reruns".into())
}

fn a10() -> Outcome {
    let pool = generate(&WorldConfig {
        trajectories: 400,
        users: 100,
        visitors_per_merchant: 5,
        seed: 4,
        ..WorldConfig::default()
    })
    .map_err(|e| e.to_string())?
    .trajectories;
    common::check_chrono_split(&pool, 100, 99)?;
    Ok("chrono_split equals sort-then-split oracle on 100 instances".into())
}

fn report(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()).unwrap_or("?")
        ))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => {
            println!("{name} PASS  {d}  [{secs:.1}s]");
            true
        }
        Err(d) => {
            println!("{name} FAIL  {d}  [{secs:.1}s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let runs = catch_unwind(default_runs);
    let mut passed = Vec::new();
    match &runs {
        Ok(runs) => {
            passed.push(report("A1", || a1(runs)));
            passed.push(report("A2", || a2(runs)));
        }
        Err(_) => {
            println!("A1 FAIL  default-world pipeline run panicked");
            println!("A2 FAIL  default-world pipeline run panicked");
            passed.extend([false, false]);
        }
    }
    passed.push(report("A3", a3));
    match &runs {
        Ok(runs) => passed.push(report("A4", || a4(runs))),
        Err(_) => {
            println!("A4 FAIL  default-world pipeline run panicked");
            passed.push(false);
        }
    }
    passed.push(report("A5", a5));
    passed.push(report("A6", a6));
    passed.push(report("A7", a7));
    match &runs {
        Ok(runs) => {
            passed.push(report("A8", || a8(runs)));
            passed.push(report("A9", || a9(runs)));
        }
        Err(_) => {
            println!("A8 FAIL  default-world pipeline run panicked");
            println!("A9 FAIL  default-world pipeline run panicked");
            passed.extend([false, false]);
        }
    }
    passed.push(report("A10", a10));
    let ok = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {ok}/{} criteria passed in {:.0}s", passed.len(), start.elapsed().as_secs_f64());
    if ok == passed.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

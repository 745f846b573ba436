//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualsim::domain::Trajectory;
use dualsim::fitting::{train, BoostingConfig, Dataset};

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Top-down HDBSCAN straight from the definition: at every level the
/// components come from a breadth-first search over the full
/// mutual-reachability graph rather than a spanning tree.
pub fn hdbscan_reference(points: &[Vec<f64>], mcs: usize, min_samples: usize) -> Vec<i64> {
    let n = points.len();
    if n < mcs {
        return vec![-1; n];
    }
    let d: Vec<Vec<f64>> = points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
                .collect()
        })
        .collect();
    let core: Vec<f64> = d
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r.sort_by(f64::total_cmp);
            r[min_samples.min(n) - 1]
        })
        .collect();
    let mrd = |i: usize, j: usize| d[i][j].max(core[i]).max(core[j]);

    struct Cl {
        points: Vec<usize>,
        birth: f64,
        stability: f64,
        children: Vec<usize>,
    }
    let mut clusters = vec![Cl {
        points: (0..n).collect(),
        birth: 0.0,
        stability: 0.0,
        children: vec![],
    }];
    let mut todo = vec![0];
    while let Some(c) = todo.pop() {
        let birth = clusters[c].birth;
        let mut current = clusters[c].points.clone();
        loop {
            // Smallest threshold that keeps the component connected.
            let mut weights: Vec<f64> = current
                .iter()
                .flat_map(|&i| current.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
                .map(|(i, j)| mrd(i, j))
                .collect();
            weights.sort_by(f64::total_cmp);
            weights.dedup();
            let level = *weights
                .iter()
                .find(|&&t| components(&current, |i, j| mrd(i, j) <= t).len() == 1)
                .unwrap();
            let parts = components(&current, |i, j| mrd(i, j) < level);
            let lambda = 1.0 / level.max(1e-12);
            let (big, small): (Vec<_>, Vec<_>) = parts.into_iter().partition(|p| p.len() >= mcs);
            for p in &small {
                clusters[c].stability += p.len() as f64 * (lambda - birth);
            }
            match big.len() {
                0 => break,
                1 => current = big.into_iter().next().unwrap(),
                _ => {
                    for p in big {
                        clusters[c].stability += p.len() as f64 * (lambda - birth);
                        clusters.push(Cl {
                            points: p,
                            birth: lambda,
                            stability: 0.0,
                            children: vec![],
                        });
                        let id = clusters.len() - 1;
                        clusters[c].children.push(id);
                        todo.push(id);
                    }
                    break;
                }
            }
        }
    }

    let selected: Vec<usize> = if clusters[0].children.is_empty() {
        vec![0]
    } else {
        fn best(c: usize, cl: &[Cl], out: &mut Vec<usize>) -> f64 {
            let mut picked = Vec::new();
            let sum: f64 = cl[c].children.iter().map(|&k| best(k, cl, &mut picked)).sum();
            if cl[c].children.is_empty() || sum <= cl[c].stability {
                out.push(c);
                cl[c].stability
            } else {
                out.extend(picked);
                sum
            }
        }
        let mut out = Vec::new();
        for &k in &clusters[0].children {
            best(k, &clusters, &mut out);
        }
        out
    };
    let mut groups: Vec<Vec<usize>> = selected.iter().map(|&c| clusters[c].points.clone()).collect();
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    let mut labels = vec![-1; n];
    for (l, g) in groups.iter().enumerate() {
        for &p in g {
            labels[p] = l as i64;
        }
    }
    labels
}

fn components(points: &[usize], linked: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; points.len()];
    let mut out = Vec::new();
    for s in 0..points.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![points[s]];
        let mut queue = vec![s];
        while let Some(a) = queue.pop() {
            for b in 0..points.len() {
                if !seen[b] && linked(points[a], points[b]) {
                    seen[b] = true;
                    comp.push(points[b]);
                    queue.push(b);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// A few Gaussian-ish blobs with the odd far-flung point.
pub fn blobs(r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = r.random_range(1..=3);
    let centers: Vec<Vec<f64>> = (0..r.random_range(1..=4))
        .map(|_| (0..dim).map(|_| r.random_range(-10.0..10.0)).collect())
        .collect();
    let n = r.random_range(8..=30);
    (0..n)
        .map(|_| {
            let c = &centers[r.random_range(0..centers.len())];
            let spread = if r.random_bool(0.1) { 6.0 } else { 1.0 };
            c.iter().map(|x| x + spread * r.random_range(-1.0..1.0)).collect()
        })
        .collect()
}

/// Tau by counting concordant and discordant pairs in integers.
pub fn tau_pair_count(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            if (a[i] < a[j]) == (b[i] < b[j]) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (n * (n - 1) / 2) as f64
}

/// Split by an exact rational `num/den`: ties on timestamp keep input order.
pub fn split_oracle(ts: &[Trajectory], num: usize, den: usize) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let cut = (num * ts.len()).div_ceil(den);
    let mut keyed: Vec<(i64, usize)> = ts.iter().enumerate().map(|(i, t)| (t.timestamp, i)).collect();
    keyed.sort_unstable();
    let ordered: Vec<Trajectory> = keyed.into_iter().map(|(_, i)| ts[i].clone()).collect();
    (ordered[..cut].to_vec(), ordered[cut..].to_vec())
}

/// Random splits of `pool` with heavily tied timestamps and rational
/// fractions; `Err` names the first instance that disagrees with the oracle.
pub fn check_chrono_split(pool: &[Trajectory], instances: usize, seed: u64) -> Result<(), String> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..instances {
        let n = r.random_range(1..120);
        // A narrow timestamp range forces many ties.
        let span = r.random_range(1..40);
        let ts: Vec<Trajectory> = (0..n)
            .map(|i| Trajectory {
                timestamp: r.random_range(0..span),
                compared_merchants: 2 + (i % 4) as u32,
                ..pool[r.random_range(0..pool.len())].clone()
            })
            .collect();
        let den = r.random_range(2..=10);
        let num = r.random_range(1..den);
        let got = dualsim::pipeline::chrono_split(&ts, num as f64 / den as f64).map_err(|e| e.to_string())?;
        if got != split_oracle(&ts, num, den) {
            return Err(format!("instance {case}: n {n} fraction {num}/{den}"));
        }
    }
    Ok(())
}

/// Closed-form leaf values of two depth-1 rounds on the 8-point example
/// x = [0,0,0,0,1,1,1,1], y = [0,0,0,1,1,1,1,0] with η = 0.1 and L2 = 1.
/// Returns the predicted probabilities at x = 0 and x = 1.
pub fn stump_example_expectation() -> (f64, f64) {
    // Round 1 starts from logit(0.5) = 0, so every p is 1/2 and h is 1/4.
    // Left: y - p = (-.5, -.5, -.5, .5) → G = -1, H = 1 → leaf -1 / (1 + 1).
    let (l1, r1) = (-0.5, 0.5);
    // Round 2 from scores ±0.05.
    let (pl, pr) = (sigmoid(0.1 * l1), sigmoid(0.1 * r1));
    let l2 = (1.0 - 4.0 * pl) / (4.0 * pl * (1.0 - pl) + 1.0);
    let r2 = (3.0 - 4.0 * pr) / (4.0 * pr * (1.0 - pr) + 1.0);
    (sigmoid(0.1 * (l1 + l2)), sigmoid(0.1 * (r1 + r2)))
}

pub fn stump_example() -> (Dataset, BoostingConfig) {
    let x = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
    let y = [0u8, 0, 0, 1, 1, 1, 1, 0];
    let data = Dataset::from_rows("fp", x.iter().map(|&v| vec![v]).collect(), y.to_vec()).unwrap();
    let cfg = BoostingConfig {
        rounds: 2,
        learning_rate: 0.1,
        max_depth: 1,
        l2: 1.0,
        min_child_weight: 0.0,
        seed: 0,
    };
    (data, cfg)
}

/// Trains on `count` random logistic datasets with random hyperparameters;
/// `Err` names the first round where the training loss went up.
pub fn check_loss_monotone(count: usize, seed: u64) -> Result<(), String> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..count {
        let n = r.random_range(20..120);
        let f = r.random_range(1..6);
        let w: Vec<f64> = (0..f).map(|_| r.random_range(-2.0..2.0)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..f).map(|_| (r.random_range(-3.0..3.0f64) * 4.0).round() / 4.0).collect())
            .collect();
        let labels: Vec<u8> = rows
            .iter()
            .map(|x| {
                let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                u8::from(r.random::<f64>() < sigmoid(z))
            })
            .collect();
        let data = Dataset::from_rows("fp", rows, labels).map_err(|e| e.to_string())?;
        let cfg = BoostingConfig {
            rounds: r.random_range(1..60),
            max_depth: r.random_range(1..5),
            l2: r.random_range(0.0..3.0),
            min_child_weight: r.random_range(0.0..2.0),
            ..BoostingConfig::default()
        };
        let model = train(&data, &cfg).map_err(|e| e.to_string())?;
        for (i, w) in model.train_loss.windows(2).enumerate() {
            if w[1] > w[0] + 1e-12 {
                return Err(format!("dataset {case} round {i}: {} -> {}", w[0], w[1]));
            }
        }
    }
    Ok(())
}

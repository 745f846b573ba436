use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use dualsim::domain::{Edit, Intervention};
use dualsim::synthworld::{expected_sigmoid, generate, oracle_rate, WorldConfig};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Trapezoid rule on the normal density over ±12 sd.
fn trapezoid(mu: f64, sd: f64) -> f64 {
    let steps = 20_000;
    let h = 24.0 / steps as f64;
    let mut acc = 0.0;
    for i in 0..=steps {
        let z = -12.0 + i as f64 * h;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        acc += w * sigmoid(mu + sd * z) * (-0.5 * z * z).exp();
    }
    acc * h / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn quadrature_matches_trapezoid_rule() {
    for mu in [-6.0, -2.0, -0.3, 0.0, 0.7, 3.0] {
        for sd in [0.0, 0.1, 0.5, 1.0, 2.5] {
            let want = if sd == 0.0 { sigmoid(mu) } else { trapezoid(mu, sd) };
            assert!((expected_sigmoid(mu, sd) - want).abs() < 1e-9, "mu {mu} sd {sd}");
        }
    }
    // Symmetry: E[σ(-X)] = 1 - E[σ(X)].
    assert!((expected_sigmoid(1.3, 0.8) + expected_sigmoid(-1.3, 0.8) - 1.0).abs() < 1e-12);
}

#[test]
fn monte_carlo_matches_closed_form_oracle() {
    let world = generate(&WorldConfig {
        trajectories: 2000,
        users: 400,
        seed: 12,
        ..WorldConfig::default()
    })
    .unwrap();
    let truth = &world.truth;
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let cut = Intervention::new("cut", vec![Edit::new("price_tier", 15.0)]);
    for m in truth.merchants.iter().take(2) {
        for intervention in [Intervention::identity(), cut.clone()] {
            let want = oracle_rate(truth, &m.base_scene, &intervention, &m.mixture).unwrap();
            let scene = dualsim::domain::apply_intervention(&m.base_scene, &intervention).unwrap();
            // Standard error near 0.0005, so the 0.002 tolerance is about 4 sigma.
            let draws = 1_000_000;
            let mut bought = 0usize;
            for _ in 0..draws {
                let u: f64 = r.random();
                let mut acc = 0.0;
                let mut k = m.mixture.len() - 1;
                for (i, &pi) in m.mixture.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let p = &truth.policies[k];
                let eps = if p.noise_sd > 0.0 {
                    Normal::new(0.0, p.noise_sd).unwrap().sample(&mut r)
                } else {
                    0.0
                };
                bought += usize::from(r.random::<f64>() < sigmoid(p.logit(&scene) + eps));
            }
            let got = bought as f64 / draws as f64;
            assert!((got - want).abs() < 0.002, "{} {}: mc {got} oracle {want}", m.merchant_id, intervention.label);
        }
    }
}

#[test]
fn observed_outcomes_follow_the_latent_rates() {
    let world = generate(&WorldConfig {
        trajectories: 20_000,
        users: 2000,
        seed: 1,
        ..WorldConfig::default()
    })
    .unwrap();
    let truth = &world.truth;
    let policy_of: BTreeMap<&str, usize> = truth.users.iter().map(|u| (u.user_id.as_str(), u.policy)).collect();

    // Whole-world z score of outcomes against each trajectory's own rate.
    let (mut resid, mut var) = (0.0, 0.0);
    let mut groups: BTreeMap<String, (Vec<String>, usize, usize)> = BTreeMap::new();
    for t in &world.trajectories {
        let p = truth.policies[policy_of[t.user.user_id()]].rate(&t.scene);
        resid += f64::from(t.outcome) - p;
        var += p * (1.0 - p);
        let key = t.scene.serialized_text();
        let g = groups.entry(key).or_default();
        g.0.push(t.user.user_id().to_owned());
        g.1 += usize::from(t.outcome);
        g.2 += 1;
    }
    let z = resid / var.sqrt();
    assert!(z.abs() < 4.0, "z = {z}");

    // Large merchant-scene groups: empirical rate near the realized-visitor oracle.
    let mut checked = 0;
    for t in &world.trajectories {
        let key = t.scene.serialized_text();
        let Some((ids, bought, n)) = groups.remove(&key) else { continue };
        if n < 300 {
            continue;
        }
        let oracle = truth.visitor_rate(&t.scene, &ids).unwrap();
        let empirical = bought as f64 / n as f64;
        let tol = 4.0 * (0.25 / n as f64).sqrt();
        assert!((empirical - oracle).abs() < tol, "{}: {empirical} vs {oracle} (n {n})", t.scene.merchant_id);
        checked += 1;
    }
    assert!(checked >= 5, "only {checked} groups were large enough");
}

#[test]
fn mixtures_are_distributions() {
    let world = generate(&WorldConfig::duality()).unwrap();
    for m in &world.truth.merchants {
        assert!((m.mixture.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m.mixture.iter().all(|&p| p >= 0.0));
    }
    let ids: Vec<String> = world.visitor_logs[0].visitors.iter().map(|v| v.user_id().to_owned()).collect();
    let mix = world.truth.visitor_mixture(&ids).unwrap();
    assert!((mix.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualsim::clustering::{hdbscan, kmeans, NOISE};

mod common;
use common::{blobs, hdbscan_reference};

#[test]
fn hdbscan_matches_reference_on_200_instances() {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let mut clustered = 0;
    for case in 0..200 {
        let points = blobs(&mut r);
        let mcs = r.random_range(2..=8);
        let ms = r.random_range(1..=mcs + 2);
        let got = hdbscan(&points, mcs, ms).unwrap();
        let want = hdbscan_reference(&points, mcs, ms);
        assert_eq!(got.labels, want, "case {case}: n={} mcs={mcs} ms={ms}", points.len());
        assert_eq!(got.cluster_count, want.iter().copied().max().map_or(0, |m| (m + 1) as usize));
        clustered += usize::from(got.cluster_count >= 2);
    }
    // The instances must exercise real splits, not just all-noise or one cluster.
    assert!(clustered >= 50, "only {clustered} instances had two or more clusters");
}

#[test]
fn hdbscan_separates_distant_blobs() {
    let mut points = Vec::new();
    for i in 0..10 {
        points.push(vec![i as f64 * 0.1, 0.0]);
        points.push(vec![100.0 + i as f64 * 0.1, 0.0]);
    }
    // Farther from both blobs than they are from each other, so it leaves
    // the hierarchy before the split.
    points.push(vec![50.0, 200.0]);
    let res = hdbscan(&points, 5, 5).unwrap();
    assert_eq!(res.cluster_count, 2);
    assert_eq!(res.labels[20], NOISE);
    assert!(res.labels[..20].chunks(2).all(|p| p[0] == 0 && p[1] == 1));
}

fn cloud() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, u64)> {
    (1usize..4, 5usize..40).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec(prop::collection::vec(-50.0..50.0f64, dim), n),
            1usize..=5,
            any::<u64>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kmeans_inertia_never_increases((points, k, seed) in cloud()) {
        let res = kmeans(&points, k, seed, 100, 0.0).unwrap();
        for w in res.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", res.inertia_history);
        }
        prop_assert!(res.inertia <= res.inertia_history[0] * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn kmeans_is_deterministic_per_seed((points, k, seed) in cloud()) {
        let a = kmeans(&points, k, seed, 100, 1e-9).unwrap();
        let b = kmeans(&points, k, seed, 100, 1e-9).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn kmeans_plus_plus_seeding_is_deterministic((points, k, seed) in cloud()) {
        // Zero iterations expose the seeded centroids themselves.
        let a = kmeans(&points, k, seed, 0, 0.0).unwrap();
        let b = kmeans(&points, k, seed, 0, 0.0).unwrap();
        prop_assert_eq!(&a.centroids, &b.centroids);
        for c in &a.centroids {
            prop_assert!(points.contains(c), "seed centroid must be an input point");
        }
    }

    #[test]
    fn hdbscan_labels_are_dense_and_sized((points, k, _seed) in cloud()) {
        let mcs = k + 1;
        let res = hdbscan(&points, mcs, mcs).unwrap();
        let members = res.members();
        prop_assert_eq!(members.len(), res.cluster_count);
        let mut firsts = Vec::new();
        for m in &members {
            prop_assert!(m.len() >= mcs);
            firsts.push(m[0]);
        }
        prop_assert!(firsts.windows(2).all(|w| w[0] < w[1]));
    }
}

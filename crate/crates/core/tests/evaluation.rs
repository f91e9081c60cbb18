use immunorec::affinity::AffinityMeasure;
use immunorec::evaluation::{cross_affinity_experiment, evaluate, summarize, EvalConfig};
use immunorec::network::AisParams;
use immunorec::ratings::{generate_synthetic, PersonId, RatingsStore, SyntheticConfig};

fn store(
    clusters: usize,
    users: usize,
    movies: usize,
    votes: usize,
    noise: u8,
    seed: u64,
) -> RatingsStore {
    generate_synthetic(&SyntheticConfig {
        cluster_count: clusters,
        users_per_cluster: users,
        movies,
        votes_per_user: votes,
        noise_categories: noise,
        seed,
    })
    .unwrap()
}

#[test]
fn clone_clusters_predict_perfectly() {
    let store = store(3, 6, 30, 30, 0, 12);
    let config = EvalConfig {
        user_count: 10,
        min_votes: 21,
        hides_per_user: 4,
        seed: 3,
        ..EvalConfig::default()
    };
    let report = evaluate(&store, &config).unwrap();
    assert_eq!(report.mean_accuracy, Some(1.0));
    assert_eq!(report.coverage, 1.0);
    assert_eq!(report.trials.len(), 40);
    let summary = summarize(&report);
    assert_eq!(summary.histogram.len(), 1);
    assert_eq!(summary.histogram[0].count, 10);
}

#[test]
fn evaluation_leaves_store_untouched_and_is_deterministic() {
    let store = store(3, 10, 40, 25, 1, 8);
    let mut before = Vec::new();
    store.save(&mut before).unwrap();
    let config = EvalConfig {
        user_count: 6,
        hides_per_user: 3,
        seed: 77,
        measure: AffinityMeasure::tau(),
        ..EvalConfig::default()
    };
    let first = evaluate(&store, &config).unwrap();
    let second = evaluate(&store, &config).unwrap();
    assert_eq!(first, second);
    let mut after = Vec::new();
    store.save(&mut after).unwrap();
    assert_eq!(before, after);
    for trial in &first.trials {
        if let Some(acc) = trial.accuracy() {
            assert!((0.0..=1.0).contains(&acc));
        }
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    first.write_per_user_csv(&mut a).unwrap();
    second.write_per_user_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cross_experiment_self_comparison_is_identical() {
    let store = store(3, 10, 40, 20, 2, 4);
    let antigen = store.profile(PersonId(2)).unwrap();
    let ais = AisParams {
        pool_size: 15,
        ..AisParams::default()
    };
    for measure in [AffinityMeasure::kappa(), AffinityMeasure::tau()] {
        let rows = cross_affinity_experiment(&store, antigen, measure, measure, &ais).unwrap();
        assert!(!rows.is_empty());
        for r in &rows {
            assert_eq!(Some(r.selected), r.compared);
        }
        assert!(rows.windows(2).all(|w| w[0].selected >= w[1].selected));
    }
}

#[test]
fn cross_experiment_on_clones_selects_unit_kappa() {
    let store = store(4, 6, 25, 25, 0, 2);
    let antigen = store.profile(PersonId(7)).unwrap();
    let rows = cross_affinity_experiment(
        &store,
        antigen,
        AffinityMeasure::kappa(),
        AffinityMeasure::tau(),
        &AisParams::default(),
    )
    .unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows
        .iter()
        .all(|r| r.selected == 1.0 && r.compared == Some(1.0)));
}

#[test]
fn cross_experiment_needs_candidates() {
    let store = store(1, 1, 10, 5, 0, 0);
    let antigen = store.profile(PersonId(1)).unwrap();
    assert!(cross_affinity_experiment(
        &store,
        antigen,
        AffinityMeasure::kappa(),
        AffinityMeasure::tau(),
        &AisParams::default()
    )
    .is_err());
}

mod common;

use common::{random_capture, reference_kmeans, rng, RandomSpec};
use novo_core::analysis::{
    accuracy_vs_k, classify_voter_type, cluster_errors, error_vector_ensemble, error_vector_voter, hamming,
    hamming_matrix, pearson, rank_voters_on, ErrorVector, Owner, TypeRule, VoterType,
};
use novo_core::capture::AttentionSummary;
use novo_core::selection::{select_voters, Direction, Draw, SelectionConfig, Voter, VoterSet};
use novo_core::synth::{clustered_capture, ClusteredConfig};
use novo_core::voting::{evaluate, VoteMode};
use proptest::prelude::*;
use rand::Rng;

fn bits(v: &[u8]) -> ErrorVector {
    ErrorVector {
        owner: Owner::Ensemble,
        bits: v.iter().map(|&b| b == 1).collect(),
    }
}

fn single(geometry: &novo_core::ModelGeometry, head: usize, direction: Direction) -> VoterSet {
    VoterSet::from_voters(geometry.clone(), vec![Voter { head, direction, weight: None }]).unwrap()
}

#[test]
fn single_voter_error_vector_matches_evaluation() {
    for seed in 0..50 {
        let c = random_capture(seed, RandomSpec::default());
        let head = (seed as usize * 7) % c.n_heads();
        for dir in [Direction::Max, Direction::Min] {
            let e = error_vector_voter(&c.records, head, dir);
            let rep = evaluate(&single(&c.geometry, head, dir), &c, VoteMode::Vote).unwrap();
            assert_eq!(e.accuracy(), rep.accuracy);
            assert_eq!(e.bits, rep.error_bits());
        }
    }
}

#[test]
fn curve_endpoint_is_full_ensemble() {
    for seed in 0..50 {
        let c = random_capture(seed, RandomSpec::default());
        let sel = select_voters(&c, &SelectionConfig { draw: Draw::All, percentile: 60.0, ..Default::default() }).unwrap();
        let ranked = rank_voters_on(&sel.voters, &c).unwrap();
        let curve = accuracy_vs_k(&c, &ranked, 8).unwrap();
        assert_eq!(curve.len(), sel.voters.len());
        let full = evaluate(&sel.voters, &c, VoteMode::Vote).unwrap().accuracy;
        assert_eq!(curve.last().unwrap().accuracy, full, "seed {seed}");
        let first = &ranked[0];
        assert_eq!(curve[0].accuracy, error_vector_voter(&c.records, first.head, first.direction).accuracy());
        assert_eq!(curve[0].correlation, None);
    }
}

#[test]
fn duplicated_voter_keeps_accuracy_and_correlates_perfectly() {
    let c = random_capture(11, RandomSpec { max_records: 50, ..Default::default() });
    let v = Voter { head: 0, direction: Direction::Max, weight: None };
    let curve = accuracy_vs_k(&c, &[v, v], 1).unwrap();
    assert_eq!(curve[0].accuracy, curve[1].accuracy);
    let e = error_vector_voter(&c.records, 0, Direction::Max);
    if e.n_errors() > 0 && e.n_errors() < e.len() {
        assert_eq!(curve[1].correlation, Some(1.0));
        assert_eq!(curve[1].smoothed_correlation, Some(1.0));
    } else {
        assert_eq!(curve[1].correlation, None);
    }
}

#[test]
fn rankings_are_sorted_by_accuracy() {
    let c = random_capture(2, RandomSpec::default());
    let sel = select_voters(&c, &SelectionConfig { draw: Draw::All, percentile: 30.0, ..Default::default() }).unwrap();
    let ranked = rank_voters_on(&sel.voters, &c).unwrap();
    let accs: Vec<f64> = ranked.iter().map(|v| error_vector_voter(&c.records, v.head, v.direction).accuracy()).collect();
    assert!(accs.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn dictator_ensemble_error_vector() {
    let c = random_capture(4, RandomSpec::default());
    let e = error_vector_ensemble(&single(&c.geometry, 1.min(c.n_heads() - 1), Direction::Min), &c, VoteMode::Vote).unwrap();
    assert_eq!(e.bits, error_vector_voter(&c.records, 1.min(c.n_heads() - 1), Direction::Min).bits);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hamming_two_ways_and_triangle(seed in any::<u64>(), n in 1usize..80) {
        let mut r = rng(seed);
        let vs: Vec<ErrorVector> = (0..3).map(|_| bits(&(0..n).map(|_| r.random_range(0..2u8)).collect::<Vec<_>>())).collect();
        let m = hamming_matrix(&vs).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let xor = vs[i].bits.iter().zip(&vs[j].bits).filter(|(a, b)| a != b).count();
                // sum of squared differences of 0/1 vectors
                let sq: usize = vs[i].bits.iter().zip(&vs[j].bits).map(|(&a, &b)| (a as i32 - b as i32).pow(2) as usize).sum();
                prop_assert_eq!(m[i][j], xor);
                prop_assert_eq!(m[i][j], sq);
                prop_assert_eq!(m[i][j], m[j][i]);
            }
        }
        prop_assert!(m[0][2] <= m[0][1] + m[1][2]);
        prop_assert_eq!(hamming(&vs[0], &vs[1]).unwrap(), m[0][1]);
    }

    #[test]
    fn pearson_bounds_and_symmetry(seed in any::<u64>(), n in 2usize..60) {
        let mut r = rng(seed);
        let a = bits(&(0..n).map(|_| r.random_range(0..2u8)).collect::<Vec<_>>());
        let b = bits(&(0..n).map(|_| r.random_range(0..2u8)).collect::<Vec<_>>());
        let ab = pearson(&a, &b).unwrap();
        prop_assert_eq!(ab, pearson(&b, &a).unwrap());
        if let Some(x) = ab {
            prop_assert!((-1.0..=1.0).contains(&x));
        }
        if let Some(x) = pearson(&a, &a).unwrap() {
            prop_assert_eq!(x, 1.0);
        }
    }
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(hamming(&bits(&[0, 1]), &bits(&[0])).is_err());
    assert!(pearson(&bits(&[0, 1]), &bits(&[0])).is_err());
}

#[test]
fn kmeans_matches_reference_on_small_instances() {
    for seed in 0..40u64 {
        let mut r = rng(seed + 1000);
        let n_voters = 10;
        let len = r.random_range(5..30);
        let raw: Vec<Vec<u8>> = (0..n_voters).map(|_| (0..len).map(|_| r.random_range(0..2u8)).collect()).collect();
        let errors: Vec<ErrorVector> = raw.iter().map(|v| bits(v)).collect();
        let k = 1 + (seed as usize % 4);
        let ours = cluster_errors(&errors, k, seed).unwrap();
        let (labels, inertia) = reference_kmeans(&raw, k, seed);
        assert_eq!(ours.labels, labels, "seed {seed}");
        assert!((ours.inertia - inertia).abs() <= 1e-9, "{} vs {inertia}", ours.inertia);
        assert_eq!(ours.sizes().iter().sum::<usize>(), n_voters);
        assert!(ours.sizes().iter().all(|&s| s > 0));
    }
}

#[test]
fn kmeans_with_one_cluster_per_voter_has_zero_inertia() {
    let mut r = rng(9);
    let raw: Vec<Vec<u8>> = (0..8).map(|i| (0..20).map(|j| u8::from((i + j) % 3 == 0 || r.random_bool(0.2))).collect()).collect();
    let errors: Vec<ErrorVector> = raw.iter().map(|v| bits(v)).collect();
    let cl = cluster_errors(&errors, 8, 0).unwrap();
    assert!(cl.inertia.abs() < 1e-12);
    assert!(cluster_errors(&errors, 9, 0).is_err());
    assert!(cluster_errors(&errors, 0, 0).is_err());
}

#[test]
fn kmeans_recovers_planted_clusters() {
    let (c, truth) = clustered_capture(&ClusteredConfig { seed: 5, ..Default::default() });
    let errors: Vec<ErrorVector> = (0..c.n_heads()).map(|h| error_vector_voter(&c.records, h, Direction::Max)).collect();
    // best of several restarts, as single k-means runs can land in local optima
    let cl = (0..10)
        .map(|seed| cluster_errors(&errors, 6, seed).unwrap())
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia))
        .unwrap();
    // every planted cluster maps to a single found cluster
    for group in 0..6 {
        let found: std::collections::BTreeSet<usize> =
            truth.iter().zip(&cl.labels).filter(|(&t, _)| t == group).map(|(_, &l)| l).collect();
        assert_eq!(found.len(), 1, "group {group}: {found:?}");
    }
}

#[test]
fn voter_type_rules() {
    let mut c = random_capture(21, RandomSpec { attention: true, positions: true, ..Default::default() });
    let v = Voter { head: 0, direction: Direction::Max, weight: None };
    for r in &mut c.records {
        for o in &mut r.options {
            let n = o.norms.0.len();
            o.attention = Some(AttentionSummary { end_token_mass: vec![0.4; n], punct_mass: vec![0.2; n] });
        }
    }
    assert_eq!(classify_voter_type(&v, &c, &TypeRule::default()).unwrap(), VoterType::T1);
    for r in &mut c.records {
        for o in &mut r.options {
            let n = o.norms.0.len();
            o.attention = Some(AttentionSummary { end_token_mass: vec![0.1; n], punct_mass: vec![0.1; n] });
        }
    }
    assert_ne!(classify_voter_type(&v, &c, &TypeRule::default()).unwrap(), VoterType::T1);
}

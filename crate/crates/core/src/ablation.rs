//! Engine-side ablations: removing voters by error-cluster strategy, reading
//! voter norms away from the final position, and paired comparisons between
//! two captures of the same samples (e.g. original vs. perturbed text).

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::ErrorClustering;
use crate::capture::{CaptureSet, SampleRecord};
use crate::error::{Error, Result};
use crate::selection::{pick_option, VoterSet};
use crate::stats::quantile_sorted;
use crate::voting::{evaluate, evaluate_records, VoteMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalStrategy {
    /// Round-robin over clusters, largest first: low error variability loss.
    EvenAcrossClusters,
    /// Empty one cluster before touching the next, smallest first.
    ExhaustCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub removed: usize,
    pub remaining: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSeries {
    pub strategy: RemovalStrategy,
    /// Voter positions (into the voter set) in removal order; a permutation of
    /// all voters, the last entry being the one left standing.
    pub order: Vec<usize>,
    pub points: Vec<AblationPoint>,
}

impl AblationSeries {
    /// Accuracy after removing `removed` voters.
    pub fn accuracy_at(&self, removed: usize) -> Option<f64> {
        self.points.get(removed).map(|p| p.accuracy)
    }
}

/// Order in which voters are removed under `strategy`. Members of a cluster
/// leave in a seeded random order.
pub fn removal_order(clustering: &ErrorClustering, strategy: RemovalStrategy, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = clustering.members();
    for m in &mut members {
        m.shuffle(&mut rng);
    }
    let mut cluster_order: Vec<usize> = (0..clustering.k).collect();
    match strategy {
        RemovalStrategy::EvenAcrossClusters => {
            cluster_order.sort_by(|&a, &b| members[b].len().cmp(&members[a].len()).then(a.cmp(&b)))
        }
        RemovalStrategy::ExhaustCluster => {
            cluster_order.sort_by(|&a, &b| members[a].len().cmp(&members[b].len()).then(a.cmp(&b)))
        }
    }
    let total = clustering.labels.len();
    let mut order = Vec::with_capacity(total);
    match strategy {
        RemovalStrategy::EvenAcrossClusters => {
            let mut cursors = vec![0usize; clustering.k];
            while order.len() < total {
                for &c in &cluster_order {
                    if cursors[c] < members[c].len() {
                        order.push(members[c][cursors[c]]);
                        cursors[c] += 1;
                    }
                }
            }
        }
        RemovalStrategy::ExhaustCluster => {
            for &c in &cluster_order {
                order.extend_from_slice(&members[c]);
            }
        }
    }
    order
}

/// Majority-vote accuracy after each removal, from the full set down to one
/// remaining voter. `clustering.labels[i]` belongs to the i-th voter.
pub fn ablate_voters(
    voters: &VoterSet,
    clustering: &ErrorClustering,
    strategy: RemovalStrategy,
    seed: u64,
    capture: &CaptureSet,
) -> Result<AblationSeries> {
    if voters.is_empty() {
        return Err(Error::Empty("voter set"));
    }
    if clustering.labels.len() != voters.len() {
        return Err(Error::LengthMismatch {
            left: voters.len(),
            right: clustering.labels.len(),
        });
    }
    if !voters.geometry.same_shape(&capture.geometry) {
        return Err(Error::GeometryMismatch {
            expected: voters.geometry.n_heads(),
            found: capture.n_heads(),
        });
    }
    let order = removal_order(clustering, strategy, seed);
    let records = &capture.records;
    let picks: Vec<Vec<usize>> = voters
        .voters()
        .map(|v| records.iter().map(|r| pick_option(r, v.head, v.direction)).collect())
        .collect();
    let mut tallies: Vec<Vec<u32>> = records.iter().map(|r| vec![0; r.n_options()]).collect();
    for p in &picks {
        for (t, &k) in tallies.iter_mut().zip(p) {
            t[k] += 1;
        }
    }
    let accuracy = |tallies: &[Vec<u32>]| -> f64 {
        let hits = records
            .iter()
            .zip(tallies)
            .filter(|(r, t)| {
                let mut best = 0;
                for (k, &c) in t.iter().enumerate().skip(1) {
                    if c > t[best] {
                        best = k;
                    }
                }
                best == r.correct_index
            })
            .count();
        if records.is_empty() {
            0.0
        } else {
            hits as f64 / records.len() as f64
        }
    };
    let n = voters.len();
    let mut points = vec![AblationPoint {
        removed: 0,
        remaining: n,
        accuracy: accuracy(&tallies),
    }];
    for (step, &v) in order.iter().take(n - 1).enumerate() {
        for (t, &k) in tallies.iter_mut().zip(&picks[v]) {
            t[k] -= 1;
        }
        points.push(AblationPoint {
            removed: step + 1,
            remaining: n - step - 1,
            accuracy: accuracy(&tallies),
        });
    }
    Ok(AblationSeries {
        strategy,
        order,
        points,
    })
}

/// Sample-length window, as percentiles of the capture's sample lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthFilter {
    pub min_pct: f64,
    pub max_pct: f64,
}

impl Default for LengthFilter {
    fn default() -> Self {
        Self {
            min_pct: 5.0,
            max_pct: 95.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalResult {
    pub offset: usize,
    pub accuracy: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Evaluates with every voter reading its norm `offset` positions before the
/// final token. Options shorter than that read their earliest position.
pub fn positional_evaluate(
    voters: &VoterSet,
    capture: &CaptureSet,
    offset: usize,
    filter: Option<LengthFilter>,
    mode: VoteMode,
) -> Result<PositionalResult> {
    let lengths = capture
        .records
        .iter()
        .map(|r| {
            r.max_positions()
                .ok_or_else(|| Error::Missing(format!("positional norms for sample {:?}", r.sample_id)))
        })
        .collect::<Result<Vec<usize>>>()?;
    let keep: Vec<bool> = match filter {
        None => vec![true; lengths.len()],
        Some(f) => {
            if !(0.0..=100.0).contains(&f.min_pct) || !(0.0..=100.0).contains(&f.max_pct) || f.min_pct > f.max_pct {
                return Err(Error::config(format!("bad length filter [{}, {}]", f.min_pct, f.max_pct)));
            }
            let mut sorted: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
            sorted.sort_by(f64::total_cmp);
            if sorted.is_empty() {
                return Err(Error::Empty("no samples"));
            }
            let lo = quantile_sorted(&sorted, f.min_pct / 100.0);
            let hi = quantile_sorted(&sorted, f.max_pct / 100.0);
            lengths.iter().map(|&l| (l as f64) >= lo && (l as f64) <= hi).collect()
        }
    };
    let shifted: Vec<SampleRecord> = capture
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| {
            let mut r = r.clone();
            for o in &mut r.options {
                if let Some(pos) = &o.positions {
                    o.norms = pos.clamped(offset).clone();
                }
            }
            r
        })
        .collect();
    if shifted.is_empty() {
        return Err(Error::Empty("no samples survive the length filter"));
    }
    if !voters.geometry.same_shape(&capture.geometry) {
        return Err(Error::GeometryMismatch {
            expected: voters.geometry.n_heads(),
            found: capture.n_heads(),
        });
    }
    let report = evaluate_records(voters, &shifted, mode, false)?;
    Ok(PositionalResult {
        offset,
        accuracy: report.accuracy,
        n_used: shifted.len(),
        n_excluded: capture.len() - shifted.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n_samples: usize,
    pub acc_a: f64,
    pub acc_b: f64,
    /// `acc_b - acc_a`.
    pub delta: f64,
}

/// Paired accuracy change between two captures of the same sample ids.
pub fn compare_captures(voters: &VoterSet, a: &CaptureSet, b: &CaptureSet, mode: VoteMode) -> Result<Comparison> {
    let ids_a: HashSet<&str> = a.sample_ids().collect();
    let ids_b: HashSet<&str> = b.sample_ids().collect();
    let mut unpaired: Vec<&str> = ids_a.symmetric_difference(&ids_b).copied().collect();
    if !unpaired.is_empty() || a.len() != b.len() {
        unpaired.sort_unstable();
        return Err(Error::Unpaired {
            count: unpaired.len(),
            example: unpaired.first().map(|s| s.to_string()).unwrap_or_default(),
        });
    }
    if !a.geometry.same_shape(&b.geometry) {
        return Err(Error::GeometryMismatch {
            expected: a.n_heads(),
            found: b.n_heads(),
        });
    }
    let acc_a = evaluate(voters, a, mode)?.accuracy;
    let acc_b = evaluate(voters, b, mode)?.accuracy;
    Ok(Comparison {
        n_samples: a.len(),
        acc_a,
        acc_b,
        delta: acc_b - acc_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{ModelGeometry, NormMatrix, OptionRecord, PositionalNorms};
    use crate::selection::{Direction, Voter};

    fn clustering(labels: Vec<usize>, k: usize) -> ErrorClustering {
        ErrorClustering {
            k,
            labels,
            centroids: vec![Vec::new(); k],
            inertia: 0.0,
            iterations: 0,
        }
    }

    #[test]
    fn exhaust_takes_smallest_cluster_first() {
        let c = clustering(vec![0, 0, 1], 2);
        let order = removal_order(&c, RemovalStrategy::ExhaustCluster, 5);
        assert_eq!(order[0], 2);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn even_round_robins_largest_first() {
        let c = clustering(vec![0, 1, 1, 1, 2, 2], 3);
        let order = removal_order(&c, RemovalStrategy::EvenAcrossClusters, 9);
        let labels: Vec<usize> = order.iter().map(|&i| c.labels[i]).collect();
        assert_eq!(labels, vec![1, 2, 0, 1, 2, 1]);
    }

    fn capture_with_positions() -> CaptureSet {
        let opt = |rows: &[[f32; 2]]| {
            let rows: Vec<NormMatrix> = rows.iter().map(|r| NormMatrix(r.to_vec())).collect();
            OptionRecord {
                text: None,
                norms: rows[0].clone(),
                positions: Some(PositionalNorms(rows)),
                attention: None,
                lm_score: None,
            }
        };
        let rec = |id: &str, gold, a: &[[f32; 2]], b: &[[f32; 2]]| SampleRecord {
            sample_id: id.into(),
            category: None,
            correct_index: gold,
            options: vec![opt(a), opt(b)],
        };
        CaptureSet {
            geometry: ModelGeometry::new(1, 2, "m").unwrap(),
            dataset_id: "d".into(),
            records: vec![
                rec("a", 0, &[[2.0, 1.0], [1.0, 1.0]], &[[1.0, 2.0], [2.0, 2.0], [3.0, 3.0]]),
                rec("b", 1, &[[1.0, 1.0]], &[[2.0, 0.5], [0.5, 0.5]]),
            ],
        }
    }

    fn head0() -> VoterSet {
        VoterSet::from_voters(
            ModelGeometry::new(1, 2, "m").unwrap(),
            vec![Voter {
                head: 0,
                direction: Direction::Max,
                weight: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn offset_zero_matches_evaluate() {
        let c = capture_with_positions();
        let full = evaluate(&head0(), &c, VoteMode::Vote).unwrap().accuracy;
        let pos = positional_evaluate(&head0(), &c, 0, None, VoteMode::Vote).unwrap();
        assert_eq!(pos.accuracy, full);
        assert_eq!(pos.n_used, 2);
    }

    #[test]
    fn large_offset_clamps() {
        let c = capture_with_positions();
        // offset 99: a reads opt0 pos1 = 1.0, opt1 pos2 = 3.0 -> picks 1 (wrong);
        // b reads opt0 pos0 = 1.0, opt1 pos1 = 0.5 -> picks 0 (wrong)
        let pos = positional_evaluate(&head0(), &c, 99, None, VoteMode::Vote).unwrap();
        assert_eq!(pos.accuracy, 0.0);
        let again = positional_evaluate(&head0(), &c, 99, None, VoteMode::Vote).unwrap();
        assert_eq!(pos, again);
    }

    #[test]
    fn length_filter_excludes() {
        let c = capture_with_positions();
        // lengths 3 and 2; window [100th, 100th] keeps only the length-3 sample
        let f = LengthFilter {
            min_pct: 100.0,
            max_pct: 100.0,
        };
        let pos = positional_evaluate(&head0(), &c, 0, Some(f), VoteMode::Vote).unwrap();
        assert_eq!((pos.n_used, pos.n_excluded), (1, 1));
    }

    #[test]
    fn compare_identity_and_unpaired() {
        let c = capture_with_positions();
        let cmp = compare_captures(&head0(), &c, &c, VoteMode::Vote).unwrap();
        assert_eq!(cmp.delta, 0.0);
        let mut other = c.clone();
        other.records[1].sample_id = "zzz".into();
        assert!(matches!(
            compare_captures(&head0(), &c, &other, VoteMode::Vote),
            Err(Error::Unpaired { count: 2, .. })
        ));
    }

    #[test]
    fn ablation_endpoints() {
        let c = capture_with_positions();
        let voters = VoterSet::from_voters(
            c.geometry.clone(),
            vec![
                Voter { head: 0, direction: Direction::Max, weight: None },
                Voter { head: 1, direction: Direction::Min, weight: None },
            ],
        )
        .unwrap();
        let cl = clustering(vec![0, 1], 2);
        let s = ablate_voters(&voters, &cl, RemovalStrategy::EvenAcrossClusters, 0, &c).unwrap();
        assert_eq!(s.points.len(), 2);
        assert_eq!(s.points[0].accuracy, evaluate(&voters, &c, VoteMode::Vote).unwrap().accuracy);
        assert_eq!(s.points.last().unwrap().remaining, 1);
    }
}

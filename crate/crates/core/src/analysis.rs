//! Ensemble diagnostics: per-predictor error vectors, their correlation and
//! Hamming geometry, k-means error clusters, accuracy as voters are added in
//! rank order, and the (heuristic) Type-1 / Type-2 voter split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capture::{CaptureSet, SampleRecord};
use crate::error::{Error, Result};
use crate::selection::{head_accuracy_table, pick_option, Direction, HeadAccuracyTable, Voter, VoterSet};
use crate::stats::{summarize, Summary};
use crate::voting::{argmax_low, evaluate, VoteMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Owner {
    Voter { head: usize, direction: Direction },
    Ensemble,
}

/// Per-record miss indicator (`true` = wrong), aligned with record order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorVector {
    pub owner: Owner,
    pub bits: Vec<bool>,
}

impl ErrorVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn n_errors(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `1 - mean(bits)`.
    pub fn accuracy(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        (self.bits.len() - self.n_errors()) as f64 / self.bits.len() as f64
    }
}

pub fn error_vector_voter(records: &[SampleRecord], head: usize, direction: Direction) -> ErrorVector {
    ErrorVector {
        owner: Owner::Voter { head, direction },
        bits: records
            .iter()
            .map(|r| pick_option(r, head, direction) != r.correct_index)
            .collect(),
    }
}

pub fn error_vector_ensemble(voters: &VoterSet, capture: &CaptureSet, mode: VoteMode) -> Result<ErrorVector> {
    Ok(ErrorVector {
        owner: Owner::Ensemble,
        bits: evaluate(voters, capture, mode)?.error_bits(),
    })
}

/// Pearson correlation of two 0/1 vectors; `None` when either is constant.
pub fn pearson(a: &ErrorVector, b: &ErrorVector) -> Result<Option<f64>> {
    pearson_bits(&a.bits, &b.bits)
}

fn pearson_bits(a: &[bool], b: &[bool]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len() as i64;
    let sa = a.iter().filter(|&&x| x).count() as i64;
    let sb = b.iter().filter(|&&x| x).count() as i64;
    let sab = a.iter().zip(b).filter(|(&x, &y)| x && y).count() as i64;
    // binary data: sum(x^2) == sum(x)
    let num = n * sab - sa * sb;
    let va = n * sa - sa * sa;
    let vb = n * sb - sb * sb;
    if va == 0 || vb == 0 {
        return Ok(None);
    }
    let r = num as f64 / ((va as f64) * (vb as f64)).sqrt();
    Ok(Some(r.clamp(-1.0, 1.0)))
}

pub fn hamming(a: &ErrorVector, b: &ErrorVector) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count())
}

pub fn hamming_matrix(errors: &[ErrorVector]) -> Result<Vec<Vec<usize>>> {
    let n = errors.len();
    let mut d = vec![vec![0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let h = hamming(&errors[i], &errors[j])?;
            d[i][j] = h;
            d[j][i] = h;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorClustering {
    pub k: usize,
    /// Cluster id per input vector.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

impl ErrorClustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Members of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            m[l].push(i);
        }
        m
    }
}

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(point, &centroids[0]));
    for (c, cen) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(point, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: the first centre is drawn uniformly, each further one
/// with probability proportional to squared distance from the chosen set.
/// When every point already coincides with a centre, the lowest unchosen
/// index is taken instead.
fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just past the last bucket
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.iter().map(|&i| points[i].clone()).collect()
}

/// Moves points into empty clusters: repeatedly takes the point farthest from
/// its centre among clusters with more than one member.
fn fill_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("n >= k guarantees a donor cluster");
        labels[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

/// Lloyd's k-means on raw 0/1 error vectors (squared Euclidean distance,
/// which equals Hamming distance on binary data), k-means++ seeded.
pub fn cluster_errors(errors: &[ErrorVector], k: usize, seed: u64) -> Result<ErrorClustering> {
    if k == 0 {
        return Err(Error::config("k must be positive"));
    }
    if errors.len() < k {
        return Err(Error::config(format!("{} error vectors for k = {k}", errors.len())));
    }
    let dim = errors[0].len();
    if let Some(e) = errors.iter().find(|e| e.len() != dim) {
        return Err(Error::LengthMismatch {
            left: dim,
            right: e.len(),
        });
    }
    let points: Vec<Vec<f64>> = errors
        .iter()
        .map(|e| e.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(&points, k, &mut rng);
    let mut labels = vec![0usize; points.len()];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest(p, &centroids).0;
        }
        fill_empty(&points, &mut labels, &mut centroids);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    Ok(ErrorClustering {
        k,
        labels,
        centroids,
        inertia,
        iterations,
    })
}

/// Voters ordered by individual accuracy (in their own direction) on the
/// table's samples, best first; ties keep the lower head index first.
pub fn rank_voters(voters: &VoterSet, table: &HeadAccuracyTable) -> Vec<Voter> {
    let mut ranked: Vec<Voter> = voters.voters().collect();
    ranked.sort_by(|a, b| {
        let ha = table.hits[a.direction.row()][a.head];
        let hb = table.hits[b.direction.row()][b.head];
        hb.cmp(&ha).then(a.head.cmp(&b.head))
    });
    ranked
}

/// [`rank_voters`] with accuracies scored on `capture` itself.
pub fn rank_voters_on(voters: &VoterSet, capture: &CaptureSet) -> Result<Vec<Voter>> {
    let table = head_accuracy_table(&capture.records)?;
    Ok(rank_voters(voters, &table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub accuracy: f64,
    /// Error-vector correlation between the top-k and top-(k-1) mixes.
    pub correlation: Option<f64>,
    pub smoothed_correlation: Option<f64>,
}

/// Ensemble accuracy as voters join in the given order, with the correlation
/// of consecutive ensembles' error vectors and its trailing moving average.
pub fn accuracy_vs_k(capture: &CaptureSet, ranked: &[Voter], window: usize) -> Result<Vec<CurvePoint>> {
    if window == 0 {
        return Err(Error::config("smoothing window must be positive"));
    }
    let n_heads = capture.n_heads();
    if let Some(v) = ranked.iter().find(|v| v.head >= n_heads) {
        return Err(Error::config(format!("voter head {} outside [0, {n_heads})", v.head)));
    }
    let records = &capture.records;
    let mut tallies: Vec<Vec<f64>> = records.iter().map(|r| vec![0.0; r.n_options()]).collect();
    let mut prev: Option<Vec<bool>> = None;
    let mut raw: Vec<Option<f64>> = Vec::with_capacity(ranked.len());
    let mut out = Vec::with_capacity(ranked.len());
    for (i, v) in ranked.iter().enumerate() {
        for (r, t) in records.iter().zip(tallies.iter_mut()) {
            t[pick_option(r, v.head, v.direction)] += 1.0;
        }
        let bits: Vec<bool> = records
            .iter()
            .zip(&tallies)
            .map(|(r, t)| argmax_low(t) != r.correct_index)
            .collect();
        let correlation = match &prev {
            Some(p) => pearson_bits(&bits, p)?,
            None => None,
        };
        raw.push(correlation);
        let start = raw.len().saturating_sub(window);
        let defined: Vec<f64> = raw[start..].iter().flatten().copied().collect();
        let smoothed = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        let wrong = bits.iter().filter(|&&b| b).count();
        out.push(CurvePoint {
            k: i + 1,
            accuracy: if records.is_empty() { 0.0 } else { (records.len() - wrong) as f64 / records.len() as f64 },
            correlation,
            smoothed_correlation: smoothed,
        });
        prev = Some(bits);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoterType {
    T1,
    T2,
    #[serde(rename = "untyped")]
    Untyped,
}

/// Thresholds for the heuristic voter-type split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeRule {
    /// Mean end-token + punctuation attention mass at or above which a voter is T1.
    pub end_threshold: f64,
    /// A norm-gain peak at this many positions from the end or further marks T2.
    pub tail_positions: usize,
}

impl Default for TypeRule {
    fn default() -> Self {
        Self {
            end_threshold: 0.5,
            tail_positions: 3,
        }
    }
}

/// Relative norm gain of the correct option over the strongest wrong option,
/// per position (0 = final token). Options with fewer positions read their
/// earliest captured one. Zero denominators give `None`.
pub fn norm_gain_series(head: usize, sample: &SampleRecord) -> Result<Vec<Option<f64>>> {
    if sample.n_options() < 2 {
        return Err(Error::config("norm gain needs at least two options"));
    }
    let positions = sample
        .options
        .iter()
        .map(|o| o.positions.as_ref())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Missing(format!("positional norms for sample {:?}", sample.sample_id)))?;
    let len = positions.iter().map(|p| p.len()).max().unwrap_or(0);
    let gold = sample.correct_index;
    Ok((0..len)
        .map(|p| {
            let correct = f64::from(positions[gold].clamped(p).get(head));
            let wrong = positions
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != gold)
                .map(|(_, pos)| f64::from(pos.clamped(p).get(head)))
                .fold(f64::NEG_INFINITY, f64::max);
            (wrong != 0.0).then(|| (correct - wrong) / wrong)
        })
        .collect())
}

/// Mean norm gain per position across samples (undefined entries skipped).
pub fn mean_gain_profile(head: usize, capture: &CaptureSet) -> Result<Vec<Option<f64>>> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for rec in &capture.records {
        let series = norm_gain_series(head, rec)?;
        if series.len() > sums.len() {
            sums.resize(series.len(), (0.0, 0));
        }
        for (slot, g) in sums.iter_mut().zip(series) {
            if let Some(g) = g {
                slot.0 += g;
                slot.1 += 1;
            }
        }
    }
    Ok(sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
}

/// Heuristic Type-1 / Type-2 label for one voter.
pub fn classify_voter_type(voter: &Voter, capture: &CaptureSet, rule: &TypeRule) -> Result<VoterType> {
    let mut mass = 0.0;
    let mut n = 0usize;
    for rec in &capture.records {
        for opt in &rec.options {
            let att = opt
                .attention
                .as_ref()
                .ok_or_else(|| Error::Missing(format!("attention summary for sample {:?}", rec.sample_id)))?;
            mass += f64::from(att.end_token_mass[voter.head]) + f64::from(att.punct_mass[voter.head]);
            n += 1;
        }
    }
    if n > 0 && mass / n as f64 >= rule.end_threshold {
        return Ok(VoterType::T1);
    }
    if !capture.has_positions() {
        return Ok(VoterType::Untyped);
    }
    let profile = mean_gain_profile(voter.head, capture)?;
    let mut peak: Option<(usize, f64)> = None;
    for (p, g) in profile.iter().enumerate() {
        if let Some(g) = *g {
            if peak.is_none_or(|(_, best)| g > best) {
                peak = Some((p, g));
            }
        }
    }
    Ok(match peak {
        Some((p, _)) if p >= rule.tail_positions => VoterType::T2,
        _ => VoterType::Untyped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSummaryRow {
    pub label: String,
    pub count: usize,
    pub summary: Option<Summary>,
}

/// Individual-accuracy summary for all heads, T1 voters and T2 voters.
/// `types[i]` labels the i-th voter of `voters`.
pub fn type_summary(table: &HeadAccuracyTable, voters: &VoterSet, types: &[VoterType]) -> Vec<TypeSummaryRow> {
    let all = table.best_accuracies();
    let typed = |t: VoterType| -> Vec<f64> {
        voters
            .voters()
            .zip(types)
            .filter(|(_, &ty)| ty == t)
            .map(|(v, _)| table.accuracy(v.direction, v.head))
            .collect()
    };
    let row = |label: &str, values: Vec<f64>| TypeSummaryRow {
        label: label.to_string(),
        count: values.len(),
        summary: summarize(&values),
    };
    vec![row("All", all), row("Type-1", typed(VoterType::T1)), row("Type-2", typed(VoterType::T2))]
}

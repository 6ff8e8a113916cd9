//! Test-only oracles and generators. Nothing here calls into the library's
//! selection, voting, clustering or statistics code.
#![allow(dead_code)]

use novo_core::capture::{AttentionSummary, CaptureSet, ModelGeometry, NormMatrix, OptionRecord, PositionalNorms, SampleRecord};
use novo_core::selection::Direction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy)]
pub struct RandomSpec {
    pub max_heads: usize,
    pub max_records: usize,
    pub max_options: usize,
    /// Norms are multiples of 1/8 in [0, 4], so affine maps stay exact.
    pub dyadic: bool,
    pub positions: bool,
    pub attention: bool,
    pub categories: bool,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            max_heads: 64,
            max_records: 50,
            max_options: 5,
            dyadic: false,
            positions: false,
            attention: false,
            categories: false,
        }
    }
}

fn norm_value(rng: &mut ChaCha8Rng, dyadic: bool) -> f32 {
    if dyadic {
        rng.random_range(0..=32u32) as f32 / 8.0
    } else {
        rng.random_range(0.0f32..=4.0)
    }
}

/// Valid random capture: L*H <= max_heads, 1..=max_records samples, 2..=max_options options.
pub fn random_capture(seed: u64, spec: RandomSpec) -> CaptureSet {
    let mut r = rng(seed);
    let layers = r.random_range(1..=8usize);
    let heads_per_layer = r.random_range(1..=(spec.max_heads / layers).max(1));
    let n_heads = layers * heads_per_layer;
    let n_records = r.random_range(1..=spec.max_records);
    let records = (0..n_records)
        .map(|s| {
            let k = r.random_range(2..=spec.max_options);
            let options = (0..k)
                .map(|_| {
                    let norms: Vec<f32> = (0..n_heads).map(|_| norm_value(&mut r, spec.dyadic)).collect();
                    let positions = spec.positions.then(|| {
                        let len = r.random_range(1..=6usize);
                        let mut rows = vec![NormMatrix(norms.clone())];
                        for _ in 1..len {
                            rows.push(NormMatrix((0..n_heads).map(|_| norm_value(&mut r, spec.dyadic)).collect()));
                        }
                        PositionalNorms(rows)
                    });
                    let attention = spec.attention.then(|| {
                        let end: Vec<f32> = (0..n_heads).map(|_| r.random_range(0.0f32..=0.5)).collect();
                        let punct: Vec<f32> = (0..n_heads).map(|_| r.random_range(0.0f32..=0.5)).collect();
                        AttentionSummary {
                            end_token_mass: end,
                            punct_mass: punct,
                        }
                    });
                    OptionRecord {
                        text: r.random_bool(0.3).then(|| format!("option text {}", r.random::<u16>())),
                        norms: NormMatrix(norms),
                        positions,
                        attention,
                        lm_score: r.random_bool(0.3).then(|| -r.random_range(0.0..10.0)),
                    }
                })
                .collect();
            SampleRecord {
                sample_id: format!("r{seed}-{s}"),
                category: spec.categories.then(|| ["alpha", "beta", "gamma"][r.random_range(0..3usize)].to_string()),
                correct_index: r.random_range(0..k),
                options,
            }
        })
        .collect();
    CaptureSet {
        geometry: ModelGeometry::new(layers, heads_per_layer, format!("rand-{seed}")).unwrap(),
        dataset_id: format!("rand-{seed}"),
        records,
    }
}

/// Brute-force selection result.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    pub indices: Vec<usize>,
    pub indicators: Vec<Direction>,
    pub threshold: f64,
}

/// Option chosen by scanning from the last option backwards with `>=` / `<=`,
/// which leaves the lowest index on ties.
fn oracle_pick(s: &SampleRecord, head: usize, want_max: bool) -> usize {
    let mut best = s.options.len() - 1;
    for k in (0..s.options.len()).rev() {
        let v = s.options[k].norms.0[head];
        let b = s.options[best].norms.0[head];
        if (want_max && v >= b) || (!want_max && v <= b) {
            best = k;
        }
    }
    best
}

fn oracle_threshold(scores: &[f64], percentile: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let target = percentile * n as f64;
    let mut rank = n;
    for r in 1..=n {
        if (r as f64) * 100.0 >= target {
            rank = r;
            break;
        }
    }
    sorted[rank - 1]
}

/// Exhaustive reference for percentile selection on the given samples.
/// `fixed` scores only one direction; `both_rows` thresholds over 2*n values.
pub fn oracle_select(
    samples: &[&SampleRecord],
    n_heads: usize,
    percentile: f64,
    fixed: Option<Direction>,
    both_rows: bool,
) -> OracleSelection {
    let n = samples.len() as f64;
    let mut acc_max = vec![0.0; n_heads];
    let mut acc_min = vec![0.0; n_heads];
    for head in 0..n_heads {
        let mut hit_max = 0usize;
        let mut hit_min = 0usize;
        for s in samples {
            if oracle_pick(s, head, true) == s.correct_index {
                hit_max += 1;
            }
            if oracle_pick(s, head, false) == s.correct_index {
                hit_min += 1;
            }
        }
        acc_max[head] = hit_max as f64 / n;
        acc_min[head] = hit_min as f64 / n;
    }
    let (scores, dirs): (Vec<f64>, Vec<Direction>) = (0..n_heads)
        .map(|h| match fixed {
            Some(Direction::Max) => (acc_max[h], Direction::Max),
            Some(Direction::Min) => (acc_min[h], Direction::Min),
            None if acc_min[h] > acc_max[h] => (acc_min[h], Direction::Min),
            None => (acc_max[h], Direction::Max),
        })
        .unzip();
    let threshold = if both_rows && fixed.is_none() {
        let all: Vec<f64> = acc_max.iter().chain(acc_min.iter()).copied().collect();
        oracle_threshold(&all, percentile)
    } else {
        oracle_threshold(&scores, percentile)
    };
    let mut indices = Vec::new();
    let mut indicators = Vec::new();
    for h in 0..n_heads {
        if scores[h] >= threshold {
            indices.push(h);
            indicators.push(dirs[h]);
        }
    }
    OracleSelection {
        indices,
        indicators,
        threshold,
    }
}

/// Reference k-means following the documented seeding protocol: uniform first
/// centre, then D^2 sampling via one uniform draw per centre scanned over the
/// positive-weight points; fallback to the lowest unchosen index when all
/// distances are zero; Lloyd updates until shift < 1e-6 or 300 rounds; empty
/// clusters take the farthest point of a multi-member cluster.
pub fn reference_kmeans(points: &[Vec<u8>], k: usize, seed: u64) -> (Vec<usize>, f64) {
    let n = points.len();
    let pts: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|&b| b as f64).collect()).collect();
    let dist = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum() };
    let mut r = rng(seed);
    let mut centre_ids: Vec<usize> = vec![r.random_range(0..n)];
    while centre_ids.len() < k {
        let weights: Vec<f64> = pts
            .iter()
            .map(|p| centre_ids.iter().map(|&c| dist(p, &pts[c])).fold(f64::MAX, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let u = r.random::<f64>() * total;
            let mut run = 0.0;
            let mut chosen = weights.iter().rposition(|&w| w > 0.0).unwrap();
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    run += w;
                    if run > u {
                        chosen = i;
                        break;
                    }
                }
            }
            chosen
        } else {
            (0..n).find(|i| !centre_ids.contains(i)).unwrap()
        };
        centre_ids.push(next);
    }
    let mut centres: Vec<Vec<f64>> = centre_ids.iter().map(|&i| pts[i].clone()).collect();
    let mut labels = vec![0usize; n];
    for _ in 0..300 {
        for i in 0..n {
            let mut best = 0;
            for c in 1..k {
                if dist(&pts[i], &centres[c]) < dist(&pts[i], &centres[best]) {
                    best = c;
                }
            }
            labels[i] = best;
        }
        loop {
            let sizes: Vec<usize> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
            let Some(empty) = (0..k).find(|&c| sizes[c] == 0) else { break };
            let mut donor = None;
            let mut far = -1.0;
            for i in 0..n {
                if sizes[labels[i]] > 1 {
                    let d = dist(&pts[i], &centres[labels[i]]);
                    if d > far {
                        far = d;
                        donor = Some(i);
                    }
                }
            }
            let i = donor.unwrap();
            labels[i] = empty;
            centres[empty] = pts[i].clone();
        }
        let mut moved: f64 = 0.0;
        #[allow(clippy::needless_range_loop)]
        for c in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let dim = pts[0].len();
            let mut mean = vec![0.0; dim];
            for &i in &members {
                for d in 0..dim {
                    mean[d] += pts[i][d];
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            moved = moved.max(dist(&mean, &centres[c]).sqrt());
            centres[c] = mean;
        }
        if moved < 1e-6 {
            break;
        }
    }
    let inertia = (0..n).map(|i| dist(&pts[i], &centres[labels[i]])).sum();
    (labels, inertia)
}

/// Summary statistics computed a second way: Welford mean/variance and
/// 1-based-rank quantiles found with `select_nth_unstable_by`.
pub struct ReferenceStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

fn nth(values: &[f64], i: usize) -> f64 {
    let mut v = values.to_vec();
    let (_, x, _) = v.select_nth_unstable_by(i, |a, b| a.partial_cmp(b).unwrap());
    *x
}

fn reference_quantile(values: &[f64], q: f64) -> f64 {
    let n = values.len();
    let h = 1.0 + (n as f64 - 1.0) * q; // 1-based fractional rank
    let lo = h.floor() as usize;
    let w = h - lo as f64;
    let a = nth(values, lo - 1);
    if w == 0.0 || lo >= n {
        a
    } else {
        (1.0 - w) * a + w * nth(values, lo)
    }
}

pub fn reference_stats(values: &[f64]) -> ReferenceStats {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    ReferenceStats {
        mean,
        std: (m2 / values.len() as f64).sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        q25: reference_quantile(values, 0.25),
        q50: reference_quantile(values, 0.5),
        q75: reference_quantile(values, 0.75),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Copy with every norm mapped x -> m - x (positional norms too).
pub fn negated(c: &CaptureSet, m: f32) -> CaptureSet {
    let mut out = c.clone();
    for r in &mut out.records {
        for o in &mut r.options {
            for v in &mut o.norms.0 {
                *v = m - *v;
            }
            if let Some(p) = &mut o.positions {
                for row in &mut p.0 {
                    for v in &mut row.0 {
                        *v = m - *v;
                    }
                }
            }
        }
    }
    out
}

//! Synthetic captures with known structure, for tests, benchmarks and the
//! browser demo.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::capture::{CaptureSet, ModelGeometry, OptionRecord, SampleRecord};

/// Capture where a few "planted" heads give the gold option a higher norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub layers: usize,
    pub heads_per_layer: usize,
    pub planted: Vec<usize>,
    pub n_samples: usize,
    pub n_options: usize,
    /// Mean norm of every head and option.
    pub base: f64,
    /// Added to the gold option's norm on planted heads.
    pub shift: f64,
    /// Standard deviation of the per-cell Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            layers: 16,
            heads_per_layer: 16,
            planted: Vec::new(),
            n_samples: 100,
            n_options: 4,
            base: 2.0,
            shift: 1.0,
            noise: 0.3,
            seed: 0,
            id_prefix: "s".into(),
        }
    }
}

/// `count` distinct heads out of `n_heads`, ascending.
pub fn random_heads(n_heads: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = sample_indices(&mut rng, n_heads, count.min(n_heads)).into_vec();
    v.sort_unstable();
    v
}

pub fn planted_capture(cfg: &PlantedConfig) -> CaptureSet {
    let n_heads = cfg.layers * cfg.heads_per_layer;
    let mut planted = vec![false; n_heads];
    for &h in &cfg.planted {
        planted[h] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).expect("noise must be finite and non-negative");
    let records = (0..cfg.n_samples)
        .map(|s| {
            let gold = rng.random_range(0..cfg.n_options);
            let options = (0..cfg.n_options)
                .map(|k| {
                    let norms = (0..n_heads)
                        .map(|h| {
                            let mut v = cfg.base + noise.sample(&mut rng);
                            if planted[h] && k == gold {
                                v += cfg.shift;
                            }
                            v.max(0.0) as f32
                        })
                        .collect();
                    OptionRecord::from_norms(norms)
                })
                .collect();
            SampleRecord {
                sample_id: format!("{}{s}", cfg.id_prefix),
                category: None,
                correct_index: gold,
                options,
            }
        })
        .collect();
    CaptureSet {
        geometry: ModelGeometry {
            layers: cfg.layers,
            heads_per_layer: cfg.heads_per_layer,
            model_id: "synthetic-planted".into(),
        },
        dataset_id: format!("planted-{}", cfg.seed),
        records,
    }
}

/// Monte-Carlo estimate of how often a planted head's argmax hits gold,
/// drawn straight from the generating distribution.
pub fn planted_head_accuracy_mc(cfg: &PlantedConfig, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise).expect("valid noise");
    let mut hits = 0usize;
    for _ in 0..trials {
        let gold = (cfg.base + cfg.shift + noise.sample(&mut rng)).max(0.0) as f32;
        // gold sits at a uniformly random position; ties resolve to the lower index
        let pos = rng.random_range(0..cfg.n_options);
        let mut wins = true;
        for k in 0..cfg.n_options {
            if k == pos {
                continue;
            }
            let other = (cfg.base + noise.sample(&mut rng)).max(0.0) as f32;
            if other > gold || (other == gold && k < pos) {
                wins = false;
            }
        }
        hits += usize::from(wins);
    }
    hits as f64 / trials as f64
}

/// Two-option capture with one layer of `n_voters` heads, each of which
/// independently ranks the gold option higher with probability `p`.
pub fn condorcet_capture(n_voters: usize, p: f64, n_samples: usize, seed: u64) -> CaptureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n_samples)
        .map(|s| {
            let gold = rng.random_range(0..2usize);
            let (mut a, mut b) = (Vec::with_capacity(n_voters), Vec::with_capacity(n_voters));
            for _ in 0..n_voters {
                let right = rng.random_bool(p);
                let winner = if right { gold } else { 1 - gold };
                let (hi, lo) = if winner == 0 { (&mut a, &mut b) } else { (&mut b, &mut a) };
                hi.push(2.0f32);
                lo.push(1.0f32);
            }
            SampleRecord {
                sample_id: format!("c{s}"),
                category: None,
                correct_index: gold,
                options: vec![OptionRecord::from_norms(a), OptionRecord::from_norms(b)],
            }
        })
        .collect();
    CaptureSet {
        geometry: ModelGeometry {
            layers: 1,
            heads_per_layer: n_voters,
            model_id: "synthetic-condorcet".into(),
        },
        dataset_id: format!("condorcet-{seed}"),
        records,
    }
}

/// Voters whose errors are correlated within planted clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredConfig {
    pub cluster_sizes: Vec<usize>,
    pub n_samples: usize,
    /// Per-sample probability that a cluster's shared failure event fires.
    pub cluster_error_rate: f64,
    /// Probability a voter errs when its cluster's event fires.
    pub follow_rate: f64,
    /// Probability a voter errs otherwise.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for ClusteredConfig {
    fn default() -> Self {
        Self {
            cluster_sizes: vec![16, 25, 38, 47, 60, 79],
            n_samples: 400,
            cluster_error_rate: 0.3,
            follow_rate: 0.9,
            noise_rate: 0.1,
            seed: 0,
        }
    }
}

/// Two-option capture (one head per voter, all read with MAX) plus the
/// planted cluster id of every head.
pub fn clustered_capture(cfg: &ClusteredConfig) -> (CaptureSet, Vec<usize>) {
    let labels: Vec<usize> = cfg
        .cluster_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let n_heads = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let records = (0..cfg.n_samples)
        .map(|s| {
            let gold = rng.random_range(0..2usize);
            let events: Vec<bool> = cfg
                .cluster_sizes
                .iter()
                .map(|_| rng.random_bool(cfg.cluster_error_rate))
                .collect();
            let mut opts = [vec![0f32; n_heads], vec![0f32; n_heads]];
            for (h, &c) in labels.iter().enumerate() {
                let p_err = if events[c] { cfg.follow_rate } else { cfg.noise_rate };
                let wrong = rng.random_bool(p_err);
                let winner = if wrong { 1 - gold } else { gold };
                opts[winner][h] = 2.0;
                opts[1 - winner][h] = 1.0;
            }
            let [a, b] = opts;
            SampleRecord {
                sample_id: format!("k{s}"),
                category: None,
                correct_index: gold,
                options: vec![OptionRecord::from_norms(a), OptionRecord::from_norms(b)],
            }
        })
        .collect();
    let capture = CaptureSet {
        geometry: ModelGeometry {
            layers: 1,
            heads_per_layer: n_heads,
            model_id: "synthetic-clustered".into(),
        },
        dataset_id: format!("clustered-{}", cfg.seed),
        records,
    };
    (capture, labels)
}

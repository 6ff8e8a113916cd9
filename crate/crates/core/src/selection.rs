//! Norm selection: score every head by how often its argmax (or argmin) over
//! the option norms lands on the gold answer, then keep the best heads as
//! voters together with their direction.
//!
//! All accuracy bookkeeping is done on integer hit counts, so results do not
//! depend on summation order or thread schedule.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capture::{CaptureSet, ModelGeometry, SampleRecord};
use crate::error::{Error, Result};
use crate::par;
use crate::stats::{summarize, Summary};
use crate::voting::{evaluate, VoteMode};

/// Which operator a head's norm is read with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Max,
    Min,
}

impl Direction {
    /// Row of the [`HeadAccuracyTable`] holding this direction.
    pub fn row(self) -> usize {
        match self {
            Direction::Max => 0,
            Direction::Min => 1,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Max => Direction::Min,
            Direction::Min => Direction::Max,
        }
    }
}

/// Option picked by `head` under `direction`; ties go to the lowest index.
#[inline]
pub fn pick_option(sample: &SampleRecord, head: usize, direction: Direction) -> usize {
    let mut best = 0;
    let mut best_val = sample.norm(0, head);
    for k in 1..sample.n_options() {
        let v = sample.norm(k, head);
        let better = match direction {
            Direction::Max => v > best_val,
            Direction::Min => v < best_val,
        };
        if better {
            best = k;
            best_val = v;
        }
    }
    best
}

/// Argmax (row 0) and argmin (row 1) option per head for one sample.
pub fn head_predictions(sample: &SampleRecord) -> [Vec<usize>; 2] {
    let n_heads = sample.options.first().map_or(0, |o| o.norms.len());
    let mut rows = [Vec::with_capacity(n_heads), Vec::with_capacity(n_heads)];
    for head in 0..n_heads {
        rows[0].push(pick_option(sample, head, Direction::Max));
        rows[1].push(pick_option(sample, head, Direction::Min));
    }
    rows
}

/// Per-head hit counts for both directions over a set of scored samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadAccuracyTable {
    /// `hits[d][i]`: samples where head `i` read with direction `d` picked gold.
    pub hits: [Vec<u32>; 2],
    pub n_scored: u32,
}

impl HeadAccuracyTable {
    pub fn n_heads(&self) -> usize {
        self.hits[0].len()
    }

    pub fn accuracy(&self, direction: Direction, head: usize) -> f64 {
        f64::from(self.hits[direction.row()][head]) / f64::from(self.n_scored)
    }

    /// The 2 x n_heads accuracy matrix.
    pub fn accuracies(&self) -> [Vec<f64>; 2] {
        let n = f64::from(self.n_scored);
        [
            self.hits[0].iter().map(|&c| f64::from(c) / n).collect(),
            self.hits[1].iter().map(|&c| f64::from(c) / n).collect(),
        ]
    }

    /// Better direction for `head` (MAX on ties) and its hit count.
    pub fn best(&self, head: usize) -> (Direction, u32) {
        let (max, min) = (self.hits[0][head], self.hits[1][head]);
        if min > max {
            (Direction::Min, min)
        } else {
            (Direction::Max, max)
        }
    }

    /// Best-direction accuracy for every head.
    pub fn best_accuracies(&self) -> Vec<f64> {
        (0..self.n_heads())
            .map(|h| f64::from(self.best(h).1) / f64::from(self.n_scored))
            .collect()
    }
}

fn add_sample(hits: &mut [Vec<u32>; 2], sample: &SampleRecord) {
    let gold = sample.correct_index;
    for head in 0..hits[0].len() {
        hits[0][head] += u32::from(pick_option(sample, head, Direction::Max) == gold);
        hits[1][head] += u32::from(pick_option(sample, head, Direction::Min) == gold);
    }
}

pub fn head_accuracy_table<'a, I>(samples: I) -> Result<HeadAccuracyTable>
where
    I: IntoIterator<Item = &'a SampleRecord>,
{
    let samples: Vec<&SampleRecord> = samples.into_iter().collect();
    let first = samples.first().ok_or(Error::Empty("no samples to score"))?;
    let n_heads = first.options.first().map_or(0, |o| o.norms.len());
    for s in &samples {
        if let Some(o) = s.options.iter().find(|o| o.norms.len() != n_heads) {
            return Err(Error::GeometryMismatch {
                expected: n_heads,
                found: o.norms.len(),
            });
        }
    }
    let partials = par::map(&chunked(&samples), |chunk| {
        let mut hits = [vec![0u32; n_heads], vec![0u32; n_heads]];
        for s in chunk {
            add_sample(&mut hits, s);
        }
        hits
    });
    let mut hits = [vec![0u32; n_heads], vec![0u32; n_heads]];
    for part in partials {
        for d in 0..2 {
            for (acc, c) in hits[d].iter_mut().zip(&part[d]) {
                *acc += c;
            }
        }
    }
    Ok(HeadAccuracyTable {
        hits,
        n_scored: samples.len() as u32,
    })
}

fn chunked<'a>(samples: &[&'a SampleRecord]) -> Vec<Vec<&'a SampleRecord>> {
    const CHUNK: usize = 64;
    samples.chunks(CHUNK).map(<[_]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Draw {
    /// Uniform sample without replacement, seeded.
    #[default]
    Random,
    /// The first `n_samples` records in file order.
    FirstN,
    /// Every record; `n_samples` is ignored.
    All,
}

/// Population the percentile threshold is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PercentileOver {
    /// One best-direction score per head.
    #[default]
    HeadMax,
    /// Both directional accuracies of every head (2 * L * H values).
    BothRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub n_samples: usize,
    pub percentile: f64,
    pub seed: u64,
    pub draw: Draw,
    #[serde(default)]
    pub percentile_over: PercentileOver,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            n_samples: 30,
            percentile: 85.0,
            seed: 0,
            draw: Draw::Random,
            percentile_over: PercentileOver::HeadMax,
        }
    }
}

impl SelectionConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn check(&self, n_records: usize) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::config(format!("percentile {} outside (0, 100]", self.percentile)));
        }
        if self.draw != Draw::All {
            if self.n_samples == 0 {
                return Err(Error::config("n_samples must be positive"));
            }
            if self.n_samples > n_records {
                return Err(Error::config(format!(
                    "n_samples {} exceeds the {n_records} available records",
                    self.n_samples
                )));
            }
        }
        if n_records == 0 {
            return Err(Error::Empty("capture has no records"));
        }
        Ok(())
    }

    /// Record indices used for scoring, ascending.
    pub fn draw_indices(&self, n_records: usize) -> Result<Vec<usize>> {
        self.check(n_records)?;
        let mut idx = match self.draw {
            Draw::All => (0..n_records).collect(),
            Draw::FirstN => (0..self.n_samples).collect(),
            Draw::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rand::seq::index::sample(&mut rng, n_records, self.n_samples).into_vec()
            }
        };
        idx.sort_unstable();
        Ok(idx)
    }
}

/// The `ceil(p/100 * n)`-th smallest value (1-based, clamped to `[1, n]`).
pub fn nearest_rank(values: &[u32], percentile: f64) -> u32 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let rank = ((percentile * n as f64) / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Per-head direction, percentile threshold.
    Novo,
    /// All heads above the chance baseline, accuracy-weighted.
    NovoF,
    /// Direction fixed to MAX.
    NovoA,
    /// Direction fixed to MIN.
    NovoB,
    /// Assembled by hand or derived from another set.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<SelectionConfig>,
    pub dataset_id: String,
    /// Threshold as an accuracy (NoVo variants) or the chance baseline (NoVo-F).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Records the voters were selected on.
    pub sample_ids: Vec<String>,
}

impl Provenance {
    fn custom() -> Self {
        Self {
            variant: Variant::Custom,
            config: None,
            dataset_id: String::new(),
            threshold: None,
            sample_ids: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voter {
    pub head: usize,
    pub direction: Direction,
    pub weight: Option<f64>,
}

/// Selected heads ("index vector") with their directions ("indicators") and
/// optional weights, indices strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoterSet {
    pub geometry: ModelGeometry,
    pub indices: Vec<usize>,
    pub indicators: Vec<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl VoterSet {
    /// Builds a set from voters in any order. Weights must be given for all
    /// voters or none.
    pub fn from_voters(geometry: ModelGeometry, mut voters: Vec<Voter>) -> Result<Self> {
        voters.sort_by_key(|v| v.head);
        let weights = match voters.iter().filter(|v| v.weight.is_some()).count() {
            0 => None,
            n if n == voters.len() => Some(voters.iter().map(|v| v.weight.unwrap_or(0.0)).collect()),
            _ => return Err(Error::config("weights must be set on every voter or none")),
        };
        let set = Self {
            geometry,
            indices: voters.iter().map(|v| v.head).collect(),
            indicators: voters.iter().map(|v| v.direction).collect(),
            weights,
            provenance: Provenance::custom(),
        };
        set.check()?;
        Ok(set)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn voters(&self) -> impl Iterator<Item = Voter> + '_ {
        self.indices.iter().zip(&self.indicators).enumerate().map(move |(i, (&head, &direction))| Voter {
            head,
            direction,
            weight: self.weights.as_ref().map(|w| w[i]),
        })
    }

    /// Subset keeping the voters at positions `keep` (positions into `indices`).
    pub fn retain_positions(&self, keep: &[usize]) -> Result<VoterSet> {
        let all: Vec<Voter> = self.voters().collect();
        let picked = keep.iter().map(|&p| all[p]).collect();
        Ok(VoterSet::from_voters(self.geometry.clone(), picked)?.with_provenance(self.provenance.clone()))
    }

    pub fn check(&self) -> Result<()> {
        let n = self.geometry.n_heads();
        if self.indicators.len() != self.indices.len() {
            return Err(Error::LengthMismatch {
                left: self.indices.len(),
                right: self.indicators.len(),
            });
        }
        if let Some(w) = &self.weights {
            if w.len() != self.indices.len() {
                return Err(Error::LengthMismatch {
                    left: self.indices.len(),
                    right: w.len(),
                });
            }
            if let Some(bad) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::config(format!("voter weight {bad} outside [0, 1]")));
            }
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= n) {
            return Err(Error::config(format!("voter index {bad} outside [0, {n})")));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("voter indices must be strictly increasing"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: VoterSet = serde_json::from_str(text)?;
        set.check()?;
        Ok(set)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Result of a selection run: the voters plus the scoring evidence behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub voters: VoterSet,
    pub table: HeadAccuracyTable,
    /// Hit-count threshold (score >= threshold kept). For NoVo-F this is unused.
    pub threshold_hits: u32,
    /// Record indices that were scored.
    pub drawn: Vec<usize>,
}

impl Selection {
    pub fn threshold(&self) -> f64 {
        f64::from(self.threshold_hits) / f64::from(self.table.n_scored)
    }
}

fn provenance(capture: &CaptureSet, drawn: &[usize], variant: Variant, cfg: Option<&SelectionConfig>, threshold: f64) -> Provenance {
    Provenance {
        variant,
        config: cfg.cloned(),
        dataset_id: capture.dataset_id.clone(),
        threshold: Some(threshold),
        sample_ids: drawn.iter().map(|&i| capture.records[i].sample_id.clone()).collect(),
    }
}

/// Scores heads in both directions on the drawn samples and keeps every head
/// whose better-direction score reaches the nearest-rank percentile.
pub fn select_voters(capture: &CaptureSet, cfg: &SelectionConfig) -> Result<Selection> {
    let drawn = cfg.draw_indices(capture.len())?;
    let table = head_accuracy_table(drawn.iter().map(|&i| &capture.records[i]))?;
    let best: Vec<(Direction, u32)> = (0..table.n_heads()).map(|h| table.best(h)).collect();
    let threshold_hits = match cfg.percentile_over {
        PercentileOver::HeadMax => {
            let scores: Vec<u32> = best.iter().map(|b| b.1).collect();
            nearest_rank(&scores, cfg.percentile)
        }
        PercentileOver::BothRows => {
            let scores: Vec<u32> = table.hits[0].iter().chain(&table.hits[1]).copied().collect();
            nearest_rank(&scores, cfg.percentile)
        }
    };
    let voters = best
        .iter()
        .enumerate()
        .filter(|(_, b)| b.1 >= threshold_hits)
        .map(|(head, &(direction, _))| Voter {
            head,
            direction,
            weight: None,
        })
        .collect();
    let threshold = f64::from(threshold_hits) / f64::from(table.n_scored);
    let voters = VoterSet::from_voters(capture.geometry.clone(), voters)?
        .with_provenance(provenance(capture, &drawn, Variant::Novo, Some(cfg), threshold));
    Ok(Selection {
        voters,
        table,
        threshold_hits,
        drawn,
    })
}

/// Like [`select_voters`], but every head is scored and read in `direction`
/// only (MAX gives NoVo-A, MIN gives NoVo-B).
pub fn select_voters_fixed(capture: &CaptureSet, cfg: &SelectionConfig, direction: Direction) -> Result<Selection> {
    let drawn = cfg.draw_indices(capture.len())?;
    let table = head_accuracy_table(drawn.iter().map(|&i| &capture.records[i]))?;
    let row = &table.hits[direction.row()];
    let threshold_hits = nearest_rank(row, cfg.percentile);
    let voters = row
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= threshold_hits)
        .map(|(head, _)| Voter {
            head,
            direction,
            weight: None,
        })
        .collect();
    let variant = match direction {
        Direction::Max => Variant::NovoA,
        Direction::Min => Variant::NovoB,
    };
    let threshold = f64::from(threshold_hits) / f64::from(table.n_scored);
    let voters = VoterSet::from_voters(capture.geometry.clone(), voters)?
        .with_provenance(provenance(capture, &drawn, variant, Some(cfg), threshold));
    Ok(Selection {
        voters,
        table,
        threshold_hits,
        drawn,
    })
}

/// Hyper-parameter-free selection: score every head on every record, drop
/// heads at or below the chance baseline (mean of 1/K), and weight the rest
/// by min-max normalised accuracy.
pub fn select_voters_weighted(capture: &CaptureSet) -> Result<Selection> {
    if capture.is_empty() {
        return Err(Error::Empty("capture has no records"));
    }
    let table = head_accuracy_table(&capture.records)?;
    let n = capture.len() as f64;
    let baseline = capture.records.iter().map(|r| 1.0 / r.n_options() as f64).sum::<f64>() / n;

    let surviving: Vec<(usize, Direction, f64)> = (0..table.n_heads())
        .filter_map(|h| {
            let (dir, hits) = table.best(h);
            let acc = f64::from(hits) / n;
            (acc > baseline).then_some((h, dir, acc))
        })
        .collect();
    if surviving.is_empty() {
        return Err(Error::NoVotersSurvive { baseline });
    }
    let lo = surviving.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let hi = surviving.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    let voters = surviving
        .iter()
        .map(|&(head, direction, acc)| Voter {
            head,
            direction,
            weight: Some(if hi > lo { (acc - lo) / (hi - lo) } else { 1.0 }),
        })
        .collect();
    let drawn: Vec<usize> = (0..capture.len()).collect();
    let voters = VoterSet::from_voters(capture.geometry.clone(), voters)?
        .with_provenance(provenance(capture, &drawn, Variant::NovoF, None, baseline));
    Ok(Selection {
        voters,
        table,
        threshold_hits: 0,
        drawn,
    })
}

/// Errors if any sample id in `selected` also appears in `heldout`.
pub fn check_disjoint<'a>(selected: impl IntoIterator<Item = &'a str>, heldout: &CaptureSet) -> Result<()> {
    let held: HashSet<&str> = heldout.sample_ids().collect();
    let shared: Vec<&str> = selected.into_iter().filter(|id| held.contains(id)).collect();
    match shared.first() {
        None => Ok(()),
        Some(first) => Err(Error::Overlap {
            count: shared.len(),
            example: first.to_string(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub sample_counts: Vec<usize>,
    pub percentiles: Vec<f64>,
    /// `mean_accuracy[i][j]` is for `(sample_counts[i], percentiles[j])`.
    pub mean_accuracy: Vec<Vec<f64>>,
    pub repeats: usize,
    pub seed: u64,
}

/// Mean held-out accuracy over `repeats` selections for every
/// (sample count, percentile) pair. Repeat `r` uses seed `seed + r`.
pub fn grid_search(
    capture: &CaptureSet,
    heldout: &CaptureSet,
    sample_counts: &[usize],
    percentiles: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<GridResult> {
    if repeats == 0 {
        return Err(Error::config("repeats must be positive"));
    }
    check_disjoint(capture.sample_ids(), heldout)?;
    let mut jobs = Vec::new();
    for (i, &n) in sample_counts.iter().enumerate() {
        for (j, &p) in percentiles.iter().enumerate() {
            let cfg = SelectionConfig {
                n_samples: n,
                percentile: p,
                ..Default::default()
            };
            cfg.check(capture.len())?;
            for r in 0..repeats {
                jobs.push((i, j, cfg.clone().with_seed(seed.wrapping_add(r as u64))));
            }
        }
    }
    let accs = par::map(&jobs, |(_, _, cfg)| -> Result<f64> {
        let sel = select_voters(capture, cfg)?;
        Ok(evaluate(&sel.voters, heldout, VoteMode::Vote)?.accuracy)
    });
    let mut sums = vec![vec![0.0; percentiles.len()]; sample_counts.len()];
    for ((i, j, _), acc) in jobs.iter().zip(accs) {
        sums[*i][*j] += acc?;
    }
    for row in &mut sums {
        for v in row.iter_mut() {
            *v /= repeats as f64;
        }
    }
    Ok(GridResult {
        sample_counts: sample_counts.to_vec(),
        percentiles: percentiles.to_vec(),
        mean_accuracy: sums,
        repeats,
        seed,
    })
}

/// Fraction of voters whose own pick misses the gold answer, per sample.
pub fn sample_difficulty(voters: &VoterSet, samples: &[SampleRecord]) -> Result<Vec<f64>> {
    if voters.is_empty() {
        return Err(Error::Empty("voter set"));
    }
    Ok(samples
        .iter()
        .map(|s| {
            let wrong = voters
                .voters()
                .filter(|v| pick_option(s, v.head, v.direction) != s.correct_index)
                .count();
            wrong as f64 / voters.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedStats {
    pub accuracies: Vec<f64>,
    pub summary: Summary,
}

/// Held-out accuracy spread over `runs` selections with seeds `seed + r`.
pub fn repeated_selection_stats(
    capture: &CaptureSet,
    heldout: &CaptureSet,
    cfg: &SelectionConfig,
    runs: usize,
) -> Result<RepeatedStats> {
    if runs < 2 {
        return Err(Error::config("runs must be at least 2"));
    }
    check_disjoint(capture.sample_ids(), heldout)?;
    cfg.check(capture.len())?;
    let seeds: Vec<u64> = (0..runs as u64).map(|r| cfg.seed.wrapping_add(r)).collect();
    let accuracies = par::map(&seeds, |&s| -> Result<f64> {
        let sel = select_voters(capture, &cfg.clone().with_seed(s))?;
        Ok(evaluate(&sel.voters, heldout, VoteMode::Vote)?.accuracy)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&accuracies).expect("runs >= 2");
    Ok(RepeatedStats { accuracies, summary })
}

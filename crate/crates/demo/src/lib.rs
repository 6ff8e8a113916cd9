//! Browser demo: select voters on a synthetic capture with planted heads, watch
//! accuracy as ranked voters join, and compare mode voting with the binomial
//! tail for independent voters.
//!
//! Each exported function returns a JSON string; the `*_json` versions are plain
//! Rust and are what the tests exercise.

use novo_core::analysis::{accuracy_vs_k, rank_voters};
use novo_core::capture::CaptureSet;
use novo_core::selection::{head_accuracy_table, select_voters, Direction, SelectionConfig, Voter, VoterSet};
use novo_core::synth::{condorcet_capture, planted_capture, random_heads, PlantedConfig};
use novo_core::voting::{evaluate, VoteMode};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const LAYERS: usize = 16;
const HEADS_PER_LAYER: usize = 16;
const PLANTED: usize = 10;
const POOL: usize = 100;
const HELDOUT: usize = 300;

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

fn splits(shift: f64, noise: f64, seed: u64) -> Result<(Vec<usize>, CaptureSet, CaptureSet), String> {
    if !(noise.is_finite() && noise >= 0.0) || !shift.is_finite() {
        return Err("shift and noise must be finite, noise non-negative".into());
    }
    let planted = random_heads(LAYERS * HEADS_PER_LAYER, PLANTED, seed);
    let cfg = |n: usize, s: u64, prefix: &str| PlantedConfig {
        layers: LAYERS,
        heads_per_layer: HEADS_PER_LAYER,
        planted: planted.clone(),
        n_samples: n,
        shift,
        noise,
        seed: s,
        id_prefix: prefix.into(),
        ..Default::default()
    };
    let pool = planted_capture(&cfg(POOL, seed.wrapping_mul(2).wrapping_add(1), "pool"));
    let heldout = planted_capture(&cfg(HELDOUT, seed.wrapping_mul(2).wrapping_add(2), "held"));
    Ok((planted, pool, heldout))
}

#[derive(Serialize)]
struct SelectionView {
    layers: usize,
    heads_per_layer: usize,
    planted: Vec<usize>,
    /// Better-direction accuracy of every head on the drawn samples.
    head_accuracy: Vec<f64>,
    selected: Vec<usize>,
    directions: Vec<Direction>,
    threshold: f64,
    recovered: usize,
    heldout_accuracy: f64,
}

pub fn planted_selection_json(n_samples: usize, percentile: f64, shift: f64, noise: f64, seed: u64) -> Result<String, String> {
    let (planted, pool, heldout) = splits(shift, noise, seed)?;
    let cfg = SelectionConfig {
        n_samples,
        percentile,
        seed,
        ..Default::default()
    };
    let sel = select_voters(&pool, &cfg).map_err(|e| e.to_string())?;
    let heldout_accuracy = evaluate(&sel.voters, &heldout, VoteMode::Vote)
        .map_err(|e| e.to_string())?
        .accuracy;
    let recovered = planted.iter().filter(|h| sel.voters.indices.contains(h)).count();
    let view = SelectionView {
        layers: LAYERS,
        heads_per_layer: HEADS_PER_LAYER,
        planted,
        head_accuracy: sel.table.best_accuracies(),
        selected: sel.voters.indices.clone(),
        directions: sel.voters.indicators.clone(),
        threshold: sel.threshold(),
        recovered,
        heldout_accuracy,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CurveView {
    accuracy: Vec<f64>,
    smoothed_correlation: Vec<Option<f64>>,
    /// Whether the k-th voter to join is a planted head.
    planted: Vec<bool>,
}

/// Every head, ranked on `n_samples` drawn samples, joins the vote one by one;
/// accuracy is measured on held-out samples.
pub fn voter_curve_json(n_samples: usize, shift: f64, noise: f64, seed: u64) -> Result<String, String> {
    let (planted, pool, heldout) = splits(shift, noise, seed)?;
    let cfg = SelectionConfig {
        n_samples,
        seed,
        ..Default::default()
    };
    let drawn = cfg.draw_indices(pool.len()).map_err(|e| e.to_string())?;
    let table = head_accuracy_table(drawn.iter().map(|&i| &pool.records[i])).map_err(|e| e.to_string())?;
    let every = (0..table.n_heads())
        .map(|head| Voter {
            head,
            direction: table.best(head).0,
            weight: None,
        })
        .collect();
    let every = VoterSet::from_voters(pool.geometry.clone(), every).map_err(|e| e.to_string())?;
    let ranked = rank_voters(&every, &table);
    let curve = accuracy_vs_k(&heldout, &ranked, 8).map_err(|e| e.to_string())?;
    let view = CurveView {
        accuracy: curve.iter().map(|p| p.accuracy).collect(),
        smoothed_correlation: curve.iter().map(|p| p.smoothed_correlation).collect(),
        planted: ranked.iter().map(|v| planted.contains(&v.head)).collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CondorcetPoint {
    voters: usize,
    empirical: f64,
    analytic: f64,
}

/// P(more than half of `n` independent voters are right), `n` odd.
pub fn majority_probability(n: usize, p: f64) -> f64 {
    // log-space binomial terms keep large n finite
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_choose = 0.0;
    let mut total = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if 2 * k > n {
            let term = log_choose + k as f64 * lp + (n - k) as f64 * lq;
            total += term.exp();
        }
    }
    total.min(1.0)
}

/// Mode-vote accuracy of the first 1, 3, 5, ... voters of a synthetic
/// capture where each voter is right with probability `p`.
pub fn condorcet_curve_json(p: f64, max_voters: usize, n_samples: usize, seed: u64) -> Result<String, String> {
    if !(0.0..=1.0).contains(&p) || max_voters == 0 || n_samples == 0 {
        return Err("need p in [0, 1] and positive voter and sample counts".into());
    }
    let capture = condorcet_capture(max_voters, p, n_samples, seed);
    let points = (1..=max_voters)
        .step_by(2)
        .map(|n| {
            let voters = VoterSet::from_voters(
                capture.geometry.clone(),
                (0..n)
                    .map(|head| Voter {
                        head,
                        direction: Direction::Max,
                        weight: None,
                    })
                    .collect(),
            )
            .map_err(|e| e.to_string())?;
            let empirical = evaluate(&voters, &capture, VoteMode::Vote).map_err(|e| e.to_string())?.accuracy;
            let analytic = match p {
                0.0 => 0.0,
                1.0 => 1.0,
                _ => majority_probability(n, p),
            };
            Ok(CondorcetPoint {
                voters: n,
                empirical,
                analytic,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn planted_selection(n_samples: usize, percentile: f64, shift: f64, noise: f64, seed: u32) -> Result<String, JsValue> {
    js(planted_selection_json(n_samples, percentile, shift, noise, u64::from(seed)))
}

#[wasm_bindgen]
pub fn voter_curve(n_samples: usize, shift: f64, noise: f64, seed: u32) -> Result<String, JsValue> {
    js(voter_curve_json(n_samples, shift, noise, u64::from(seed)))
}

#[wasm_bindgen]
pub fn condorcet_curve(p: f64, max_voters: usize, n_samples: usize, seed: u32) -> Result<String, JsValue> {
    js(condorcet_curve_json(p, max_voters, n_samples, u64::from(seed)))
}

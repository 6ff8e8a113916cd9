use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use novo_core::ablation::{ablate_voters, compare_captures, positional_evaluate, LengthFilter, RemovalStrategy};
use novo_core::analysis::{
    accuracy_vs_k, classify_voter_type, cluster_errors, error_vector_voter, hamming_matrix, pearson, rank_voters_on,
    type_summary, ErrorVector, TypeRule, VoterType,
};
use novo_core::capture::{validate, write_capture, CaptureSet};
use novo_core::report::{category_csv, fmt6, fmt6_opt, report_csv};
use novo_core::selection::{
    check_disjoint, grid_search, head_accuracy_table, repeated_selection_stats, sample_difficulty, select_voters,
    select_voters_fixed, select_voters_weighted, Direction, Draw, PercentileOver, SelectionConfig, VoterSet,
};
use novo_core::synth::{
    clustered_capture, condorcet_capture, planted_capture, random_heads, ClusteredConfig, PlantedConfig,
};
use novo_core::voting::{evaluate, lm_baseline_evaluate, norm_band_fraction, CategoryAccuracy, VoteMode};

use crate::output::{
    csv_report, emit, head_cols, head_label, is_csv, json_report, load_capture, load_voters, prefixed_csv, summary,
};
use crate::{
    AblateCommand, AnalyzeCommand, Command, DrawArg, EvalArgs, GridArgs, ModeArg, PercentileOverArg, SelectArgs,
    StatsArgs, StrategyArg, SynthCommand, ValidateArgs, VariantArg, VoteModeArg, VoterInput,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Select(a) => select(a),
        Command::Eval(a) => eval(a),
        Command::Grid(a) => grid(a),
        Command::Stats(a) => stats(a),
        Command::Analyze(a) => analyze(a),
        Command::Ablate(a) => ablate(a),
        Command::Validate(a) => validate_cmd(a),
        Command::Synth(a) => synth(a),
    }
}

fn percentile_over(p: PercentileOverArg) -> PercentileOver {
    match p {
        PercentileOverArg::HeadMax => PercentileOver::HeadMax,
        PercentileOverArg::BothRows => PercentileOver::BothRows,
    }
}

fn vote_mode(m: VoteModeArg) -> VoteMode {
    match m {
        VoteModeArg::Vote => VoteMode::Vote,
        VoteModeArg::Weighted => VoteMode::Weighted,
    }
}

fn voters_seed(v: &VoterSet) -> Option<u64> {
    v.provenance.config.as_ref().map(|c| c.seed)
}

fn select(a: SelectArgs) -> Result<()> {
    let capture = load_capture(&a.capture)?;
    let cfg = SelectionConfig {
        n_samples: a.n_samples.unwrap_or(30),
        percentile: a.percentile.unwrap_or(85.0),
        seed: a.seed,
        draw: match a.draw {
            DrawArg::Random => Draw::Random,
            DrawArg::FirstN => Draw::FirstN,
            DrawArg::All => Draw::All,
        },
        percentile_over: percentile_over(a.percentile_over),
    };
    let start = Instant::now();
    let sel = match a.variant {
        VariantArg::Novo => select_voters(&capture, &cfg)?,
        VariantArg::NovoA => select_voters_fixed(&capture, &cfg, Direction::Max)?,
        VariantArg::NovoB => select_voters_fixed(&capture, &cfg, Direction::Min)?,
        VariantArg::NovoF => {
            if a.n_samples.is_some() || a.percentile.is_some() {
                eprintln!("warning: novo-f scores every record and ignores --n-samples and --percentile");
            }
            select_voters_weighted(&capture)?
        }
    };
    let elapsed = start.elapsed();
    sel.voters.write(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "selected {} voters from {} heads (seed={}, threshold={}) in {:.3} ms",
        sel.voters.len(),
        capture.n_heads(),
        a.seed,
        fmt6_opt(sel.voters.provenance.threshold),
        elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let capture = load_capture(&a.capture)?;
    let (mut report, seed) = match a.mode {
        ModeArg::Lm => (lm_baseline_evaluate(&capture)?, None),
        mode => {
            let Some(path) = &a.voters else {
                bail!("--voters is required unless --mode lm");
            };
            let voters = load_voters(path)?;
            if !a.allow_overlap {
                check_disjoint(voters.provenance.sample_ids.iter().map(String::as_str), &capture)
                    .context("pass --allow-overlap to evaluate on selection samples")?;
            }
            let mode = if mode == ModeArg::Weighted { VoteMode::Weighted } else { VoteMode::Vote };
            (evaluate(&voters, &capture, mode)?, voters_seed(&voters))
        }
    };
    if a.by_category {
        if report.per_category.is_none() {
            report.per_category = Some(
                [(
                    "(none)".to_string(),
                    CategoryAccuracy {
                        n_samples: report.n_samples,
                        n_correct: report.n_correct,
                        accuracy: report.accuracy,
                    },
                )]
                .into(),
            );
        }
    } else {
        report.per_category = None;
    }
    let out = a.out.as_deref();
    if out.is_some() {
        let body = if is_csv(out) {
            let csv = if a.by_category { category_csv(&report)? } else { report_csv(&report)? };
            prefixed_csv("eval", seed, csv)
        } else {
            json_report("eval", seed, &report)?
        };
        emit(out, &body)?;
    }
    println!("accuracy={:.4}", report.accuracy);
    if let Some(cats) = &report.per_category {
        for (name, c) in cats {
            println!("  {name}: accuracy={:.4} ({}/{})", c.accuracy, c.n_correct, c.n_samples);
        }
    }
    Ok(())
}

fn grid(a: GridArgs) -> Result<()> {
    let capture = load_capture(&a.capture)?;
    let heldout = load_capture(&a.heldout)?;
    let g = grid_search(&capture, &heldout, &a.n_samples, &a.percentiles, a.repeats, a.seed)?;
    let mut rows = Vec::new();
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, &n) in g.sample_counts.iter().enumerate() {
        for (j, &p) in g.percentiles.iter().enumerate() {
            let acc = g.mean_accuracy[i][j];
            rows.push(vec![n.to_string(), fmt6(p), fmt6(acc)]);
            if best.is_none_or(|b| acc > b.2) {
                best = Some((n, p, acc));
            }
        }
    }
    let body = csv_report("grid", Some(a.seed), &["n_samples", "percentile", "mean_accuracy"], rows)?;
    emit(a.out.as_deref(), &body)?;
    if let Some((n, p, acc)) = best {
        summary(
            a.out.as_deref(),
            &format!(
                "best n_samples={n} percentile={} mean_accuracy={:.4} (repeats={}, seed={})",
                fmt6(p),
                acc,
                a.repeats,
                a.seed
            ),
        );
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let capture = load_capture(&a.capture)?;
    let heldout = load_capture(&a.heldout)?;
    let cfg = SelectionConfig {
        n_samples: a.n_samples,
        percentile: a.percentile,
        seed: a.seed,
        percentile_over: percentile_over(a.percentile_over),
        ..Default::default()
    };
    let st = repeated_selection_stats(&capture, &heldout, &cfg, a.runs)?;
    let s = &st.summary;
    let row = [s.mean, s.std, s.min, s.q25, s.q50, s.q75, s.max].map(fmt6).to_vec();
    let body = csv_report("stats", Some(a.seed), &["mean", "std", "min", "25q", "50q", "75q", "max"], vec![row])?;
    emit(a.out.as_deref(), &body)?;
    if let Some(path) = &a.per_run {
        let rows = st
            .accuracies
            .iter()
            .enumerate()
            .map(|(r, &acc)| vec![r.to_string(), a.seed.wrapping_add(r as u64).to_string(), fmt6(acc)])
            .collect();
        emit(Some(path), &csv_report("stats", Some(a.seed), &["run", "seed", "accuracy"], rows)?)?;
    }
    summary(
        a.out.as_deref(),
        &format!("runs={} mean={:.4} std={:.4} seed={}", a.runs, s.mean, s.std, a.seed),
    );
    Ok(())
}

fn load_pair(input: &VoterInput) -> Result<(CaptureSet, VoterSet)> {
    let capture = load_capture(&input.capture)?;
    let voters = load_voters(&input.voters)?;
    if !voters.geometry.same_shape(&capture.geometry) {
        return Err(novo_core::Error::GeometryMismatch {
            expected: voters.geometry.n_heads(),
            found: capture.n_heads(),
        }
        .into());
    }
    Ok((capture, voters))
}

fn voter_errors(voters: &VoterSet, capture: &CaptureSet) -> Vec<ErrorVector> {
    voters
        .voters()
        .map(|v| error_vector_voter(&capture.records, v.head, v.direction))
        .collect()
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Curve {
            input,
            rank_on,
            window,
            out,
        } => {
            let (capture, voters) = load_pair(&input)?;
            let ranked = match &rank_on {
                Some(p) => rank_voters_on(&voters, &load_capture(p)?)?,
                None => rank_voters_on(&voters, &capture)?,
            };
            let curve = accuracy_vs_k(&capture, &ranked, window)?;
            let rows = curve
                .iter()
                .zip(&ranked)
                .map(|(p, v)| {
                    let mut row = vec![p.k.to_string()];
                    row.extend(head_cols(&capture.geometry, v.head, v.direction));
                    row.extend([fmt6(p.accuracy), fmt6_opt(p.correlation), fmt6_opt(p.smoothed_correlation)]);
                    row
                })
                .collect();
            let header = [
                "k",
                "head",
                "layer",
                "index",
                "direction",
                "accuracy",
                "correlation",
                "smoothed_correlation",
            ];
            emit(out.as_deref(), &csv_report("analyze curve", None, &header, rows)?)?;
            if let Some(peak) = curve.iter().max_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then(b.k.cmp(&a.k))) {
                let last = curve.last().expect("non-empty curve");
                summary(
                    out.as_deref(),
                    &format!(
                        "peak accuracy={:.4} at k={}; all {} voters accuracy={:.4}",
                        peak.accuracy, peak.k, last.k, last.accuracy
                    ),
                );
            }
        }
        AnalyzeCommand::Hamming { input, pearson: corr, out } => {
            let (capture, voters) = load_pair(&input)?;
            let errors = voter_errors(&voters, &capture);
            let labels: Vec<String> = voters.voters().map(|v| head_label(&capture.geometry, v.head)).collect();
            let mut header = vec!["voter"];
            header.extend(labels.iter().map(String::as_str));
            let rows: Vec<Vec<String>> = if corr {
                errors
                    .iter()
                    .zip(&labels)
                    .map(|(a, label)| {
                        let mut row = vec![label.clone()];
                        for b in &errors {
                            row.push(fmt6_opt(pearson(a, b)?));
                        }
                        Ok(row)
                    })
                    .collect::<Result<_>>()?
            } else {
                hamming_matrix(&errors)?
                    .into_iter()
                    .zip(&labels)
                    .map(|(r, label)| std::iter::once(label.clone()).chain(r.iter().map(|d| d.to_string())).collect())
                    .collect()
            };
            let name = if corr { "analyze pearson" } else { "analyze hamming" };
            emit(out.as_deref(), &csv_report(name, None, &header, rows)?)?;
            summary(
                out.as_deref(),
                &format!("{} x {} matrix over {} samples", labels.len(), labels.len(), capture.len()),
            );
        }
        AnalyzeCommand::Clusters { input, k, seed, out } => {
            let (capture, voters) = load_pair(&input)?;
            let cl = cluster_errors(&voter_errors(&voters, &capture), k, seed)?;
            let rows = voters
                .voters()
                .zip(&cl.labels)
                .map(|(v, &c)| {
                    let mut row = head_cols(&capture.geometry, v.head, v.direction).to_vec();
                    row.push(c.to_string());
                    row
                })
                .collect();
            let header = ["head", "layer", "index", "direction", "cluster"];
            emit(out.as_deref(), &csv_report("analyze clusters", Some(seed), &header, rows)?)?;
            summary(
                out.as_deref(),
                &format!(
                    "k={k} sizes={:?} inertia={} iterations={} seed={seed}",
                    cl.sizes(),
                    fmt6(cl.inertia),
                    cl.iterations
                ),
            );
        }
        AnalyzeCommand::Types {
            input,
            end_threshold,
            tail_positions,
            summary_out,
            out,
        } => {
            let (capture, voters) = load_pair(&input)?;
            let rule = TypeRule {
                end_threshold,
                tail_positions,
            };
            let types = voters
                .voters()
                .map(|v| classify_voter_type(&v, &capture, &rule))
                .collect::<novo_core::Result<Vec<VoterType>>>()?;
            let table = head_accuracy_table(&capture.records)?;
            let name = |t: VoterType| match t {
                VoterType::T1 => "T1",
                VoterType::T2 => "T2",
                VoterType::Untyped => "untyped",
            };
            let rows = voters
                .voters()
                .zip(&types)
                .map(|(v, &t)| {
                    let mut row = head_cols(&capture.geometry, v.head, v.direction).to_vec();
                    row.push(fmt6(table.accuracy(v.direction, v.head)));
                    row.push(name(t).to_string());
                    row
                })
                .collect();
            let header = ["head", "layer", "index", "direction", "accuracy", "type"];
            emit(out.as_deref(), &csv_report("analyze types", None, &header, rows)?)?;
            let srows = type_summary(&table, &voters, &types);
            if let Some(path) = &summary_out {
                let rows = srows
                    .iter()
                    .map(|r| {
                        let mut row = vec![r.label.clone(), r.count.to_string()];
                        match &r.summary {
                            Some(s) => row.extend([s.mean, s.std, s.min, s.q25, s.q50, s.q75, s.max].map(fmt6)),
                            None => row.extend(std::iter::repeat_n(String::new(), 7)),
                        }
                        row
                    })
                    .collect();
                let header = ["type", "count", "mean", "std", "min", "25q", "50q", "75q", "max"];
                emit(Some(path), &csv_report("analyze types", None, &header, rows)?)?;
            }
            let counts: Vec<String> = srows.iter().map(|r| format!("{}={}", r.label, r.count)).collect();
            summary(out.as_deref(), &counts.join(" "));
        }
        AnalyzeCommand::Ranked { input, out } => {
            let (capture, voters) = load_pair(&input)?;
            let table = head_accuracy_table(&capture.records)?;
            let ranked = rank_voters_on(&voters, &capture)?;
            let rows = ranked
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let mut row = vec![(i + 1).to_string()];
                    row.extend(head_cols(&capture.geometry, v.head, v.direction));
                    row.push(fmt6(table.accuracy(v.direction, v.head)));
                    row
                })
                .collect();
            let header = ["rank", "head", "layer", "index", "direction", "accuracy"];
            emit(out.as_deref(), &csv_report("analyze ranked", None, &header, rows)?)?;
            if let Some(top) = ranked.first() {
                summary(
                    out.as_deref(),
                    &format!(
                        "{} voters; best {} ({:?}) accuracy={:.4}",
                        ranked.len(),
                        head_label(&capture.geometry, top.head),
                        top.direction,
                        table.accuracy(top.direction, top.head)
                    ),
                );
            }
        }
        AnalyzeCommand::Difficulty { input, out } => {
            let (capture, voters) = load_pair(&input)?;
            let d = sample_difficulty(&voters, &capture.records)?;
            let rows = capture
                .records
                .iter()
                .zip(&d)
                .map(|(r, &x)| vec![r.sample_id.clone(), r.category.clone().unwrap_or_default(), fmt6(x)])
                .collect();
            emit(
                out.as_deref(),
                &csv_report("analyze difficulty", None, &["sample_id", "category", "difficulty"], rows)?,
            )?;
            let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
            summary(out.as_deref(), &format!("{} samples, mean difficulty={:.4}", d.len(), mean));
        }
        AnalyzeCommand::Band { input, lo, hi } => {
            let (capture, voters) = load_pair(&input)?;
            let f = norm_band_fraction(&voters, &capture, lo, hi);
            println!("fraction of voter norms in [{lo}, {hi}]: {}", fmt6(f));
        }
    }
    Ok(())
}

fn ablate(cmd: AblateCommand) -> Result<()> {
    match cmd {
        AblateCommand::Clusters {
            input,
            k,
            seed,
            strategy,
            out,
        } => {
            let (capture, voters) = load_pair(&input)?;
            let cl = cluster_errors(&voter_errors(&voters, &capture), k, seed)?;
            let strategies: &[RemovalStrategy] = match strategy {
                StrategyArg::Even => &[RemovalStrategy::EvenAcrossClusters],
                StrategyArg::Exhaust => &[RemovalStrategy::ExhaustCluster],
                StrategyArg::Both => &[RemovalStrategy::EvenAcrossClusters, RemovalStrategy::ExhaustCluster],
            };
            let mut rows = Vec::new();
            let mut notes = Vec::new();
            let half = voters.len() / 2;
            for &s in strategies {
                let series = ablate_voters(&voters, &cl, s, seed, &capture)?;
                let label = match s {
                    RemovalStrategy::EvenAcrossClusters => "even",
                    RemovalStrategy::ExhaustCluster => "exhaust",
                };
                for p in &series.points {
                    let v = series.order.get(p.removed.wrapping_sub(1)).filter(|_| p.removed > 0);
                    rows.push(vec![
                        label.to_string(),
                        p.removed.to_string(),
                        p.remaining.to_string(),
                        v.map(|&i| head_label(&capture.geometry, voters.indices[i])).unwrap_or_default(),
                        v.map(|&i| cl.labels[i].to_string()).unwrap_or_default(),
                        fmt6(p.accuracy),
                    ]);
                }
                if let Some(acc) = series.accuracy_at(half) {
                    notes.push(format!("{label}={acc:.4}"));
                }
            }
            let header = ["strategy", "removed", "remaining", "last_removed", "cluster", "accuracy"];
            emit(out.as_deref(), &csv_report("ablate clusters", Some(seed), &header, rows)?)?;
            summary(
                out.as_deref(),
                &format!(
                    "accuracy after removing {half} of {} voters: {} (k={k}, seed={seed})",
                    voters.len(),
                    notes.join(" ")
                ),
            );
        }
        AblateCommand::Position {
            input,
            max_offset,
            mode,
            length_min,
            length_max,
            no_length_filter,
            out,
        } => {
            let (capture, voters) = load_pair(&input)?;
            let filter = (!no_length_filter).then_some(LengthFilter {
                min_pct: length_min,
                max_pct: length_max,
            });
            let mut rows = Vec::new();
            let mut accs = Vec::new();
            for offset in 0..=max_offset {
                let r = positional_evaluate(&voters, &capture, offset, filter, vote_mode(mode))?;
                accs.push(format!("{:.4}", r.accuracy));
                rows.push(vec![
                    offset.to_string(),
                    fmt6(r.accuracy),
                    r.n_used.to_string(),
                    r.n_excluded.to_string(),
                ]);
            }
            let header = ["offset", "accuracy", "n_used", "n_excluded"];
            emit(out.as_deref(), &csv_report("ablate position", None, &header, rows)?)?;
            summary(out.as_deref(), &format!("accuracy by offset: {}", accs.join(" ")));
        }
        AblateCommand::Compare {
            a,
            b,
            voters,
            mode,
            out,
        } => {
            let ca = load_capture(&a)?;
            let cb = load_capture(&b)?;
            let v = load_voters(&voters)?;
            let c = compare_captures(&v, &ca, &cb, vote_mode(mode))?;
            if out.is_some() {
                emit(out.as_deref(), &json_report("ablate compare", None, &c)?)?;
            }
            println!(
                "n={} acc_a={:.4} acc_b={:.4} delta={:+.4}",
                c.n_samples, c.acc_a, c.acc_b, c.delta
            );
        }
    }
    Ok(())
}

fn validate_cmd(a: ValidateArgs) -> Result<()> {
    let capture = novo_core::read_capture(&a.capture).with_context(|| format!("reading {}", a.capture.display()))?;
    let violations = validate(&capture);
    if violations.is_empty() {
        println!(
            "ok: {} records, {} layers x {} heads, positions={}, attention={}",
            capture.len(),
            capture.geometry.layers,
            capture.geometry.heads_per_layer,
            capture.has_positions(),
            capture.has_attention()
        );
        return Ok(());
    }
    for v in &violations {
        println!("{v}");
    }
    Err(novo_core::Error::Invalid(violations).into())
}

fn write_synth(capture: &CaptureSet, out: &Path) -> Result<()> {
    write_capture(capture, out).with_context(|| format!("writing {}", out.display()))
}

fn synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Planted {
            layers,
            heads,
            planted,
            n_samples,
            options,
            shift,
            noise,
            seed,
            heads_seed,
            id_prefix,
            out,
        } => {
            if layers == 0 || heads == 0 || options < 2 || planted > layers * heads {
                bail!("need layers, heads >= 1, options >= 2 and planted <= layers * heads");
            }
            if !(noise.is_finite() && noise >= 0.0) {
                bail!("noise must be finite and non-negative");
            }
            let planted_heads = random_heads(layers * heads, planted, heads_seed.unwrap_or(seed));
            let cfg = PlantedConfig {
                layers,
                heads_per_layer: heads,
                planted: planted_heads.clone(),
                n_samples,
                n_options: options,
                shift,
                noise,
                seed,
                id_prefix,
                ..Default::default()
            };
            write_synth(&planted_capture(&cfg), &out)?;
            println!("wrote {n_samples} samples (seed={seed}); planted heads {planted_heads:?}");
        }
        SynthCommand::Condorcet {
            voters,
            p,
            n_samples,
            seed,
            out,
        } => {
            if voters == 0 || !(0.0..=1.0).contains(&p) {
                bail!("need voters >= 1 and p in [0, 1]");
            }
            write_synth(&condorcet_capture(voters, p, n_samples, seed), &out)?;
            println!("wrote {n_samples} samples with {voters} voters at p={p} (seed={seed})");
        }
        SynthCommand::Clustered {
            sizes,
            n_samples,
            seed,
            labels_out,
            out,
        } => {
            if sizes.is_empty() || sizes.contains(&0) {
                bail!("cluster sizes must be positive");
            }
            let cfg = ClusteredConfig {
                cluster_sizes: sizes,
                n_samples,
                seed,
                ..Default::default()
            };
            let (capture, labels) = clustered_capture(&cfg);
            write_synth(&capture, &out)?;
            if let Some(path) = &labels_out {
                let rows = labels.iter().enumerate().map(|(h, c)| vec![h.to_string(), c.to_string()]).collect();
                emit(Some(path), &csv_report("synth clustered", Some(seed), &["head", "cluster"], rows)?)?;
            }
            println!("wrote {n_samples} samples, {} voters in {} clusters (seed={seed})", labels.len(), cfg.cluster_sizes.len());
        }
    }
    Ok(())
}

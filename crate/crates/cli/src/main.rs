use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

const ABOUT: &str = "Select attention-head norm voters from captured runs and use them to answer multiple-choice questions.";

const LONG_ABOUT: &str = "\
Select attention-head norm voters from captured runs and use them to answer multiple-choice questions.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error (unreadable or invalid capture, geometry mismatch).

Number fidelity: report files (JSON and CSV written by eval, grid, stats, analyze, ablate) round every \
floating-point value to 6 significant digits so reruns are byte-identical. Capture files and voter sets \
are never rounded: norms round-trip bit-exactly.";

#[derive(Parser, Debug)]
#[command(name = "novo", version, about = ABOUT, long_about = LONG_ABOUT)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Select voters from a capture and write a voter set.
    Select(SelectArgs),
    /// Evaluate a voter set (or the log-likelihood baseline) on a capture.
    Eval(EvalArgs),
    /// Mean held-out accuracy over a sample-count x percentile grid.
    Grid(GridArgs),
    /// Accuracy spread over repeated random selections.
    Stats(StatsArgs),
    /// Voter analyses: accuracy vs. voter count, error distances, clusters, types.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Ablations: cluster-aware removal, off-final positions, paired captures.
    #[command(subcommand)]
    Ablate(AblateCommand),
    /// Check a capture file against the format invariants.
    Validate(ValidateArgs),
    /// Write synthetic captures with known structure.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantArg {
    Novo,
    NovoF,
    NovoA,
    NovoB,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PercentileOverArg {
    HeadMax,
    BothRows,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrawArg {
    Random,
    FirstN,
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Vote,
    Weighted,
    Lm,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoteModeArg {
    Vote,
    Weighted,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyArg {
    Even,
    Exhaust,
    Both,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    pub capture: PathBuf,
    /// Samples drawn for scoring [default: 30]
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Keep heads scoring at or above this nearest-rank percentile [default: 85]
    #[arg(long)]
    pub percentile: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = VariantArg::Novo)]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value_t = PercentileOverArg::HeadMax)]
    pub percentile_over: PercentileOverArg,
    #[arg(long, value_enum, default_value_t = DrawArg::Random)]
    pub draw: DrawArg,
    /// Voter set JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub capture: PathBuf,
    /// Voter set JSON (not needed with --mode lm).
    #[arg(long)]
    pub voters: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Vote)]
    pub mode: ModeArg,
    /// Add per-category accuracy.
    #[arg(long)]
    pub by_category: bool,
    /// Permit evaluating on samples the voters were selected on.
    #[arg(long)]
    pub allow_overlap: bool,
    /// Report file; `.csv` writes per-sample rows (or per-category rows with
    /// --by-category), anything else writes JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Capture to select voters from.
    #[arg(long)]
    pub capture: PathBuf,
    /// Held-out capture to evaluate on (disjoint sample ids).
    #[arg(long)]
    pub heldout: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,30,50")]
    pub n_samples: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "50,70,80,85,90,95")]
    pub percentiles: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub capture: PathBuf,
    #[arg(long)]
    pub heldout: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub runs: usize,
    #[arg(long, default_value_t = 30)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 85.0)]
    pub percentile: f64,
    #[arg(long, value_enum, default_value_t = PercentileOverArg::HeadMax)]
    pub percentile_over: PercentileOverArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write every run's accuracy (CSV: run,seed,accuracy).
    #[arg(long)]
    pub per_run: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VoterInput {
    #[arg(long)]
    pub capture: PathBuf,
    #[arg(long)]
    pub voters: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Accuracy as ranked voters join, with error-vector correlation.
    Curve {
        #[command(flatten)]
        input: VoterInput,
        /// Capture used to rank voters [default: --capture]
        #[arg(long)]
        rank_on: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise Hamming distances between voter error vectors (square matrix).
    Hamming {
        #[command(flatten)]
        input: VoterInput,
        /// Emit Pearson correlations instead of distances.
        #[arg(long)]
        pearson: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-means clusters of voter error vectors.
    Clusters {
        #[command(flatten)]
        input: VoterInput,
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Heuristic voter types from attention summaries and positional norms.
    Types {
        #[command(flatten)]
        input: VoterInput,
        #[arg(long, default_value_t = 0.5)]
        end_threshold: f64,
        #[arg(long, default_value_t = 3)]
        tail_positions: usize,
        /// Per-type accuracy summary CSV.
        #[arg(long)]
        summary_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Voters sorted by their own accuracy on the capture.
    Ranked {
        #[command(flatten)]
        input: VoterInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-sample fraction of voters that miss the gold answer.
    Difficulty {
        #[command(flatten)]
        input: VoterInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraction of voter norms inside [lo, hi].
    Band {
        #[command(flatten)]
        input: VoterInput,
        #[arg(long, default_value_t = 0.5)]
        lo: f32,
        #[arg(long, default_value_t = 3.0)]
        hi: f32,
    },
}

#[derive(Subcommand, Debug)]
pub enum AblateCommand {
    /// Remove voters cluster by cluster and track accuracy.
    Clusters {
        #[command(flatten)]
        input: VoterInput,
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
        strategy: StrategyArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy when voters read norms 0..=max-offset positions before the end.
    Position {
        #[command(flatten)]
        input: VoterInput,
        #[arg(long, default_value_t = 10)]
        max_offset: usize,
        #[arg(long, value_enum, default_value_t = VoteModeArg::Vote)]
        mode: VoteModeArg,
        /// Lower sample-length percentile kept.
        #[arg(long, default_value_t = 5.0)]
        length_min: f64,
        /// Upper sample-length percentile kept.
        #[arg(long, default_value_t = 95.0)]
        length_max: f64,
        /// Keep every sample regardless of length.
        #[arg(long)]
        no_length_filter: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy change between two captures of the same samples.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        voters: PathBuf,
        #[arg(long, value_enum, default_value_t = VoteModeArg::Vote)]
        mode: VoteModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub capture: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Random gold option; a few planted heads lift its norm.
    Planted {
        #[arg(long, default_value_t = 16)]
        layers: usize,
        #[arg(long, default_value_t = 16)]
        heads: usize,
        /// Number of planted heads, chosen at random.
        #[arg(long, default_value_t = 10)]
        planted: usize,
        #[arg(long, default_value_t = 100)]
        n_samples: usize,
        #[arg(long, default_value_t = 4)]
        options: usize,
        #[arg(long, default_value_t = 1.0)]
        shift: f64,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seed for choosing planted heads, so several captures can share them [default: --seed]
        #[arg(long)]
        heads_seed: Option<u64>,
        #[arg(long, default_value = "s")]
        id_prefix: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Independent two-option voters, each right with probability p.
    Condorcet {
        #[arg(long, default_value_t = 101)]
        voters: usize,
        #[arg(long, default_value_t = 0.7)]
        p: f64,
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voters whose errors are correlated within planted clusters.
    Clustered {
        #[arg(long, value_delimiter = ',', default_value = "16,25,38,47,60,79")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 400)]
        n_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Planted cluster of every head (CSV: head,cluster).
        #[arg(long)]
        labels_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// 2 for data faults reported by the library, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|c| c.downcast_ref::<novo_core::Error>())
        .map_or(1, |e| if e.is_data_error() { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        if let Err(e) = pool {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    // validate lists violations on stdout itself
    let listed = matches!(cli.command, Command::Validate(_));
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(novo_core::Error::Invalid(violations)) = e.chain().find_map(|c| c.downcast_ref()).filter(|_| !listed) {
                for v in violations {
                    eprintln!("  {v}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn library_errors_map_to_exit_codes() {
        let data = anyhow::Error::from(novo_core::Error::Missing("x".into())).context("loading");
        assert_eq!(exit_code(&data), 2);
        let config = anyhow::Error::from(novo_core::Error::Config("bad".into()));
        assert_eq!(exit_code(&config), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 1);
    }
}

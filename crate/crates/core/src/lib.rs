//! Norm voting for multiple-choice answering.
//!
//! A language model is run once per answer option and the L2 norm of every
//! attention head's output at the final position is recorded (a
//! [`capture::NormMatrix`]). A few labelled samples are enough to find heads
//! whose norm ranks the correct option highest (or lowest); those heads then
//! answer new questions by majority vote.
//!
//! - [`capture`]: data model and the `novo-capture` JSON Lines format
//! - [`selection`]: head scoring, thresholding and selection variants
//! - [`voting`]: majority / weighted voting and dataset evaluation
//! - [`analysis`]: error vectors, correlation, clustering, voter types
//! - [`ablation`]: voter removal, positional and paired-capture studies
//! - [`synth`]: synthetic capture generators with known ground truth

pub mod ablation;
pub mod analysis;
pub mod capture;
pub mod error;
mod par;
pub mod report;
pub mod selection;
pub mod stats;
pub mod synth;
pub mod voting;

pub use capture::{read_capture, validate, write_capture, CaptureSet, ModelGeometry, NormMatrix, SampleRecord};
pub use error::{Error, Result};
pub use selection::{
    select_voters, select_voters_fixed, select_voters_weighted, Direction, HeadAccuracyTable, Selection,
    SelectionConfig, VoterSet,
};
pub use voting::{evaluate, vote, vote_weighted, EvaluationReport, VoteMode};

//! Norm captures: the per-option head-norm data produced by a model run, and
//! the `novo-capture` JSON Lines format used to move it between processes.
//!
//! Line 1 of a capture file is a header object; every following line is one
//! [`SampleRecord`]. Norms are written as 32-bit floats in shortest
//! round-trip decimal form, so `read(write(c)) == c` bit for bit.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "novo-capture";
pub const FORMAT_VERSION: u64 = 1;

/// Slack allowed on `end_token_mass + punct_mass`.
pub const MASS_EPSILON: f64 = 1e-6;

/// Layer/head layout of the captured model. Heads are addressed by the flat
/// index `layer * heads_per_layer + head`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelGeometry {
    pub layers: usize,
    pub heads_per_layer: usize,
    pub model_id: String,
}

impl ModelGeometry {
    pub fn new(layers: usize, heads_per_layer: usize, model_id: impl Into<String>) -> Result<Self> {
        if layers == 0 || heads_per_layer == 0 {
            return Err(Error::config(format!(
                "geometry needs at least one layer and one head, got {layers}x{heads_per_layer}"
            )));
        }
        Ok(Self {
            layers,
            heads_per_layer,
            model_id: model_id.into(),
        })
    }

    pub fn n_heads(&self) -> usize {
        self.layers * self.heads_per_layer
    }

    pub fn flat_index(&self, layer: usize, head: usize) -> usize {
        debug_assert!(layer < self.layers && head < self.heads_per_layer);
        layer * self.heads_per_layer + head
    }

    pub fn layer_head(&self, flat: usize) -> (usize, usize) {
        (flat / self.heads_per_layer, flat % self.heads_per_layer)
    }

    /// Same head layout, ignoring the model id.
    pub fn same_shape(&self, other: &ModelGeometry) -> bool {
        self.layers == other.layers && self.heads_per_layer == other.heads_per_layer
    }
}

/// Last-position head norms for one option, flattened layer-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormMatrix(pub Vec<f32>);

impl NormMatrix {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    #[inline]
    pub fn get(&self, head: usize) -> f32 {
        self.0[head]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

/// Head norms at every captured position, final token first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositionalNorms(pub Vec<NormMatrix>);

impl PositionalNorms {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn at(&self, offset: usize) -> &NormMatrix {
        &self.0[offset]
    }

    /// Norms `offset` positions from the end; offsets past the start of the
    /// sequence read the earliest captured position.
    pub fn clamped(&self, offset: usize) -> &NormMatrix {
        &self.0[offset.min(self.0.len() - 1)]
    }
}

/// Per-head attention mass from the final query position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub end_token_mass: Vec<f32>,
    pub punct_mass: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub norms: NormMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<PositionalNorms>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionSummary>,
    /// Opaque language-model score for the LM baseline (higher is better).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm_score: Option<f64>,
}

impl OptionRecord {
    pub fn from_norms(norms: Vec<f32>) -> Self {
        Self {
            text: None,
            norms: NormMatrix(norms),
            positions: None,
            attention: None,
            lm_score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub correct_index: usize,
    pub options: Vec<OptionRecord>,
}

impl SampleRecord {
    pub fn n_options(&self) -> usize {
        self.options.len()
    }

    #[inline]
    pub fn norm(&self, option: usize, head: usize) -> f32 {
        self.options[option].norms.get(head)
    }

    /// Number of captured positions (longest option), if positional norms exist.
    pub fn max_positions(&self) -> Option<usize> {
        self.options
            .iter()
            .map(|o| o.positions.as_ref().map(PositionalNorms::len))
            .collect::<Option<Vec<_>>>()
            .and_then(|lens| lens.into_iter().max())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSet {
    pub geometry: ModelGeometry,
    pub dataset_id: String,
    pub records: Vec<SampleRecord>,
}

impl CaptureSet {
    pub fn n_heads(&self) -> usize {
        self.geometry.n_heads()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_positions(&self) -> bool {
        self.all_options(|o| o.positions.is_some())
    }

    pub fn has_attention(&self) -> bool {
        self.all_options(|o| o.attention.is_some())
    }

    fn all_options(&self, pred: impl Fn(&OptionRecord) -> bool) -> bool {
        !self.records.is_empty() && self.records.iter().flat_map(|r| &r.options).all(pred)
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.sample_id.as_str())
    }

    /// A new capture holding the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> CaptureSet {
        CaptureSet {
            geometry: self.geometry.clone(),
            dataset_id: self.dataset_id.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn header(&self) -> CaptureHeader {
        CaptureHeader {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            model_id: self.geometry.model_id.clone(),
            dataset_id: self.dataset_id.clone(),
            layers: self.geometry.layers,
            heads: self.geometry.heads_per_layer,
            has_positions: self.has_positions(),
            has_attention: self.has_attention(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureHeader {
    pub format: String,
    pub version: u64,
    pub model_id: String,
    pub dataset_id: String,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "H")]
    pub heads: usize,
    pub has_positions: bool,
    pub has_attention: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Geometry,
    NoRecords,
    DuplicateSampleId,
    TooFewOptions,
    GoldOutOfRange,
    NormShape,
    NonFiniteNorm,
    NegativeNorm,
    PositionalShape,
    PositionalSliceZero,
    AttentionShape,
    MassRange,
    MassSum,
    InconsistentBlocks,
    NonFiniteLmScore,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Geometry => "geometry must have L >= 1 and H >= 1",
            Rule::NoRecords => "capture has no records",
            Rule::DuplicateSampleId => "duplicate sample id",
            Rule::TooFewOptions => "fewer than two options",
            Rule::GoldOutOfRange => "gold index out of range",
            Rule::NormShape => "norm array length differs from L*H",
            Rule::NonFiniteNorm => "norm is not finite",
            Rule::NegativeNorm => "norm is negative",
            Rule::PositionalShape => "positional norms malformed",
            Rule::PositionalSliceZero => "positional slice 0 differs from norms",
            Rule::AttentionShape => "attention summary length differs from L*H",
            Rule::MassRange => "attention mass outside [0, 1]",
            Rule::MassSum => "end-token plus punctuation mass exceeds 1",
            Rule::InconsistentBlocks => "optional block present on some options only",
            Rule::NonFiniteLmScore => "lm_score is not finite",
        };
        f.write_str(s)
    }
}

/// One broken invariant, located as precisely as the rule allows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub option: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.record, &self.sample_id) {
            (Some(r), Some(id)) => write!(f, "record {r} ({id})")?,
            (Some(r), None) => write!(f, "record {r}")?,
            _ => write!(f, "capture")?,
        }
        if let Some(o) = self.option {
            write!(f, " option {o}")?;
        }
        write!(f, ": {}", self.rule)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

struct Collector<'a> {
    out: Vec<Violation>,
    record: Option<(usize, &'a str)>,
}

impl<'a> Collector<'a> {
    fn push(&mut self, rule: Rule, option: Option<usize>, detail: String) {
        self.out.push(Violation {
            rule,
            record: self.record.map(|r| r.0),
            sample_id: self.record.map(|r| r.1.to_string()),
            option,
            detail,
        });
    }
}

fn check_norm_values(c: &mut Collector<'_>, option: usize, what: &str, values: &[f32]) {
    for (cell, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            c.push(Rule::NonFiniteNorm, Some(option), format!("{what} cell {cell} = {v}"));
        } else if v < 0.0 {
            c.push(Rule::NegativeNorm, Some(option), format!("{what} cell {cell} = {v}"));
        }
    }
}

/// Checks every capture invariant; an empty result means the capture is valid.
pub fn validate(capture: &CaptureSet) -> Vec<Violation> {
    let mut c = Collector {
        out: Vec::new(),
        record: None,
    };
    let g = &capture.geometry;
    if g.layers == 0 || g.heads_per_layer == 0 {
        c.push(Rule::Geometry, None, format!("L={} H={}", g.layers, g.heads_per_layer));
    }
    if capture.records.is_empty() {
        c.push(Rule::NoRecords, None, String::new());
    }
    let n_heads = g.n_heads();

    let mut seen = HashSet::new();
    let (mut pos_some, mut pos_none, mut att_some, mut att_none) = (0usize, 0usize, 0usize, 0usize);

    for (ri, rec) in capture.records.iter().enumerate() {
        c.record = Some((ri, rec.sample_id.as_str()));
        if !seen.insert(rec.sample_id.as_str()) {
            c.push(Rule::DuplicateSampleId, None, String::new());
        }
        let k = rec.options.len();
        if k < 2 {
            c.push(Rule::TooFewOptions, None, format!("K={k}"));
        }
        if rec.correct_index >= k {
            c.push(
                Rule::GoldOutOfRange,
                None,
                format!("correct_index={} K={k}", rec.correct_index),
            );
        }
        for (oi, opt) in rec.options.iter().enumerate() {
            if opt.norms.len() != n_heads {
                c.push(
                    Rule::NormShape,
                    Some(oi),
                    format!("{} values, expected {n_heads}", opt.norms.len()),
                );
            }
            check_norm_values(&mut c, oi, "norms", opt.norms.values());

            match &opt.positions {
                Some(pos) => {
                    pos_some += 1;
                    if pos.is_empty() {
                        c.push(Rule::PositionalShape, Some(oi), "no positions".into());
                    }
                    for (p, row) in pos.0.iter().enumerate() {
                        if row.len() != n_heads {
                            c.push(
                                Rule::PositionalShape,
                                Some(oi),
                                format!("position {p} has {} values, expected {n_heads}", row.len()),
                            );
                        }
                        check_norm_values(&mut c, oi, &format!("position {p}"), row.values());
                    }
                    if let Some(first) = pos.0.first() {
                        let same = first.len() == opt.norms.len()
                            && first
                                .values()
                                .iter()
                                .zip(opt.norms.values())
                                .all(|(a, b)| a.to_bits() == b.to_bits());
                        if !same {
                            c.push(Rule::PositionalSliceZero, Some(oi), String::new());
                        }
                    }
                }
                None => pos_none += 1,
            }

            match &opt.attention {
                Some(att) => {
                    att_some += 1;
                    if att.end_token_mass.len() != n_heads || att.punct_mass.len() != n_heads {
                        c.push(
                            Rule::AttentionShape,
                            Some(oi),
                            format!(
                                "end={} punct={} expected {n_heads}",
                                att.end_token_mass.len(),
                                att.punct_mass.len()
                            ),
                        );
                    }
                    for (h, (&e, &p)) in att.end_token_mass.iter().zip(&att.punct_mass).enumerate() {
                        let in_range = |m: f32| m.is_finite() && (0.0..=1.0).contains(&m);
                        if !in_range(e) || !in_range(p) {
                            c.push(Rule::MassRange, Some(oi), format!("head {h}: end={e} punct={p}"));
                        } else if f64::from(e) + f64::from(p) > 1.0 + MASS_EPSILON {
                            c.push(Rule::MassSum, Some(oi), format!("head {h}: end={e} punct={p}"));
                        }
                    }
                }
                None => att_none += 1,
            }

            if let Some(s) = opt.lm_score {
                if !s.is_finite() {
                    c.push(Rule::NonFiniteLmScore, Some(oi), format!("{s}"));
                }
            }
        }
    }
    c.record = None;
    if pos_some > 0 && pos_none > 0 {
        c.push(
            Rule::InconsistentBlocks,
            None,
            format!("positions on {pos_some} options, missing on {pos_none}"),
        );
    }
    if att_some > 0 && att_none > 0 {
        c.push(
            Rule::InconsistentBlocks,
            None,
            format!("attention on {att_some} options, missing on {att_none}"),
        );
    }
    c.out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses a capture from any reader. Structural problems (bad header, wrong
/// array lengths, truncated lines) are parse errors carrying the 1-based line
/// number; semantic invariants are left to [`validate`].
pub fn read_capture_from<R: Read>(reader: R) -> Result<CaptureSet> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let header_line = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line.map_err(|e| parse_err(i + 1, e.to_string()))?;
                if !line.trim().is_empty() {
                    break (i + 1, line);
                }
            }
            None => return Err(parse_err(1, "missing header")),
        }
    };
    let header = parse_header(header_line.0, &header_line.1)?;
    let geometry = ModelGeometry::new(header.layers, header.heads, header.model_id.clone())
        .map_err(|e| parse_err(header_line.0, e.to_string()))?;
    let n_heads = geometry.n_heads();

    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("bad record: {e}")))?;
        check_record_shape(&rec, &header, n_heads).map_err(|m| parse_err(lineno, m))?;
        records.push(rec);
    }
    Ok(CaptureSet {
        geometry,
        dataset_id: header.dataset_id,
        records,
    })
}

fn parse_header(line: usize, text: &str) -> Result<CaptureHeader> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| parse_err(line, format!("malformed header: {e}")))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(FORMAT_NAME) {
        return Err(parse_err(line, format!("header format is not {FORMAT_NAME:?}")));
    }
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(Error::UnsupportedVersion(v)),
        None => return Err(parse_err(line, "header version missing or not an integer")),
    }
    serde_json::from_value(raw).map_err(|e| parse_err(line, format!("malformed header: {e}")))
}

fn check_record_shape(rec: &SampleRecord, header: &CaptureHeader, n_heads: usize) -> Result<(), String> {
    for (oi, opt) in rec.options.iter().enumerate() {
        if opt.norms.len() != n_heads {
            return Err(format!(
                "sample {:?} option {oi}: norm array has {} values, header says L*H = {n_heads}",
                rec.sample_id,
                opt.norms.len()
            ));
        }
        match (&opt.positions, header.has_positions) {
            (Some(pos), true) => {
                if let Some(p) = pos.0.iter().position(|row| row.len() != n_heads) {
                    return Err(format!(
                        "sample {:?} option {oi}: position {p} has {} values, expected {n_heads}",
                        rec.sample_id,
                        pos.0[p].len()
                    ));
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(format!(
                    "sample {:?} option {oi}: positions present but header has_positions=false",
                    rec.sample_id
                ))
            }
            (None, true) => {
                return Err(format!(
                    "sample {:?} option {oi}: positions missing but header has_positions=true",
                    rec.sample_id
                ))
            }
        }
        match (&opt.attention, header.has_attention) {
            (Some(att), true) => {
                if att.end_token_mass.len() != n_heads || att.punct_mass.len() != n_heads {
                    return Err(format!(
                        "sample {:?} option {oi}: attention arrays must have {n_heads} values",
                        rec.sample_id
                    ));
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(format!(
                    "sample {:?} option {oi}: attention present but header has_attention=false",
                    rec.sample_id
                ))
            }
            (None, true) => {
                return Err(format!(
                    "sample {:?} option {oi}: attention missing but header has_attention=true",
                    rec.sample_id
                ))
            }
        }
    }
    Ok(())
}

pub fn read_capture(path: impl AsRef<Path>) -> Result<CaptureSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_capture_from(file)
}

/// Writes a validated capture. Invalid captures are rejected with
/// [`Error::Invalid`] before anything is written.
pub fn write_capture_to<W: Write>(capture: &CaptureSet, mut writer: W) -> Result<()> {
    let violations = validate(capture);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    let io = |e: std::io::Error| Error::Io {
        path: "<writer>".into(),
        source: e,
    };
    serde_json::to_writer(&mut writer, &capture.header())?;
    writer.write_all(b"\n").map_err(io)?;
    for rec in &capture.records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n").map_err(io)?;
    }
    writer.flush().map_err(io)
}

pub fn write_capture(capture: &CaptureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_capture_to(capture, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

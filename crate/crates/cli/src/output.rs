use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use novo_core::capture::{read_capture, validate, CaptureSet, ModelGeometry};
use novo_core::report::{csv_string, to_report_json};
use novo_core::selection::{Direction, VoterSet};
use serde::Serialize;

pub const REPORT_FORMAT: &str = "novo-report";
pub const REPORT_VERSION: u32 = 1;

/// Reads and fully validates a capture.
pub fn load_capture(path: &Path) -> Result<CaptureSet> {
    let capture = read_capture(path).with_context(|| format!("reading {}", path.display()))?;
    let violations = validate(&capture);
    if !violations.is_empty() {
        return Err(novo_core::Error::Invalid(violations)).with_context(|| format!("validating {}", path.display()));
    }
    Ok(capture)
}

pub fn load_voters(path: &Path) -> Result<VoterSet> {
    VoterSet::read(path).with_context(|| format!("reading voter set {}", path.display()))
}

/// Writes `body` to `out`, or to stdout when no path is given.
pub fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

/// The one-line summary goes to stdout, unless stdout already carries the report.
pub fn summary(out: Option<&Path>, line: &str) {
    if out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn header_line(command: &str, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("# {REPORT_FORMAT} v{REPORT_VERSION} {command} seed={s}\n"),
        None => format!("# {REPORT_FORMAT} v{REPORT_VERSION} {command}\n"),
    }
}

/// CSV preceded by a `#` comment line naming the command and seed.
pub fn csv_report(command: &str, seed: Option<u64>, header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    Ok(header_line(command, seed) + &csv_string(header, rows)?)
}

pub fn prefixed_csv(command: &str, seed: Option<u64>, csv: String) -> String {
    header_line(command, seed) + &csv
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    format: &'a str,
    version: u32,
    command: &'a str,
    seed: Option<u64>,
    result: &'a T,
}

/// Report JSON with floats rounded to 6 significant digits.
pub fn json_report<T: Serialize>(command: &str, seed: Option<u64>, result: &T) -> Result<String> {
    Ok(to_report_json(&Envelope {
        format: REPORT_FORMAT,
        version: REPORT_VERSION,
        command,
        seed,
        result,
    })?)
}

pub fn is_csv(path: Option<&Path>) -> bool {
    path.and_then(|p| p.extension()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// `layer`, `index`, `direction` columns for a flat head index.
pub fn head_cols(geometry: &ModelGeometry, head: usize, direction: Direction) -> [String; 4] {
    let (l, h) = geometry.layer_head(head);
    let dir = match direction {
        Direction::Max => "max",
        Direction::Min => "min",
    };
    [head.to_string(), l.to_string(), h.to_string(), dir.to_string()]
}

pub fn head_label(geometry: &ModelGeometry, head: usize) -> String {
    let (l, h) = geometry.layer_head(head);
    format!("L{l}H{h}")
}

//! Report serialisation. Report numbers are rounded to 6 significant digits
//! so reruns produce byte-identical files; capture files are never rounded.

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;
use crate::voting::EvaluationReport;

/// `x` rounded to 6 significant digits.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

pub fn fmt6(x: f64) -> String {
    format!("{}", sig6(x))
}

pub fn fmt6_opt(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(sig6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with every non-integer number rounded by [`sig6`].
pub fn to_report_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// CSV text from a header and string rows.
pub fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| crate::error::Error::Config(format!("csv: {e}"));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per prediction: `sample_id,gold,predicted,correct,category`.
pub fn report_csv(report: &EvaluationReport) -> Result<String> {
    csv_string(
        &["sample_id", "gold", "predicted", "correct", "category"],
        report.predictions.iter().map(|p| {
            vec![
                p.sample_id.clone(),
                p.gold_index.to_string(),
                p.predicted_index.to_string(),
                u8::from(p.is_correct()).to_string(),
                p.category.clone().unwrap_or_default(),
            ]
        }),
    )
}

/// Per-category accuracy table: `category,n_samples,n_correct,accuracy`.
pub fn category_csv(report: &EvaluationReport) -> Result<String> {
    let rows = report
        .per_category
        .iter()
        .flatten()
        .map(|(cat, a)| vec![cat.clone(), a.n_samples.to_string(), a.n_correct.to_string(), fmt6(a.accuracy)])
        .chain(std::iter::once(vec![
            "overall".to_string(),
            report.n_samples.to_string(),
            report.n_correct.to_string(),
            fmt6(report.accuracy),
        ]));
    csv_string(&["category", "n_samples", "n_correct", "accuracy"], rows)
}

//! JSON-lines prediction logs, one [`ClassificationRecord`] per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{argmax, ClassificationRecord, ScoreVector};
use crate::error::{Error, IoContext, Result};

/// Logs produced by other frameworks often carry single-precision
/// probabilities, so the sum check is looser than for internal vectors.
const LOG_SUM_TOL: f64 = 1e-6;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LogLine {
    image_id: String,
    true_label: usize,
    predicted_label: usize,
    scores: Vec<f64>,
    model_id: String,
}

pub fn write_prediction_log(records: &[ClassificationRecord], out: impl Write) -> Result<()> {
    let mut out = BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(serde_json::Error::io)?;
    }
    out.flush().map_err(serde_json::Error::io)?;
    Ok(())
}

pub fn save_prediction_log(records: &[ClassificationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).at(path)?;
    write_prediction_log(records, file)
}

/// Parses log text. The class count comes from `num_classes` or, when
/// absent, from the first record.
pub fn parse_prediction_log(
    text: &str,
    num_classes: Option<usize>,
) -> Result<Vec<ClassificationRecord>> {
    let mut classes = num_classes;
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema { line, message };
        let rec: LogLine = serde_json::from_str(raw).map_err(|e| schema(e.to_string()))?;
        let c = *classes.get_or_insert(rec.scores.len());
        if rec.scores.len() != c {
            return Err(schema(format!(
                "expected {c} scores, found {}",
                rec.scores.len()
            )));
        }
        if rec.true_label >= c || rec.predicted_label >= c {
            return Err(schema(format!("label out of range for {c} classes")));
        }
        let best = argmax(&rec.scores);
        let scores = ScoreVector::with_tolerance(rec.scores, LOG_SUM_TOL)
            .map_err(|e| schema(e.to_string()))?;
        if best != rec.predicted_label {
            return Err(Error::Inconsistent {
                line,
                predicted: rec.predicted_label,
                argmax: best,
            });
        }
        records.push(ClassificationRecord {
            image_id: rec.image_id,
            true_label: rec.true_label,
            predicted_label: rec.predicted_label,
            scores,
            model_id: rec.model_id,
        });
    }
    Ok(records)
}

pub fn load_prediction_log(
    path: impl AsRef<Path>,
    num_classes: Option<usize>,
) -> Result<Vec<ClassificationRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    parse_prediction_log(&text, num_classes)
}

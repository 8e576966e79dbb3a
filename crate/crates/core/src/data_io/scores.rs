use std::fmt::Write as _;
use std::path::Path;

use super::{read_file, write_file};
use crate::metrics::{ScoredPrediction, ScoresKind};
use crate::{MisdError, Result};

pub const CLASSIFIED_HEADER: &str = "confidence,predicted,label";
pub const BINARY_HEADER: &str = "confidence,correct";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoresFile {
    pub kind: ScoresKind,
    pub predictions: Vec<ScoredPrediction>,
}

pub fn scores_to_string(scores: &ScoresFile) -> Result<String> {
    let mut out = String::new();
    match scores.kind {
        ScoresKind::Classified => {
            out.push_str(CLASSIFIED_HEADER);
            out.push('\n');
            for p in &scores.predictions {
                let (Some(pred), Some(label)) = (p.predicted, p.label) else {
                    return Err(MisdError::Data("classified scores need predicted and true classes".into()));
                };
                writeln!(out, "{},{},{}", p.confidence, pred, label).expect("string write");
            }
        }
        ScoresKind::Binary => {
            out.push_str(BINARY_HEADER);
            out.push('\n');
            for p in &scores.predictions {
                writeln!(out, "{},{}", p.confidence, p.correct as u8).expect("string write");
            }
        }
    }
    Ok(out)
}

fn parse_confidence(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| MisdError::Parse { line, message: format!("confidence `{field}` is not a number") })?;
    if !(v > 0.0 && v <= 1.0) {
        return Err(MisdError::Parse { line, message: format!("confidence {v} outside (0, 1]") });
    }
    Ok(v)
}

fn parse_class(field: &str, what: &str, line: usize) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| MisdError::Parse { line, message: format!("{what} `{field}` is not a class index") })
}

pub fn parse_scores(text: &str) -> Result<ScoresFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let Some((_, header)) = lines.next() else {
        return Err(MisdError::Parse { line: 1, message: "empty scores file, expected a header".into() });
    };
    let kind = match header.trim() {
        CLASSIFIED_HEADER => ScoresKind::Classified,
        BINARY_HEADER => ScoresKind::Binary,
        other => {
            return Err(MisdError::Parse {
                line: 1,
                message: format!("header `{other}` is neither `{CLASSIFIED_HEADER}` nor `{BINARY_HEADER}`"),
            })
        }
    };
    let width = if kind == ScoresKind::Classified { 3 } else { 2 };
    let mut predictions = Vec::new();
    let mut last_line = 1;
    for (line, raw) in lines {
        last_line = line;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != width {
            return Err(MisdError::Parse { line, message: format!("expected {width} fields, found {}", fields.len()) });
        }
        let confidence = parse_confidence(fields[0], line)?;
        predictions.push(match kind {
            ScoresKind::Classified => ScoredPrediction::classified(
                confidence,
                parse_class(fields[1], "predicted", line)?,
                parse_class(fields[2], "label", line)?,
            ),
            ScoresKind::Binary => {
                let correct = match fields[1].trim() {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(MisdError::Parse { line, message: format!("correct flag `{other}` is not 0 or 1") })
                    }
                };
                ScoredPrediction::binary(confidence, correct)
            }
        });
    }
    if predictions.is_empty() {
        return Err(MisdError::Parse { line: last_line + 1, message: "no score rows".into() });
    }
    Ok(ScoresFile { kind, predictions })
}

pub fn write_scores(path: &Path, scores: &ScoresFile) -> Result<()> {
    write_file(path, scores_to_string(scores)?.as_bytes())
}

pub fn read_scores(path: &Path) -> Result<ScoresFile> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| MisdError::Parse { line: 1, message: "not UTF-8 text".into() })?;
    parse_scores(&text)
}

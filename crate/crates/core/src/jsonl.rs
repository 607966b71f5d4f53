//! Newline-delimited JSON interchange for preference triplets.
//!
//! One object per line:
//! `{"id": "...", "features": [..], "factual": [..], "stylized": [..], "style": "humor"}`.
//! Caption arrays hold token ids including the trailing EOS (id 0).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Caption, ImageFeatures, PreferenceTriplet, Style};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    features: Vec<f64>,
    factual: Vec<usize>,
    stylized: Vec<usize>,
    style: String,
}

impl From<&PreferenceTriplet> for Record {
    fn from(t: &PreferenceTriplet) -> Self {
        Record {
            id: t.example_id.clone(),
            features: t.image.0.clone(),
            factual: t.factual.ids().to_vec(),
            stylized: t.stylized.ids().to_vec(),
            style: t.style.as_str().to_owned(),
        }
    }
}

fn schema(field: &str, err: impl std::fmt::Display) -> Error {
    Error::Schema {
        field: field.to_owned(),
        message: err.to_string(),
    }
}

impl TryFrom<Record> for PreferenceTriplet {
    type Error = Error;

    fn try_from(r: Record) -> Result<Self> {
        let style: Style = r.style.parse()?;
        if style == Style::Factual {
            return Err(schema("style", "a triplet's style must be non-factual"));
        }
        if r.features.is_empty() || r.features.iter().any(|v| !v.is_finite()) {
            return Err(schema("features", "features must be a non-empty list of finite numbers"));
        }
        Ok(PreferenceTriplet {
            example_id: r.id,
            image: ImageFeatures(r.features),
            factual: Caption::from_ids(r.factual).map_err(|e| schema("factual", e))?,
            stylized: Caption::from_ids(r.stylized).map_err(|e| schema("stylized", e))?,
            style,
        })
    }
}

/// Serialize one triplet as a single JSON line (no newline).
pub fn to_line(t: &PreferenceTriplet) -> String {
    serde_json::to_string(&Record::from(t)).expect("record serializes")
}

pub fn write_jsonl(triplets: &[PreferenceTriplet], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in triplets {
        writeln!(w, "{}", to_line(t)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse JSONL text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<PreferenceTriplet>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let triplet = PreferenceTriplet::try_from(record).map_err(|e| match e {
            Error::Schema { field, message } => Error::Schema {
                field,
                message: format!("line {}: {message}", i + 1),
            },
            other => other,
        })?;
        out.push(triplet);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PreferenceTriplet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{synthesize_dataset, WorldConfig};

    fn sample(n: usize) -> Vec<PreferenceTriplet> {
        let cfg = WorldConfig {
            n_examples: n,
            ..WorldConfig::default()
        };
        synthesize_dataset(&cfg, 4).unwrap()
    }

    #[test]
    fn write_then_read_is_identity() {
        let data = sample(8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_jsonl(&data, &path).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), data);
    }

    #[test]
    fn truncated_line_is_reported_by_number() {
        let data = sample(4);
        let mut lines: Vec<String> = data.iter().map(to_line).collect();
        let cut = lines[2].len() / 2;
        lines[2].truncate(cut);
        let err = parse_jsonl(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().starts_with("line 3:"));
    }

    #[test]
    fn unknown_style_is_a_schema_error() {
        let line = to_line(&sample(1)[0]).replace("\"humor\"", "\"noir\"");
        match parse_jsonl(&line).unwrap_err() {
            Error::Schema { field, .. } => assert_eq!(field, "style"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn caption_without_eos_names_the_field() {
        let line = r#"{"id":"a","features":[0.5],"factual":[1,2,3],"stylized":[1,30,0],"style":"humor"}"#;
        match parse_jsonl(line).unwrap_err() {
            Error::Schema { field, .. } => assert_eq!(field, "factual"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn no_trailing_newline_needed() {
        let data = sample(2);
        let text = format!("{}\n{}", to_line(&data[0]), to_line(&data[1]));
        assert_eq!(parse_jsonl(&text).unwrap(), data);
    }
}

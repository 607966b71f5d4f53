//! WR-LogP, Style-Acc and the per-method report row.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::captioner::{DecodeConfig, TinyCaptioner};
use crate::classifier::StyleClassifier;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::world::{PreferenceTriplet, Style};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ZeroShot,
    Sft,
    Simpo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ZeroShot => "zero_shot",
            Method::Sft => "sft",
            Method::Simpo => "simpo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_shot" | "zero-shot" => Ok(Method::ZeroShot),
            "sft" => Ok(Method::Sft),
            "simpo" => Ok(Method::Simpo),
            other => Err(Error::Schema {
                field: "method".into(),
                message: format!("unknown method {other:?}"),
            }),
        }
    }
}

/// Percentage of pairs whose first score strictly exceeds the second.
pub fn win_rate(stylized: &[f64], factual: &[f64]) -> Result<f64> {
    if stylized.is_empty() || stylized.len() != factual.len() {
        return Err(Error::contract("win_rate needs equally many non-zero scores"));
    }
    let wins = stylized.iter().zip(factual).filter(|(w, l)| w > l).count();
    Ok(100.0 * wins as f64 / stylized.len() as f64)
}

/// Percentage of test triplets where the stylized caption's normalized
/// log-probability exceeds the factual one's. Ties are losses.
pub fn wr_logp(model: &TinyCaptioner, test: &[PreferenceTriplet], instruction: Option<Style>) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::contract("wr_logp needs a non-empty test set"));
    }
    let chunk = 32;
    let scored: Vec<(Vec<f64>, Vec<f64>)> = test
        .par_chunks(chunk)
        .map(|part| {
            let w = model.normalized_logprobs(part.iter().map(|t| (&t.image, &t.stylized)), instruction)?;
            let l = model.normalized_logprobs(part.iter().map(|t| (&t.image, &t.factual)), instruction)?;
            Ok((w, l))
        })
        .collect::<Result<_>>()?;
    let (w, l): (Vec<f64>, Vec<f64>) = scored
        .into_iter()
        .flat_map(|(w, l)| w.into_iter().zip(l))
        .unzip();
    win_rate(&w, &l)
}

/// Generate one caption per test image under the target-style instruction
/// and report the percentage the classifier labels as that style.
pub fn style_acc(
    model: &TinyCaptioner,
    classifier: &StyleClassifier,
    test: &[PreferenceTriplet],
    decode: &DecodeConfig,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::contract("style_acc needs a non-empty test set"));
    }
    decode.validate()?;
    let positives: Vec<bool> = test
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let caption = model.generate(&t.image, Some(t.style), decode, derive_seed(&[decode.seed, i as u64]))?;
            classifier.classify(&t.image, &caption).map(|(_, label)| label)
        })
        .collect::<Result<_>>()?;
    let hits = positives.iter().filter(|&&p| p).count();
    Ok(100.0 * hits as f64 / test.len() as f64)
}

/// One row of the method comparison table. Percentages are stored at one
/// decimal place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub dataset: String,
    pub wr_logp: f64,
    pub style_acc: f64,
    pub n_test: usize,
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn make_report(method: Method, dataset: &str, wr: f64, acc: f64, n_test: usize) -> Result<EvalReport> {
    for (name, v) in [("wr_logp", wr), ("style_acc", acc)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::contract(format!("{name} {v} outside [0, 100]")));
        }
    }
    if dataset.contains([',', '\n', '"']) {
        return Err(Error::contract("dataset tag may not contain commas, quotes or newlines"));
    }
    Ok(EvalReport {
        method,
        dataset: dataset.to_owned(),
        wr_logp: round1(wr),
        style_acc: round1(acc),
        n_test,
    })
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "method,dataset,wr_logp,style_acc,n_test";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.1},{:.1},{}",
            self.method, self.dataset, self.wr_logp, self.style_acc, self.n_test
        )
    }

    pub fn to_csv(reports: &[EvalReport]) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Vec<EvalReport>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == Self::CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header {:?}", Self::CSV_HEADER),
                })
            }
        }
        lines
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, line)| {
                let parse_err = |m: String| Error::Parse { line: i + 1, message: m };
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    return Err(parse_err(format!("expected 5 fields, found {}", f.len())));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(e.to_string()));
                make_report(
                    f[0].parse()?,
                    f[1],
                    num(f[2])?,
                    num(f[3])?,
                    f[4].parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                )
            })
            .collect()
    }
}

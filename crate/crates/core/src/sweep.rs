//! Data-budget sweeps: train one model per (budget, subset seed) cell,
//! evaluate it, and locate the budget where the curve saturates.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::captioner::{DecodeConfig, ModelConfig, TinyCaptioner};
use crate::classifier::StyleClassifier;
use crate::error::{Error, Result};
use crate::eval::{style_acc, wr_logp};
use crate::plot;
use crate::rng::derive_seed;
use crate::trainer::{target_style, train_with_stream, StopReason, TrainConfig};
use crate::world::{budget_count, truncate_train, DatasetSplits};

const CELL_STREAM: u64 = 0x4345_4c4c;

pub const DEFAULT_GRID: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 25.0, 50.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Budget percentages, strictly increasing, ending at 100.
    pub grid: Vec<f64>,
    /// At most three subset seeds.
    pub subset_seeds: Vec<u64>,
    pub epsilon: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID.to_vec(),
            subset_seeds: vec![0, 1, 2],
            epsilon: 0.05,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid.is_empty() || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("budget grid {:?} must be strictly increasing", self.grid));
        }
        if self.grid.iter().any(|&b| !(b > 0.0 && b <= 100.0)) {
            return bad(format!("budget grid {:?} has entries outside (0, 100]", self.grid));
        }
        if !self.grid.contains(&100.0) {
            return bad("budget grid must contain 100".into());
        }
        if self.subset_seeds.is_empty() || self.subset_seeds.len() > 3 {
            return bad(format!("need 1 to 3 subset seeds, got {}", self.subset_seeds.len()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} must be in [0, 1)", self.epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget_percent: f64,
    pub subset_seed: u64,
    pub wr_logp: f64,
    pub style_acc: f64,
    pub train_size: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetMean {
    pub budget_percent: f64,
    pub wr_logp: f64,
    pub style_acc: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<CurvePoint>,
    pub means: Vec<BudgetMean>,
    /// Smallest budget whose mean WR-LogP is within epsilon of the best.
    pub saturation_budget: f64,
    pub epsilon: f64,
    pub fingerprint: String,
}

/// Everything held fixed across the cells of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    pub splits: &'a DatasetSplits,
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub classifier: &'a StyleClassifier,
    pub decode: &'a DecodeConfig,
}

/// Smallest budget whose metric is at least `(1 − epsilon) · max`.
pub fn detect_saturation(curve: &[(f64, f64)], epsilon: f64) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::contract("saturation needs at least one budget"));
    }
    let best = curve.iter().map(|&(_, m)| m).fold(f64::NEG_INFINITY, f64::max);
    let threshold = (1.0 - epsilon) * best;
    let mut sorted = curve.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(sorted
        .into_iter()
        .find(|&(_, m)| m >= threshold)
        .map(|(b, _)| b)
        .expect("the maximum always clears its own threshold"))
}

/// SHA-256 of a canonical JSON rendering.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("fingerprint input serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Batch-order stream for one cell, keyed by (subset seed, budget).
pub fn cell_stream(subset_seed: u64, budget_percent: f64) -> u64 {
    derive_seed(&[CELL_STREAM, subset_seed, budget_percent.to_bits()])
}

fn run_cell(setup: &SweepSetup<'_>, budget: f64, seed: u64) -> Result<CurvePoint> {
    let train = truncate_train(&setup.splits.train, budget, seed)?;
    let train_size = train.len();
    let cell = DatasetSplits {
        train,
        validation: setup.splits.validation.clone(),
        test: Vec::new(),
        split_seed: setup.splits.split_seed,
    };
    let config = TrainConfig {
        subset_seed: seed,
        ..setup.train.clone()
    };
    let init = TinyCaptioner::new(setup.model.clone())?;
    let outcome = train_with_stream(&init, &cell, &config, cell_stream(seed, budget))?;
    let instruction = Some(target_style(&setup.splits.test)?);
    let wr = wr_logp(&outcome.model, &setup.splits.test, instruction)?;
    let acc = style_acc(&outcome.model, setup.classifier, &setup.splits.test, setup.decode)?;
    log::info!(
        "budget {budget}% seed {seed}: n={train_size} wr_logp={wr:.1} style_acc={acc:.1} ({})",
        outcome.history.stop_reason.as_str()
    );
    Ok(CurvePoint {
        budget_percent: budget,
        subset_seed: seed,
        wr_logp: wr,
        style_acc: acc,
        train_size,
        stop_reason: outcome.history.stop_reason,
    })
}

/// Train and evaluate every (budget, seed) cell on up to `jobs` threads.
/// The report does not depend on `jobs`.
pub fn run_sweep(setup: &SweepSetup<'_>, sweep: &SweepConfig, fingerprint: String, jobs: usize) -> Result<SweepReport> {
    sweep.validate()?;
    if setup.splits.test.is_empty() {
        return Err(Error::contract("sweep needs a non-empty test split"));
    }
    let cells: Vec<(f64, u64)> = sweep
        .grid
        .iter()
        .flat_map(|&b| sweep.subset_seeds.iter().map(move |&s| (b, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let points = pool.install(|| {
        cells
            .par_iter()
            .map(|&(budget, seed)| {
                run_cell(setup, budget, seed).map_err(|e| Error::Cell {
                    budget,
                    seed,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    SweepReport::from_points(points, sweep.epsilon, fingerprint)
}

impl SweepReport {
    /// Aggregate per-budget means and the saturation budget. Points are
    /// ordered by (budget, seed).
    pub fn from_points(mut points: Vec<CurvePoint>, epsilon: f64, fingerprint: String) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("a sweep report needs at least one point"));
        }
        points.sort_by(|a, b| {
            a.budget_percent
                .total_cmp(&b.budget_percent)
                .then(a.subset_seed.cmp(&b.subset_seed))
        });
        let mut groups: BTreeMap<u64, Vec<&CurvePoint>> = BTreeMap::new();
        for p in &points {
            // Positive floats order like their bit patterns.
            groups.entry(p.budget_percent.to_bits()).or_default().push(p);
        }
        let means: Vec<BudgetMean> = groups
            .values()
            .map(|g| {
                let n = g.len() as f64;
                BudgetMean {
                    budget_percent: g[0].budget_percent,
                    wr_logp: g.iter().map(|p| p.wr_logp).sum::<f64>() / n,
                    style_acc: g.iter().map(|p| p.style_acc).sum::<f64>() / n,
                    n_seeds: g.len(),
                }
            })
            .collect();
        let curve: Vec<(f64, f64)> = means.iter().map(|m| (m.budget_percent, m.wr_logp)).collect();
        let saturation_budget = detect_saturation(&curve, epsilon)?;
        Ok(Self {
            points,
            means,
            saturation_budget,
            epsilon,
            fingerprint,
        })
    }

    pub const CSV_HEADER: [&'static str; 6] =
        ["budget_percent", "subset_seed", "wr_logp", "style_acc", "train_size", "stop_reason"];

    /// Curve points as CSV; floats use shortest round-trip form.
    pub fn curve_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER).expect("in-memory write");
        for p in &self.points {
            w.write_record([
                p.budget_percent.to_string(),
                p.subset_seed.to_string(),
                p.wr_logp.to_string(),
                p.style_acc.to_string(),
                p.train_size.to_string(),
                p.stop_reason.as_str().to_owned(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn curve_svg(&self) -> String {
        plot::render_curve(self)
    }

    /// Write `curve.csv` and `curve.svg` into `out_dir`.
    pub fn emit(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        for (name, body) in [("curve.csv", self.curve_csv()), ("curve.svg", self.curve_svg())] {
            let path = out_dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Parse `curve.csv` back into points.
pub fn parse_curve_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.iter().ne(SweepReport::CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", SweepReport::CSV_HEADER.join(",")),
        });
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e: csv::Error| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Write the sweep report to `out_dir`.
pub fn emit_report(report: &SweepReport, out_dir: &Path) -> Result<()> {
    report.emit(out_dir)
}

/// Expected training-set size for a budget, for auditing points.
pub fn expected_train_size(budget_percent: f64, n_train: usize) -> usize {
    budget_count(budget_percent, n_train)
}

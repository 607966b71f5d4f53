//! Subcommand implementations. Every command is a pure function of its
//! config, flags and input files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stylealign::captioner::TinyCaptioner;
use stylealign::classifier::{classifier_metrics, labeled_pairs, predict, train_classifier, ClassifierMetrics, StyleClassifier};
use stylealign::eval::{make_report, style_acc, wr_logp, EvalReport, Method};
use stylealign::jsonl::{read_jsonl, write_jsonl};
use stylealign::objectives::Objective;
use stylealign::sweep::{fingerprint, parse_curve_csv, run_sweep, SweepReport, SweepSetup};
use stylealign::trainer::train;
use stylealign::world::{split_dataset, synthesize_dataset, DatasetSplits};
use stylealign::{Error, Result};

use crate::config::RunConfig;

pub const SWEEP_CONFIG_FILE: &str = "sweep_config.json";

/// Where the triplets come from: a JSONL file or the configured world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic { seed: u64 },
    Jsonl { sha256: String },
}

/// Provenance written next to a sweep's curve files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepProvenance {
    pub fingerprint: String,
    pub data: DataSource,
    pub config: RunConfig,
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, body).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

/// Load triplets and split them per the config.
pub fn load_splits(cfg: &RunConfig, data: Option<&Path>, seed: Option<u64>) -> Result<(DatasetSplits, DataSource)> {
    let (triplets, source) = match data {
        Some(path) => {
            let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
            let digest = fingerprint(&String::from_utf8_lossy(&bytes));
            (read_jsonl(path)?, DataSource::Jsonl { sha256: digest })
        }
        None => {
            let seed = seed.unwrap_or(cfg.world.seed);
            (synthesize_dataset(&cfg.world, seed)?, DataSource::Synthetic { seed })
        }
    };
    Ok((split_dataset(&triplets, cfg.splits.sizes(), cfg.splits.split_seed)?, source))
}

pub fn gen_data(cfg: &RunConfig, seed: Option<u64>, out: &Path) -> Result<usize> {
    let triplets = synthesize_dataset(&cfg.world, seed.unwrap_or(cfg.world.seed))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_jsonl(&triplets, out)?;
    log::info!("wrote {} triplets to {}", triplets.len(), out.display());
    Ok(triplets.len())
}

fn initial_model(cfg: &RunConfig) -> Result<TinyCaptioner> {
    TinyCaptioner::new(cfg.model.clone())
}

/// Train one captioner; writes `model.json` and `history.csv` into `out`.
pub fn train_model(cfg: &RunConfig, splits: &DatasetSplits, objective: Objective, out: &Path) -> Result<()> {
    let outcome = train(&initial_model(cfg)?, splits, &cfg.train_config(objective))?;
    let h = &outcome.history;
    log::info!(
        "{}: best step {} val loss {:.6} ({})",
        objective.as_str(),
        h.best_step,
        h.best_val_loss,
        h.stop_reason.as_str()
    );
    create_dir(out)?;
    outcome.model.save(&out.join("model.json"))?;
    h.write_csv(&out.join("history.csv"))
}

fn fit_classifier(cfg: &RunConfig, splits: &DatasetSplits) -> Result<StyleClassifier> {
    let style = cfg.world.style;
    let (clf, history) = train_classifier(
        &labeled_pairs(&splits.train),
        &labeled_pairs(&splits.validation),
        style,
        &cfg.classifier,
    )?;
    log::info!("classifier best epoch {}", history.best_epoch);
    Ok(clf)
}

fn test_metrics(clf: &StyleClassifier, splits: &DatasetSplits) -> Result<ClassifierMetrics> {
    let pairs = labeled_pairs(&splits.test);
    let labels: Vec<bool> = pairs.iter().map(|p| p.label).collect();
    classifier_metrics(&predict(clf, &pairs)?, &labels)
}

/// Train the style classifier; writes `classifier.json` and `metrics.csv`.
pub fn train_style_classifier(cfg: &RunConfig, splits: &DatasetSplits, out: &Path) -> Result<ClassifierMetrics> {
    let clf = fit_classifier(cfg, splits)?;
    let metrics = test_metrics(&clf, splits)?;
    log::info!("classifier test accuracy {:.1}", metrics.accuracy);
    create_dir(out)?;
    clf.save(&out.join("classifier.json"))?;
    write(
        &out.join("metrics.csv"),
        &format!("{}\n{}\n", ClassifierMetrics::CSV_HEADER, metrics.csv_row(&cfg.dataset)),
    )?;
    Ok(metrics)
}

fn classifier_for(cfg: &RunConfig, splits: &DatasetSplits, path: Option<&Path>) -> Result<StyleClassifier> {
    match path {
        Some(p) => StyleClassifier::load(p),
        None => fit_classifier(cfg, splits),
    }
}

/// Evaluate a checkpoint (or the untrained model) on the test split.
pub fn evaluate(
    cfg: &RunConfig,
    splits: &DatasetSplits,
    method: Method,
    model: Option<&Path>,
    classifier: Option<&Path>,
    out: &Path,
) -> Result<EvalReport> {
    let model = match model {
        Some(p) => TinyCaptioner::load(p)?,
        None => initial_model(cfg)?,
    };
    let clf = classifier_for(cfg, splits, classifier)?;
    let style = Some(cfg.world.style);
    let wr = wr_logp(&model, &splits.test, style)?;
    let acc = style_acc(&model, &clf, &splits.test, &cfg.eval)?;
    let report = make_report(method, &cfg.dataset, wr, acc, splits.test.len())?;
    log::info!("{}: wr_logp {:.1} style_acc {:.1}", method.as_str(), report.wr_logp, report.style_acc);
    write(out, &EvalReport::to_csv(std::slice::from_ref(&report)))?;
    Ok(report)
}

/// Full data-budget sweep; writes the curve files and provenance into `out`.
pub fn sweep(
    cfg: &RunConfig,
    splits: &DatasetSplits,
    source: DataSource,
    classifier: Option<&Path>,
    jobs: usize,
    out: &Path,
) -> Result<SweepReport> {
    let clf = classifier_for(cfg, splits, classifier)?;
    let train_cfg = cfg.train_config(cfg.objective.kind);
    let provenance = SweepProvenance {
        fingerprint: String::new(),
        data: source,
        config: cfg.clone(),
    };
    let digest = fingerprint(&(&provenance.data, &provenance.config));
    let setup = SweepSetup {
        splits,
        model: &cfg.model,
        train: &train_cfg,
        classifier: &clf,
        decode: &cfg.eval,
    };
    let report = run_sweep(&setup, &cfg.sweep, digest.clone(), jobs)?;
    log::info!("saturation budget {}%", report.saturation_budget);
    report.emit(out)?;
    let provenance = SweepProvenance {
        fingerprint: digest,
        ..provenance
    };
    let mut json = serde_json::to_string_pretty(&provenance).expect("provenance serializes");
    json.push('\n');
    write(&out.join(SWEEP_CONFIG_FILE), &json)?;
    Ok(report)
}

/// Rebuild `curve.csv` and `curve.svg` from a saved sweep directory.
pub fn report(from: &Path, out: &Path) -> Result<SweepReport> {
    let read = |p: PathBuf| fs::read_to_string(&p).map_err(|source| Error::Io { path: p, source });
    let provenance: SweepProvenance = serde_json::from_str(&read(from.join(SWEEP_CONFIG_FILE))?)
        .map_err(|e| Error::Config(format!("{SWEEP_CONFIG_FILE}: {e}")))?;
    let points = parse_curve_csv(&read(from.join("curve.csv"))?)?;
    let report = SweepReport::from_points(points, provenance.config.sweep.epsilon, provenance.fingerprint)?;
    report.emit(out)?;
    Ok(report)
}

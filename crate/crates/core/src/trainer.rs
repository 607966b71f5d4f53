//! Deterministic mini-batch training with validation-loss early stopping.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::captioner::TinyCaptioner;
use crate::error::{Error, Result};
use crate::objectives::{loss_node, simpo_pair_loss, Objective, SimpoHyper};
use crate::optim::{adam_step, clip_global_norm, lr_at, OptState, Scheduler};
use crate::rng::{derive_seed, SplitMix64};
use crate::tape::Graph;
use crate::world::{DatasetSplits, PreferenceTriplet, Style};

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub scheduler: Scheduler,
    pub max_steps: usize,
    pub eval_interval: usize,
    pub patience: usize,
    pub subset_seed: u64,
    pub objective: Objective,
    pub simpo: SimpoHyper,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            scheduler: Scheduler::LinearDecay,
            max_steps: 200,
            eval_interval: 10,
            patience: 5,
            subset_seed: 0,
            objective: Objective::Sft,
            simpo: SimpoHyper::default(),
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        self.simpo.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxSteps,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::EarlyStop => "early_stop",
            StopReason::MaxSteps => "max_steps",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
    pub best_step: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    /// Sorted ids of every training example drawn into a batch.
    pub examples_seen: Vec<String>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,val_loss,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.step,
                fmt_sig9(r.train_loss),
                fmt_sig9(r.val_loss),
                fmt_sig9(r.lr)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Nine significant digits in plain decimal, scientific outside [1e-5, 1e9).
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci[sci.find('e').expect("scientific form") + 1..]
        .parse()
        .expect("integer exponent");
    if (-5..9).contains(&exp) {
        format!("{x:.prec$}", prec = (8 - exp) as usize)
    } else {
        sci
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TinyCaptioner,
    pub history: TrainHistory,
}

/// The single target style of a dataset.
pub fn target_style(data: &[PreferenceTriplet]) -> Result<Style> {
    let first = data
        .first()
        .ok_or_else(|| Error::contract("dataset is empty"))?
        .style;
    if data.iter().any(|t| t.style != first) {
        return Err(Error::contract("all triplets in a run must share one style"));
    }
    Ok(first)
}

/// Objective value over a whole dataset: pooled token NLL of the stylized
/// captions for SFT, mean pair loss for SimPO.
pub fn dataset_loss(
    model: &TinyCaptioner,
    objective: Objective,
    data: &[PreferenceTriplet],
    hyper: SimpoHyper,
    instruction: Option<Style>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("dataset_loss needs data"));
    }
    match objective {
        Objective::Sft => {
            let mut g = Graph::new();
            let p = model.bind(&mut g);
            let mark = g.len();
            let (mut total, mut tokens) = (0.0, 0usize);
            for t in data {
                let node = model.sequence_logprob_node(&mut g, &p, &t.image, &t.stylized, instruction)?;
                total += g.value(node).item();
                tokens += t.stylized.len();
                g.truncate(mark);
            }
            Ok(-total / tokens as f64)
        }
        Objective::Simpo => {
            let wins = model.normalized_logprobs(data.iter().map(|t| (&t.image, &t.stylized)), instruction)?;
            let losses = model.normalized_logprobs(data.iter().map(|t| (&t.image, &t.factual)), instruction)?;
            let sum: f64 = wins.iter().zip(&losses).map(|(&w, &l)| simpo_pair_loss(w, l, hyper)).sum();
            Ok(sum / data.len() as f64)
        }
    }
}

/// Epoch-wise shuffled batch stream; the last batch of an epoch may be short.
struct BatchStream {
    rng: SplitMix64,
    order: Vec<usize>,
    cursor: usize,
    n: usize,
    batch: usize,
}

impl BatchStream {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let order = rng.permutation(n);
        Self { rng, order, cursor: 0, n, batch }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.n {
            self.order = self.rng.permutation(self.n);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch).min(self.n);
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

/// Train with the default data stream for `config.subset_seed`.
pub fn train(model: &TinyCaptioner, splits: &DatasetSplits, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_stream(model, splits, config, derive_seed(&[SHUFFLE_STREAM, config.subset_seed]))
}

/// Train from `model` on `splits.train`, selecting the checkpoint with the
/// lowest validation loss. `stream_seed` keys batch order.
pub fn train_with_stream(
    model: &TinyCaptioner,
    splits: &DatasetSplits,
    config: &TrainConfig,
    stream_seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(Error::contract("train and validation splits must be non-empty"));
    }
    let style = target_style(&splits.train)?;
    if target_style(&splits.validation)? != style {
        return Err(Error::contract("validation style differs from training style"));
    }
    let instruction = Some(style);

    let mut current = model.clone();
    let mut opt = OptState::new(current.params());
    let mut stream = BatchStream::new(splits.train.len(), config.batch_size, stream_seed);
    let mut seen = BTreeSet::new();

    let mut records = Vec::new();
    let mut best = current.clone();
    let mut best_val = f64::INFINITY;
    let mut best_step = 0;
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxSteps;
    let mut window: Vec<f64> = Vec::new();

    let mut step = 0;
    loop {
        if step < config.max_steps {
            let idx = stream.next_batch();
            let batch: Vec<&PreferenceTriplet> = idx.iter().map(|&i| &splits.train[i]).collect();
            seen.extend(batch.iter().map(|t| t.example_id.clone()));

            let mut g = Graph::new();
            let p = current.bind(&mut g);
            let loss = loss_node(config.objective, &current, &mut g, &p, &batch, config.simpo, instruction)?;
            let loss_value = g.value(loss).item();
            let mut grads = g.backward(loss)?.collect(&p.ids);
            drop(g);

            if step == 0 {
                // Record the untrained model before the first update.
                let val = dataset_loss(&current, config.objective, &splits.validation, config.simpo, instruction)?;
                records.push(EvalRecord {
                    step: 0,
                    train_loss: loss_value,
                    val_loss: val,
                    lr: lr_at(config.scheduler, 0, config.learning_rate, config.max_steps)?,
                });
                best_val = val;
            }

            clip_global_norm(&mut grads, config.clip_norm);
            let lr = lr_at(config.scheduler, step, config.learning_rate, config.max_steps)?;
            adam_step(current.params_mut(), &grads, &mut opt, lr)?;
            window.push(loss_value);
            step += 1;
        }

        if step % config.eval_interval == 0 || step == config.max_steps {
            let val = dataset_loss(&current, config.objective, &splits.validation, config.simpo, instruction)?;
            let train_loss = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            records.push(EvalRecord {
                step,
                train_loss,
                val_loss: val,
                lr: lr_at(config.scheduler, step, config.learning_rate, config.max_steps)?,
            });
            log::debug!("step {step}: train {train_loss:.6} val {val:.6}");
            if val < best_val {
                best_val = val;
                best_step = step;
                best = current.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience.max(1) && step < config.max_steps {
                    stop_reason = StopReason::EarlyStop;
                    break;
                }
            }
        }
        if step >= config.max_steps {
            break;
        }
    }

    Ok(TrainOutcome {
        model: best,
        history: TrainHistory {
            records,
            best_step,
            best_val_loss: best_val,
            stop_reason,
            examples_seen: seen.into_iter().collect(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(4.158_883_083_359_672), "4.15888308");
        assert_eq!(fmt_sig9(1e-5), "0.0000100000000");
        assert_eq!(fmt_sig9(5e-6), "5.00000000e-6");
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(123.0), "123.000000");
    }

    #[test]
    fn batch_stream_covers_each_epoch() {
        let mut s = BatchStream::new(5, 2, 1);
        let mut epoch: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        epoch.sort_unstable();
        assert_eq!(epoch, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_batch().len(), 2);
    }

    #[test]
    fn batch_larger_than_data_takes_everything() {
        let mut s = BatchStream::new(3, 32, 1);
        assert_eq!(s.next_batch().len(), 3);
        assert_eq!(s.next_batch().len(), 3);
    }
}

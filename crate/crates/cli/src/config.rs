//! Run configuration: one JSON document carrying every numeric setting.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stylealign::captioner::{DecodeConfig, ModelConfig};
use stylealign::classifier::ClassifierConfig;
use stylealign::objectives::{Objective, SimpoHyper};
use stylealign::optim::Scheduler;
use stylealign::sweep::SweepConfig;
use stylealign::trainer::TrainConfig;
use stylealign::world::{SplitSizes, Style, WorldConfig};
use stylealign::{Error, Result};

pub const PRESETS: [&str; 4] = ["new_yorker", "flickr_humor", "flickr_romantic", "desk"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Tag written into evaluation reports.
    pub dataset: String,
    pub world: WorldConfig,
    pub splits: SplitsConfig,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub trainer: TrainerConfig,
    pub classifier: ClassifierConfig,
    pub eval: DecodeConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitsConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub split_seed: u64,
}

impl SplitsConfig {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train,
            val: self.val,
            test: self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: Objective,
    pub simpo: SimpoHyper,
}

/// Optimizer settings for one training strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub scheduler: Scheduler,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub sft: StageConfig,
    pub simpo: StageConfig,
    pub eval_interval: usize,
    pub patience: usize,
    pub subset_seed: u64,
    pub clip_norm: f64,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let paper = |dataset: &str, style, n, splits, sft_lr, sft_steps, simpo_steps, depth| {
            let mut cfg = base(dataset, style, n, splits);
            cfg.trainer.sft = StageConfig {
                learning_rate: sft_lr,
                batch_size: 16,
                scheduler: Scheduler::LinearDecay,
                max_steps: sft_steps,
            };
            cfg.trainer.simpo = StageConfig {
                learning_rate: 2e-5,
                batch_size: 32,
                scheduler: Scheduler::Cosine,
                max_steps: simpo_steps,
            };
            cfg.classifier.depth = depth;
            cfg
        };
        let ny_splits = (2340, 130, 131);
        let flickr_splits = (5400, 600, 1000);
        match name {
            "new_yorker" => Ok(paper("new_yorker", Style::Humor, 2601, ny_splits, 1.0e-5, 270, 66, 2)),
            "flickr_humor" => Ok(paper("flickr_humor", Style::Humor, 7000, flickr_splits, 1.6e-5, 600, 170, 4)),
            "flickr_romantic" => Ok(paper("flickr_romantic", Style::Romantic, 7000, flickr_splits, 0.8e-5, 600, 170, 4)),
            "desk" => Ok(base("desk_humor", Style::Humor, 2601, ny_splits)),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.classifier.validate()?;
        self.eval.validate()?;
        self.sweep.validate()?;
        self.objective.simpo.validate()?;
        for objective in [Objective::Sft, Objective::Simpo] {
            self.train_config(objective).validate()?;
        }
        let mismatch = |what: &str, a: usize, b: usize| {
            Err(Error::Config(format!("{what} disagree: {a} vs {b}")))
        };
        if self.world.vocab_size != self.model.vocab_size {
            return mismatch("world and model vocab sizes", self.world.vocab_size, self.model.vocab_size);
        }
        if self.world.vocab_size != self.classifier.vocab_size {
            return mismatch("world and classifier vocab sizes", self.world.vocab_size, self.classifier.vocab_size);
        }
        if self.world.feature_dim != self.model.feature_dim {
            return mismatch("world and model feature dims", self.world.feature_dim, self.model.feature_dim);
        }
        if self.splits.sizes().total() != self.world.n_examples {
            return mismatch("split sizes and example count", self.splits.sizes().total(), self.world.n_examples);
        }
        if self.dataset.is_empty() || self.dataset.contains([',', '\n', '"']) {
            return Err(Error::Config(format!("invalid dataset tag {:?}", self.dataset)));
        }
        Ok(())
    }

    /// Trainer settings for one objective, sharing the cadence fields.
    pub fn train_config(&self, objective: Objective) -> TrainConfig {
        let stage = match objective {
            Objective::Sft => self.trainer.sft,
            Objective::Simpo => self.trainer.simpo,
        };
        TrainConfig {
            learning_rate: stage.learning_rate,
            batch_size: stage.batch_size,
            scheduler: stage.scheduler,
            max_steps: stage.max_steps,
            eval_interval: self.trainer.eval_interval,
            patience: self.trainer.patience,
            subset_seed: self.trainer.subset_seed,
            objective,
            simpo: self.objective.simpo,
            clip_norm: self.trainer.clip_norm,
        }
    }
}

/// Desk-scale settings on a synthetic world of the given shape.
fn base(dataset: &str, style: Style, n_examples: usize, (train, val, test): (usize, usize, usize)) -> RunConfig {
    RunConfig {
        dataset: dataset.to_owned(),
        world: WorldConfig {
            n_examples,
            style,
            ..WorldConfig::default()
        },
        splits: SplitsConfig {
            train,
            val,
            test,
            split_seed: 0,
        },
        model: ModelConfig {
            zero_head: true,
            ..ModelConfig::default()
        },
        objective: ObjectiveConfig {
            kind: Objective::Simpo,
            simpo: SimpoHyper::default(),
        },
        trainer: TrainerConfig {
            sft: StageConfig {
                learning_rate: 1e-3,
                batch_size: 16,
                scheduler: Scheduler::LinearDecay,
                max_steps: 800,
            },
            simpo: StageConfig {
                learning_rate: 1e-3,
                batch_size: 32,
                scheduler: Scheduler::Cosine,
                max_steps: 200,
            },
            eval_interval: 10,
            patience: 5,
            subset_seed: 0,
            clip_norm: 1.0,
        },
        classifier: ClassifierConfig::default(),
        eval: DecodeConfig::default(),
        sweep: SweepConfig::default(),
    }
}

//! Binary style classifier over frozen joint embeddings.
//!
//! The joint embedding concatenates the raw image features with the mean of
//! per-token vectors from a fixed seeded table. Only the feedforward head is
//! trained (binary cross-entropy, Adam, best-validation checkpoint).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::optim::{adam_step, OptState};
use crate::rng::{derive_seed, SplitMix64};
use crate::tape::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::world::{Caption, ImageFeatures, PreferenceTriplet, Style};

/// Probability at or above which a caption is labeled as the target style.
pub const THRESHOLD: f64 = 0.5;
const CHECKPOINT_KIND: &str = "style_classifier";
const SHUFFLE_STREAM: u64 = 0x434c_5346;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Number of affine layers in the head: 2 or 4.
    pub depth: usize,
    pub hidden: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub embedding_seed: u64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            hidden: 64,
            max_epochs: 20,
            learning_rate: 2e-4,
            batch_size: 32,
            vocab_size: 64,
            embed_dim: 32,
            embedding_seed: 0,
            init_seed: 0,
            shuffle_seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth != 2 && self.depth != 4 {
            return Err(Error::Config(format!("classifier depth must be 2 or 4, got {}", self.depth)));
        }
        if self.hidden == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.embed_dim == 0 {
            return Err(Error::Config("classifier sizes and epochs must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("classifier learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen caption embedding table plus the pairing rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEmbedder {
    table: Tensor,
}

impl PairEmbedder {
    pub fn new(vocab_size: usize, embed_dim: usize, seed: u64) -> Self {
        Self {
            table: Tensor::randn(&[vocab_size, embed_dim], 1.0, &mut SplitMix64::new(seed)),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.table.last_dim()
    }

    /// `[image features ‖ mean token vector]`; EOS is pooled like any token.
    pub fn embed_pair(&self, image: &ImageFeatures, caption: &Caption) -> Result<Vec<f64>> {
        let d = self.embed_dim();
        let mut pooled = vec![0.0; d];
        for &tok in caption.ids() {
            if tok >= self.table.rows() {
                return Err(Error::Range(format!(
                    "token id {tok} outside the {}-token embedding table",
                    self.table.rows()
                )));
            }
            for (acc, v) in pooled.iter_mut().zip(self.table.row(tok)) {
                *acc += v;
            }
        }
        let n = caption.len() as f64;
        let mut joint = image.0.clone();
        joint.extend(pooled.into_iter().map(|v| v / n));
        Ok(joint)
    }
}

/// Feedforward head: affine layers with GELU between them, sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// Alternating weight `[in, out]` and bias `[out]` tensors.
    params: Vec<Tensor>,
}

impl ClassifierHead {
    pub fn layer_dims(input: usize, hidden: usize, depth: usize) -> Vec<(usize, usize)> {
        (0..depth)
            .map(|l| {
                let i = if l == 0 { input } else { hidden };
                let o = if l + 1 == depth { 1 } else { hidden };
                (i, o)
            })
            .collect()
    }

    fn specs(input: usize, hidden: usize, depth: usize) -> Vec<(String, Vec<usize>)> {
        Self::layer_dims(input, hidden, depth)
            .into_iter()
            .enumerate()
            .flat_map(|(l, (i, o))| [(format!("layer{l}.w"), vec![i, o]), (format!("layer{l}.b"), vec![o])])
            .collect()
    }

    /// Fan-in scaled Gaussian weights, zero biases.
    pub fn new(input: usize, hidden: usize, depth: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let params = Self::layer_dims(input, hidden, depth)
            .into_iter()
            .flat_map(|(i, o)| {
                let w = Tensor::randn(&[i, o], 1.0 / (i as f64).sqrt(), &mut rng);
                [w, Tensor::zeros(&[o])]
            })
            .collect();
        Self { params }
    }

    pub fn from_params(params: Vec<Tensor>) -> Result<Self> {
        if params.len() < 4 || !params.len().is_multiple_of(2) {
            return Err(Error::contract("classifier head needs weight/bias pairs for 2 or 4 layers"));
        }
        Ok(Self { params })
    }

    pub fn depth(&self) -> usize {
        self.params.len() / 2
    }

    pub fn input_width(&self) -> usize {
        self.params[0].shape()[0]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Logits `[B, 1]` for a batch `x: [B, input]`.
    pub fn logits_node(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let depth = self.depth();
        for l in 0..depth {
            h = g.linear(h, ids[2 * l], ids[2 * l + 1])?;
            if l + 1 < depth {
                h = g.gelu(h)?;
            }
        }
        Ok(h)
    }

    pub fn logit(&self, joint: &[f64]) -> Result<f64> {
        if joint.len() != self.input_width() {
            return Err(Error::contract(format!(
                "joint embedding width {} does not match head input {}",
                joint.len(),
                self.input_width()
            )));
        }
        let mut g = Graph::new();
        let ids: Vec<NodeId> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let x = g.constant(Tensor::new(vec![1, joint.len()], joint.to_vec())?);
        let z = self.logits_node(&mut g, &ids, x)?;
        Ok(g.value(z).item())
    }

    /// `(sigmoid(logit), probability >= 0.5)`.
    pub fn classify(&self, joint: &[f64]) -> Result<(f64, bool)> {
        let p = crate::ops::sigmoid_scalar(self.logit(joint)?);
        Ok((p, p >= THRESHOLD))
    }
}

/// Binary cross-entropy of a predicted probability.
pub fn bce(probability: f64, label: bool) -> f64 {
    if label {
        -probability.ln()
    } else {
        -(1.0 - probability).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub image: ImageFeatures,
    pub caption: Caption,
    /// True when the caption is in the target style.
    pub label: bool,
}

/// Factual captions labeled 0, stylized captions labeled 1.
pub fn labeled_pairs(triplets: &[PreferenceTriplet]) -> Vec<LabeledPair> {
    triplets
        .iter()
        .flat_map(|t| {
            [
                LabeledPair { image: t.image.clone(), caption: t.factual.clone(), label: false },
                LabeledPair { image: t.image.clone(), caption: t.stylized.clone(), label: true },
            ]
        })
        .collect()
}

/// A trained head together with its frozen embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleClassifier {
    pub config: ClassifierConfig,
    pub style: Style,
    pub embedder: PairEmbedder,
    pub head: ClassifierHead,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredConfig {
    style: Style,
    feature_dim: usize,
    classifier: ClassifierConfig,
}

impl StyleClassifier {
    pub fn classify(&self, image: &ImageFeatures, caption: &Caption) -> Result<(f64, bool)> {
        self.head.classify(&self.embedder.embed_pair(image, caption)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let stored = StoredConfig {
            style: self.style,
            feature_dim: self.head.input_width() - self.embedder.embed_dim(),
            classifier: self.config.clone(),
        };
        let specs = ClassifierHead::specs(self.head.input_width(), self.config.hidden, self.config.depth);
        let names: Vec<String> = specs.into_iter().map(|(n, _)| n).collect();
        Checkpoint::new(CHECKPOINT_KIND, &stored, &names, self.head.params())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let stored: StoredConfig = ckpt.config()?;
        let c = stored.classifier;
        c.validate()?;
        let specs = ClassifierHead::specs(stored.feature_dim + c.embed_dim, c.hidden, c.depth);
        let head = ClassifierHead::from_params(ckpt.tensors(&specs)?)?;
        Ok(Self {
            embedder: PairEmbedder::new(c.vocab_size, c.embed_dim, c.embedding_seed),
            config: c,
            style: stored.style,
            head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, CHECKPOINT_KIND)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHistory {
    /// Mean validation BCE after each epoch.
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

fn embed_all(embedder: &PairEmbedder, data: &[LabeledPair]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let x = data
        .iter()
        .map(|p| embedder.embed_pair(&p.image, &p.caption))
        .collect::<Result<Vec<_>>>()?;
    let y = data.iter().map(|p| f64::from(u8::from(p.label))).collect();
    Ok((x, y))
}

/// Mean BCE-with-logits node over a batch.
fn bce_node(head: &ClassifierHead, g: &mut Graph, ids: &[NodeId], x: &[&Vec<f64>], y: &[f64]) -> Result<NodeId> {
    let width = x[0].len();
    let xt = Tensor::new(vec![x.len(), width], x.iter().flat_map(|r| r.iter().copied()).collect())?;
    let xn = g.constant(xt);
    let z = head.logits_node(g, ids, xn)?;
    let yn = g.constant(Tensor::new(vec![y.len(), 1], y.to_vec())?);
    let sp = g.softplus(z)?;
    let yz = g.mul(z, yn)?;
    let per = g.sub(sp, yz)?;
    g.mean(per)
}

fn mean_bce(head: &ClassifierHead, x: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = head.params().iter().map(|p| g.constant(p.clone())).collect();
    let rows: Vec<&Vec<f64>> = x.iter().collect();
    let loss = bce_node(head, &mut g, &ids, &rows, y)?;
    Ok(g.value(loss).item())
}

/// Train a head with BCE and Adam; keeps the epoch with the lowest
/// validation loss.
pub fn train_classifier(
    train: &[LabeledPair],
    validation: &[LabeledPair],
    style: Style,
    config: &ClassifierConfig,
) -> Result<(StyleClassifier, ClassifierHistory)> {
    config.validate()?;
    for (name, set) in [("training", train), ("validation", validation)] {
        if !(set.iter().any(|p| p.label) && set.iter().any(|p| !p.label)) {
            return Err(Error::contract(format!("{name} data must contain both labels")));
        }
    }
    let embedder = PairEmbedder::new(config.vocab_size, config.embed_dim, config.embedding_seed);
    let (xt, yt) = embed_all(&embedder, train)?;
    let (xv, yv) = embed_all(&embedder, validation)?;

    let mut head = ClassifierHead::new(xt[0].len(), config.hidden, config.depth, config.init_seed);
    let mut opt = OptState::new(head.params());
    let mut rng = SplitMix64::new(derive_seed(&[SHUFFLE_STREAM, config.shuffle_seed]));

    let mut best = head.clone();
    let mut best_val = mean_bce(&head, &xv, &yv)?;
    let mut history = ClassifierHistory { val_loss: Vec::new(), best_epoch: 0 };

    for epoch in 1..=config.max_epochs {
        let order = rng.permutation(xt.len());
        for chunk in order.chunks(config.batch_size) {
            let xb: Vec<&Vec<f64>> = chunk.iter().map(|&i| &xt[i]).collect();
            let yb: Vec<f64> = chunk.iter().map(|&i| yt[i]).collect();
            let mut g = Graph::new();
            let ids: Vec<NodeId> = head.params().iter().map(|p| g.param(p.clone())).collect();
            let loss = bce_node(&head, &mut g, &ids, &xb, &yb)?;
            let grads = g.backward(loss)?.collect(&ids);
            adam_step(head.params_mut(), &grads, &mut opt, config.learning_rate)?;
        }
        let val = mean_bce(&head, &xv, &yv)?;
        history.val_loss.push(val);
        if val < best_val {
            best_val = val;
            best = head.clone();
            history.best_epoch = epoch;
        }
    }

    Ok((
        StyleClassifier {
            config: config.clone(),
            style,
            embedder,
            head: best,
        },
        history,
    ))
}

/// Precision, recall, F1 and accuracy as percentages; the positive class is
/// the target style.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(predictions: &[bool], labels: &[bool]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} predictions vs {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if predictions.is_empty() {
            return Err(Error::contract("metrics need at least one prediction"));
        }
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn metrics(&self) -> ClassifierMetrics {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let accuracy = ratio(self.tp + self.tn, self.tp + self.fp + self.fn_ + self.tn);
        ClassifierMetrics { precision, recall, f1, accuracy }
    }
}

pub fn classifier_metrics(predictions: &[bool], labels: &[bool]) -> Result<ClassifierMetrics> {
    Ok(Confusion::from_labels(predictions, labels)?.metrics())
}

impl ClassifierMetrics {
    pub const CSV_HEADER: &'static str = "dataset,precision,recall,f1,accuracy";

    /// One-decimal row, e.g. `toy-newyorker,85.7,96.2,90.6,90.1`.
    pub fn csv_row(&self, dataset: &str) -> String {
        format!(
            "{dataset},{:.1},{:.1},{:.1},{:.1}",
            self.precision, self.recall, self.f1, self.accuracy
        )
    }
}

/// Predictions for every pair.
pub fn predict(classifier: &StyleClassifier, data: &[LabeledPair]) -> Result<Vec<bool>> {
    data.iter()
        .map(|p| classifier.classify(&p.image, &p.caption).map(|(_, label)| label))
        .collect()
}

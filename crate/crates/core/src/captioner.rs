//! Tiny image-conditioned caption decoder.
//!
//! Sequence layout: `[image slot][instruction slot, if any][tokens...]`.
//! The image slot is a linear projection of the feature vector; the
//! instruction slot is a learned vector per style. Each decoder block is
//! pre-norm single-head causal attention plus a GELU feedforward, both with
//! residual connections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::ops;
use crate::rng::SplitMix64;
use crate::tape::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::world::{Caption, ImageFeatures, Style, EOS, MAX_CAPTION_TOKENS};

pub const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;
/// Image slot + instruction slot + caption tokens.
pub const MAX_POSITIONS: usize = 2 + MAX_CAPTION_TOKENS;
const CHECKPOINT_KIND: &str = "tiny_captioner";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub feature_dim: usize,
    pub ff_hidden: usize,
    pub init_seed: u64,
    /// Start with an all-zero output head (uniform next-token distribution).
    #[serde(default)]
    pub zero_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 32,
            n_layers: 2,
            feature_dim: 16,
            ff_hidden: 64,
            init_seed: 0,
            zero_head: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.d_model == 0 || self.feature_dim == 0 || self.ff_hidden == 0 {
            return Err(Error::Config(
                "vocab_size >= 2 and positive d_model, feature_dim, ff_hidden required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Decoding settings. Defaults: temperature 0.7, at most 128 tokens, beam 1,
/// greedy. Greedy ignores the temperature; sampling uses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub max_tokens: usize,
    pub beam: usize,
    pub mode: DecodeMode,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: MAX_CAPTION_TOKENS,
            beam: 1,
            mode: DecodeMode::Greedy,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam != 1 {
            return Err(Error::Config(format!("only beam size 1 is supported, got {}", self.beam)));
        }
        if self.max_tokens == 0 || self.max_tokens > MAX_CAPTION_TOKENS {
            return Err(Error::Config(format!(
                "max_tokens must be in 1..={MAX_CAPTION_TOKENS}, got {}",
                self.max_tokens
            )));
        }
        if self.mode == DecodeMode::Sample && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("sampling needs a positive finite temperature".into()));
        }
        Ok(())
    }
}

const PER_BLOCK: usize = 12;
const STEM: usize = 5;

/// Parameter node ids of a model bound into a graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub ids: Vec<NodeId>,
    n_layers: usize,
}

impl BoundParams {
    fn block(&self, layer: usize, k: usize) -> NodeId {
        self.ids[STEM + layer * PER_BLOCK + k]
    }

    fn tail(&self, k: usize) -> NodeId {
        self.ids[STEM + self.n_layers * PER_BLOCK + k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyCaptioner {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl TinyCaptioner {
    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (v, d, h) = (cfg.vocab_size, cfg.d_model, cfg.ff_hidden);
        let mut specs = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![MAX_POSITIONS, d]),
            ("img_w".to_string(), vec![cfg.feature_dim, d]),
            ("img_b".to_string(), vec![d]),
            ("style_emb".to_string(), vec![Style::ALL.len(), d]),
        ];
        for l in 0..cfg.n_layers {
            let blk: [(&str, Vec<usize>); PER_BLOCK] = [
                ("ln1_g", vec![d]),
                ("ln1_b", vec![d]),
                ("wq", vec![d, d]),
                ("wk", vec![d, d]),
                ("wv", vec![d, d]),
                ("wo", vec![d, d]),
                ("ln2_g", vec![d]),
                ("ln2_b", vec![d]),
                ("ff_w1", vec![d, h]),
                ("ff_b1", vec![h]),
                ("ff_w2", vec![h, d]),
                ("ff_b2", vec![d]),
            ];
            specs.extend(blk.into_iter().map(|(n, s)| (format!("block{l}.{n}"), s)));
        }
        specs.extend([
            ("lnf_g".to_string(), vec![d]),
            ("lnf_b".to_string(), vec![d]),
            ("head_w".to_string(), vec![d, v]),
            ("head_b".to_string(), vec![v]),
        ]);
        specs
    }

    /// Seeded Gaussian weights (σ = 0.02), zero biases, unit norm gains.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(config.init_seed);
        let params = Self::param_specs(&config)
            .into_iter()
            .map(|(name, shape)| {
                let leaf = name.rsplit('.').next().unwrap_or(&name);
                let is_head = name == "head_w" || name == "head_b";
                if leaf.ends_with("_g") {
                    Tensor::filled(&shape, 1.0)
                } else if shape.len() == 1 || (is_head && config.zero_head) {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::randn(&shape, INIT_STD, &mut rng)
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = Self::param_specs(&config);
        if specs.len() != params.len() || specs.iter().zip(&params).any(|((_, s), p)| s.as_slice() != p.shape()) {
            return Err(Error::contract("parameter list does not match the model layout"));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        Self::param_specs(&self.config).into_iter().map(|(n, _)| n).collect()
    }

    /// Zero the output projection and bias.
    pub fn zero_output_head(&mut self) {
        let n = self.params.len();
        for t in &mut self.params[n - 2..] {
            t.data_mut().fill(0.0);
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            ids: self.params.iter().map(|p| g.param(p.clone())).collect(),
            n_layers: self.config.n_layers,
        }
    }

    /// Treat existing nodes, in parameter order, as this model's parameters.
    pub fn bind_ids(&self, ids: &[NodeId]) -> Result<BoundParams> {
        if ids.len() != self.params.len() {
            return Err(Error::contract(format!(
                "expected {} parameter nodes, got {}",
                self.params.len(),
                ids.len()
            )));
        }
        Ok(BoundParams {
            ids: ids.to_vec(),
            n_layers: self.config.n_layers,
        })
    }

    fn check_inputs(&self, image: &ImageFeatures, context: &[usize]) -> Result<()> {
        if image.dim() != self.config.feature_dim {
            return Err(Error::Shape {
                op: "image features",
                lhs: vec![image.dim()],
                rhs: vec![self.config.feature_dim],
            });
        }
        if let Some(&bad) = context.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Range(format!(
                "token id {bad} is not below vocab size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Next-token logits for each position from the last conditioning slot
    /// onward: `context.len() + 1` rows. Row `i` predicts token `i` of a
    /// caption whose first `i` tokens are `context[..i]`.
    pub fn decode_rows(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        image: &ImageFeatures,
        instruction: Option<Style>,
        context: &[usize],
    ) -> Result<NodeId> {
        self.check_inputs(image, context)?;
        let d = self.config.d_model;
        let cond = 1 + usize::from(instruction.is_some());
        let seq = cond + context.len();
        if seq > MAX_POSITIONS {
            return Err(Error::Range(format!(
                "sequence of {seq} positions exceeds the {MAX_POSITIONS}-position limit"
            )));
        }

        let img = g.constant(Tensor::new(vec![1, image.dim()], image.0.clone())?);
        let mut parts = vec![g.linear(img, p.ids[2], p.ids[3])?];
        if let Some(style) = instruction {
            parts.push(g.gather_rows(p.ids[4], vec![style.index()])?);
        }
        if !context.is_empty() {
            parts.push(g.gather_rows(p.ids[0], context.to_vec())?);
        }
        let x = g.concat_rows(parts)?;
        let pos = g.gather_rows(p.ids[1], (0..seq).collect())?;
        let mut x = g.add(x, pos)?;

        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        for l in 0..self.config.n_layers {
            let b = |k| p.block(l, k);
            let a = g.layer_norm(x, b(0), b(1), LN_EPS)?;
            let q = g.matmul(a, b(2))?;
            let k = g.matmul(a, b(3))?;
            let v = g.matmul(a, b(4))?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, inv_sqrt_d)?;
            let scores = g.causal_mask(scores)?;
            let attn = g.softmax(scores)?;
            let ctx = g.matmul(attn, v)?;
            let out = g.matmul(ctx, b(5))?;
            x = g.add(x, out)?;

            let f = g.layer_norm(x, b(6), b(7), LN_EPS)?;
            let f = g.linear(f, b(8), b(9))?;
            let f = g.gelu(f)?;
            let f = g.linear(f, b(10), b(11))?;
            x = g.add(x, f)?;
        }
        let x = g.layer_norm(x, p.tail(0), p.tail(1), LN_EPS)?;
        let x = g.gather_rows(x, (cond - 1..seq).collect())?;
        g.linear(x, p.tail(2), p.tail(3))
    }

    /// Teacher-forced `Σ log p(token_i | image, instruction, tokens < i)` as a graph node.
    pub fn sequence_logprob_node(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        image: &ImageFeatures,
        caption: &Caption,
        instruction: Option<Style>,
    ) -> Result<NodeId> {
        let ids = caption.ids();
        let logits = self.decode_rows(g, p, image, instruction, &ids[..ids.len() - 1])?;
        let logp = g.log_softmax(logits, 1)?;
        let v = self.config.vocab_size;
        let gold = ids.iter().enumerate().map(|(r, &t)| r * v + t).collect();
        let picked = g.pick(logp, gold)?;
        g.sum(picked)
    }

    /// Length-normalized log-probability node (EOS counts as a token).
    pub fn normalized_logprob_node(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        image: &ImageFeatures,
        caption: &Caption,
        instruction: Option<Style>,
    ) -> Result<NodeId> {
        let total = self.sequence_logprob_node(g, p, image, caption, instruction)?;
        g.scale(total, 1.0 / caption.len() as f64)
    }

    /// Logits `[len(prefix), V]`; row `i` is the distribution of `prefix[i]`
    /// given the image, the instruction and `prefix[..i]`.
    pub fn forward_logits(&self, image: &ImageFeatures, instruction: Option<Style>, prefix: &[usize]) -> Result<Tensor> {
        if prefix.is_empty() {
            return Err(Error::contract("prefix must hold at least one token"));
        }
        if prefix.len() > MAX_CAPTION_TOKENS + 1 {
            return Err(Error::Range(format!(
                "prefix of {} tokens exceeds {}",
                prefix.len(),
                MAX_CAPTION_TOKENS + 1
            )));
        }
        self.check_inputs(image, prefix)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let out = self.decode_rows(&mut g, &p, image, instruction, &prefix[..prefix.len() - 1])?;
        Ok(g.value(out).clone())
    }

    pub fn sequence_logprob(&self, image: &ImageFeatures, caption: &Caption, instruction: Option<Style>) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let node = self.sequence_logprob_node(&mut g, &p, image, caption, instruction)?;
        Ok(g.value(node).item())
    }

    pub fn normalized_logprob(&self, image: &ImageFeatures, caption: &Caption, instruction: Option<Style>) -> Result<f64> {
        Ok(self.sequence_logprob(image, caption, instruction)? / caption.len() as f64)
    }

    /// Score many captions against one bound copy of the parameters.
    pub fn normalized_logprobs<'a>(
        &self,
        items: impl IntoIterator<Item = (&'a ImageFeatures, &'a Caption)>,
        instruction: Option<Style>,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let mark = g.len();
        let mut out = Vec::new();
        for (image, caption) in items {
            let node = self.normalized_logprob_node(&mut g, &p, image, caption, instruction)?;
            out.push(g.value(node).item());
            g.truncate(mark);
        }
        Ok(out)
    }

    /// Autoregressive decoding; stops at EOS or `decode.max_tokens` tokens.
    pub fn generate(
        &self,
        image: &ImageFeatures,
        instruction: Option<Style>,
        decode: &DecodeConfig,
        seed: u64,
    ) -> Result<Caption> {
        decode.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let mark = g.len();
        let mut tokens = Vec::new();
        while tokens.len() < decode.max_tokens {
            let rows = self.decode_rows(&mut g, &p, image, instruction, &tokens)?;
            let logits = g.value(rows);
            let last = logits.row(logits.rows() - 1);
            let next = match decode.mode {
                DecodeMode::Greedy => argmax(last),
                DecodeMode::Sample => sample(last, decode.temperature, &mut rng),
            };
            g.truncate(mark);
            if next == EOS {
                break;
            }
            tokens.push(next);
        }
        Ok(Caption::generated(tokens))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(CHECKPOINT_KIND, &self.config, &self.param_names(), &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = ckpt.config()?;
        config.validate()?;
        let params = ckpt.tensors(&Self::param_specs(&config))?;
        Self::from_params(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, CHECKPOINT_KIND)?)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn sample(logits: &[f64], temperature: f64, rng: &mut SplitMix64) -> usize {
    let scaled = Tensor::vector(logits.iter().map(|l| l / temperature).collect());
    let probs = ops::softmax(&scaled);
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &p) in probs.data().iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` a hair below 1: fall back to the last nonzero entry.
    probs.data().iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

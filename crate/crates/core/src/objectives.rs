//! Training objectives: SFT on preferred captions and reference-free SimPO.

use serde::{Deserialize, Serialize};

use crate::captioner::{BoundParams, TinyCaptioner};
use crate::error::{Error, Result};
use crate::ops::softplus_scalar;
use crate::tape::{Graph, NodeId};
use crate::world::{Caption, ImageFeatures, PreferenceTriplet, Style};

/// SimPO scale on the normalized log-probability margin and target margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimpoHyper {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SimpoHyper {
    fn default() -> Self {
        Self { beta: 2.0, gamma: 0.5 }
    }
}

impl SimpoHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("simpo beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("simpo gamma must be nonnegative, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Sft,
    Simpo,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Sft => "sft",
            Objective::Simpo => "simpo",
        }
    }
}

/// `-ln σ(β·(s_w − s_l) − γ)` for one pair of normalized log-probabilities.
pub fn simpo_pair_loss(s_w: f64, s_l: f64, hyper: SimpoHyper) -> f64 {
    softplus_scalar(-(hyper.beta * (s_w - s_l) - hyper.gamma))
}

/// Token-level mean negative log-likelihood of `captions`, pooled over the
/// whole batch.
pub fn sft_loss_node(
    model: &TinyCaptioner,
    g: &mut Graph,
    p: &BoundParams,
    batch: &[(&ImageFeatures, &Caption)],
    instruction: Option<Style>,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::contract("sft_loss needs a non-empty batch"));
    }
    let mut sums = Vec::with_capacity(batch.len());
    let mut tokens = 0;
    for (image, caption) in batch {
        sums.push(model.sequence_logprob_node(g, p, image, caption, instruction)?);
        tokens += caption.len();
    }
    let stacked = g.concat_rows(sums)?;
    let total = g.sum(stacked)?;
    g.scale(total, -1.0 / tokens as f64)
}

/// Batch mean of the SimPO loss; both captions share `instruction`.
pub fn simpo_loss_node(
    model: &TinyCaptioner,
    g: &mut Graph,
    p: &BoundParams,
    batch: &[&PreferenceTriplet],
    hyper: SimpoHyper,
    instruction: Option<Style>,
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::contract("simpo_loss needs a non-empty batch"));
    }
    hyper.validate()?;
    let mut terms = Vec::with_capacity(batch.len());
    for t in batch {
        let s_w = model.normalized_logprob_node(g, p, &t.image, &t.stylized, instruction)?;
        let s_l = model.normalized_logprob_node(g, p, &t.image, &t.factual, instruction)?;
        let margin = g.sub(s_w, s_l)?;
        let z = g.scale(margin, -hyper.beta)?;
        let z = g.shift(z, hyper.gamma)?;
        terms.push(g.softplus(z)?);
    }
    let stacked = g.concat_rows(terms)?;
    g.mean(stacked)
}

/// Loss node for `objective` on a batch of triplets. SFT sees only the
/// stylized captions.
pub fn loss_node(
    objective: Objective,
    model: &TinyCaptioner,
    g: &mut Graph,
    p: &BoundParams,
    batch: &[&PreferenceTriplet],
    hyper: SimpoHyper,
    instruction: Option<Style>,
) -> Result<NodeId> {
    match objective {
        Objective::Sft => {
            let pairs: Vec<_> = batch.iter().map(|t| (&t.image, &t.stylized)).collect();
            sft_loss_node(model, g, p, &pairs, instruction)
        }
        Objective::Simpo => simpo_loss_node(model, g, p, batch, hyper, instruction),
    }
}

pub fn sft_loss(
    model: &TinyCaptioner,
    batch: &[(&ImageFeatures, &Caption)],
    instruction: Option<Style>,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let loss = sft_loss_node(model, &mut g, &p, batch, instruction)?;
    Ok(g.value(loss).item())
}

pub fn simpo_loss(
    model: &TinyCaptioner,
    batch: &[&PreferenceTriplet],
    hyper: SimpoHyper,
    instruction: Option<Style>,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let loss = simpo_loss_node(model, &mut g, &p, batch, hyper, instruction)?;
    Ok(g.value(loss).item())
}

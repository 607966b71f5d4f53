//! Stylistic preference-alignment laboratory.
//!
//! A tiny image-conditioned caption model is aligned toward a target style
//! with supervised fine-tuning or the length-normalized SimPO objective, then
//! scored with WR-LogP and a frozen-embedding style classifier across
//! preference-data budgets.

pub mod captioner;
pub mod checkpoint;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod jsonl;
pub mod objectives;
pub mod ops;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod sweep;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
pub use tape::{GradientMap, Graph, NodeId, Op};
pub use tensor::Tensor;

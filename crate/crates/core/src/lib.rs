//! Session-based next-item recommendation with a stochastic latent-interest
//! component.
//!
//! The crate is organized around the experiment pipeline:
//!
//! * [`corpus`] — clickstream ingestion, filtering, temporal splitting and the
//!   on-disk dataset bundle format.
//! * [`graph`] — per-session directed graph construction for the gated graph
//!   network.
//! * [`numeric`] — dense `f64` tensors, a reverse-mode tape, Adam, a
//!   finite-difference gradient checker and the checkpoint format.
//! * [`srgnn`] — the backbone model: embeddings, gated propagation, attention
//!   readout, scoring and the catalog cross-entropy loss.
//! * [`stochastic`] — spherical uniformity regularization, von Mises–Fisher
//!   interest sampling, fake-target redistribution and the combined loss.
//! * [`baselines`] — random and bigram reference recommenders.
//! * [`metrics`] — hit-rate, coverage, popularity and embedding-quality audits.
//! * [`runner`] — experiment configuration, the training loop, evaluation and
//!   the synthetic benchmark corpus.

pub mod baselines;
pub mod corpus;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod numeric;
pub mod runner;
pub mod srgnn;
pub mod stochastic;

pub use corpus::{DatasetBundle, ItemVocab, RawEvent, Session, SplitExample};
pub use error::{Error, Result};
pub use graph::SessionGraph;
pub use metrics::RecommendationList;
pub use numeric::{ParamSet, Rng, Tape, Tensor, Var};
pub use srgnn::{GgnnWeights, ModelConfig, ReadoutWeights};

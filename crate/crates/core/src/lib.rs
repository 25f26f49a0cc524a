//! Gene-regulation direction prediction under chemical perturbation.
//!
//! The crate covers benchmark curation from consensus signatures
//! ([`forge`]), biological relatedness lookups ([`knowledge`]), a
//! chat-completion gateway with live, scripted and synthetic backends
//! ([`gateway`]), difficulty scoring and easy-first ordering
//! ([`scheduler`]), the expert / integration / judge ensemble
//! ([`ensemble`]), the per-context progressive loop with resumable state
//! ([`engine`]) and evaluation metrics ([`eval`]).

pub mod config;
pub mod engine;
pub mod ensemble;
pub mod eval;
pub mod forge;
pub mod gateway;
pub mod knowledge;
pub mod prompts;
pub mod scheduler;
pub mod seed;
pub mod tsv;
pub mod types;

pub use types::{ContextId, Direction, Query};

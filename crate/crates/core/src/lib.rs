//! Deep Taylor Decomposition and LRP propagation rules for small dense networks, with audits
//! of where the implied root points actually lie.
//!
//! The crate is organised bottom-up:
//!
//! - [`net`]: dense networks, forward traces, gradients and activation fingerprints.
//! - [`rules`]: propagation rules, their linear root points and closed-form relevance.
//! - [`engine`]: the train-free and recursive DTD algorithms.
//! - [`diagnostics`]: root-region audits, the Table 1 experiment, decomposition identities,
//!   relevance forgery and class-insensitivity studies.
//! - [`experiment`]: seeded network generation, input sampling and report files.
//! - [`verify`]: the invariant suite run by `dtd verify`.
//! - [`cli`]: the `dtd` command line.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod autodiff;
pub mod cli;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod net;
pub mod rules;
pub mod vecops;
pub mod verify;

pub use engine::{relevance_recursive, relevance_train_free, Algorithm, RelevanceTrace, RootPolicy};
pub use error::{Error, Result};
pub use net::{Activation, LayerSpec, Network};
pub use rules::{RootPoint, RuleKind};

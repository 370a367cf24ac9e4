//! Temporal-logic inference: learn signal temporal logic (STL) formulas from
//! labeled time series by training a differentiable network whose layers mirror
//! the logic's predicate, temporal, and Boolean operators, then decoding the
//! trained parameters back into a readable formula.
//!
//! The crate is organized around that pipeline:
//!
//! - [`stl`] — exact formulas, robustness semantics, a textual grammar, and
//!   the misclassification rate; the ground truth everything else approximates.
//! - [`maxops`] — the max-operation variants (hard, softmax, sparse softmax,
//!   averaged max) and the soundness condition for the sparse softmax.
//! - [`autodiff`] — a small reverse-mode tape with the fused nodes the
//!   network's forward pass needs.
//! - [`net`] — predicate/temporal/Boolean modules, network assembly from a
//!   layer spec, forward evaluation, and formula extraction.
//! - [`learn`] — losses, regularizers, the trainer, and evaluation.
//! - [`data`] — synthetic dataset generators, noise, and dataset files.

pub mod autodiff;
pub mod data;
pub mod learn;
pub mod maxops;
pub mod net;
pub mod rng;
pub mod stl;

pub use maxops::{ApproxResult, MaxKind, MaxMethod};
pub use net::{Network, NetworkSpec};
pub use stl::{Formula, LabeledDataset, Signal, TimeInterval};

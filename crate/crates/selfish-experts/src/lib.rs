//! Online binary prediction with selfish experts.
//!
//! Experts report probabilistic forecasts to a weight-update algorithm and
//! care about the weight they are assigned, so the update rule doubles as a
//! scoring rule: truthful reporting is a best response exactly when the rule
//! is strictly proper. This crate provides:
//!
//! - [`scoring`]: scoring rules as values (standard, quadratic, spherical,
//!   Brier, Hedge, the Beta family) plus normalization, gap and asymmetry
//!   analysis, properness checking, rationality functions, and per-rule
//!   theoretical regret lower bounds;
//! - [`algorithms`]: deterministic weighted majority and theta-randomized
//!   weighted majority with log-space weight bookkeeping;
//! - [`experts`]: honest and strategic (best-response) reporting policies;
//! - [`environments`]: adversarial lower-bound instance generators and a
//!   two-state hidden-Markov belief generator;
//! - [`harness`]: seeded, replicated runs with online proof-invariant
//!   audits and regret reports;
//! - [`cli`]: `check-rule`, `lb-table`, `hmm`, and `simulate` commands.

pub mod algorithms;
pub mod cli;
pub mod environments;
pub mod error;
pub mod experts;
pub mod harness;
pub mod scoring;
pub mod special;

pub use algorithms::{AlgorithmConfig, ExpertState, Mode, RoundRecord, TieBreak};
pub use error::{Error, Result};
pub use experts::{ExpertPolicy, PolicyKind};
pub use harness::{run, run_with, RegretReport, RunConfig, RunOutcome};
pub use scoring::{Builtin, GapReport, NormalizedRule, ScoringRule};

//! Expert policies: honest experts report their beliefs; strategic experts
//! report the rationality-function image under the algorithm's update rule.
//!
//! Strategic policies under a rule with a truthful-best-response claim take
//! the identity fast path. Other rules get an eagerly built memo table on a
//! 1e-4 belief grid with nearest-node lookup: environments reuse few
//! distinct beliefs, and the cached table makes long runs instant.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::scoring::{ArgmaxTable, ScoringRule};

/// Belief-grid resolution of the strategic memo table.
pub const RATIONALITY_GRID_STEP: f64 = 1e-4;

const GRID_NODES: usize = 10_000;

/// Policy kind selector, as used in run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "honest")]
    Honest,
    #[serde(rename = "strategic")]
    Strategic,
}

/// Maps environment-issued beliefs to reports.
///
/// Immutable after construction; cache population happens eagerly, so
/// policies are safe to share across concurrent replicas.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    kind: PolicyKind,
    rule_name: Option<String>,
    table: Option<Arc<[f64]>>,
}

impl ExpertPolicy {
    /// Identity policy: report the belief.
    pub fn honest() -> Self {
        Self {
            kind: PolicyKind::Honest,
            rule_name: None,
            table: None,
        }
    }

    /// Best-response policy under `rule`. IC-claimed rules shortcut to the
    /// identity, which is what the rationality function works out to within
    /// the argmax tolerance anyway.
    pub fn strategic(rule: &ScoringRule) -> Self {
        let table = if rule.claimed_ic() {
            None
        } else {
            let score = |p: f64, r: u8| rule.score(p, r);
            let argmax = ArgmaxTable::new(&score);
            let mut t = Vec::with_capacity(GRID_NODES + 1);
            for i in 0..=GRID_NODES {
                let b = i as f64 / GRID_NODES as f64;
                t.push(argmax.argmax(&score, b));
            }
            Some(Arc::from(t.into_boxed_slice()))
        };
        Self {
            kind: PolicyKind::Strategic,
            rule_name: Some(rule.name().to_owned()),
            table,
        }
    }

    pub fn of_kind(kind: PolicyKind, rule: &ScoringRule) -> Self {
        match kind {
            PolicyKind::Honest => Self::honest(),
            PolicyKind::Strategic => Self::strategic(rule),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn rule_name(&self) -> Option<&str> {
        self.rule_name.as_deref()
    }

    /// Report for belief `b`.
    pub fn report(&self, b: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&b), "belief {b} outside [0,1]");
        match &self.table {
            None => b,
            Some(t) => t[(b * GRID_NODES as f64).round() as usize],
        }
    }
}

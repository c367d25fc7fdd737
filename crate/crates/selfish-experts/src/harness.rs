//! Run orchestration: wires environment -> expert policies -> algorithm,
//! accumulates losses, audits the proof invariants online, aggregates
//! replicas, and emits regret reports.
//!
//! A single run is strictly sequential; replicas are independent and are
//! merged by value in replica order, so outputs are deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algorithms::{
    log_potential, theta_rwm_predict, update_weights, weights, wm_predict, wm_predict_parts,
    AlgorithmConfig, EtaSchedule, ExpertState, Mode, RoundRecord, TieBreak,
};
use crate::environments::{
    AsymmetricLb, DecisionOracle, Environment, GreedyLb, HmmEnv, HmmParams, NonMonotoneLb,
    Realization, StandardLb, StepContext, SymmetricLb,
};
use crate::error::{Error, Result};
use crate::experts::{ExpertPolicy, PolicyKind};
use crate::scoring::ScoringRule;

const SQRT2: f64 = std::f64::consts::SQRT_2;
/// Relative slack for the per-round potential inequalities.
const AUDIT_SLACK: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Serde-level specs
// ---------------------------------------------------------------------------

/// Algorithm selection by rule identifier; resolves to an `AlgorithmConfig`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub rule: String,
    pub eta: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub tie_break: TieBreak,
    #[serde(default)]
    pub eta_schedule: EtaSchedule,
    #[serde(default)]
    pub sample_predictions: bool,
}

impl AlgorithmSpec {
    pub fn deterministic(rule: &str, eta: f64) -> Self {
        Self {
            rule: rule.to_owned(),
            eta,
            mode: Mode::DeterministicWm,
            theta: 0.0,
            tie_break: TieBreak::ChooseOne,
            eta_schedule: EtaSchedule::Fixed,
            sample_predictions: false,
        }
    }

    pub fn theta_rwm(rule: &str, eta: f64, theta: f64) -> Self {
        Self {
            mode: Mode::ThetaRwm,
            theta,
            ..Self::deterministic(rule, eta)
        }
    }

    pub fn resolve(&self, n_experts: usize, horizon: usize) -> Result<AlgorithmConfig> {
        let rule = ScoringRule::from_identifier(&self.rule, self.eta)?;
        let cfg = AlgorithmConfig {
            rule,
            mode: self.mode,
            theta: self.theta,
            tie_break: self.tie_break,
            eta_schedule: self.eta_schedule,
            sample_predictions: self.sample_predictions,
        };
        cfg.validate()?;
        cfg.resolve_eta(n_experts, horizon)
    }
}

/// Environment selection strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "std-lb")]
    StdLb,
    #[serde(rename = "sym-lb")]
    SymLb,
    #[serde(rename = "greedy-lb")]
    GreedyLb,
    #[serde(rename = "asym-lb")]
    AsymLb,
    #[serde(rename = "nonmono-lb")]
    NonMonoLb,
    #[serde(rename = "hmm")]
    Hmm,
}

/// Environment selection plus per-kind parameters (strict: parameters that
/// do not belong to the kind are rejected).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub kind: EnvKind,
    /// std-lb margin; defaults to 1/T.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// sym-lb: use the ceil(1/gap) phase split instead of the unrounded one.
    #[serde(default)]
    pub use_rounded: bool,
    /// sym-lb: override the gap instead of deriving it from the rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_or_mu: Option<f64>,
    /// nonmono-lb belief pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<f64>,
    /// hmm parameters (defaults: 10 experts, 1/10, 5, 1/2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_experts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_transition: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exp_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bad_state_low: Option<f64>,
}

impl EnvironmentSpec {
    pub fn of_kind(kind: EnvKind) -> Self {
        Self {
            kind,
            epsilon: None,
            use_rounded: false,
            gamma_or_mu: None,
            b1: None,
            b2: None,
            n_experts: None,
            p_transition: None,
            exp_scale: None,
            bad_state_low: None,
        }
    }

    pub fn nonmono(b1: f64, b2: f64) -> Self {
        Self {
            b1: Some(b1),
            b2: Some(b2),
            ..Self::of_kind(EnvKind::NonMonoLb)
        }
    }

    pub fn num_experts(&self) -> usize {
        match self.kind {
            EnvKind::StdLb | EnvKind::AsymLb | EnvKind::NonMonoLb => 2,
            EnvKind::SymLb | EnvKind::GreedyLb => 3,
            EnvKind::Hmm => self.n_experts.unwrap_or(10),
        }
    }

    fn reject_foreign_params(&self) -> Result<()> {
        let mut foreign: Vec<&str> = Vec::new();
        if self.epsilon.is_some() && self.kind != EnvKind::StdLb {
            foreign.push("epsilon");
        }
        if (self.use_rounded || self.gamma_or_mu.is_some()) && self.kind != EnvKind::SymLb {
            foreign.push("use_rounded/gamma_or_mu");
        }
        if (self.b1.is_some() || self.b2.is_some()) && self.kind != EnvKind::NonMonoLb {
            foreign.push("b1/b2");
        }
        let hmm_params = self.n_experts.is_some()
            || self.p_transition.is_some()
            || self.exp_scale.is_some()
            || self.bad_state_low.is_some();
        if hmm_params && self.kind != EnvKind::Hmm {
            foreign.push("hmm parameters");
        }
        if foreign.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "parameters {} do not apply to environment {:?}",
                foreign.join(", "),
                self.kind
            )))
        }
    }

    /// Instantiates the environment for one replica.
    pub fn build(
        &self,
        rule: &ScoringRule,
        horizon: usize,
        seed: u64,
        replica: usize,
    ) -> Result<Box<dyn Environment>> {
        self.reject_foreign_params()?;
        Ok(match self.kind {
            EnvKind::StdLb => Box::new(match self.epsilon {
                Some(e) => StandardLb::new(e)?,
                None => StandardLb::for_horizon(horizon)?,
            }),
            EnvKind::SymLb => {
                let gap = match self.gamma_or_mu {
                    Some(g) => g,
                    None => derive_gap(rule)?,
                };
                Box::new(if self.use_rounded {
                    SymmetricLb::rounded(gap, horizon)?
                } else {
                    SymmetricLb::unrounded(gap, horizon)?
                })
            }
            EnvKind::GreedyLb => Box::new(GreedyLb::new()),
            EnvKind::AsymLb => Box::new(AsymmetricLb::from_normalized(&rule.normalize()?)?),
            EnvKind::NonMonoLb => {
                let (b1, b2) = match (self.b1, self.b2) {
                    (Some(b1), Some(b2)) => (b1, b2),
                    _ => return Err(Error::Config("nonmono-lb requires b1 and b2".into())),
                };
                Box::new(NonMonotoneLb::new(rule, b1, b2)?)
            }
            EnvKind::Hmm => {
                let defaults = HmmParams::default();
                Box::new(HmmEnv::new(HmmParams {
                    n_experts: self.n_experts.unwrap_or(defaults.n_experts),
                    p_transition: self.p_transition.unwrap_or(defaults.p_transition),
                    exp_scale: self.exp_scale.unwrap_or(defaults.exp_scale),
                    bad_state_low: self.bad_state_low.unwrap_or(defaults.bad_state_low),
                    seed: replica_seed(seed, replica),
                })?)
            }
        })
    }
}

/// Gap of the rule driving the symmetric instance: the symmetric gap when
/// the rule is symmetric, the semi-symmetric gap otherwise.
pub fn derive_gap(rule: &ScoringRule) -> Result<f64> {
    let norm = rule.normalize()?;
    norm.gap_symmetric().or_else(|_| norm.gap_semi_symmetric())
}

/// Per-expert policy kinds: a single kind for everyone or one per expert.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoliciesSpec {
    Uniform(PolicyKind),
    PerExpert(Vec<PolicyKind>),
}

impl PoliciesSpec {
    pub fn resolve(&self, n: usize, rule: &ScoringRule) -> Result<Vec<ExpertPolicy>> {
        match self {
            Self::Uniform(kind) => {
                let policy = ExpertPolicy::of_kind(*kind, rule);
                Ok(vec![policy; n])
            }
            Self::PerExpert(kinds) => {
                if kinds.len() != n {
                    return Err(Error::ArityMismatch {
                        expected: n,
                        got: kinds.len(),
                    });
                }
                Ok(kinds
                    .iter()
                    .map(|k| ExpertPolicy::of_kind(*k, rule))
                    .collect())
            }
        }
    }
}

/// Audit identifiers enforced during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditCheck {
    /// Theorem-matched per-round potential decay (spherical WM wrong rounds,
    /// Brier theta-RWM every round).
    #[serde(rename = "potential-drop")]
    PotentialDrop,
    /// log w_i >= m_i^reported ln(1 - eta) for the closed-form builtins.
    #[serde(rename = "weight-floor")]
    WeightFloor,
    /// Potential never increases when all update factors are at most 1.
    #[serde(rename = "monotone-potential")]
    MonotonePotential,
    /// M_T equals the sum of per-round algorithm losses.
    #[serde(rename = "loss-accounting")]
    LossAccounting,
}

/// Every audit the harness knows.
pub fn all_audits() -> Vec<AuditCheck> {
    vec![
        AuditCheck::PotentialDrop,
        AuditCheck::WeightFloor,
        AuditCheck::MonotonePotential,
        AuditCheck::LossAccounting,
    ]
}

/// Full run configuration; strict on unknown keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: AlgorithmSpec,
    pub environment: EnvironmentSpec,
    pub policies: PoliciesSpec,
    pub horizon: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub audit: Vec<AuditCheck>,
    #[serde(default = "default_true")]
    pub audit_fail_fast: bool,
}

fn default_replicas() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter {
                what: "horizon",
                value: 0.0,
            });
        }
        if self.replicas == 0 {
            return Err(Error::InvalidParameter {
                what: "replicas",
                value: 0.0,
            });
        }
        if self.environment.kind == EnvKind::GreedyLb && self.algorithm.mode == Mode::ThetaRwm {
            return Err(Error::OracleUnsupported);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

/// Loss accounting for one replica.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicaOutcome {
    pub replica: usize,
    /// Total algorithm loss M_T.
    pub m_t: f64,
    /// Per-expert cumulative true losses.
    pub m_true: Vec<f64>,
    /// Per-expert cumulative reported losses.
    pub m_reported: Vec<f64>,
    /// M_T over the best true loss; None when that loss is zero.
    pub ratio_true: Option<f64>,
    pub ratio_reported: Option<f64>,
    pub min_true_loss_zero: bool,
    /// Theorem-id -> satisfied.
    pub bound_checks: BTreeMap<String, bool>,
    /// Number of audit findings (log-only mode; fail-fast aborts instead).
    pub audit_violations: usize,
}

/// Aggregated regret report over all replicas.
#[derive(Debug, Clone, Serialize)]
pub struct RegretReport {
    pub horizon: usize,
    pub replica_count: usize,
    /// Mean of the per-replica final ratios.
    pub ratio_true: Option<f64>,
    pub ratio_reported: Option<f64>,
    /// Conjunction over replicas.
    pub bound_checks: BTreeMap<String, bool>,
    pub replicas: Vec<ReplicaOutcome>,
}

/// Report plus the optional per-round time-averaged ratio curve: the mean
/// over replicas of M(t) divided by the prefix true loss, at round t, of
/// the expert that is best in hindsight (at the horizon). At t = T this
/// coincides with the report's final ratio; rounds where that expert still
/// has zero loss show as infinity.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: RegretReport,
    pub curve: Option<Vec<f64>>,
}

/// Streaming and curve options for `run_with`.
#[derive(Default)]
pub struct RunOptions<'s> {
    /// Called as (replica, record) for every round.
    pub sink: Option<&'s mut dyn FnMut(usize, &RoundRecord)>,
    pub track_curve: bool,
}

// ---------------------------------------------------------------------------
// Decision oracle
// ---------------------------------------------------------------------------

struct WmOracle<'a> {
    states: &'a [ExpertState],
    cfg: &'a AlgorithmConfig,
}

impl WmOracle<'_> {
    fn decide_parts(&self, log_weights: &[f64], reports: &[f64]) -> u8 {
        match self.cfg.mode {
            Mode::DeterministicWm => wm_predict_parts(log_weights, reports, self.cfg.tie_break),
            // randomized algorithms threshold the weighted mass at 1/2
            Mode::ThetaRwm => {
                let max_lw = log_weights
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut num = 0.0;
                let mut den = 0.0;
                for (lw, p) in log_weights.iter().zip(reports) {
                    let w = (lw - max_lw).exp();
                    num += w * p;
                    den += w;
                }
                u8::from(num / den > 0.5)
            }
        }
    }
}

impl DecisionOracle for WmOracle<'_> {
    fn decide(&self, reports: &[f64]) -> Result<u8> {
        if reports.len() != self.states.len() {
            return Err(Error::ArityMismatch {
                expected: self.states.len(),
                got: reports.len(),
            });
        }
        let lws: Vec<f64> = self.states.iter().map(|s| s.log_weight).collect();
        Ok(self.decide_parts(&lws, reports))
    }

    fn decide_after(
        &self,
        first_reports: &[f64],
        first_realization: u8,
        then_reports: &[f64],
    ) -> Result<u8> {
        if first_reports.len() != self.states.len() || then_reports.len() != self.states.len() {
            return Err(Error::ArityMismatch {
                expected: self.states.len(),
                got: first_reports.len(),
            });
        }
        let mut lws: Vec<f64> = self.states.iter().map(|s| s.log_weight).collect();
        for (lw, &p) in lws.iter_mut().zip(first_reports) {
            let factor = self.cfg.rule.score(p, first_realization);
            if !(factor > 0.0) {
                return Err(Error::NonPositiveUpdate {
                    report: p,
                    realization: first_realization,
                    score: factor,
                });
            }
            *lw += factor.ln();
        }
        Ok(self.decide_parts(&lws, then_reports))
    }
}

// ---------------------------------------------------------------------------
// Audits
// ---------------------------------------------------------------------------

/// One audit finding.
#[derive(Debug, Clone, Serialize)]
pub struct AuditViolation {
    pub round: usize,
    pub check: AuditCheck,
    pub detail: String,
}

fn audit_name(check: AuditCheck) -> &'static str {
    match check {
        AuditCheck::PotentialDrop => "potential-drop",
        AuditCheck::WeightFloor => "weight-floor",
        AuditCheck::MonotonePotential => "monotone-potential",
        AuditCheck::LossAccounting => "loss-accounting",
    }
}

const FLOOR_RULES: [&str; 5] = ["standard", "quadratic", "spherical", "brier", "hedge"];

/// Evaluates the requested proof invariants on a consecutive round pair:
/// `prev` carries the potential entering round t and that round's loss,
/// `next_log_potential` is the potential entering round t + 1, and `states`
/// carry the cumulative losses after the update.
pub fn invariant_audit(
    cfg: &AlgorithmConfig,
    prev: &RoundRecord,
    next_log_potential: f64,
    states: &[ExpertState],
    checks: &[AuditCheck],
) -> Vec<AuditViolation> {
    let mut out = Vec::new();
    let eta = cfg.rule.eta();
    for &check in checks {
        match check {
            AuditCheck::PotentialDrop => {
                let bound = match (cfg.mode, cfg.rule.name()) {
                    (Mode::DeterministicWm, "spherical") if prev.alg_loss == 1.0 => {
                        Some((-(2.0 - SQRT2) / 2.0 * eta).ln_1p())
                    }
                    (Mode::ThetaRwm, "brier")
                        if (cfg.theta - 0.382).abs() < 1e-12 && !cfg.sample_predictions =>
                    {
                        Some((-eta / 2.62 * prev.alg_loss).ln_1p())
                    }
                    _ => None,
                };
                if let Some(max_drop) = bound {
                    let lhs = next_log_potential - prev.log_potential;
                    if lhs > max_drop + AUDIT_SLACK {
                        out.push(AuditViolation {
                            round: prev.t,
                            check,
                            detail: format!("log potential fell by {lhs:e}, bound {max_drop:e}"),
                        });
                    }
                }
            }
            AuditCheck::WeightFloor => {
                if FLOOR_RULES.contains(&cfg.rule.name()) {
                    let floor_rate = (1.0 - eta).ln();
                    for st in states {
                        if st.log_weight < st.reported_loss * floor_rate - AUDIT_SLACK {
                            out.push(AuditViolation {
                                round: prev.t,
                                check,
                                detail: format!(
                                    "expert {} log weight {} below floor {}",
                                    st.id,
                                    st.log_weight,
                                    st.reported_loss * floor_rate
                                ),
                            });
                        }
                    }
                }
            }
            AuditCheck::MonotonePotential => {
                if next_log_potential > prev.log_potential + 1e-12 {
                    out.push(AuditViolation {
                        round: prev.t,
                        check,
                        detail: format!(
                            "potential rose from {} to {}",
                            prev.log_potential, next_log_potential
                        ),
                    });
                }
            }
            AuditCheck::LossAccounting => {}
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Run loop
// ---------------------------------------------------------------------------

fn committed_decision(q: f64, mode: Mode) -> u8 {
    match mode {
        Mode::DeterministicWm => u8::from(q >= 1.0),
        Mode::ThetaRwm => u8::from(q > 0.5),
    }
}

/// Executes the configured run and aggregates all replicas.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    run_with(config, RunOptions::default())
}

/// `run` with record streaming and curve tracking.
pub fn run_with(config: &RunConfig, opts: RunOptions<'_>) -> Result<RunOutcome> {
    config.validate()?;
    let n = config.environment.num_experts();
    let algorithm = config.algorithm.resolve(n, config.horizon)?;
    let policies = config.policies.resolve(n, &algorithm.rule)?;
    let mut make_env = |replica: usize| {
        config
            .environment
            .build(&algorithm.rule, config.horizon, config.seed, replica)
    };
    run_trial(
        &algorithm,
        &policies,
        &mut make_env,
        config.horizon,
        config.replicas,
        config.seed,
        &config.audit,
        config.audit_fail_fast,
        opts,
    )
}

/// Run with explicitly constructed parts (test and library surface; the
/// serde path funnels through here).
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    algorithm: &AlgorithmConfig,
    policies: &[ExpertPolicy],
    make_env: &mut dyn FnMut(usize) -> Result<Box<dyn Environment>>,
    horizon: usize,
    replicas: usize,
    seed: u64,
    audit: &[AuditCheck],
    audit_fail_fast: bool,
    mut opts: RunOptions<'_>,
) -> Result<RunOutcome> {
    algorithm.validate()?;
    let mut curve_acc = if opts.track_curve {
        Some(vec![0.0f64; horizon])
    } else {
        None
    };
    let mut outcomes = Vec::with_capacity(replicas);
    for replica in 0..replicas {
        let mut env = make_env(replica)?;
        let outcome = run_replica(
            algorithm,
            policies,
            env.as_mut(),
            horizon,
            seed,
            audit,
            audit_fail_fast,
            replica,
            &mut opts.sink,
            curve_acc.as_deref_mut(),
        )?;
        outcomes.push(outcome);
    }
    let mean_opt = |f: &dyn Fn(&ReplicaOutcome) -> Option<f64>| -> Option<f64> {
        let mut sum = 0.0;
        for o in &outcomes {
            sum += f(o)?;
        }
        Some(sum / outcomes.len() as f64)
    };
    let ratio_true = mean_opt(&|o| o.ratio_true);
    let ratio_reported = mean_opt(&|o| o.ratio_reported);
    let mut bound_checks = BTreeMap::new();
    for o in &outcomes {
        for (k, v) in &o.bound_checks {
            *bound_checks.entry(k.clone()).or_insert(true) &= *v;
        }
    }
    let curve = curve_acc.map(|acc| {
        acc.into_iter()
            .map(|s| s / replicas as f64)
            .collect::<Vec<f64>>()
    });
    Ok(RunOutcome {
        report: RegretReport {
            horizon,
            replica_count: replicas,
            ratio_true,
            ratio_reported,
            bound_checks,
            replicas: outcomes,
        },
        curve,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_replica(
    algorithm: &AlgorithmConfig,
    policies: &[ExpertPolicy],
    env: &mut dyn Environment,
    horizon: usize,
    seed: u64,
    audit: &[AuditCheck],
    audit_fail_fast: bool,
    replica: usize,
    sink: &mut Option<&mut dyn FnMut(usize, &RoundRecord)>,
    mut curve_acc: Option<&mut [f64]>,
) -> Result<ReplicaOutcome> {
    let n = env.num_experts();
    if n == 0 {
        return Err(Error::EmptyExperts);
    }
    if policies.len() != n {
        return Err(Error::ArityMismatch {
            expected: n,
            got: policies.len(),
        });
    }
    let sampling = algorithm.sample_predictions && algorithm.mode == Mode::ThetaRwm;
    let mut prediction_rng = sampling.then(|| {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(replica_seed(seed ^ 0x5A3D_17, replica))
    });
    let mut states = ExpertState::initial(n);
    let mut m_t = 0.0f64;
    let mut recorded_loss_sum = 0.0f64;
    let mut audit_violations = 0usize;
    // per-round series needed for the hindsight-best ratio curve
    let mut m_series: Vec<f64> = Vec::new();
    let mut expert_series: Vec<Vec<f64>> = Vec::new();
    if curve_acc.is_some() {
        m_series.reserve(horizon);
        expert_series = vec![Vec::with_capacity(horizon); n];
    }

    for t in 1..=horizon {
        let w = weights(&states);
        let step = {
            let oracle = WmOracle {
                states: &states,
                cfg: algorithm,
            };
            let ctx = StepContext {
                t,
                weights: &w,
                oracle: &oracle,
            };
            env.step(&ctx)?
        };
        if step.beliefs.len() != n {
            return Err(Error::ArityMismatch {
                expected: n,
                got: step.beliefs.len(),
            });
        }
        for (st, (&b, policy)) in states.iter_mut().zip(step.beliefs.iter().zip(policies)) {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidParameter {
                    what: "belief",
                    value: b,
                });
            }
            st.belief = b;
            st.report = policy.report(b);
        }
        let q = match algorithm.mode {
            Mode::DeterministicWm => f64::from(wm_predict(&states, algorithm.tie_break)?),
            Mode::ThetaRwm => theta_rwm_predict(&states, algorithm.theta)?,
        };
        let r = match step.realization {
            Realization::Fixed(r) => r,
            Realization::OppositeOfAlgorithm => 1 - committed_decision(q, algorithm.mode),
        };
        let alg_loss = match prediction_rng.as_mut() {
            // expected-loss accounting is the default; sampling is a
            // demonstration mode and carries sampling variance
            None => (q - f64::from(r)).abs(),
            Some(rng) => {
                use rand::Rng;
                let sampled = f64::from(rng.gen::<f64>() < q);
                (sampled - f64::from(r)).abs()
            }
        };
        let lp_before = log_potential(&states);

        update_weights(&algorithm.rule, &mut states, r)?;

        let record = RoundRecord {
            t,
            q,
            r,
            alg_loss,
            potential: lp_before.exp(),
            reports: states.iter().map(|s| s.report).collect(),
            beliefs: step.beliefs,
            log_potential: lp_before,
        };
        let lp_after = log_potential(&states);
        let violations = invariant_audit(algorithm, &record, lp_after, &states, audit);
        if !violations.is_empty() {
            if audit_fail_fast {
                let v = &violations[0];
                return Err(Error::AuditViolation {
                    round: v.round,
                    check: audit_name(v.check).to_owned(),
                    detail: v.detail.clone(),
                });
            }
            audit_violations += violations.len();
        }
        m_t += alg_loss;
        recorded_loss_sum += record.alg_loss;
        if curve_acc.is_some() {
            m_series.push(m_t);
            for (series, st) in expert_series.iter_mut().zip(&states) {
                series.push(st.true_loss);
            }
        }
        if let Some(s) = sink.as_mut() {
            s(replica, &record);
        }
    }

    if let Some(acc) = curve_acc.as_deref_mut() {
        let best = (0..n)
            .min_by(|&a, &b| {
                states[a]
                    .true_loss
                    .partial_cmp(&states[b].true_loss)
                    .expect("finite losses")
            })
            .expect("at least one expert");
        for t in 0..horizon {
            let denom = expert_series[best][t];
            acc[t] += if denom > 0.0 {
                m_series[t] / denom
            } else {
                f64::INFINITY
            };
        }
    }

    if audit.contains(&AuditCheck::LossAccounting) && (m_t - recorded_loss_sum).abs() > 1e-9 {
        let detail = format!("M_T {m_t} != recorded sum {recorded_loss_sum}");
        if audit_fail_fast {
            return Err(Error::AuditViolation {
                round: horizon,
                check: "loss-accounting".to_owned(),
                detail,
            });
        }
        audit_violations += 1;
    }

    let m_true: Vec<f64> = states.iter().map(|s| s.true_loss).collect();
    let m_reported: Vec<f64> = states.iter().map(|s| s.reported_loss).collect();
    let min_true = m_true.iter().copied().fold(f64::INFINITY, f64::min);
    let min_rep = m_reported.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio_true = (min_true > 0.0).then(|| m_t / min_true);
    let ratio_reported = (min_rep > 0.0).then(|| m_t / min_rep);
    // regret guarantees speak about expected loss; skip them when sampling
    let bound_checks = if sampling {
        BTreeMap::new()
    } else {
        regret_bound_checks(algorithm, n, m_t, min_rep)
    };
    Ok(ReplicaOutcome {
        replica,
        m_t,
        m_true,
        m_reported,
        ratio_true,
        ratio_reported,
        min_true_loss_zero: !(min_true > 0.0),
        bound_checks,
        audit_violations,
    })
}

/// Theorem guarantees evaluated on the finished replica, keyed by id.
fn regret_bound_checks(
    algorithm: &AlgorithmConfig,
    n: usize,
    m_t: f64,
    min_reported: f64,
) -> BTreeMap<String, bool> {
    let mut out = BTreeMap::new();
    let eta = algorithm.rule.eta();
    let ln_n = (n as f64).ln();
    match (algorithm.mode, algorithm.rule.name()) {
        (Mode::DeterministicWm, "spherical") => {
            let bound = 2.0 / (2.0 - SQRT2) * ((1.0 + eta) * min_reported + ln_n / eta);
            out.insert("thm3.2".to_owned(), m_t <= bound + 1e-9);
        }
        (Mode::ThetaRwm, "brier") if (algorithm.theta - 0.382).abs() < 1e-12 => {
            let bound = 2.62 * ((1.0 + eta) * min_reported + ln_n / eta);
            out.insert("thm6.2".to_owned(), m_t <= bound + 1e-9);
        }
        (Mode::DeterministicWm, "standard") => {
            let bound = 2.0 * (1.0 + eta) * min_reported + 2.0 * ln_n / eta;
            out.insert("classic-reported".to_owned(), m_t <= bound + 1e-9);
        }
        _ => {}
    }
    out
}

/// Floor check for randomized runs on adversarial
/// instances: the averaged true-loss ratio must stay above 1 + delta.
pub fn randomized_floor_check(report: &RegretReport, delta: f64) -> Result<f64> {
    let ratio = report.ratio_true.ok_or(Error::MinLossZero)?;
    if ratio >= 1.0 + delta {
        Ok(ratio)
    } else {
        Err(Error::FloorCheckFailed {
            ratio,
            required: 1.0 + delta,
        })
    }
}

/// Deterministic per-replica seed derivation (splitmix64 over the base
/// seed and replica index).
pub fn replica_seed(seed: u64, replica: usize) -> u64 {
    let mut x = seed ^ (replica as u64).wrapping_mul(0xA076_1D64_78BD_642F);
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::potential;

    fn sym_lb_config(rule: &str, eta: f64, horizon: usize, rounded: bool) -> RunConfig {
        RunConfig {
            algorithm: AlgorithmSpec::deterministic(rule, eta),
            environment: EnvironmentSpec {
                use_rounded: rounded,
                ..EnvironmentSpec::of_kind(EnvKind::SymLb)
            },
            policies: PoliciesSpec::Uniform(PolicyKind::Honest),
            horizon,
            replicas: 1,
            seed: 0,
            audit: vec![],
            audit_fail_fast: true,
        }
    }

    #[test]
    fn sym_lb_rounded_brier_hits_exact_bound() {
        // gap 1/4 -> k = 4 -> block 9; T = 900 gives ratio exactly 2 + 1/4
        let outcome = run(&sym_lb_config("brier", 1e-3, 900, true)).unwrap();
        let ratio = outcome.report.ratio_true.unwrap();
        assert!((ratio - 2.25).abs() < 1e-12, "ratio {ratio}");
        assert_eq!(outcome.report.replicas[0].m_t, 900.0);
    }

    #[test]
    fn sym_lb_phase1_keeps_extreme_experts_balanced() {
        // after every even phase-1 round the weights of the
        // 0-reporter and the 1-reporter agree
        let cfg = sym_lb_config("spherical", 1e-3, 400, false);
        let n = cfg.environment.num_experts();
        let algorithm = cfg.algorithm.resolve(n, cfg.horizon).unwrap();
        let policies = cfg.policies.resolve(n, &algorithm.rule).unwrap();
        let mut env = cfg
            .environment
            .build(&algorithm.rule, cfg.horizon, 0, 0)
            .unwrap();
        let mut states = ExpertState::initial(n);
        let phase1 = 362; // round(400 * 2 / 2.2071)
        for t in 1..=phase1 {
            let w = weights(&states);
            let step = {
                let oracle = WmOracle {
                    states: &states,
                    cfg: &algorithm,
                };
                env.step(&StepContext {
                    t,
                    weights: &w,
                    oracle: &oracle,
                })
                .unwrap()
            };
            for (st, (&b, policy)) in states.iter_mut().zip(step.beliefs.iter().zip(&policies)) {
                st.belief = b;
                st.report = policy.report(b);
            }
            let q = f64::from(wm_predict(&states, algorithm.tie_break).unwrap());
            let r = match step.realization {
                Realization::Fixed(r) => r,
                Realization::OppositeOfAlgorithm => 1 - committed_decision(q, algorithm.mode),
            };
            update_weights(&algorithm.rule, &mut states, r).unwrap();
            if t % 2 == 0 {
                let rel = (states[1].log_weight - states[2].log_weight).abs();
                assert!(rel <= 1e-9, "round {t}: log-weight gap {rel}");
                assert_eq!(states[1].reported_loss, states[2].reported_loss);
            }
        }
    }

    #[test]
    fn std_lb_blowup_and_reported_bound() {
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::deterministic("standard", 1e-4),
            environment: EnvironmentSpec {
                epsilon: Some(1e-4),
                ..EnvironmentSpec::of_kind(EnvKind::StdLb)
            },
            policies: PoliciesSpec::Uniform(PolicyKind::Strategic),
            horizon: 1000,
            replicas: 1,
            seed: 0,
            audit: vec![],
            audit_fail_fast: true,
        };
        let outcome = run(&cfg).unwrap();
        let rep = &outcome.report.replicas[0];
        assert_eq!(rep.m_t, 1000.0);
        assert!(
            rep.ratio_true.unwrap() >= 3.99,
            "true ratio {:?}",
            rep.ratio_true
        );
        assert!(rep.bound_checks["classic-reported"]);
        // reported ratio obeys the classical factor-2 guarantee
        let min_rep = rep.m_reported.iter().copied().fold(f64::INFINITY, f64::min);
        let eta = 1e-4;
        assert!(
            rep.ratio_reported.unwrap()
                <= 2.0 * (1.0 + eta) + 2.0 * (2.0f64).ln() / (eta * min_rep) + 1e-6
        );
    }

    #[test]
    fn nonmono_standard_same_side_pair() {
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::deterministic("standard", 1e-3),
            environment: EnvironmentSpec::nonmono(0.47, 0.49),
            policies: PoliciesSpec::Uniform(PolicyKind::Strategic),
            horizon: 2000,
            replicas: 1,
            seed: 0,
            audit: vec![],
            audit_fail_fast: true,
        };
        let outcome = run(&cfg).unwrap();
        let rep = &outcome.report.replicas[0];
        let ratio = rep.ratio_true.unwrap();
        let t = 2000.0;
        assert!(ratio >= 2.0 + 0.02 - 10.0 / t, "ratio {ratio}");
        // both experts together lose 1 - (b2 - b1)/2 = 0.99 per round
        let combined = rep.m_true[0] + rep.m_true[1];
        assert!(
            (combined - 0.99 * t).abs() < 1.0,
            "combined loss {combined}"
        );
    }

    #[test]
    fn replica_determinism_bitwise() {
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::deterministic("spherical", 1e-2),
            environment: EnvironmentSpec {
                n_experts: Some(4),
                ..EnvironmentSpec::of_kind(EnvKind::Hmm)
            },
            policies: PoliciesSpec::Uniform(PolicyKind::Honest),
            horizon: 300,
            replicas: 2,
            seed: 42,
            audit: all_audits(),
            audit_fail_fast: true,
        };
        let collect = || {
            let mut records: Vec<(usize, String)> = Vec::new();
            let mut sink = |k: usize, rec: &RoundRecord| {
                records.push((k, serde_json::to_string(rec).unwrap()));
            };
            let outcome = run_with(
                &cfg,
                RunOptions {
                    sink: Some(&mut sink),
                    track_curve: true,
                },
            )
            .unwrap();
            (records, serde_json::to_string(&outcome.report).unwrap())
        };
        let (rec_a, rep_a) = collect();
        let (rec_b, rep_b) = collect();
        assert_eq!(rec_a, rec_b);
        assert_eq!(rep_a, rep_b);
    }

    #[test]
    fn ic_rules_make_strategic_equal_honest() {
        for rule in ["spherical", "quadratic"] {
            let base = |policies| RunConfig {
                algorithm: AlgorithmSpec::deterministic(rule, 1e-2),
                environment: EnvironmentSpec {
                    n_experts: Some(5),
                    ..EnvironmentSpec::of_kind(EnvKind::Hmm)
                },
                policies,
                horizon: 500,
                replicas: 1,
                seed: 7,
                audit: vec![],
                audit_fail_fast: true,
            };
            let honest = run(&base(PoliciesSpec::Uniform(PolicyKind::Honest))).unwrap();
            let strategic = run(&base(PoliciesSpec::Uniform(PolicyKind::Strategic))).unwrap();
            let (h, s) = (&honest.report.replicas[0], &strategic.report.replicas[0]);
            assert_eq!(h.m_t, s.m_t, "{rule}");
            assert_eq!(h.ratio_true, s.ratio_true);
            assert_eq!(s.ratio_true, s.ratio_reported);
        }
    }

    #[test]
    fn audit_flags_doctored_potential() {
        let rule = ScoringRule::from_identifier("spherical", 0.1).unwrap();
        let cfg = AlgorithmConfig::deterministic_wm(rule);
        let mut states = ExpertState::initial(2);
        // indifferent reports make the drop inequality tight, so the
        // doctored 10% inflation must trip it
        states[0].report = 0.5;
        states[1].report = 0.5;
        let record = RoundRecord {
            t: 5,
            q: 1.0,
            r: 0,
            alg_loss: 1.0,
            potential: potential(&states),
            reports: vec![0.5, 0.5],
            beliefs: vec![0.5, 0.5],
            log_potential: log_potential(&states),
        };
        update_weights(&cfg.rule, &mut states, 0).unwrap();
        let clean = invariant_audit(
            &cfg,
            &record,
            log_potential(&states),
            &states,
            &[AuditCheck::PotentialDrop],
        );
        assert!(clean.is_empty());
        // inflate one weight by 10%
        states[0].log_weight += 0.1f64.ln_1p();
        let flagged = invariant_audit(
            &cfg,
            &record,
            log_potential(&states),
            &states,
            &[AuditCheck::PotentialDrop],
        );
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].round, 5);
    }

    #[test]
    fn strict_config_parsing_rejects_unknown_keys() {
        let good = r#"{
            "algorithm": {"rule": "spherical", "eta": 0.01},
            "environment": {"kind": "sym-lb"},
            "policies": "honest",
            "horizon": 100
        }"#;
        assert!(serde_json::from_str::<RunConfig>(good).is_ok());
        let bad = good.replace("\"horizon\": 100", "\"horizon\": 100, \"bogus\": 1");
        assert!(serde_json::from_str::<RunConfig>(&bad).is_err());
        let bad_alg = good.replace("\"eta\": 0.01", "\"eta\": 0.01, \"x\": 2");
        assert!(serde_json::from_str::<RunConfig>(&bad_alg).is_err());
        let bad_audit = good.replace(
            "\"policies\": \"honest\",",
            "\"policies\": \"honest\", \"audit\": [\"nope\"],",
        );
        assert!(serde_json::from_str::<RunConfig>(&bad_audit).is_err());
    }

    #[test]
    fn foreign_env_params_rejected() {
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::deterministic("spherical", 1e-2),
            environment: EnvironmentSpec {
                epsilon: Some(0.01),
                ..EnvironmentSpec::of_kind(EnvKind::SymLb)
            },
            policies: PoliciesSpec::Uniform(PolicyKind::Honest),
            horizon: 10,
            replicas: 1,
            seed: 0,
            audit: vec![],
            audit_fail_fast: true,
        };
        assert!(matches!(run(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn greedy_with_randomized_mode_unsupported() {
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::theta_rwm("brier", 1e-2, 0.382),
            environment: EnvironmentSpec::of_kind(EnvKind::GreedyLb),
            policies: PoliciesSpec::Uniform(PolicyKind::Honest),
            horizon: 10,
            replicas: 1,
            seed: 0,
            audit: vec![],
            audit_fail_fast: true,
        };
        assert!(matches!(run(&cfg), Err(Error::OracleUnsupported)));
    }

    #[test]
    fn per_expert_policy_arity_checked() {
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::deterministic("spherical", 1e-2),
            environment: EnvironmentSpec::of_kind(EnvKind::SymLb),
            policies: PoliciesSpec::PerExpert(vec![PolicyKind::Honest; 2]),
            horizon: 10,
            replicas: 1,
            seed: 0,
            audit: vec![],
            audit_fail_fast: true,
        };
        assert!(matches!(
            run(&cfg),
            Err(Error::ArityMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn sampling_mode_is_seeded_and_skips_bound_checks() {
        let cfg = |sample| RunConfig {
            algorithm: AlgorithmSpec {
                sample_predictions: sample,
                ..AlgorithmSpec::theta_rwm("brier", 1e-2, 0.382)
            },
            environment: EnvironmentSpec {
                n_experts: Some(3),
                ..EnvironmentSpec::of_kind(EnvKind::Hmm)
            },
            policies: PoliciesSpec::Uniform(PolicyKind::Honest),
            horizon: 200,
            replicas: 1,
            seed: 4,
            audit: all_audits(),
            audit_fail_fast: true,
        };
        let expected = run(&cfg(false)).unwrap();
        assert!(expected.report.bound_checks.contains_key("thm6.2"));
        let sampled_a = run(&cfg(true)).unwrap();
        let sampled_b = run(&cfg(true)).unwrap();
        assert!(sampled_a.report.bound_checks.is_empty());
        assert_eq!(
            sampled_a.report.replicas[0].m_t,
            sampled_b.report.replicas[0].m_t
        );
        // sampled losses are 0/1 valued, so totals are integers
        assert_eq!(sampled_a.report.replicas[0].m_t.fract(), 0.0);
    }

    #[test]
    fn floor_check_requires_positive_min_loss() {
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::theta_rwm("spherical", 1e-2, 0.382),
            environment: EnvironmentSpec::of_kind(EnvKind::SymLb),
            policies: PoliciesSpec::Uniform(PolicyKind::Honest),
            horizon: 1,
            replicas: 1,
            seed: 0,
            audit: vec![],
            audit_fail_fast: true,
        };
        // a single phase-1 round leaves the correct extreme expert at zero loss
        let outcome = run(&cfg).unwrap();
        assert!(matches!(
            randomized_floor_check(&outcome.report, 0.05),
            Err(Error::MinLossZero)
        ));
    }

    #[test]
    fn scale_invariance_of_decisions_under_family_parameter() {
        // the same generator at different family scales must produce the
        // same decision stream (weights only shift by a common log constant)
        let gen = ScoringRule::from_identifier("spherical", 0.1)
            .unwrap()
            .normalize()
            .unwrap();
        let stream = |a: f64| {
            let rule = gen.family_member(a, 0.05).unwrap();
            let algorithm = AlgorithmConfig::deterministic_wm(rule);
            let policies = vec![ExpertPolicy::honest(); 3];
            let mut make_env = |k: usize| -> Result<Box<dyn Environment>> {
                Ok(Box::new(crate::environments::HmmEnv::new(HmmParams {
                    n_experts: 3,
                    seed: replica_seed(99, k),
                    ..HmmParams::default()
                })?))
            };
            let mut qs: Vec<f64> = Vec::new();
            let mut sink = |_k: usize, rec: &RoundRecord| qs.push(rec.q);
            run_trial(
                &algorithm,
                &policies,
                &mut make_env,
                400,
                1,
                99,
                &[],
                true,
                RunOptions {
                    sink: Some(&mut sink),
                    track_curve: false,
                },
            )
            .unwrap();
            qs
        };
        assert_eq!(stream(0.5), stream(1.0));
        assert_eq!(stream(1.0), stream(3.0));
    }
}

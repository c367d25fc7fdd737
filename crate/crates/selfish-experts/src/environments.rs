//! Sources of per-round (beliefs, realization): the adversarial lower-bound
//! constructions and the stochastic two-state HMM generator.
//!
//! Adversarial generators receive the algorithm's committed decision (or a
//! decision oracle for lookahead). All targeted algorithms are
//! deterministic, so this is equivalent to an oblivious adversary that
//! simulates the algorithm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scoring::{NormalizedRule, ScoringRule, SYMMETRY_TOL};

/// How the realization of a round is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Realization {
    Fixed(u8),
    OppositeOfAlgorithm,
}

/// One environment round: per-expert beliefs plus the realization rule.
#[derive(Debug, Clone)]
pub struct EnvironmentStep {
    pub beliefs: Vec<f64>,
    pub realization: Realization,
}

/// Evaluates what the (deterministic) algorithm would decide for
/// hypothetical reports, given the current weights.
pub trait DecisionOracle {
    /// Decision for `reports` under the current weights.
    fn decide(&self, reports: &[f64]) -> Result<u8>;

    /// Decision for `then_reports` after first applying the weight update
    /// for (`first_reports`, `first_realization`).
    fn decide_after(
        &self,
        first_reports: &[f64],
        first_realization: u8,
        then_reports: &[f64],
    ) -> Result<u8>;
}

/// Read-only view the harness hands to an environment each round.
pub struct StepContext<'a> {
    /// 1-based round index.
    pub t: usize,
    /// Current expert weights (common scale factored out).
    pub weights: &'a [f64],
    pub oracle: &'a dyn DecisionOracle,
}

/// Per-round belief/realization source.
pub trait Environment {
    fn num_experts(&self) -> usize;
    fn step(&mut self, ctx: &StepContext<'_>) -> Result<EnvironmentStep>;
}

// ---------------------------------------------------------------------------
// Standard-rule blowup instance
// ---------------------------------------------------------------------------

/// Two experts with fixed extreme reports (0, 1) under a threshold rule;
/// realizations oppose the algorithm and beliefs stay consistent with the
/// reports: (1/2 - eps, 1) on r = 1 rounds, (0, 1/2 + eps) on r = 0 rounds.
#[derive(Debug, Clone)]
pub struct StandardLb {
    epsilon: f64,
}

impl StandardLb {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::InvalidParameter {
                what: "epsilon",
                value: epsilon,
            });
        }
        Ok(Self { epsilon })
    }

    /// Default epsilon = 1/T, vanishing at fixed horizons.
    pub fn for_horizon(horizon: usize) -> Result<Self> {
        Self::new(1.0 / horizon as f64)
    }
}

impl Environment for StandardLb {
    fn num_experts(&self) -> usize {
        2
    }

    fn step(&mut self, ctx: &StepContext<'_>) -> Result<EnvironmentStep> {
        let decision = ctx.oracle.decide(&[0.0, 1.0])?;
        let r = 1 - decision;
        let beliefs = if r == 1 {
            vec![0.5 - self.epsilon, 1.0]
        } else {
            vec![0.0, 0.5 + self.epsilon]
        };
        Ok(EnvironmentStep {
            beliefs,
            realization: Realization::Fixed(r),
        })
    }
}

// ---------------------------------------------------------------------------
// Symmetric-gap instance
// ---------------------------------------------------------------------------

/// Three honest experts. Phase 1 (t <= phase1): beliefs (1/2, 0, 1) with
/// realizations opposite the algorithm; phase 2: beliefs (1, 0, 1/2) with
/// realization 0. The phase split is driven by the scoring-rule gap.
#[derive(Debug, Clone)]
pub struct SymmetricLb {
    phase1: usize,
}

impl SymmetricLb {
    /// Rounded split alpha = 2k/(2k+1) with k = ceil(1/gap); the horizon
    /// must be a multiple of 2k + 1.
    pub fn rounded(gap: f64, horizon: usize) -> Result<Self> {
        if !(gap > 0.0 && gap < 1.0) {
            return Err(Error::InvalidParameter {
                what: "gap",
                value: gap,
            });
        }
        let k = (1.0 / gap - 1e-9).ceil() as usize;
        let block = 2 * k + 1;
        if horizon % block != 0 {
            return Err(Error::HorizonIncompatible { horizon, block });
        }
        Ok(Self {
            phase1: horizon / block * 2 * k,
        })
    }

    /// Unrounded split alpha = 2/(2 + gap), phase length rounded to the
    /// nearest round; this is the variant that traces 2 + gap numerically.
    pub fn unrounded(gap: f64, horizon: usize) -> Result<Self> {
        if !(gap > 0.0 && gap < 1.0) {
            return Err(Error::InvalidParameter {
                what: "gap",
                value: gap,
            });
        }
        let phase1 = (horizon as f64 * 2.0 / (2.0 + gap)).round() as usize;
        Ok(Self {
            phase1: phase1.min(horizon),
        })
    }

    pub fn phase1(&self) -> usize {
        self.phase1
    }
}

impl Environment for SymmetricLb {
    fn num_experts(&self) -> usize {
        3
    }

    fn step(&mut self, ctx: &StepContext<'_>) -> Result<EnvironmentStep> {
        if ctx.t <= self.phase1 {
            Ok(EnvironmentStep {
                beliefs: vec![0.5, 0.0, 1.0],
                realization: Realization::OppositeOfAlgorithm,
            })
        } else {
            Ok(EnvironmentStep {
                beliefs: vec![1.0, 0.0, 0.5],
                realization: Realization::Fixed(0),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Greedy punishment instance
// ---------------------------------------------------------------------------

/// Greedy variant of the symmetric instance: e0 reports 1/2 and accumulates
/// the gap premium; whenever a two-step lookahead confirms the algorithm
/// would follow e0's advice on both punish rounds, the environment emits the
/// punish block (0, 1, 1/2) then (0, 1/2, 1) with r = 1 twice. Otherwise it
/// emits a normal alternation round (1/2, 0, 1) against the algorithm.
#[derive(Debug, Clone, Default)]
pub struct GreedyLb {
    pending: Option<[f64; 3]>,
}

impl GreedyLb {
    pub fn new() -> Self {
        Self::default()
    }
}

const PUNISH_FIRST: [f64; 3] = [0.0, 1.0, 0.5];
const PUNISH_SECOND: [f64; 3] = [0.0, 0.5, 1.0];

impl Environment for GreedyLb {
    fn num_experts(&self) -> usize {
        3
    }

    fn step(&mut self, ctx: &StepContext<'_>) -> Result<EnvironmentStep> {
        if let Some(beliefs) = self.pending.take() {
            return Ok(EnvironmentStep {
                beliefs: beliefs.to_vec(),
                realization: Realization::Fixed(1),
            });
        }
        let follows_first = ctx.oracle.decide(&PUNISH_FIRST)? == 0;
        let punish =
            follows_first && ctx.oracle.decide_after(&PUNISH_FIRST, 1, &PUNISH_SECOND)? == 0;
        if punish {
            self.pending = Some(PUNISH_SECOND);
            Ok(EnvironmentStep {
                beliefs: PUNISH_FIRST.to_vec(),
                realization: Realization::Fixed(1),
            })
        } else {
            Ok(EnvironmentStep {
                beliefs: vec![0.5, 0.0, 1.0],
                realization: Realization::OppositeOfAlgorithm,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Asymmetric-corner instance
// ---------------------------------------------------------------------------

/// Two honest experts with opposite extreme beliefs; realizations oppose
/// the algorithm. Corner asymmetry of the normalized rule makes the expert
/// with the milder wrong-corner score overtake on weight despite an extra
/// mistake.
#[derive(Debug, Clone)]
pub struct AsymmetricLb {
    mirror: bool,
}

impl AsymmetricLb {
    /// Builds from the normalized rule's corners. Errors when the corners
    /// are fully symmetric (the instance would be vacuous).
    pub fn from_normalized(norm: &NormalizedRule) -> Result<Self> {
        let f01 = norm.score(0.0, 1);
        let f10 = norm.score(1.0, 0);
        let f00 = norm.score(0.0, 0);
        let f11 = norm.score(1.0, 1);
        let semi = (f00 - 1.0).abs() <= SYMMETRY_TOL
            && (f11 - 1.0).abs() <= SYMMETRY_TOL
            && f01.abs() <= SYMMETRY_TOL
            && f10.abs() <= SYMMETRY_TOL;
        if semi {
            return Err(Error::VacuousInstance(format!(
                "{} has symmetric corners",
                norm.base().name()
            )));
        }
        // primary branch wants the 1-reporter to carry the zero wrong-corner
        Ok(Self {
            mirror: f10 > SYMMETRY_TOL,
        })
    }
}

impl Environment for AsymmetricLb {
    fn num_experts(&self) -> usize {
        2
    }

    fn step(&mut self, ctx: &StepContext<'_>) -> Result<EnvironmentStep> {
        let beliefs = if self.mirror && ctx.weights[0] > ctx.weights[1] {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 1.0]
        };
        Ok(EnvironmentStep {
            beliefs,
            realization: Realization::OppositeOfAlgorithm,
        })
    }
}

// ---------------------------------------------------------------------------
// Non-monotone rationality instance
// ---------------------------------------------------------------------------

/// Two strategic experts under a rule whose rationality function is not
/// strictly increasing: e1's belief flips between b1 and b2 while e0 holds
/// b0 = 1 - (b1 + b2)/2; realizations oppose the algorithm, so every round
/// costs the pair only 1 - (b2 - b1)/2 in combined true loss.
#[derive(Debug, Clone)]
pub struct NonMonotoneLb {
    b0: f64,
    b1: f64,
    b2: f64,
    pi0: f64,
    pi1: f64,
    pi2: f64,
}

impl NonMonotoneLb {
    /// Requires b1 < b2 with rho(b1) >= rho(b2) under `rule`.
    pub fn new(rule: &ScoringRule, b1: f64, b2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&b1) || !(0.0..=1.0).contains(&b2) || b1 >= b2 {
            return Err(Error::InvalidParameter {
                what: "belief pair",
                value: b2 - b1,
            });
        }
        let pi1 = rule.rationality(b1);
        let pi2 = rule.rationality(b2);
        if pi1 < pi2 - 1e-4 {
            return Err(Error::NoWitnessPair {
                b1,
                b2,
                p1: pi1,
                p2: pi2,
            });
        }
        let b0 = 1.0 - (b1 + b2) / 2.0;
        let pi0 = rule.rationality(b0);
        Ok(Self {
            b0,
            b1,
            b2,
            pi0,
            pi1,
            pi2,
        })
    }
}

impl Environment for NonMonotoneLb {
    fn num_experts(&self) -> usize {
        2
    }

    fn step(&mut self, ctx: &StepContext<'_>) -> Result<EnvironmentStep> {
        if (self.pi1 - self.pi2).abs() <= 1e-4 {
            // equal-report case: the belief tracks the upcoming realization
            let decision = ctx.oracle.decide(&[self.pi0, self.pi1])?;
            let r = 1 - decision;
            let b_e1 = if r == 1 { self.b2 } else { self.b1 };
            Ok(EnvironmentStep {
                beliefs: vec![self.b0, b_e1],
                realization: Realization::Fixed(r),
            })
        } else {
            // pi1 > pi2: case split on the weighted mean with e1 at pi2
            let (w0, w1) = (ctx.weights[0], ctx.weights[1]);
            let mean = (w0 * self.pi0 + w1 * self.pi2) / (w0 + w1);
            let b_e1 = if mean >= 0.5 { self.b1 } else { self.b2 };
            Ok(EnvironmentStep {
                beliefs: vec![self.b0, b_e1],
                realization: Realization::OppositeOfAlgorithm,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Two-state hidden Markov model
// ---------------------------------------------------------------------------

/// HMM generator parameters; defaults follow the simulation setup.
#[derive(Debug, Clone, Copy)]
pub struct HmmParams {
    pub n_experts: usize,
    /// Probability of switching state each round (both directions).
    pub p_transition: f64,
    /// Good-state belief is min(Exp(1)/exp_scale, 1).
    pub exp_scale: f64,
    /// Bad-state belief is Uniform[bad_state_low, 1].
    pub bad_state_low: f64,
    pub seed: u64,
}

impl Default for HmmParams {
    fn default() -> Self {
        Self {
            n_experts: 10,
            p_transition: 0.1,
            exp_scale: 5.0,
            bad_state_low: 0.5,
            seed: 0,
        }
    }
}

impl HmmParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 {
            return Err(Error::EmptyExperts);
        }
        if !(0.0..=1.0).contains(&self.p_transition) {
            return Err(Error::InvalidParameter {
                what: "p_transition",
                value: self.p_transition,
            });
        }
        if !(self.exp_scale > 0.0) {
            return Err(Error::InvalidParameter {
                what: "exp_scale",
                value: self.exp_scale,
            });
        }
        if !(0.0..1.0).contains(&self.bad_state_low) {
            return Err(Error::InvalidParameter {
                what: "bad_state_low",
                value: self.bad_state_low,
            });
        }
        Ok(())
    }
}

/// Experts flip between a good state (informative exponential beliefs) and
/// a bad state (uninformative uniform beliefs on the wrong half); the
/// realization is a fair coin, mirrored into the beliefs.
///
/// Each expert draws from its own ChaCha substream, so replicas are
/// bit-reproducible regardless of expert count elsewhere.
pub struct HmmEnv {
    params: HmmParams,
    realization_rng: ChaCha8Rng,
    expert_rngs: Vec<ChaCha8Rng>,
    good: Vec<bool>,
}

impl HmmEnv {
    pub fn new(params: HmmParams) -> Result<Self> {
        params.validate()?;
        let mut realization_rng = ChaCha8Rng::seed_from_u64(params.seed);
        realization_rng.set_stream(0);
        let mut expert_rngs = Vec::with_capacity(params.n_experts);
        let mut good = Vec::with_capacity(params.n_experts);
        for i in 0..params.n_experts {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64 + 1);
            // stationary initial state
            good.push(rng.gen::<f64>() < 0.5);
            expert_rngs.push(rng);
        }
        Ok(Self {
            params,
            realization_rng,
            expert_rngs,
            good,
        })
    }

    /// Current hidden states (test hook).
    pub fn states(&self) -> &[bool] {
        &self.good
    }
}

impl Environment for HmmEnv {
    fn num_experts(&self) -> usize {
        self.params.n_experts
    }

    fn step(&mut self, _ctx: &StepContext<'_>) -> Result<EnvironmentStep> {
        let r = u8::from(self.realization_rng.gen::<f64>() < 0.5);
        let mut beliefs = Vec::with_capacity(self.params.n_experts);
        for i in 0..self.params.n_experts {
            let rng = &mut self.expert_rngs[i];
            if rng.gen::<f64>() < self.params.p_transition {
                self.good[i] = !self.good[i];
            }
            let u: f64 = rng.gen();
            let raw = if self.good[i] {
                (-(1.0 - u).ln() / self.params.exp_scale).min(1.0)
            } else {
                self.params.bad_state_low + (1.0 - self.params.bad_state_low) * u
            };
            beliefs.push(if r == 1 { 1.0 - raw } else { raw });
        }
        Ok(EnvironmentStep {
            beliefs,
            realization: Realization::Fixed(r),
        })
    }
}

// ---------------------------------------------------------------------------
// Seeded iid fuzz environment
// ---------------------------------------------------------------------------

/// Seeded iid beliefs with either fair-coin or adversarial realizations;
/// used by the regret-bound property suites.
pub struct IidRandomEnv {
    n: usize,
    rng: ChaCha8Rng,
    adversarial: bool,
}

impl IidRandomEnv {
    pub fn new(n: usize, seed: u64, adversarial: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyExperts);
        }
        Ok(Self {
            n,
            rng: ChaCha8Rng::seed_from_u64(seed),
            adversarial,
        })
    }
}

impl Environment for IidRandomEnv {
    fn num_experts(&self) -> usize {
        self.n
    }

    fn step(&mut self, _ctx: &StepContext<'_>) -> Result<EnvironmentStep> {
        let beliefs = (0..self.n).map(|_| self.rng.gen::<f64>()).collect();
        let realization = if self.adversarial {
            Realization::OppositeOfAlgorithm
        } else {
            Realization::Fixed(u8::from(self.rng.gen::<f64>() < 0.5))
        };
        Ok(EnvironmentStep {
            beliefs,
            realization,
        })
    }
}

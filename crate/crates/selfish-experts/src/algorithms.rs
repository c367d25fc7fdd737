//! Prediction algorithms: deterministic weighted majority and
//! theta-randomized weighted majority over arbitrary weight-update rules.
//!
//! Weights live in log space. At the long horizons of the extended
//! experiments raw products underflow double precision; log-sum-exp keeps
//! 12+ digits and leaves every decision scale-invariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoringRule;

/// Per-expert bookkeeping: log weight, current belief/report, cumulative
/// true and reported absolute losses.
#[derive(Debug, Clone)]
pub struct ExpertState {
    pub id: usize,
    pub log_weight: f64,
    pub belief: f64,
    pub report: f64,
    pub true_loss: f64,
    pub reported_loss: f64,
}

impl ExpertState {
    pub fn new(id: usize) -> Self {
        Self {
            id,
            log_weight: 0.0,
            belief: 0.0,
            report: 0.0,
            true_loss: 0.0,
            reported_loss: 0.0,
        }
    }

    /// Fresh states for `n` experts with unit weights.
    pub fn initial(n: usize) -> Vec<Self> {
        (0..n).map(Self::new).collect()
    }
}

/// Tie handling when the weighted mean report is exactly 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TieBreak {
    #[default]
    #[serde(rename = "choose_one")]
    ChooseOne,
    #[serde(rename = "choose_zero")]
    ChooseZero,
}

/// Prediction mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Mode {
    #[default]
    #[serde(rename = "deterministic_wm")]
    DeterministicWm,
    #[serde(rename = "theta_rwm")]
    ThetaRwm,
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EtaSchedule {
    #[default]
    #[serde(rename = "fixed")]
    Fixed,
    /// eta = min(0.49, sqrt(ln n / T)), fixed for the whole run.
    #[serde(rename = "sqrt_horizon")]
    SqrtHorizon,
}

/// Algorithm configuration: rule, mode, clamp parameter, tie break.
#[derive(Debug, Clone)]
pub struct AlgorithmConfig {
    pub rule: ScoringRule,
    pub mode: Mode,
    pub theta: f64,
    pub tie_break: TieBreak,
    pub eta_schedule: EtaSchedule,
    /// Demonstration only: sample the randomized prediction instead of
    /// accounting the expected loss |q - r|. Regret statements are about
    /// expected loss, so bound checks are skipped in this mode.
    pub sample_predictions: bool,
}

impl AlgorithmConfig {
    pub fn deterministic_wm(rule: ScoringRule) -> Self {
        Self {
            rule,
            mode: Mode::DeterministicWm,
            theta: 0.0,
            tie_break: TieBreak::ChooseOne,
            eta_schedule: EtaSchedule::Fixed,
            sample_predictions: false,
        }
    }

    pub fn theta_rwm(rule: ScoringRule, theta: f64) -> Self {
        Self {
            rule,
            mode: Mode::ThetaRwm,
            theta,
            tie_break: TieBreak::ChooseOne,
            eta_schedule: EtaSchedule::Fixed,
            sample_predictions: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.theta) {
            return Err(Error::InvalidParameter {
                what: "theta",
                value: self.theta,
            });
        }
        if self.eta_schedule == EtaSchedule::Fixed {
            let eta = self.rule.eta();
            if !(eta > 0.0 && eta < 0.5) {
                return Err(Error::EtaOutOfRange {
                    eta,
                    lo: 0.0,
                    hi: 0.5,
                });
            }
        }
        Ok(())
    }

    /// Applies the sqrt-horizon schedule for a run of `n` experts over `t`
    /// rounds; no-op for the fixed schedule.
    pub fn resolve_eta(&self, n: usize, horizon: usize) -> Result<Self> {
        match self.eta_schedule {
            EtaSchedule::Fixed => Ok(self.clone()),
            EtaSchedule::SqrtHorizon => {
                if n < 2 {
                    return Err(Error::InvalidParameter {
                        what: "sqrt_horizon expert count",
                        value: n as f64,
                    });
                }
                let eta = ((n as f64).ln() / horizon as f64).sqrt().min(0.49);
                let mut out = self.clone();
                out.rule = self.rule.with_eta(eta)?;
                Ok(out)
            }
        }
    }
}

/// Actual weights exp(log_weight - max log_weight); scale-free.
pub fn weights(states: &[ExpertState]) -> Vec<f64> {
    let max_lw = states
        .iter()
        .map(|s| s.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    states
        .iter()
        .map(|s| (s.log_weight - max_lw).exp())
        .collect()
}

fn weighted_mean(log_weights: &[f64], reports: &[f64]) -> f64 {
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
    num / den
}

/// Weighted mean report of the current states.
pub fn weighted_mean_report(states: &[ExpertState]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyExperts);
    }
    let lws: Vec<f64> = states.iter().map(|s| s.log_weight).collect();
    let ps: Vec<f64> = states.iter().map(|s| s.report).collect();
    Ok(weighted_mean(&lws, &ps))
}

pub(crate) fn wm_predict_parts(log_weights: &[f64], reports: &[f64], tie: TieBreak) -> u8 {
    let q = weighted_mean(log_weights, reports);
    if q > 0.5 {
        1
    } else if q < 0.5 {
        0
    } else {
        match tie {
            TieBreak::ChooseOne => 1,
            TieBreak::ChooseZero => 0,
        }
    }
}

/// Deterministic weighted majority: 1 if the weighted mean report exceeds
/// 1/2, 0 if below, the tie-break result on exact equality.
pub fn wm_predict(states: &[ExpertState], tie: TieBreak) -> Result<u8> {
    if states.is_empty() {
        return Err(Error::EmptyExperts);
    }
    let lws: Vec<f64> = states.iter().map(|s| s.log_weight).collect();
    let ps: Vec<f64> = states.iter().map(|s| s.report).collect();
    Ok(wm_predict_parts(&lws, &ps, tie))
}

pub(crate) fn theta_clamp(mean: f64, theta: f64) -> f64 {
    if mean <= theta {
        0.0
    } else if mean <= 1.0 - theta {
        mean
    } else {
        1.0
    }
}

/// Theta-randomized weighted majority: the weighted mean report clamped to
/// 0 below theta and to 1 above 1 - theta. Loss is accounted as the
/// expected loss |q - r|; sampling is a separate, demonstration-only mode.
pub fn theta_rwm_predict(states: &[ExpertState], theta: f64) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyExperts);
    }
    if !(0.0..=0.5).contains(&theta) {
        return Err(Error::InvalidParameter {
            what: "theta",
            value: theta,
        });
    }
    Ok(theta_clamp(weighted_mean_report(states)?, theta))
}

/// Multiplies every weight by the rule's update factor for realization `r`
/// and accumulates reported and true absolute losses.
pub fn update_weights(rule: &ScoringRule, states: &mut [ExpertState], r: u8) -> Result<()> {
    let rf = f64::from(r);
    for st in states.iter_mut() {
        let factor = rule.score(st.report, r);
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::NonPositiveUpdate {
                report: st.report,
                realization: r,
                score: factor,
            });
        }
        st.log_weight += factor.ln();
        st.reported_loss += (st.report - rf).abs();
        st.true_loss += (st.belief - rf).abs();
    }
    Ok(())
}

/// Log of the potential: log-sum-exp over log weights.
pub fn log_potential(states: &[ExpertState]) -> f64 {
    let max_lw = states
        .iter()
        .map(|s| s.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_lw == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = states.iter().map(|s| (s.log_weight - max_lw).exp()).sum();
    max_lw + sum.ln()
}

/// Potential Phi = sum of weights, via log-sum-exp.
pub fn potential(states: &[ExpertState]) -> f64 {
    log_potential(states).exp()
}

/// One time step of a run. Serializes to JSONL with exactly the keys
/// `t`, `q`, `r`, `alg_loss`, `potential`, `reports`, `beliefs`;
/// `potential` is Phi entering the round, before the weight update.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub t: usize,
    pub q: f64,
    pub r: u8,
    pub alg_loss: f64,
    pub potential: f64,
    pub reports: Vec<f64>,
    pub beliefs: Vec<f64>,
    #[serde(skip)]
    pub log_potential: f64,
}

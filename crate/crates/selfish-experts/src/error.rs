//! Crate-wide error type.

use std::fmt;

/// Errors produced by rule analysis, environments, and the run harness.
#[derive(Debug)]
pub enum Error {
    /// Rule identifier not among the known builtins.
    UnknownRule(String),
    /// Learning rate outside the permitted range.
    EtaOutOfRange { eta: f64, lo: f64, hi: f64 },
    /// Beta-family parameter outside (0, 1].
    AlphaOutOfRange(f64),
    /// Generic parameter violation (name + offending value).
    InvalidParameter { what: &'static str, value: f64 },
    /// Normalization scale b <= 0 or rule not finite on the probe points.
    DegenerateRule { detail: String },
    /// Rule failed the symmetry precondition of the symmetric gap.
    NotSymmetric { at: f64, delta: f64 },
    /// Normalized corners violate the semi-symmetric precondition.
    CornerCondition { corner: &'static str, value: f64 },
    /// Asymmetry parameters came out with c <= d.
    NotStrictlyProper { c: f64, d: f64 },
    /// Properness gate failed; carries the witness.
    NonProper {
        rule: String,
        belief: f64,
        argmax: f64,
    },
    /// Operation needs at least one expert.
    EmptyExperts,
    /// Weight-update factor was non-positive.
    NonPositiveUpdate {
        report: f64,
        realization: u8,
        score: f64,
    },
    /// Expert count mismatch between environment, policies, and states.
    ArityMismatch { expected: usize, got: usize },
    /// Horizon not compatible with the rounded phase-split block length.
    HorizonIncompatible { horizon: usize, block: usize },
    /// Asymmetric instance requested for a rule with symmetric corners.
    VacuousInstance(String),
    /// No belief pair with non-increasing rationality was found.
    NoWitnessPair { b1: f64, b2: f64, p1: f64, p2: f64 },
    /// Decision oracle not available (randomized prediction mode).
    OracleUnsupported,
    /// Ratio undefined: best expert has zero loss.
    MinLossZero,
    /// Randomized floor check fell below the configured threshold.
    FloorCheckFailed { ratio: f64, required: f64 },
    /// A proof-invariant audit fired during a fail-fast run.
    AuditViolation {
        round: usize,
        check: String,
        detail: String,
    },
    /// Incomplete beta continued fraction failed to converge.
    QuadratureNonConvergence { a: f64, b: f64, x: f64 },
    /// Configuration file problem (strict parsing, unknown keys, bad values).
    Config(String),
    /// I/O error from the CLI surface.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownRule(name) => write!(f, "unknown rule identifier: {name:?}"),
            Self::EtaOutOfRange { eta, lo, hi } => {
                write!(f, "eta {eta} outside ({lo}, {hi})")
            }
            Self::AlphaOutOfRange(a) => write!(f, "beta-family alpha {a} outside (0, 1]"),
            Self::InvalidParameter { what, value } => write!(f, "invalid {what}: {value}"),
            Self::DegenerateRule { detail } => write!(f, "degenerate rule: {detail}"),
            Self::NotSymmetric { at, delta } => {
                write!(
                    f,
                    "rule is not symmetric: |f'(p,0) - f'(1-p,1)| = {delta:e} at p = {at}"
                )
            }
            Self::CornerCondition { corner, value } => {
                write!(
                    f,
                    "semi-symmetric corner condition violated: f'{corner} = {value}"
                )
            }
            Self::NotStrictlyProper { c, d } => {
                write!(
                    f,
                    "asymmetry parameters require c > d, got c = {c}, d = {d}"
                )
            }
            Self::NonProper {
                rule,
                belief,
                argmax,
            } => {
                write!(
                    f,
                    "rule {rule} is not proper: belief {belief} maximizes at {argmax}"
                )
            }
            Self::EmptyExperts => write!(f, "at least one expert is required"),
            Self::NonPositiveUpdate {
                report,
                realization,
                score,
            } => write!(
                f,
                "non-positive update factor {score} at report {report}, realization {realization}"
            ),
            Self::ArityMismatch { expected, got } => {
                write!(f, "expert arity mismatch: expected {expected}, got {got}")
            }
            Self::HorizonIncompatible { horizon, block } => {
                write!(f, "horizon {horizon} is not a multiple of {block}")
            }
            Self::VacuousInstance(detail) => write!(f, "instance is vacuous: {detail}"),
            Self::NoWitnessPair { b1, b2, p1, p2 } => write!(
                f,
                "no non-increasing rationality witness: rho({b1}) = {p1} < rho({b2}) = {p2}"
            ),
            Self::OracleUnsupported => {
                write!(
                    f,
                    "decision oracle unavailable in randomized prediction mode"
                )
            }
            Self::MinLossZero => write!(f, "ratio undefined: best expert has zero loss"),
            Self::FloorCheckFailed { ratio, required } => {
                write!(f, "floor check failed: ratio {ratio} below {required}")
            }
            Self::AuditViolation {
                round,
                check,
                detail,
            } => {
                write!(f, "audit {check} violated at round {round}: {detail}")
            }
            Self::QuadratureNonConvergence { a, b, x } => {
                write!(f, "incomplete beta did not converge at I_{x}({a}, {b})")
            }
            Self::Config(detail) => write!(f, "config error: {detail}"),
            Self::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

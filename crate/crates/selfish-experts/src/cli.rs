//! Command-line surface: rule analysis queries, canned reproductions of the
//! lower-bound comparison table and the HMM regret curves, and config-file
//! driven simulation runs.
//!
//! All canned outputs are seed-deterministic; CSV numbers are fixed at six
//! significant digits so reruns are byte-identical.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experts::PolicyKind;
use crate::harness::PoliciesSpec;
use crate::harness::{
    run_with, AlgorithmSpec, EnvKind, EnvironmentSpec, RegretReport, RunConfig, RunOptions,
};
use crate::scoring::{GapReport, ScoringRule, Witness};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SELFISH_EXPERTS_OUT";

/// Column order of the lower-bound comparison table.
pub const TABLE_COLUMNS: [&str; 7] = [
    "beta:0.1",
    "beta:0.3",
    "beta:0.5",
    "beta:0.7",
    "beta:0.9",
    "brier",
    "spherical",
];

/// Rules plotted by the HMM experiment.
pub const HMM_RULES: [&str; 4] = ["standard", "brier", "spherical", "beta:0.5"];

// ---------------------------------------------------------------------------
// check-rule
// ---------------------------------------------------------------------------

/// Flat analysis record printed by `check-rule`.
#[derive(Debug, Clone, Serialize)]
pub struct RuleCheck {
    pub rule: String,
    pub eta: f64,
    pub proper: bool,
    pub witness: Option<Witness>,
    pub symmetric: Option<bool>,
    pub semi_symmetric: Option<bool>,
    pub gamma: Option<f64>,
    pub mu: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    pub lb_rounded: Option<f64>,
    pub lb_unrounded: Option<f64>,
}

impl From<GapReport> for RuleCheck {
    fn from(rep: GapReport) -> Self {
        Self {
            rule: rep.rule.clone(),
            eta: f64::NAN, // caller fills
            proper: rep.proper,
            witness: None,
            symmetric: Some(rep.symmetric),
            semi_symmetric: Some(rep.semi_symmetric),
            gamma: rep.gamma,
            mu: rep.mu,
            c: Some(rep.c),
            d: Some(rep.d),
            lb_rounded: rep.lb_rounded,
            lb_unrounded: rep.lb_unrounded,
        }
    }
}

/// Analyzes one rule: properness verdict with witness, gap parameters, and
/// the theoretical lower-bound constants.
pub fn check_rule(id: &str, eta: f64, grid_step: f64) -> Result<RuleCheck> {
    let rule = ScoringRule::from_identifier(id, eta)?;
    let verdict = rule.properness_check(grid_step)?;
    let mut out = if verdict.is_proper() {
        RuleCheck::from(rule.normalize()?.theoretical_lower_bound()?)
    } else {
        RuleCheck {
            rule: id.to_owned(),
            eta,
            proper: false,
            witness: verdict.witness(),
            symmetric: None,
            semi_symmetric: None,
            gamma: None,
            mu: None,
            c: None,
            d: None,
            lb_rounded: None,
            lb_unrounded: None,
        }
    };
    out.eta = eta;
    Ok(out)
}

// ---------------------------------------------------------------------------
// lb-table
// ---------------------------------------------------------------------------

/// The three-row lower-bound comparison: greedy simulation, phase-split
/// simulation, and the per-rule theoretical constants.
#[derive(Debug, Clone, Serialize)]
pub struct LbTable {
    pub horizon: usize,
    pub eta: f64,
    pub columns: Vec<String>,
    pub greedy: Vec<f64>,
    pub simulation: Vec<f64>,
    pub lemma: Vec<GapReport>,
}

fn lb_run(env: EnvironmentSpec, rule: &str, eta: f64, horizon: usize) -> Result<f64> {
    let cfg = RunConfig {
        algorithm: AlgorithmSpec::deterministic(rule, eta),
        environment: env,
        policies: PoliciesSpec::Uniform(PolicyKind::Honest),
        horizon,
        replicas: 1,
        seed: 0,
        audit: vec![],
        audit_fail_fast: true,
    };
    crate::harness::run(&cfg)?
        .report
        .ratio_true
        .ok_or(Error::MinLossZero)
}

/// Computes all three rows at the given horizon and learning rate
/// (defaults elsewhere: T = 10^4, eta = 1e-4).
pub fn lb_table(horizon: usize, eta: f64) -> Result<LbTable> {
    let mut greedy = Vec::new();
    let mut simulation = Vec::new();
    let mut lemma = Vec::new();
    for col in TABLE_COLUMNS {
        greedy.push(lb_run(
            EnvironmentSpec::of_kind(EnvKind::GreedyLb),
            col,
            eta,
            horizon,
        )?);
        simulation.push(lb_run(
            EnvironmentSpec::of_kind(EnvKind::SymLb),
            col,
            eta,
            horizon,
        )?);
        let rule = ScoringRule::from_identifier(col, eta)?;
        lemma.push(rule.normalize()?.theoretical_lower_bound()?);
    }
    Ok(LbTable {
        horizon,
        eta,
        columns: TABLE_COLUMNS.iter().map(|s| (*s).to_owned()).collect(),
        greedy,
        simulation,
        lemma,
    })
}

/// Six significant digits, plain decimal notation.
pub fn fmt_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

fn fmt_lemma_cell(rep: &GapReport) -> String {
    let rounded = rep.lb_rounded.unwrap_or(f64::NAN);
    let unrounded = rep.lb_unrounded.unwrap_or(f64::NAN);
    let r = {
        let s = format!("{rounded:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    };
    if (unrounded - rounded).abs() < 5e-4 {
        r
    } else {
        format!("{r} ({unrounded:.3})")
    }
}

/// CSV rendering in the published table layout.
pub fn render_lb_table_csv(table: &LbTable) -> String {
    let mut out = String::new();
    out.push_str("instance");
    for c in &table.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    out.push_str("Greedy LB Sim");
    for v in &table.greedy {
        out.push(',');
        out.push_str(&fmt_sig6(*v));
    }
    out.push('\n');
    out.push_str("LB Simulation");
    for v in &table.simulation {
        out.push(',');
        out.push_str(&fmt_sig6(*v));
    }
    out.push('\n');
    out.push_str("Lemma LB");
    for rep in &table.lemma {
        out.push(',');
        out.push_str(&fmt_lemma_cell(rep));
    }
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// hmm experiment
// ---------------------------------------------------------------------------

/// Parameters of the HMM regret-curve experiment; defaults follow the
/// simulation setup (10 experts, T = 10^4, eta = 1e-2, 30 replicas,
/// plain RWM).
#[derive(Debug, Clone)]
pub struct HmmExperimentConfig {
    pub n_experts: usize,
    pub horizon: usize,
    pub eta: f64,
    pub replicas: usize,
    pub theta: f64,
    pub seed: u64,
    pub rules: Vec<String>,
}

impl Default for HmmExperimentConfig {
    fn default() -> Self {
        Self {
            n_experts: 10,
            horizon: 10_000,
            eta: 1e-2,
            replicas: 30,
            theta: 0.0,
            seed: 1,
            rules: HMM_RULES.iter().map(|s| (*s).to_owned()).collect(),
        }
    }
}

/// Per-rule averaged regret curves on the shared HMM streams.
#[derive(Debug, Clone)]
pub struct HmmCurves {
    pub config: HmmExperimentConfig,
    /// curves[i][t-1] = mean over replicas of M(t) / best true loss(t).
    pub curves: Vec<Vec<f64>>,
}

/// Runs the experiment: every rule sees the same seeded belief streams.
pub fn hmm_experiment(config: HmmExperimentConfig) -> Result<HmmCurves> {
    let mut curves = Vec::with_capacity(config.rules.len());
    for rule in &config.rules {
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::theta_rwm(rule, config.eta, config.theta),
            environment: EnvironmentSpec {
                n_experts: Some(config.n_experts),
                ..EnvironmentSpec::of_kind(EnvKind::Hmm)
            },
            policies: PoliciesSpec::Uniform(PolicyKind::Strategic),
            horizon: config.horizon,
            replicas: config.replicas,
            seed: config.seed,
            audit: vec![],
            audit_fail_fast: true,
        };
        let outcome = run_with(
            &cfg,
            RunOptions {
                sink: None,
                track_curve: true,
            },
        )?;
        curves.push(outcome.curve.expect("curve tracking enabled"));
    }
    Ok(HmmCurves { config, curves })
}

/// CSV: `t, ratio_<rule>..., best_expert` with the best-expert line at 1.
pub fn render_hmm_csv(curves: &HmmCurves) -> String {
    let mut out = String::new();
    out.push('t');
    for rule in &curves.config.rules {
        let short = rule.split(':').next().unwrap_or(rule);
        out.push_str(",ratio_");
        out.push_str(short);
    }
    out.push_str(",best_expert\n");
    for t in 1..=curves.config.horizon {
        out.push_str(&t.to_string());
        for c in &curves.curves {
            out.push(',');
            out.push_str(&fmt_sig6(c[t - 1]));
        }
        out.push_str(",1\n");
    }
    out
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Artifacts written by `simulate`.
#[derive(Debug)]
pub struct SimulateOutput {
    pub report: RegretReport,
    pub trace_paths: Vec<PathBuf>,
    pub report_path: PathBuf,
}

/// Runs a config-file experiment, streaming per-round JSONL traces (one
/// file per replica) and writing the JSON regret report.
pub fn simulate(config: &RunConfig, out_dir: &Path) -> Result<SimulateOutput> {
    fs::create_dir_all(out_dir)?;
    let trace_paths: Vec<PathBuf> = (0..config.replicas)
        .map(|k| {
            if config.replicas == 1 {
                out_dir.join("trace.jsonl")
            } else {
                out_dir.join(format!("trace-{k:03}.jsonl"))
            }
        })
        .collect();
    let mut writers: Vec<std::io::BufWriter<fs::File>> = trace_paths
        .iter()
        .map(|p| fs::File::create(p).map(std::io::BufWriter::new))
        .collect::<std::io::Result<_>>()?;
    let mut io_error: Option<std::io::Error> = None;
    let outcome = {
        let mut sink = |replica: usize, record: &crate::algorithms::RoundRecord| {
            if io_error.is_some() {
                return;
            }
            let line = serde_json::to_string(record).expect("round record serializes");
            if let Err(e) = writeln!(writers[replica], "{line}") {
                io_error = Some(e);
            }
        };
        run_with(
            config,
            RunOptions {
                sink: Some(&mut sink),
                track_curve: false,
            },
        )?
    };
    if let Some(e) = io_error {
        return Err(Error::Io(e));
    }
    for w in &mut writers {
        w.flush()?;
    }
    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&outcome.report)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    fs::write(&report_path, json.as_bytes())?;
    Ok(SimulateOutput {
        report: outcome.report,
        trace_paths,
        report_path,
    })
}

// ---------------------------------------------------------------------------
// argument parsing and dispatch
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "selfish-experts",
    version,
    about = "Online prediction with selfish experts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze a scoring rule: properness, gaps, lower-bound constants.
    CheckRule {
        /// standard | quadratic | spherical | brier | hedge | beta:<alpha>
        rule: String,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        /// Belief-grid step of the properness check.
        #[arg(long, default_value_t = 1e-2)]
        grid_step: f64,
    },
    /// Reproduce the lower-bound comparison table.
    LbTable {
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
        #[arg(long, default_value_t = 1e-4)]
        eta: f64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
    },
    /// HMM regret-curve experiment (CSV).
    Hmm {
        #[arg(long, default_value_t = 10)]
        experts: usize,
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
        #[arg(long, default_value_t = 1e-2)]
        eta: f64,
        #[arg(long, default_value_t = 30)]
        replicas: usize,
        /// Clamp parameter of the randomized algorithm (0 = plain RWM).
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a JSON config file: JSONL trace plus JSON regret report.
    Simulate {
        config: PathBuf,
        /// Output directory (default: $SELFISH_EXPERTS_OUT or ".").
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn default_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn emit(text: &str, out: Option<PathBuf>) -> Result<()> {
    match out {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(path, text.as_bytes())?;
            Ok(())
        }
    }
}

/// Executes a parsed command; errors map to exit codes in [`exit_code`].
pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::CheckRule {
            rule,
            eta,
            grid_step,
        } => {
            let check = check_rule(&rule, eta, grid_step)?;
            let json = serde_json::to_string_pretty(&check)
                .map_err(|e| Error::Config(format!("serialization: {e}")))?;
            println!("{json}");
            Ok(())
        }
        Command::LbTable {
            horizon,
            eta,
            out,
            format,
        } => {
            let table = lb_table(horizon, eta)?;
            let text = match format {
                TableFormat::Csv => render_lb_table_csv(&table),
                TableFormat::Json => {
                    let mut s = serde_json::to_string_pretty(&table)
                        .map_err(|e| Error::Config(format!("serialization: {e}")))?;
                    s.push('\n');
                    s
                }
            };
            emit(&text, out)
        }
        Command::Hmm {
            experts,
            horizon,
            eta,
            replicas,
            theta,
            seed,
            out,
        } => {
            let curves = hmm_experiment(HmmExperimentConfig {
                n_experts: experts,
                horizon,
                eta,
                replicas,
                theta,
                seed,
                rules: HMM_RULES.iter().map(|s| (*s).to_owned()).collect(),
            })?;
            emit(&render_hmm_csv(&curves), out)
        }
        Command::Simulate {
            config,
            out_dir,
            seed,
        } => {
            let text = fs::read_to_string(&config)?;
            let mut cfg: RunConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = simulate(&cfg, &default_out_dir(out_dir))?;
            let json = serde_json::to_string_pretty(&out.report)
                .map_err(|e| Error::Config(format!("serialization: {e}")))?;
            println!("{json}");
            Ok(())
        }
    }
}

/// Process exit code for an error: 2 for configuration and usage problems,
/// 3 for audit violations, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::UnknownRule(_)
        | Error::Config(_)
        | Error::EtaOutOfRange { .. }
        | Error::AlphaOutOfRange(_)
        | Error::InvalidParameter { .. }
        | Error::HorizonIncompatible { .. }
        | Error::ArityMismatch { .. }
        | Error::NoWitnessPair { .. }
        | Error::VacuousInstance(_)
        | Error::OracleUnsupported => 2,
        Error::AuditViolation { .. } => 3,
        _ => 1,
    }
}

/// Parses process arguments and runs; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

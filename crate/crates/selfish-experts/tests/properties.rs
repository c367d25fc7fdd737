//! Cross-module invariants: scale-free decisions, generator/family
//! round-trips, lower-bound instance guarantees, and serialization shape.

use proptest::prelude::*;

use selfish_experts::algorithms::{
    log_potential, potential, theta_rwm_predict, update_weights, wm_predict, ExpertState, TieBreak,
};
use selfish_experts::environments::{Environment, IidRandomEnv};
use selfish_experts::error::Result;
use selfish_experts::experts::{ExpertPolicy, PolicyKind};
use selfish_experts::harness::{
    run, run_trial, AlgorithmSpec, EnvKind, EnvironmentSpec, PoliciesSpec, RunConfig, RunOptions,
};
use selfish_experts::scoring::{Builtin, ScoringRule};
use selfish_experts::AlgorithmConfig;

fn states_from(log_weights: &[f64], reports: &[f64], shift: f64) -> Vec<ExpertState> {
    log_weights
        .iter()
        .zip(reports)
        .enumerate()
        .map(|(i, (lw, p))| {
            let mut st = ExpertState::new(i);
            st.log_weight = lw + shift;
            st.report = *p;
            st
        })
        .collect()
}

proptest! {
    /// Scaling every weight by a common factor never changes predictions.
    #[test]
    fn decisions_are_scale_invariant(
        lws in prop::collection::vec(-5.0f64..5.0, 1..6),
        shift in -200.0f64..200.0,
        seed in any::<u64>(),
    ) {
        let mut reports = Vec::with_capacity(lws.len());
        let mut x = seed | 1;
        for _ in 0..lws.len() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            reports.push((x >> 11) as f64 / (1u64 << 53) as f64);
        }
        let base = states_from(&lws, &reports, 0.0);
        let scaled = states_from(&lws, &reports, shift);
        prop_assert_eq!(
            wm_predict(&base, TieBreak::ChooseOne).unwrap(),
            wm_predict(&scaled, TieBreak::ChooseOne).unwrap()
        );
        let q0 = theta_rwm_predict(&base, 0.382).unwrap();
        let q1 = theta_rwm_predict(&scaled, 0.382).unwrap();
        prop_assert!((q0 - q1).abs() <= 1e-9);
    }

    /// Log-sum-exp potential agrees with direct summation when scales allow.
    #[test]
    fn potential_matches_direct_sum(ws in prop::collection::vec(1e-3f64..1e3, 1..8)) {
        let states: Vec<ExpertState> = ws
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut st = ExpertState::new(i);
                st.log_weight = w.ln();
                st
            })
            .collect();
        let direct: f64 = states.iter().map(|s| s.log_weight.exp()).sum();
        prop_assert!((potential(&states) - direct).abs() <= direct * 1e-12);
    }

    /// Normalizing a family member recovers its generator pointwise.
    #[test]
    fn family_round_trip(a in 0.01f64..20.0, eta in 0.001f64..0.999) {
        let gen = ScoringRule::builtin(Builtin::BrierUpdate, 0.25)
            .unwrap()
            .normalize()
            .unwrap();
        let renorm = gen.family_member(a, eta).unwrap().normalize().unwrap();
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            for r in [0u8, 1] {
                prop_assert!((renorm.score(p, r) - gen.score(p, r)).abs() < 1e-9);
            }
        }
    }

    /// No joint deviation beats joint truthfulness under a proper rule.
    #[test]
    fn group_deviations_never_beat_truth(
        b1 in 0.0f64..1.0,
        b2 in 0.0f64..1.0,
        p1 in 0.0f64..1.0,
        p2 in 0.0f64..1.0,
    ) {
        for rule in [
            ScoringRule::builtin(Builtin::Spherical, 0.3).unwrap(),
            ScoringRule::beta(0.5, 0.3).unwrap(),
        ] {
            let honest = rule.expected_score(b1, b1) + rule.expected_score(b2, b2);
            let deviated = rule.expected_score(p1, b1) + rule.expected_score(p2, b2);
            prop_assert!(deviated <= honest + 1e-12);
        }
    }

    /// Per-round loss increments stay in [0, 1] and accumulate monotonically.
    #[test]
    fn losses_accumulate_monotonically(seed in any::<u64>()) {
        let rule = ScoringRule::builtin(Builtin::Spherical, 0.1).unwrap();
        let mut env = IidRandomEnv::new(3, seed, false).unwrap();
        let mut states = ExpertState::initial(3);
        let oracle_stub = selfish_experts::environments::StepContext {
            t: 1,
            weights: &[1.0, 1.0, 1.0],
            oracle: &NoOracle,
        };
        for _ in 0..50 {
            let step = env.step(&oracle_stub).unwrap();
            let before: Vec<(f64, f64)> =
                states.iter().map(|s| (s.true_loss, s.reported_loss)).collect();
            for (st, b) in states.iter_mut().zip(&step.beliefs) {
                st.belief = *b;
                st.report = *b;
            }
            let r = match step.realization {
                selfish_experts::environments::Realization::Fixed(r) => r,
                _ => 0,
            };
            update_weights(&rule, &mut states, r).unwrap();
            for (st, (t0, r0)) in states.iter().zip(before) {
                prop_assert!(st.true_loss >= t0 && st.true_loss - t0 <= 1.0);
                prop_assert!(st.reported_loss >= r0 && st.reported_loss - r0 <= 1.0);
                prop_assert!(st.log_weight.is_finite());
            }
        }
    }
}

struct NoOracle;

impl selfish_experts::environments::DecisionOracle for NoOracle {
    fn decide(&self, _reports: &[f64]) -> Result<u8> {
        Ok(0)
    }
    fn decide_after(&self, _: &[f64], _: u8, _: &[f64]) -> Result<u8> {
        Ok(0)
    }
}

#[test]
fn round_records_serialize_with_exact_keys() {
    let cfg = RunConfig {
        algorithm: AlgorithmSpec::deterministic("spherical", 1e-2),
        environment: EnvironmentSpec {
            n_experts: Some(2),
            ..EnvironmentSpec::of_kind(EnvKind::Hmm)
        },
        policies: PoliciesSpec::Uniform(PolicyKind::Honest),
        horizon: 3,
        replicas: 1,
        seed: 5,
        audit: vec![],
        audit_fail_fast: true,
    };
    let mut lines = Vec::new();
    let mut sink = |_k: usize, rec: &selfish_experts::RoundRecord| {
        lines.push(serde_json::to_string(rec).unwrap());
    };
    selfish_experts::run_with(
        &cfg,
        RunOptions {
            sink: Some(&mut sink),
            track_curve: false,
        },
    )
    .unwrap();
    assert_eq!(lines.len(), 3);
    for line in &lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["alg_loss", "beliefs", "potential", "q", "r", "reports", "t"]
        );
    }
}

#[test]
fn rationality_of_ic_rules_is_identity_on_grid() {
    for rule in [
        ScoringRule::builtin(Builtin::Spherical, 0.1).unwrap(),
        ScoringRule::builtin(Builtin::Quadratic, 0.1).unwrap(),
        ScoringRule::builtin(Builtin::BrierUpdate, 0.1).unwrap(),
        ScoringRule::beta(0.5, 0.1).unwrap(),
    ] {
        for i in 0..=100 {
            let b = i as f64 / 100.0;
            let rho = rule.rationality(b);
            assert!((rho - b).abs() <= 1e-4, "{}: rho({b}) = {rho}", rule.name());
        }
    }
}

#[test]
fn claimed_ic_rules_pass_fine_properness_grid() {
    for id in ["quadratic", "spherical", "brier", "beta:0.5"] {
        let rule = ScoringRule::from_identifier(id, 0.1).unwrap();
        assert!(rule.properness_check(1e-3).unwrap().is_proper(), "{id}");
    }
}

#[test]
fn gap_reports_satisfy_structural_invariants() {
    let ids = [
        "quadratic",
        "spherical",
        "brier",
        "beta:0.1",
        "beta:0.3",
        "beta:0.5",
        "beta:0.7",
        "beta:0.9",
        "beta:1.0",
    ];
    for id in ids {
        let rep = ScoringRule::from_identifier(id, 0.1)
            .unwrap()
            .normalize()
            .unwrap()
            .theoretical_lower_bound()
            .unwrap();
        assert!(rep.proper, "{id}");
        if rep.symmetric {
            assert!(rep.gamma.unwrap() > 0.0, "{id}: strict properness forces a positive gap");
        }
        assert!(rep.c > rep.d, "{id}: c {} <= d {}", rep.c, rep.d);
        assert!(rep.c > 0.0 && rep.c <= 1.0 + 1e-12 && rep.d >= -1e-12 && rep.d < 1.0, "{id}");
        let rounded = rep.lb_rounded.unwrap();
        let unrounded = rep.lb_unrounded.unwrap();
        assert!(rounded > 2.0 && rounded < 3.0, "{id}: rounded {rounded}");
        assert!(unrounded >= rounded - 1e-12, "{id}: {unrounded} < {rounded}");
    }
}

#[test]
fn symmetric_rounded_instance_meets_lemma_bound() {
    for (rule, block) in [("spherical", 11usize), ("brier", 9)] {
        let horizon = 110 * block; // comfortably large multiple
        let cfg = RunConfig {
            algorithm: AlgorithmSpec::deterministic(rule, 1e-3),
            environment: EnvironmentSpec {
                use_rounded: true,
                ..EnvironmentSpec::of_kind(EnvKind::SymLb)
            },
            policies: PoliciesSpec::Uniform(PolicyKind::Honest),
            horizon,
            replicas: 1,
            seed: 0,
            audit: vec![],
            audit_fail_fast: true,
        };
        let outcome = run(&cfg).unwrap();
        let ratio = outcome.report.ratio_true.unwrap();
        let k = (block - 1) / 2;
        let want = 2.0 + 1.0 / k as f64 - 10.0 / horizon as f64;
        assert!(ratio >= want, "{rule}: ratio {ratio} < {want}");
    }
}

#[test]
fn standard_instance_meets_factor_four_bound() {
    let horizon = 4000;
    let cfg = RunConfig {
        algorithm: AlgorithmSpec::deterministic("standard", 1e-3),
        environment: EnvironmentSpec::of_kind(EnvKind::StdLb),
        policies: PoliciesSpec::Uniform(PolicyKind::Strategic),
        horizon,
        replicas: 1,
        seed: 0,
        audit: vec![],
        audit_fail_fast: true,
    };
    let ratio = run(&cfg).unwrap().report.ratio_true.unwrap();
    assert!(ratio >= 4.0 - 10.0 / horizon as f64, "ratio {ratio}");
}

#[test]
fn hedge_nonmonotone_instance_meets_lemma_bound() {
    // same-side belief pair satisfies rho(b1) >= rho(b2) for threshold rules
    let horizon = 100_000;
    let cfg = RunConfig {
        algorithm: AlgorithmSpec::deterministic("hedge", 1e-3),
        environment: EnvironmentSpec::nonmono(0.47, 0.49),
        policies: PoliciesSpec::Uniform(PolicyKind::Strategic),
        horizon,
        replicas: 1,
        seed: 0,
        audit: vec![],
        audit_fail_fast: true,
    };
    let ratio = run(&cfg).unwrap().report.ratio_true.unwrap();
    assert!(ratio >= 2.01, "ratio {ratio}");
    assert!(ratio >= 2.0 + 0.02 - 10.0 / horizon as f64, "ratio {ratio}");
}

/// Corner rule with c = 0.8, d = 0: f(0,0)=1, f(0,1)=0.2, f(1,0)=0, f(1,1)=1.
fn asym_corner_rule(eta: f64) -> ScoringRule {
    ScoringRule::custom("asym-corner", eta, false, |p, r| {
        if r == 1 {
            (1.0 - p) * 0.2 + p
        } else {
            1.0 - p
        }
    })
    .unwrap()
}

#[test]
fn asymmetric_instance_weights_follow_closed_form() {
    // double-round weight products from the asymmetric lower-bound proof:
    // w0(2t) = a^2t (1 - c eta)^t, w1(2t) = a^2t (1 - d eta)^t (1 - eta)^t
    let eta = 1e-2;
    let (c, d) = (0.8, 0.0);
    let rule = asym_corner_rule(eta);
    let norm = rule.normalize().unwrap();
    let member = norm.family_member(1.0, eta).unwrap();
    let algorithm = AlgorithmConfig::deterministic_wm(member);
    let mut logs: Vec<(f64, f64)> = Vec::new();
    // run manually to snapshot weights each round
    let mut env = selfish_experts::environments::AsymmetricLb::from_normalized(&norm).unwrap();
    let mut states = ExpertState::initial(2);
    for t in 1..=10usize {
        let w = selfish_experts::algorithms::weights(&states);
        let step = {
            let oracle = Alg1Oracle {
                states: &states,
                cfg: &algorithm,
            };
            env.step(&selfish_experts::environments::StepContext {
                t,
                weights: &w,
                oracle: &oracle,
            })
            .unwrap()
        };
        for (st, b) in states.iter_mut().zip(&step.beliefs) {
            st.belief = *b;
            st.report = *b;
        }
        let q = wm_predict(&states, algorithm.tie_break).unwrap();
        let r = 1 - q;
        update_weights(&algorithm.rule, &mut states, r).unwrap();
        logs.push((states[0].log_weight, states[1].log_weight));
    }
    // the first 2t rounds alternate; compare at t = 1..4 double-rounds
    // (by t = 5 the punish kicks in per c/(1-c) = 4)
    for t in 1..=4usize {
        let (lw0, lw1) = logs[2 * t - 1];
        let want0 = (t as f64) * (1.0 - c * eta).ln();
        let want1 = (t as f64) * ((1.0 - d * eta).ln() + (1.0 - eta).ln());
        assert!((lw0 - want0).abs() < 1e-9, "t={t}: w0 {lw0} want {want0}");
        assert!((lw1 - want1).abs() < 1e-9, "t={t}: w1 {lw1} want {want1}");
    }
    // within c/(1-c) + 1 = 5 double-rounds e0 carries one extra mistake but
    // a strictly higher weight
    let (lw0, lw1) = logs[8]; // after round 9 = 4 double-rounds + 1
    assert!(lw0 > lw1, "e0 should overtake: {lw0} vs {lw1}");
}

struct Alg1Oracle<'a> {
    states: &'a [ExpertState],
    cfg: &'a AlgorithmConfig,
}

impl selfish_experts::environments::DecisionOracle for Alg1Oracle<'_> {
    fn decide(&self, reports: &[f64]) -> Result<u8> {
        let mut probe: Vec<ExpertState> = self.states.to_vec();
        for (st, p) in probe.iter_mut().zip(reports) {
            st.report = *p;
        }
        wm_predict(&probe, self.cfg.tie_break)
    }
    fn decide_after(&self, first: &[f64], r1: u8, then: &[f64]) -> Result<u8> {
        let mut probe: Vec<ExpertState> = self.states.to_vec();
        for (st, p) in probe.iter_mut().zip(first) {
            st.report = *p;
        }
        update_weights(&self.cfg.rule, &mut probe, r1)?;
        for (st, p) in probe.iter_mut().zip(then) {
            st.report = *p;
        }
        wm_predict(&probe, self.cfg.tie_break)
    }
}

#[test]
fn asymmetric_instance_meets_lemma_ratio() {
    let eta = 1e-3;
    let rule = asym_corner_rule(eta);
    let norm = rule.normalize().unwrap();
    let member = norm.family_member(1.0, eta).unwrap();
    let algorithm = AlgorithmConfig::deterministic_wm(member);
    let policies = vec![ExpertPolicy::honest(); 2];
    let mut make_env = |_k: usize| -> Result<Box<dyn Environment>> {
        Ok(Box::new(
            selfish_experts::environments::AsymmetricLb::from_normalized(&norm)?,
        ))
    };
    let outcome = run_trial(
        &algorithm,
        &policies,
        &mut make_env,
        10_000,
        1,
        0,
        &[],
        true,
        RunOptions::default(),
    )
    .unwrap();
    let ratio = outcome.report.ratio_true.unwrap();
    // 2 + (1-c)/(2c) = 2.125 for c = 0.8, d = 0
    assert!(ratio >= 2.125, "ratio {ratio}");
}

#[test]
fn potential_is_nonincreasing_along_runs() {
    let cfg = RunConfig {
        algorithm: AlgorithmSpec::deterministic("spherical", 1e-2),
        environment: EnvironmentSpec {
            n_experts: Some(4),
            ..EnvironmentSpec::of_kind(EnvKind::Hmm)
        },
        policies: PoliciesSpec::Uniform(PolicyKind::Honest),
        horizon: 400,
        replicas: 1,
        seed: 3,
        audit: vec![],
        audit_fail_fast: true,
    };
    let mut last = f64::INFINITY;
    let mut sink = |_k: usize, rec: &selfish_experts::RoundRecord| {
        assert!(rec.potential <= last + 1e-12);
        assert!(rec.potential > 0.0);
        last = rec.potential;
    };
    selfish_experts::run_with(
        &cfg,
        RunOptions {
            sink: Some(&mut sink),
            track_curve: false,
        },
    )
    .unwrap();
    let _ = log_potential(&ExpertState::initial(1));
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use sedml::gadgets::scmp;
use sedml::harness::{
    bench_classes, bench_samples, exhaustive_scmp_check, generate_workload, random_scmp_check, run_experiment,
    ExperimentOptions,
};
use sedml::privacy::{
    closed_form_epsilon, compose, rdp_of_protocol, rdp_to_dp, solve_noise_for_epsilon, DpParams,
};
use sedml::protocol::{encoded_noise, plaintext_oracle, run_sample, MaxStrategy, ProtocolConfig};
use sedml::ring::{deal_triples, reconstruction_count, scmp_budget, Engine, Ring, SharedVec};
use sedml::simnet::{Audience, Fabric, Node, Phase, Session, SessionConfig, Step};
use sedml::{AggregationOutcome, PartyId};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Seeded random instances over the full parameter grid, secure path vs
/// plaintext oracle with the same encoded noise.
fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha12Rng::seed_from_u64(0xacce_0001);
    let mut fabric = Fabric::new(SessionConfig::default());
    let (mut total, mut agree, mut answered) = (0u32, 0u32, 0u32);
    let sigmas = [0.0, 1.0, 10.0];
    for k in [10, 50, 250] {
        for n in [2, 10] {
            for s1 in sigmas {
                for s2 in sigmas {
                    for rep in 0..19u64 {
                        let config = ProtocolConfig {
                            teachers: k,
                            classes: n,
                            sigma1: s1,
                            sigma2: s2,
                            seed: rng.gen(),
                            strategy: if rep % 2 == 0 { MaxStrategy::Sequential } else { MaxStrategy::Tournament },
                            ..ProtocolConfig::default()
                        };
                        let w = generate_workload(&config, 1, rng.gen_range(0.0..0.7), rng.gen()).unwrap();
                        let sample = rng.gen_range(0..1_000_000);
                        let preds = &w.predictions[0];
                        let run = run_sample(&config, sample, preds, &mut fabric).unwrap();
                        let noise = encoded_noise(&config, sample).unwrap();
                        let oracle = plaintext_oracle(&config, preds, &noise).unwrap();
                        total += 1;
                        agree += u32::from(run.outcome == oracle);
                        answered += u32::from(oracle != AggregationOutcome::NoConsensus);
                    }
                }
            }
        }
    }
    check(
        total >= 1000 && agree == total,
        format!("{agree}/{total} instances agree ({answered} answered)"),
    )
}

fn comparison_correctness() -> Outcome {
    let l8 = exhaustive_scmp_check(8).unwrap();
    let l32 = random_scmp_check(32, 100_000, 32).unwrap();
    let l64 = random_scmp_check(64, 100_000, 64).unwrap();
    let mismatches = l8.mismatches + l32.mismatches + l64.mismatches;
    check(
        mismatches == 0 && l8.checked > 0 && l32.checked == 100_000 && l64.checked == 100_000,
        format!(
            "l=8 {} signed-safe pairs, l=32 {} and l=64 {} random pairs, {mismatches} mismatches",
            l8.checked, l32.checked, l64.checked
        ),
    )
}

fn scmp_rounds(bits: u32) -> u32 {
    let ring = Ring::new(bits).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(u64::from(bits));
    let a = SharedVec::share(ring, &[ring.from_signed(-5)], &mut rng);
    let b = SharedVec::share(ring, &[ring.from_signed(9)], &mut rng);
    let stores = deal_triples(scmp_budget(bits).unwrap(), ring, &mut rng);
    let mut session = Session::new(0, SessionConfig::default());
    let mut engine = Engine::new(ring, &mut session, stores).unwrap();
    let e = scmp(&mut engine, &a, &b).unwrap();
    assert_eq!(e.reconstruct(ring), vec![1]);
    session.rounds()
}

fn round_exactness() -> Outcome {
    let (r64, r32) = (scmp_rounds(64), scmp_rounds(32));
    check(r64 == 8 && r32 == 7, format!("l=64: {r64} rounds, l=32: {r32} rounds"))
}

fn communication_ratio() -> Outcome {
    // Weak teachers so the threshold check filters a good share of samples.
    let config = ProtocolConfig { teachers: 250, classes: 10, sigma1: 4.0, sigma2: 2.0, seed: 41, ..ProtocolConfig::default() };
    let workload = generate_workload(&config, 300, 0.42, 42).unwrap();
    let report = run_experiment(&config, &workload, &ExperimentOptions::default()).unwrap();
    let answered: Vec<_> = report.records.iter().filter(|r| r.label.is_some()).collect();
    let ratios: Vec<f64> = answered
        .iter()
        .map(|r| r.phase_bytes[0] as f64 / r.phase_bytes[1] as f64)
        .collect();
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let [b1, _, b3] = report.totals.protocol_bytes();
    check(
        !answered.is_empty() && lo >= 8.5 && hi <= 9.5 && b3 <= b1,
        format!(
            "phase1/phase2 bytes per answered sample in [{lo:.3}, {hi:.3}] over {} answered of {}; phase-3 total {b3} vs phase-1 total {b1}",
            answered.len(),
            report.samples
        ),
    )
}

fn linear_scaling() -> Outcome {
    let config = ProtocolConfig { teachers: 250, classes: 10, ..ProtocolConfig::default() };
    let by_samples = bench_samples(&config, &[1000, 2000, 3000, 4000, 5000]).unwrap();
    let by_classes = bench_classes(&config, &[10, 20, 30, 40, 50], 20).unwrap();
    let (r1, r2) = (by_samples.rounds_fit.r_squared, by_classes.rounds_fit.r_squared);
    check(
        r1 >= 0.999 && r2 >= 0.999,
        format!(
            "R^2 {r1:.6} over samples (slope {:.1} rounds/sample), {r2:.6} over classes (slope {:.1} rounds/class)",
            by_samples.rounds_fit.slope, by_classes.rounds_fit.slope
        ),
    )
}

fn accountant() -> Outcome {
    let e = (-1f64).exp();
    let closed = closed_form_epsilon(3.0, 2f64.sqrt(), e, 1).unwrap();
    let grid_fixed = rdp_to_dp(&rdp_of_protocol(3.0, 2f64.sqrt()).unwrap(), e).unwrap().epsilon;
    let fixed_ok = (closed - 3.0).abs() < 5e-4 && (grid_fixed - 3.0).abs() < 5e-4;

    let mut worst = 0.0f64;
    for s1 in [1.0, 2.0, 4.0, 8.0] {
        for s2 in [1.0, 2.0, 4.0, 8.0] {
            for delta in [1e-5, 1e-6] {
                let curve = compose(&[rdp_of_protocol(s1, s2).unwrap()]).unwrap();
                let grid = rdp_to_dp(&curve, delta).unwrap().epsilon;
                let cf = closed_form_epsilon(s1, s2, delta, 1).unwrap();
                worst = worst.max((grid - cf).abs() / cf);
            }
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(0xacce_0006);
    let mut worst_trip = 0.0f64;
    for _ in 0..100 {
        let target = rng.gen_range(0.1..20.0);
        let delta = 10f64.powf(rng.gen_range(-7.0..-3.0));
        let ratio = rng.gen_range(0.5..4.0);
        let queries = rng.gen_range(1..2000);
        let (s1, s2) = solve_noise_for_epsilon(target, delta, ratio, queries).unwrap();
        let back = DpParams { sigma1: s1, sigma2: s2, delta, queries }.account().unwrap().epsilon.unwrap();
        worst_trip = worst_trip.max((back - target).abs());
    }
    check(
        fixed_ok && worst <= 0.01 && worst_trip <= 1e-4,
        format!(
            "closed form {closed:.6}, grid {grid_fixed:.6}; worst grid gap {:.4}%; worst solve round trip {worst_trip:.2e}",
            100.0 * worst
        ),
    )
}

fn leakage_audit() -> Outcome {
    let config = ProtocolConfig { teachers: 50, classes: 10, sigma1: 3.0, sigma2: 3.0, seed: 7, ..ProtocolConfig::default() };
    let workload = generate_workload(&config, 200, 0.35, 8).unwrap();
    let mut fabric = Fabric::new(SessionConfig { trace: true, ..SessionConfig::default() });
    let mut problems = Vec::new();
    let (mut answered, mut samples) = (0, 0);
    for (s, preds) in workload.predictions.iter().enumerate() {
        let before = reconstruction_count();
        let run = run_sample(&config, s as u64, preds, &mut fabric).unwrap();
        let reconstructed = reconstruction_count() - before;
        samples += 1;
        let server: Vec<_> = run.reveals.iter().filter(|r| r.audience == Audience::Servers).collect();
        let requester: Vec<_> = run.reveals.iter().filter(|r| r.audience == Audience::Requester).collect();
        let consensus = run.outcome != AggregationOutcome::NoConsensus;
        answered += usize::from(consensus);
        if server.len() != 1 || server[0].label != "threshold bit" || server[0].elements != 1 || server[0].phase != Phase::ThresholdCheck {
            problems.push(format!("sample {s}: server reveals {server:?}"));
        }
        if requester.len() != usize::from(consensus) {
            problems.push(format!("sample {s}: requester reveals {requester:?}"));
        }
        // One reconstruction for t, one more (at the requester) for the label.
        if reconstructed != 1 + u64::from(consensus) {
            problems.push(format!("sample {s}: {reconstructed} reconstructions"));
        }
        for m in &run.trace {
            let ok = match (m.from, m.to) {
                (Node::Client(_), Node::Server(_)) => m.step == Step::Upload,
                (Node::Server(a), Node::Server(b)) => a != b,
                (Node::Server(_), Node::Requester) => m.step == Step::Deliver && m.phase == Phase::ConsensusLabel,
                _ => false,
            };
            if !ok {
                problems.push(format!("sample {s}: unexpected message {:?} -> {:?}", m.from, m.to));
            }
        }
        let uploads = run.trace.iter().filter(|m| m.step == Step::Upload).count();
        let deliveries: Vec<_> = run.trace.iter().filter(|m| m.to == Node::Requester).collect();
        if uploads != 2 * config.teachers {
            problems.push(format!("sample {s}: {uploads} uploads"));
        }
        let expected_from: Vec<Node> = if consensus {
            PartyId::BOTH.iter().map(|&p| Node::Server(p)).collect()
        } else {
            Vec::new()
        };
        if deliveries.iter().map(|m| m.from).collect::<Vec<_>>() != expected_from {
            problems.push(format!("sample {s}: deliveries {deliveries:?}"));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{samples} samples: 1 server reveal each (threshold bit), {answered} labels reconstructed by the requester only")
        } else {
            format!("{} problems, first: {}", problems.len(), problems[0])
        },
    )
}

fn perfect_teachers() -> Outcome {
    let config = ProtocolConfig::default();
    let workload = generate_workload(&config, 1000, 0.0, 2024).unwrap();
    let report = run_experiment(&config, &workload, &ExperimentOptions::default()).unwrap();
    check(
        report.label_accuracy == Some(1.0) && report.answered_fraction == 1.0,
        format!(
            "K=250 N=10 1000 samples: label_accuracy {}, answered_fraction {}",
            report.label_accuracy.map_or("n/a".to_string(), |a| a.to_string()),
            report.answered_fraction
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("comparison correctness", comparison_correctness),
        ("round exactness", round_exactness),
        ("communication ratio", communication_ratio),
        ("linear scaling", linear_scaling),
        ("accountant fixed point", accountant),
        ("leakage audit", leakage_audit),
        ("perfect-teacher sanity", perfect_teachers),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {} [{tag}] {name}: {}", i + 1, outcome.detail);
        failed += usize::from(!outcome.passed);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

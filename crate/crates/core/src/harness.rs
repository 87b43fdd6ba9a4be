//! Synthetic teacher workloads, experiment runs, reports, scaling benches and
//! the self-test suite behind the CLI.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gadgets::scmp;
use crate::privacy::{AccountantReport, DpParams};
use crate::protocol::{
    encoded_noise, plaintext_oracle, run_sample, AggregationOutcome, PredictionVector, ProtocolConfig,
};
use crate::ring::{deal_triples, scmp_budget, Engine, Ring, SharedVec};
use crate::seed;
use crate::simnet::{Audience, CommStats, Fabric, Message, Session, SessionConfig};

/// Per-sample teacher predictions with ground truth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub teachers: usize,
    pub classes: usize,
    pub true_labels: Vec<usize>,
    pub predictions: Vec<Vec<PredictionVector>>,
}

impl Workload {
    pub fn samples(&self) -> usize {
        self.true_labels.len()
    }

    /// Build a workload from explicit predictions.
    pub fn from_predictions(true_labels: Vec<usize>, predictions: Vec<Vec<PredictionVector>>) -> Result<Self> {
        if true_labels.len() != predictions.len() || predictions.is_empty() {
            return Err(Error::usage("need one non-empty prediction set per label"));
        }
        let teachers = predictions[0].len();
        let classes = predictions[0].first().map(PredictionVector::classes).unwrap_or(0);
        for (label, preds) in true_labels.iter().zip(&predictions) {
            if preds.len() != teachers || preds.iter().any(|p| p.classes() != classes) || *label >= classes {
                return Err(Error::usage("ragged workload"));
            }
        }
        Ok(Workload { teachers, classes, true_labels, predictions })
    }
}

/// Teachers that answer the true label with probability `1 - error_rate`
/// and a uniformly chosen wrong class otherwise.
pub fn generate_workload(config: &ProtocolConfig, samples: usize, error_rate: f64, seed: u64) -> Result<Workload> {
    config.validate()?;
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(Error::usage(format!("error rate must be in [0, 1], got {error_rate}")));
    }
    let (k, n) = (config.teachers, config.classes);
    let mut true_labels = Vec::with_capacity(samples);
    let mut predictions = Vec::with_capacity(samples);
    for s in 0..samples {
        let mut rng = seed::rng(seed, &[seed::WORKLOAD, s as u64]);
        let label = rng.gen_range(0..n);
        let preds = (0..k)
            .map(|_| {
                let class = if rng.gen::<f64>() < error_rate {
                    let w = rng.gen_range(0..n - 1);
                    if w >= label {
                        w + 1
                    } else {
                        w
                    }
                } else {
                    label
                };
                PredictionVector::one_hot(class, n)
            })
            .collect::<Result<Vec<_>>>()?;
        true_labels.push(label);
        predictions.push(preds);
    }
    Ok(Workload { teachers: k, classes: n, true_labels, predictions })
}

/// One line of the outcome stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: u64,
    /// `"consensus"` or `"bottom"`.
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<usize>,
    pub phase_rounds: [u64; 3],
    pub phase_bytes: [u64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ProtocolConfig,
    pub samples: usize,
    pub records: Vec<SampleRecord>,
    /// Over consensus samples only; `None` when nothing was answered.
    pub label_accuracy: Option<f64>,
    pub answered_fraction: f64,
    /// Same metric for the plaintext oracle under identical noise.
    pub oracle_label_accuracy: Option<f64>,
    pub oracle_agreement: f64,
    /// Plaintext reveals at the servers, summed over samples.
    pub server_reveals: usize,
    pub requester_reveals: usize,
    pub totals: CommStats,
    pub accountant: AccountantReport,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentOptions {
    pub delta: f64,
    pub session: SessionConfig,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions { delta: 1e-5, session: SessionConfig::default() }
    }
}

/// A finished or aborted experiment.
#[derive(Debug)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub trace: Vec<Message>,
    /// Set when a sample failed; the report then covers the samples before it.
    pub error: Option<Error>,
}

fn fraction(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Run every sample, keeping the partial report if one fails.
pub fn run_experiment_partial(
    config: &ProtocolConfig,
    workload: &Workload,
    options: &ExperimentOptions,
) -> Result<ExperimentRun> {
    config.validate()?;
    if workload.teachers != config.teachers || workload.classes != config.classes {
        return Err(Error::usage(format!(
            "workload is {}x{}, config expects {}x{}",
            workload.teachers, workload.classes, config.teachers, config.classes
        )));
    }
    // Fail on bad accountant inputs before doing any work.
    DpParams { sigma1: config.sigma1, sigma2: config.sigma2, delta: options.delta, queries: 0 }.account()?;

    let mut fabric = Fabric::new(options.session);
    let mut records = Vec::with_capacity(workload.samples());
    let mut trace = Vec::new();
    let mut totals = CommStats::default();
    let (mut answered, mut correct, mut agree) = (0usize, 0usize, 0usize);
    let (mut oracle_answered, mut oracle_correct) = (0usize, 0usize);
    let (mut server_reveals, mut requester_reveals) = (0usize, 0usize);
    let mut error = None;

    for (s, (preds, &truth)) in workload.predictions.iter().zip(&workload.true_labels).enumerate() {
        let sample = s as u64;
        let result = run_sample(config, sample, preds, &mut fabric).and_then(|run| {
            let oracle = plaintext_oracle(config, preds, &encoded_noise(config, sample)?)?;
            Ok((run, oracle))
        });
        let (run, oracle) = match result {
            Ok(x) => x,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        totals.merge(&run.stats);
        for r in &run.reveals {
            match r.audience {
                Audience::Servers => server_reveals += 1,
                Audience::Requester => requester_reveals += 1,
            }
        }
        agree += usize::from(run.outcome == oracle);
        if let AggregationOutcome::Consensus(c) = oracle {
            oracle_answered += 1;
            oracle_correct += usize::from(c == truth);
        }
        if let AggregationOutcome::Consensus(c) = run.outcome {
            answered += 1;
            correct += usize::from(c == truth);
        }
        records.push(SampleRecord {
            sample_id: sample,
            outcome: match run.outcome {
                AggregationOutcome::Consensus(_) => "consensus".into(),
                AggregationOutcome::NoConsensus => "bottom".into(),
            },
            label: run.outcome.label(),
            phase_rounds: run.stats.protocol_rounds(),
            phase_bytes: run.stats.protocol_bytes(),
        });
        trace.extend(run.trace);
    }

    let done = records.len();
    let accountant = DpParams {
        sigma1: config.sigma1,
        sigma2: config.sigma2,
        delta: options.delta,
        queries: answered as u64,
    }
    .account()?;
    let report = ExperimentReport {
        config: config.clone(),
        samples: done,
        records,
        label_accuracy: fraction(correct, answered),
        answered_fraction: fraction(answered, done).unwrap_or(0.0),
        oracle_label_accuracy: fraction(oracle_correct, oracle_answered),
        oracle_agreement: fraction(agree, done).unwrap_or(1.0),
        server_reveals,
        requester_reveals,
        totals,
        accountant,
        valid: error.is_none(),
        error: error.as_ref().map(ToString::to_string),
    };
    Ok(ExperimentRun { report, trace, error })
}

/// Like [`run_experiment_partial`], but any sample failure is an error.
pub fn run_experiment(config: &ProtocolConfig, workload: &Workload, options: &ExperimentOptions) -> Result<ExperimentReport> {
    let run = run_experiment_partial(config, workload, options)?;
    match run.error {
        Some(e) => Err(e),
        None => Ok(run.report),
    }
}

/// One JSON object per line, in sample order.
pub fn write_outcome_stream<W: Write>(mut w: W, records: &[SampleRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CsvRow {
    sample_id: u64,
    outcome: String,
    label: Option<usize>,
    rounds_phase1: u64,
    rounds_phase2: u64,
    rounds_phase3: u64,
    bytes_phase1: u64,
    bytes_phase2: u64,
    bytes_phase3: u64,
}

pub fn write_csv<W: Write>(w: W, records: &[SampleRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(CsvRow {
            sample_id: r.sample_id,
            outcome: r.outcome.clone(),
            label: r.label,
            rounds_phase1: r.phase_rounds[0],
            rounds_phase2: r.phase_rounds[1],
            rounds_phase3: r.phase_rounds[2],
            bytes_phase1: r.phase_bytes[0],
            bytes_phase2: r.phase_bytes[1],
            bytes_phase3: r.phase_bytes[2],
        })
        .map_err(|e| Error::Io(e.into()))?;
    }
    out.flush()?;
    Ok(())
}

/// Least-squares line through `(xs, ys)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::usage("linear fit needs at least two matching points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::usage("linear fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit { slope, intercept, r_squared })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub x: u64,
    pub rounds: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSeries {
    pub variable: String,
    pub points: Vec<BenchPoint>,
    pub rounds_fit: LinearFit,
    pub bytes_fit: LinearFit,
}

fn series(variable: &str, points: Vec<BenchPoint>) -> Result<BenchSeries> {
    let xs: Vec<f64> = points.iter().map(|p| p.x as f64).collect();
    let rounds: Vec<f64> = points.iter().map(|p| p.rounds as f64).collect();
    let bytes: Vec<f64> = points.iter().map(|p| p.bytes as f64).collect();
    Ok(BenchSeries {
        variable: variable.into(),
        rounds_fit: linear_fit(&xs, &rounds)?,
        bytes_fit: linear_fit(&xs, &bytes)?,
        points,
    })
}

/// Cumulative server rounds and bytes after each checkpoint on an
/// always-consensus workload (perfect teachers, no noise).
pub fn bench_samples(config: &ProtocolConfig, checkpoints: &[usize]) -> Result<BenchSeries> {
    let config = ProtocolConfig { sigma1: 0.0, sigma2: 0.0, ..config.clone() };
    let max = checkpoints.iter().copied().max().unwrap_or(0);
    let workload = generate_workload(&config, max, 0.0, config.seed)?;
    let mut fabric = Fabric::new(SessionConfig::default());
    let mut totals = CommStats::default();
    let mut points = Vec::new();
    for s in 0..max {
        let run = run_sample(&config, s as u64, &workload.predictions[s], &mut fabric)?;
        totals.merge(&run.stats);
        if checkpoints.contains(&(s + 1)) {
            let servers = totals.servers();
            points.push(BenchPoint { x: s as u64 + 1, rounds: servers.rounds, bytes: servers.bytes });
        }
    }
    series("samples", points)
}

/// Server rounds and bytes for `samples` always-consensus samples at each
/// class count.
pub fn bench_classes(config: &ProtocolConfig, classes: &[usize], samples: usize) -> Result<BenchSeries> {
    let mut points = Vec::new();
    for &n in classes {
        let config = ProtocolConfig { classes: n, sigma1: 0.0, sigma2: 0.0, ..config.clone() };
        let workload = generate_workload(&config, samples, 0.0, config.seed)?;
        let report = run_experiment(&config, &workload, &ExperimentOptions::default())?;
        let servers = report.totals.servers();
        points.push(BenchPoint { x: n as u64, rounds: servers.rounds, bytes: servers.bytes });
    }
    series("classes", points)
}

/// Result of checking `scmp` against signed plaintext comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScmpCheck {
    pub checked: u64,
    pub mismatches: u64,
}

const SCMP_CHUNK: usize = 2048;

fn scmp_pairs(ring: Ring, pairs: &[(i64, i64)], seed: u64) -> Result<ScmpCheck> {
    let mut check = ScmpCheck::default();
    let per = scmp_budget(ring.bits())?;
    for (c, chunk) in pairs.chunks(SCMP_CHUNK).enumerate() {
        let mut rng = seed::rng(seed, &[seed::DEALER, c as u64]);
        let a: Vec<u64> = chunk.iter().map(|p| ring.from_signed(p.0)).collect();
        let b: Vec<u64> = chunk.iter().map(|p| ring.from_signed(p.1)).collect();
        let sa = SharedVec::share(ring, &a, &mut rng);
        let sb = SharedVec::share(ring, &b, &mut rng);
        let stores = deal_triples(per * chunk.len(), ring, &mut rng);
        let mut session = Session::new(c as u64, SessionConfig::default());
        let mut engine = Engine::new(ring, &mut session, stores)?;
        let e = scmp(&mut engine, &sa, &sb)?.reconstruct(ring);
        for (&(x, y), &got) in chunk.iter().zip(&e) {
            check.checked += 1;
            check.mismatches += u64::from(got != u64::from(x < y));
        }
    }
    Ok(check)
}

/// Every `(a, b)` in the signed range of an `l`-bit ring whose difference
/// also fits, i.e. the whole input domain the comparison is defined on.
pub fn exhaustive_scmp_check(bits: u32) -> Result<ScmpCheck> {
    let ring = Ring::for_comparison(bits)?;
    if bits > 12 {
        return Err(Error::usage("exhaustive check is limited to l <= 12"));
    }
    let half = 1i64 << (bits - 1);
    let pairs: Vec<(i64, i64)> = (-half..half)
        .flat_map(|a| (-half..half).map(move |b| (a, b)))
        .filter(|(a, b)| (-half..half).contains(&(a - b)))
        .collect();
    scmp_pairs(ring, &pairs, 0x5eed)
}

/// `count` random pairs from `[-2^(l-2), 2^(l-2))`.
pub fn random_scmp_check(bits: u32, count: usize, seed: u64) -> Result<ScmpCheck> {
    let ring = Ring::for_comparison(bits)?;
    let quarter = 1i64 << (bits - 2);
    let mut rng = seed::rng(seed, &[seed::WORKLOAD]);
    let pairs: Vec<(i64, i64)> = (0..count)
        .map(|_| (rng.gen_range(-quarter..quarter), rng.gen_range(-quarter..quarter)))
        .collect();
    scmp_pairs(ring, &pairs, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelftestCase {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Exhaustive and randomized gadget checks, protocol-vs-oracle runs and the
/// accountant fixed point.
pub fn selftest() -> Result<Vec<SelftestCase>> {
    let mut cases = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        cases.push(SelftestCase { name: name.into(), passed, detail });
    };

    let c = exhaustive_scmp_check(8)?;
    push("scmp exhaustive l=8", c.mismatches == 0, format!("{} pairs, {} mismatches", c.checked, c.mismatches));
    for bits in [32, 64] {
        let c = random_scmp_check(bits, 2000, 7)?;
        push(
            &format!("scmp random l={bits}"),
            c.mismatches == 0,
            format!("{} pairs, {} mismatches", c.checked, c.mismatches),
        );
    }

    let mut agree = 0;
    let mut total = 0;
    let mut rng = seed::rng(11, &[seed::WORKLOAD]);
    let mut fabric = Fabric::new(SessionConfig::default());
    for sample in 0..60u64 {
        let config = ProtocolConfig {
            teachers: [10, 50, 250][rng.gen_range(0..3)],
            classes: [2, 10][rng.gen_range(0..2)],
            sigma1: [0.0, 1.0, 10.0][rng.gen_range(0..3)],
            sigma2: [0.0, 1.0, 10.0][rng.gen_range(0..3)],
            seed: rng.gen(),
            ..ProtocolConfig::default()
        };
        let w = generate_workload(&config, 1, rng.gen_range(0.0..0.6), rng.gen())?;
        let preds = &w.predictions[0];
        let run = run_sample(&config, sample, preds, &mut fabric)?;
        let oracle = plaintext_oracle(&config, preds, &encoded_noise(&config, sample)?)?;
        total += 1;
        agree += usize::from(run.outcome == oracle);
    }
    push("protocol matches oracle", agree == total, format!("{agree}/{total} samples"));

    let eps = DpParams { sigma1: 3.0, sigma2: 2f64.sqrt(), delta: (-1f64).exp(), queries: 1 }
        .account()?
        .epsilon
        .unwrap_or(f64::INFINITY);
    push("accountant fixed point", (eps - 3.0).abs() < 1e-6, format!("epsilon = {eps:.6}"));
    Ok(cases)
}

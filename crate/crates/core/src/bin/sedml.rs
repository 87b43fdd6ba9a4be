use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sedml::harness::{
    bench_classes, bench_samples, generate_workload, run_experiment_partial, selftest, write_csv,
    write_outcome_stream, ExperimentOptions,
};
use sedml::privacy::{solve_noise_for_epsilon, DpParams, DEFAULT_SCALE};
use sedml::simnet::{write_trace, SessionConfig, Z2Encoding};
use sedml::{Error, MaxStrategy, ProtocolConfig};

#[derive(Parser)]
#[command(name = "sedml", version, about = "Two-server secret-shared label aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the protocol over a synthetic teacher workload.
    Run(RunArgs),
    /// Privacy accounting only.
    Accountant(AccountantArgs),
    /// Gadget and protocol self-checks.
    Selftest,
    /// Round and byte scaling tables.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Output {
    /// Full report as one JSON document.
    Json,
    /// One JSON object per sample.
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Byte,
    Packed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Sequential,
    Tournament,
}

#[derive(Args)]
struct ProtoArgs {
    #[arg(long, default_value_t = 250)]
    teachers: usize,
    #[arg(long, default_value_t = 0.6)]
    threshold: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma1: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 64)]
    ring_bits: u32,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    scale: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Strategy::Sequential)]
    strategy: Strategy,
}

impl ProtoArgs {
    fn config(&self, classes: usize) -> ProtocolConfig {
        ProtocolConfig {
            teachers: self.teachers,
            classes,
            threshold: self.threshold,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            ring_bits: self.ring_bits,
            scale: self.scale,
            seed: self.seed,
            strategy: match self.strategy {
                Strategy::Sequential => MaxStrategy::Sequential,
                Strategy::Tournament => MaxStrategy::Tournament,
            },
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    proto: ProtoArgs,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Probability that a teacher picks a wrong class.
    #[arg(long, default_value_t = 0.0)]
    error_rate: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = Output::Json)]
    output: Output,
    /// Write every fabric message to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Encoding::Byte)]
    z2_encoding: Encoding,
}

#[derive(Args)]
struct AccountantArgs {
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Answered samples.
    #[arg(long, default_value_t = 1)]
    queries: u64,
    /// Solve for the noise that meets this epsilon instead.
    #[arg(long, conflicts_with_all = ["sigma1", "sigma2"])]
    epsilon: Option<f64>,
    /// sigma1 / sigma2 when solving.
    #[arg(long, default_value_t = 1.0, requires = "epsilon")]
    ratio: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    proto: ProtoArgs,
    /// Class counts: `a..b`, `a..b:step` or a comma list.
    #[arg(long, default_value = "10..50")]
    classes: String,
    /// Sample counts, same syntax; a single value when sweeping classes.
    #[arg(long, default_value = "10")]
    samples: String,
}

/// `a..b` (five evenly spaced points), `a..b:step`, `a,b,c` or `a`.
fn parse_list(s: &str) -> Result<Vec<usize>, Error> {
    let bad = || Error::Usage(format!("cannot parse {s:?} as a list or range"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, Some(num(step)?)),
            None => (num(rest)?, None),
        };
        let lo = num(lo)?;
        if hi < lo {
            return Err(bad());
        }
        let step = step.unwrap_or(((hi - lo) / 4).max(1));
        if step == 0 {
            return Err(bad());
        }
        return Ok((lo..=hi).step_by(step).collect());
    }
    s.split(',').map(num).collect()
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 2,
        Error::Protocol(_) | Error::Range(_) => 3,
        Error::Infeasible(_) => 4,
        Error::Io(_) => 1,
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Error> {
    let config = args.proto.config(args.classes);
    let workload = generate_workload(&config, args.samples, args.error_rate, config.seed)?;
    let options = ExperimentOptions {
        delta: args.delta,
        session: SessionConfig {
            z2_encoding: match args.z2_encoding {
                Encoding::Byte => Z2Encoding::BytePerBit,
                Encoding::Packed => Z2Encoding::Packed,
            },
            trace: args.trace.is_some(),
            ..SessionConfig::default()
        },
    };
    let run = run_experiment_partial(&config, &workload, &options)?;
    if let Some(path) = &args.trace {
        write_trace(BufWriter::new(File::create(path)?), &run.trace)?;
    }
    let stdout = io::stdout().lock();
    match args.output {
        Output::Json => print_json(&run.report)?,
        Output::Jsonl => write_outcome_stream(BufWriter::new(stdout), &run.report.records)?,
        Output::Csv => write_csv(stdout, &run.report.records)?,
    }
    match run.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn accountant(args: AccountantArgs) -> Result<(), Error> {
    if let Some(target) = args.epsilon {
        let (sigma1, sigma2) = solve_noise_for_epsilon(target, args.delta, args.ratio, args.queries)?;
        let report = DpParams { sigma1, sigma2, delta: args.delta, queries: args.queries }.account()?;
        return print_json(&report);
    }
    let (Some(sigma1), Some(sigma2)) = (args.sigma1, args.sigma2) else {
        return Err(Error::Usage("pass --sigma1 and --sigma2, or --epsilon".into()));
    };
    print_json(&DpParams { sigma1, sigma2, delta: args.delta, queries: args.queries }.account()?)
}

fn bench(args: BenchArgs) -> Result<(), Error> {
    let classes = parse_list(&args.classes)?;
    let samples = parse_list(&args.samples)?;
    let series = match (classes.as_slice(), samples.as_slice()) {
        (&[n], s) if s.len() > 1 => bench_samples(&args.proto.config(n), s)?,
        (c, &[s]) if c.len() > 1 => bench_classes(&args.proto.config(c[0]), c, s)?,
        _ => return Err(Error::Usage("sweep exactly one of --classes and --samples".into())),
    };
    print_json(&series)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Accountant(a) => accountant(a),
        Command::Bench(a) => bench(a),
        Command::Selftest => match selftest() {
            Ok(cases) => {
                for c in &cases {
                    println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
                }
                if cases.iter().all(|c| c.passed) {
                    return ExitCode::SUCCESS;
                }
                eprintln!("sedml: self-test failed");
                return ExitCode::from(3);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sedml: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qnoise_cli::config::Format;
use qnoise_cli::output::verdict_exit_code;
use qnoise_cli::{execute, parse_config, Kind, RunError, EXIT_NUMERICAL, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "qnoise", version, about = "Quantum semigroups driven by classical Lévy noise: experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `out` in the configuration, else `./out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// csv, json or both.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever experiment the configuration names.
    Run(RunArgs),
    /// Sample one Lévy path (CSV plus jump log).
    LevySample(RunArgs),
    /// Empirical characteristic function against the exponent.
    CharCheck(RunArgs),
    /// Noise-averaged expectations against the classical oracle.
    McSemigroup(RunArgs),
    /// Small-time quotient against the classical generator.
    GeneratorCheck(RunArgs),
    /// Complete-positivity checks on random generators.
    CpSuite(RunArgs),
    /// Jump expansion against the exact exponential.
    Dyson(RunArgs),
    /// Gauge invariance of random standard representations.
    GaugeSuite(RunArgs),
    /// Langevin Monte Carlo against the Weyl-symbol closed form.
    GalileiCompare(RunArgs),
    /// Galilean covariance on shared increments.
    CovarianceCheck(RunArgs),
    /// Feller boundary test for both ends.
    FellerClassify(RunArgs),
    /// Killed-diffusion survival, optionally against reflection.
    KilledDiffusion(RunArgs),
}

impl Command {
    fn split(self) -> (Option<Kind>, RunArgs) {
        match self {
            Command::Run(a) => (None, a),
            Command::LevySample(a) => (Some(Kind::LevySample), a),
            Command::CharCheck(a) => (Some(Kind::CharCheck), a),
            Command::McSemigroup(a) => (Some(Kind::McSemigroup), a),
            Command::GeneratorCheck(a) => (Some(Kind::GeneratorCheck), a),
            Command::CpSuite(a) => (Some(Kind::CpSuite), a),
            Command::Dyson(a) => (Some(Kind::Dyson), a),
            Command::GaugeSuite(a) => (Some(Kind::GaugeSuite), a),
            Command::GalileiCompare(a) => (Some(Kind::GalileiCompare), a),
            Command::CovarianceCheck(a) => (Some(Kind::CovarianceCheck), a),
            Command::FellerClassify(a) => (Some(Kind::FellerClassify), a),
            Command::KilledDiffusion(a) => (Some(Kind::KilledDiffusion), a),
        }
    }
}

fn usage(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(EXIT_USAGE as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (expected, args) = cli.command.split();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => return usage(format!("reading {}: {e}", args.config.display())),
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            for e in &errors.0 {
                eprintln!("{}: {e}", args.config.display());
            }
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    if let Some(k) = expected {
        if k != cfg.kind {
            return usage(format!("configuration is a {} run, not {k}", cfg.kind));
        }
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(f) = &args.format {
        match f.parse::<Format>() {
            Ok(f) => cfg.format = f,
            Err(e) => return usage(e),
        }
    }
    if let Some(n) = args.threads.or(cfg.threads) {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return usage(format!("thread pool: {e}"));
        }
    }
    let out = args.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let progress = |m: &str| eprintln!("[qnoise] {m}");
    match execute(&cfg, &out, &progress) {
        Ok(record) => {
            println!("{} {}: {}", record.kind, serde_json::to_value(record.verdict).unwrap_or_default().as_str().unwrap_or("?"), record.summary);
            println!("manifest: {}", out.join(qnoise_cli::output::MANIFEST).display());
            ExitCode::from(verdict_exit_code(record.verdict) as u8)
        }
        Err(RunError::Usage(m)) => usage(m),
        Err(RunError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_NUMERICAL as u8)
        }
    }
}

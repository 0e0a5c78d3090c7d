//! Batch front-end: instance generation, pipeline runs, classical-vs-quantum
//! comparison batches, and the acceptance gate.
//!
//! Everything is JSON on both sides — generator specs and run configs in,
//! instances, run reports and comparison tables out — so artifacts diff
//! cleanly and survive tooling changes. A fixed (config, seed) pair always
//! reproduces the same report bytes (only the wall-time field varies).
//!
//! Exit codes: 0 on success; 1 on contract failure (a failed acceptance
//! criterion, a delivered vector violating its read-out contracts, or a run
//! that could not complete); 2 on usage or validation errors (unknown
//! flags, malformed configs, violated input assumptions).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use qncf_core::accept::{self, CriterionResult};
use qncf_core::error::Error as CoreError;
use qncf_core::hessian::generate_synthetic;
use qncf_core::ncf::QuantumVerdict;
use qncf_core::report::{compare_run, run_pipeline, CompareRow, RunConfig, RunReport};

#[derive(Parser)]
#[command(name = "qncf", version, about = "Negative-curvature-finding simulator front-end")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance file from a JSON generator spec.
    Gen(GenArgs),
    /// Run the quantum pipeline once and write its report.
    Run(RunArgs),
    /// Run quantum and classical deciders over a seed batch and tabulate
    /// agreement.
    Compare(CompareArgs),
    /// Run the acceptance criteria and print one line per criterion.
    Accept(AcceptArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator spec: {"d", "r", "spectrum", "lipschitz", "separation",
    /// "seed"}.
    #[arg(long)]
    config: PathBuf,
    /// Override the spec's frame seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run config JSON (instance source, parameters, noise model, backend,
    /// seed).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's stream seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's execution backend.
    #[arg(long, value_parser = ["statevector", "analytic"])]
    backend: Option<String>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run config JSON; its seed is the first of the batch.
    #[arg(long)]
    config: PathBuf,
    /// Override the first seed of the batch.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's execution backend.
    #[arg(long, value_parser = ["statevector", "analytic"])]
    backend: Option<String>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Batch size: consecutive seeds starting at the config's seed.
    #[arg(long, default_value_t = 1)]
    runs: u64,
}

#[derive(Args)]
struct AcceptArgs {
    /// Criterion names to run (repeatable; default: all ten).
    #[arg(long = "suite")]
    suites: Vec<String>,
}

/// A command failure, classified for the exit code.
enum Failure {
    /// Bad input: malformed config, violated input assumption (exit 2).
    Usage(String),
    /// The pipeline or an acceptance criterion failed its contract (exit 1).
    Contract(String),
}

impl Failure {
    fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Contract(_) => ExitCode::from(1),
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Contract(m) => m,
        }
    }
}

fn usage(e: impl fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Failure {
        match e {
            CoreError::Validation(_) => Failure::Usage(e.to_string()),
            _ => Failure::Contract(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Accept(args) => cmd_accept(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            failure.exit_code()
        }
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

/// Synthetic-instance parameters as read from a generator spec file.
#[derive(Debug, Serialize, Deserialize)]
struct GenSpec {
    d: usize,
    r: usize,
    spectrum: Vec<f64>,
    lipschitz: f64,
    separation: f64,
    seed: u64,
}

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    let mut spec: GenSpec = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let h = generate_synthetic(
        spec.d,
        spec.r,
        &spec.spectrum,
        spec.lipschitz,
        spec.separation,
        spec.seed,
    )?;
    let dir = args.out.unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    let path = dir.join(format!("instance-d{}-r{}-seed{}.json", spec.d, spec.r, spec.seed));
    write_json(&path, &h)?;
    println!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = load_run_config(&args.config, args.seed, args.backend, args.out)?;
    let report = run_pipeline(&config)?;

    match report.verdict {
        QuantumVerdict::Vector { center, .. } => println!(
            "verdict: vector (|λ| ≈ {center:.3}); Rayleigh {:.4}; distance {:.3e}; queries {}",
            report.verification.rayleigh_normalized,
            report.verification.distance_to_eigenvector,
            report.queries.total
        ),
        QuantumVerdict::NoVector => {
            println!("verdict: no-vector; queries {}", report.queries.total)
        }
    }

    if let Some(dir) = config.out.as_deref() {
        let dir = Path::new(dir);
        ensure_dir(dir)?;
        let path = dir.join(format!("report-{}-seed{}.json", config.backend, config.seed));
        write_json(&path, &report)?;
        println!("wrote {}", path.display());
    }

    let v = &report.verification;
    if v.applicable && !(v.rayleigh_contract && v.distance_contract) {
        return Err(Failure::Contract(format!(
            "delivered vector violates its contracts: Rayleigh {:.4} (contract {}), \
             distance {:.3e} (contract {})",
            v.rayleigh_normalized, v.rayleigh_contract, v.distance_to_eigenvector,
            v.distance_contract
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let base = load_run_config(&args.config, args.seed, args.backend, args.out)?;
    let runs = args.runs.max(1);
    let seeds: Vec<u64> = (0..runs).map(|k| base.seed.wrapping_add(k)).collect();
    let outcomes = run_batch(&base, &seeds)?;

    let mut rows: Vec<CompareRow> = Vec::new();
    let mut failed_runs = 0usize;
    for (seed, outcome) in seeds.iter().zip(outcomes) {
        match outcome {
            Ok((row, _)) => {
                print_compare_row(&row);
                rows.push(row);
            }
            Err(e) => {
                failed_runs += 1;
                println!("seed {seed}: run failed: {e}");
            }
        }
    }

    let counted = rows.iter().filter(|r| !r.boundary_excluded).count();
    let matches = rows.iter().filter(|r| !r.boundary_excluded && r.verdict_match).count();
    let excluded = rows.len() - counted;
    println!(
        "agreement: {matches}/{counted} ({excluded} boundary-excluded, {failed_runs} failed runs)"
    );

    if let Some(dir) = base.out.as_deref() {
        let dir = Path::new(dir);
        ensure_dir(dir)?;
        let path = dir.join(format!(
            "compare-{}-seed{}-runs{}.json",
            base.backend, base.seed, runs
        ));
        write_json(&path, &rows)?;
        println!("wrote {}", path.display());
    }

    if failed_runs > 0 {
        return Err(Failure::Contract(format!("{failed_runs} of {runs} runs failed to complete")));
    }
    Ok(())
}

fn print_compare_row(row: &CompareRow) {
    let status = if row.boundary_excluded {
        "excluded (boundary band)"
    } else if row.verdict_match {
        "match"
    } else {
        "MISMATCH"
    };
    let lambda = row.classical_lambda.map_or("—".to_string(), |l| format!("{l:.4}"));
    let rayleigh = row.quantum_rayleigh.map_or("—".to_string(), |q| format!("{q:.4}"));
    let distance = row.distance.map_or("—".to_string(), |d| format!("{d:.3e}"));
    println!(
        "seed {}: classical {} | quantum {} | λ_min {} | Rayleigh {} | distance {} | {}",
        row.seed,
        verdict_word(row.classical_vector),
        verdict_word(row.quantum_vector),
        lambda,
        rayleigh,
        distance,
        status
    );
}

fn verdict_word(vector: bool) -> &'static str {
    if vector {
        "vector"
    } else {
        "no-vector"
    }
}

/// Run the comparison over a seed batch, at most [`thread_cap`] runs at a
/// time. Each run owns its stream and its slot; results come back in seed
/// order regardless of scheduling.
fn run_batch(
    base: &RunConfig,
    seeds: &[u64],
) -> Result<Vec<qncf_core::error::Result<(CompareRow, RunReport)>>, Failure> {
    let cap = thread_cap()?;
    let mut out = Vec::with_capacity(seeds.len());
    for wave in seeds.chunks(cap) {
        let mut results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&seed| {
                    let mut config = base.clone();
                    config.seed = seed;
                    scope.spawn(move || compare_run(&config))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("comparison worker panicked")).collect()
        });
        out.append(&mut results);
    }
    Ok(out)
}

/// Parallelism cap: `QNCF_THREADS` when set, otherwise the machine's
/// available parallelism.
fn thread_cap() -> Result<usize, Failure> {
    match std::env::var("QNCF_THREADS") {
        Ok(raw) => match raw.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(usage(format!("QNCF_THREADS must be a positive integer, got '{raw}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(usize::from).unwrap_or(1)),
    }
}

// ---------------------------------------------------------------------------
// accept
// ---------------------------------------------------------------------------

/// Criterion names in reporting order, as printed by `accept`.
const SUITES: [&str; 10] = [
    "pned-distribution",
    "sve-block-sampling",
    "verdict-agreement",
    "rayleigh-contract",
    "basis-selection",
    "perturbation-bound",
    "estimator-contracts",
    "structural-identities",
    "measurement-bounds",
    "reproducibility",
];

fn cmd_accept(args: AcceptArgs) -> Result<(), Failure> {
    let results = if args.suites.is_empty() {
        accept::run_all()
    } else {
        run_named_suites(&args.suites)?
    };
    for result in &results {
        println!("{result}");
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        Ok(())
    } else {
        Err(Failure::Contract(format!("acceptance criteria failed: {}", failed.join(", "))))
    }
}

/// Run a subset of criteria by name. Criteria that share a batch
/// (verdict-agreement / rayleigh-contract, basis-selection /
/// measurement-bounds) re-run it when requested individually.
fn run_named_suites(names: &[String]) -> Result<Vec<CriterionResult>, Failure> {
    names
        .iter()
        .map(|name| match name.as_str() {
            "pned-distribution" => Ok(accept::pned_distribution()),
            "sve-block-sampling" => Ok(accept::sve_block_sampling()),
            "verdict-agreement" => Ok(accept::verdict_agreement().0),
            "rayleigh-contract" => Ok(accept::verdict_agreement().1),
            "basis-selection" => Ok(accept::basis_selection().0),
            "measurement-bounds" => Ok(accept::basis_selection().1),
            "perturbation-bound" => Ok(accept::perturbation_property()),
            "estimator-contracts" => Ok(accept::estimator_contracts()),
            "structural-identities" => Ok(accept::structural_identities()),
            "reproducibility" => Ok(accept::reproducibility()),
            other => Err(usage(format!(
                "unknown suite '{other}'; expected one of: {}",
                SUITES.join(", ")
            ))),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_run_config(
    path: &Path,
    seed: Option<u64>,
    backend: Option<String>,
    out: Option<PathBuf>,
) -> Result<RunConfig, Failure> {
    let mut config: RunConfig = read_json(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(backend) = backend {
        config.backend = backend;
    }
    if let Some(out) = out {
        config.out = Some(out.to_string_lossy().into_owned());
    }
    Ok(config)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| Failure::Contract(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Failure::Contract(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

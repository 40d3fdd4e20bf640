//! `dmresponse` command-line tool. Every run prints or writes one JSON report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmresponse::harness::{run_to_report, write_report, Command, ResponseMode, RunConfig};
use dmresponse::mixed::Precision;
use dmresponse::models::{ModelKind, ModelSpec};

#[derive(Parser)]
#[command(name = "dmresponse", version, about = "Density-matrix response and susceptibilities by recursive spectral projection")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Write a model Hamiltonian (and overlap) in Matrix Market format.
    Generate(Common),
    /// Ground-state density matrix and expectation value.
    GroundState(Common),
    /// First-order response by the perturbation and susceptibility routes.
    Respond(Common),
    /// Self-consistent ground state and coupled response.
    Scf(Common),
    /// Every response route side by side with the eigenbasis oracle.
    Audit(Common),
    /// Timing sweep over model sizes.
    Benchmark(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Hamiltonian (Matrix Market).
    #[arg(long, value_name = "PATH")]
    h0: Option<PathBuf>,
    /// Hamiltonian perturbation; defaults to a random on-site potential.
    #[arg(long, value_name = "PATH")]
    h1: Option<PathBuf>,
    /// Observable; defaults to a random on-site operator.
    #[arg(long, value_name = "PATH")]
    obs: Option<PathBuf>,
    /// Overlap matrix for non-orthogonal bases (output path for `generate`).
    #[arg(long, value_name = "PATH")]
    overlap: Option<PathBuf>,
    /// Number of occupied states (default N/2).
    #[arg(long, value_name = "INT")]
    nocc: Option<usize>,
    /// Sparse threshold; selects the thresholded sparse algebra.
    #[arg(long, value_name = "FLOAT")]
    tau: Option<f64>,
    /// Inverse electronic temperature; selects the Fermi-Dirac path.
    #[arg(long = "beta-t", value_name = "FLOAT")]
    beta_t: Option<f64>,
    /// Self-consistency kernel, `zero`, `hubbard:U` or `bilinear:STRENGTH`.
    #[arg(long, value_name = "NAME:STRENGTH")]
    kernel: Option<String>,
    #[arg(long, default_value = "f64", value_parser = ["f64", "f32", "split16"])]
    precision: String,
    #[arg(long, default_value = "both", value_parser = ["perturb", "suscept-fwd", "suscept-bwd", "both"])]
    mode: String,
    /// Seed for generated models and default operators.
    #[arg(long, default_value_t = 0, value_name = "INT")]
    seed: u64,
    /// Report path (stdout when absent); Hamiltonian path for `generate`.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Generated model instead of --h0: chain, gapped_random or overlap_chain.
    #[arg(long, visible_alias = "kind", value_name = "KIND")]
    model: Option<String>,
    /// Model size N.
    #[arg(long, value_name = "INT")]
    size: Option<usize>,
    /// Model gap.
    #[arg(long, default_value_t = 1.0, value_name = "FLOAT")]
    gap: f64,
    /// Spectral half-width of gapped_random models.
    #[arg(long, default_value_t = 2.0, value_name = "FLOAT")]
    bandwidth: f64,
    /// Nearest-neighbour overlap of overlap_chain models.
    #[arg(long = "neighbor-overlap", default_value_t = 0.2, value_name = "FLOAT")]
    neighbor_overlap: f64,
    /// Benchmark sizes, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "N,N,..")]
    sizes: Vec<usize>,
}

fn config(command: Command, c: Common) -> Result<RunConfig, String> {
    let model = match &c.model {
        None => None,
        Some(kind) => {
            let kind: ModelKind = kind.parse().map_err(|e| format!("{e}"))?;
            let n = match (c.size, command) {
                (Some(n), _) => n,
                (None, Command::Benchmark) => c.sizes.first().copied().unwrap_or(2),
                (None, _) => return Err("--model needs --size".into()),
            };
            Some(ModelSpec {
                bandwidth: c.bandwidth,
                overlap: c.neighbor_overlap,
                ..ModelSpec::new(kind, n, c.gap).with_seed(c.seed)
            })
        }
    };
    Ok(RunConfig {
        command,
        h0: c.h0,
        h1: c.h1,
        obs: c.obs,
        overlap: c.overlap,
        model,
        sizes: c.sizes,
        n_occ: c.nocc,
        tau: c.tau,
        beta_t: c.beta_t,
        kernel: c.kernel,
        precision: c.precision.parse::<Precision>().map_err(|e| e.to_string())?,
        mode: c.mode.parse::<ResponseMode>().map_err(|e| e.to_string())?,
        seed: c.seed,
        out: c.out,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Generate(c) => (Command::Generate, c),
        Sub::GroundState(c) => (Command::GroundState, c),
        Sub::Respond(c) => (Command::Respond, c),
        Sub::Scf(c) => (Command::Scf, c),
        Sub::Audit(c) => (Command::Audit, c),
        Sub::Benchmark(c) => (Command::Benchmark, c),
    };
    let cfg = match config(command, common) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let (report, status) = run_to_report(&cfg);
    if status != 0 {
        if let Some(msg) = report["error"]["message"].as_str() {
            eprintln!("error: {msg}");
        }
    }
    let target = match cfg.command {
        Command::Generate => None,
        _ => cfg.out.as_deref(),
    };
    match target {
        Some(path) => {
            if let Err(e) = write_report(path, &report) {
                eprintln!("error: cannot write report: {e}");
                return ExitCode::from(2);
            }
        }
        None => println!("{report}"),
    }
    ExitCode::from(status as u8)
}

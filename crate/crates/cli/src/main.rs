//! `softgrad` command-line driver: rollouts, gradient checks, parameter
//! identification and adjoint-solver benchmarks, each persisted as versioned
//! CSV plus a JSON run manifest.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bench;
mod error;
mod gradcheck;
mod identify;
mod run;
mod simulate;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "softgrad", version, about = "Differentiable soft-body simulation with frictional contact")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll a scene forward and write its trajectory.
    Simulate(simulate::SimulateArgs),
    /// Compare adjoint gradients with central finite differences.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Recover parameters from a self-generated target by gradient descent.
    Identify(identify::IdentifyArgs),
    /// Solve one adjoint system with every solver/preconditioner pair.
    BenchSolver(bench::BenchArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Identify(a) => identify::run(a),
        Command::BenchSolver(a) => bench::run(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}

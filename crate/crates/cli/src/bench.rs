use clap::Args;
use serde::Serialize;

use softgrad::ident::bench::{bench_rhs, bench_solvers, converged_operator, regime_scene, Regime};

use crate::error::{CliError, CliResult};
use crate::run::{num, write_manifest, CommonArgs, CsvOut, LoadedScene};

pub const BENCH_FILE: &str = "bench.csv";

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Output directory and shared flags; `--scene` defaults to the regime's built-in scene.
    #[command(flatten)]
    pub common: CommonArgs,
    /// contact_free, frictionless or frictional.
    #[arg(long, value_parser = parse_regime)]
    #[serde(serialize_with = "ser_regime")]
    pub regime: Regime,
    /// Relative residual tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Forward steps taken before the adjoint system is extracted.
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    Regime::parse(s).ok_or_else(|| format!("unknown regime {s:?} (contact_free, frictionless, frictional)"))
}

fn ser_regime<S: serde::Serializer>(r: &Regime, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(r.name())
}

pub fn run(args: &BenchArgs) -> CliResult<()> {
    let common = &args.common;
    common.init_threads()?;
    let loaded = if common.scene.is_some() {
        common.load_scene()?
    } else {
        let scene = common.apply_overrides(regime_scene(args.regime))?;
        LoadedScene { scene, source: format!("regime:{}", args.regime.name()) }
    };
    common.prepare_out()?;
    write_manifest(common, "bench-solver", &loaded, args)?;

    let (sys, op) = converged_operator(&loaded.scene, args.steps).map_err(CliError::sim)?;
    let sliding = !op.symmetric;
    match (args.regime, sliding) {
        (Regime::Frictional, false) => {
            return Err(CliError::input(anyhow::anyhow!("frictional regime requested but the scene has no sliding contact")))
        }
        (Regime::ContactFree | Regime::Frictionless, true) => {
            return Err(CliError::input(anyhow::anyhow!("{} regime requested but the scene has sliding contacts", args.regime.name())))
        }
        _ => {}
    }
    let rows = bench_solvers(&sys, &op, &bench_rhs(sys.n()), args.tol, args.max_iter);

    let header: Vec<String> = ["solver", "precond", "iter", "relres", "wall_ms", "diverged"].map(String::from).to_vec();
    let mut csv = CsvOut::create(&common.out.join(BENCH_FILE), "bench", 1, &header)?;
    for row in &rows {
        let rep = &row.report;
        for (it, res) in rep.residual_history.iter().enumerate() {
            let ms = rep.time_history.get(it).copied().unwrap_or(f64::NAN) * 1e3;
            csv.row(&[row.solver.clone(), row.precond.clone(), it.to_string(), num(*res), num(ms), rep.diverged.to_string()])?;
        }
        let status = if rep.converged { "converged" } else if rep.diverged { "diverged" } else { "not converged" };
        eprintln!("{:>13}/{:<14} {status} after {} iterations ({:.3} ms)", row.solver, row.precond, rep.iterations(), rep.wall_time * 1e3);
    }
    csv.finish()
}

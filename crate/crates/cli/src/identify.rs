use clap::Args;
use serde::Serialize;

use softgrad::ident::{optimize, OptProblem, DEFAULT_ETA};

use crate::error::{CliError, CliResult, EXIT_DIVERGED};
use crate::gradcheck::{check_len, parse_vars};
use crate::run::{num, write_json, write_manifest, CommonArgs, CsvOut};

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Args, Serialize)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated variables to identify (same names as `gradcheck`).
    #[arg(long = "var", value_delimiter = ',', required = true)]
    pub vars: Vec<String>,
    /// Initial guesses, one per variable.
    #[arg(long, value_delimiter = ',', required = true)]
    pub init: Vec<f64>,
    /// Values that generate the target (default: the scene's own values).
    #[arg(long, value_delimiter = ',')]
    pub target: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Finite-difference reference every this many iterations (0 = never).
    #[arg(long, default_value_t = 0)]
    pub fd_every: usize,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    /// Descend on the logarithm of positive parameters.
    #[arg(long)]
    pub log_space: bool,
    /// Compare every state of the trajectory instead of the final one.
    #[arg(long)]
    pub trajectory: bool,
}

pub fn run(args: &IdentifyArgs) -> CliResult<()> {
    let common = &args.common;
    common.init_threads()?;
    let loaded = common.load_scene()?;
    let vars = parse_vars(&args.vars)?;
    for v in &vars {
        v.check(&loaded.scene).map_err(CliError::sim)?;
    }
    check_len("--init", &args.init, vars.len())?;
    let target = args.target.clone().unwrap_or_else(|| vars.iter().map(|v| v.read(&loaded.scene, &loaded.scene)).collect());
    check_len("--target", &target, vars.len())?;
    if !(args.lr > 0.0) || !(args.eta > 0.0) {
        return Err(CliError::input(anyhow::anyhow!("--lr and --eta must be positive")));
    }
    common.prepare_out()?;
    write_manifest(common, "identify", &loaded, args)?;

    let mut problem = OptProblem::self_generated(loaded.scene.clone(), args.horizon, vars.clone(), &target, !args.trajectory).map_err(CliError::sim)?;
    problem.init = args.init.clone();
    problem.learning_rate = args.lr;
    problem.iterations = args.iters;
    problem.fd_every = args.fd_every;
    problem.eta = args.eta;
    problem.log_space = args.log_space;
    let trace = optimize(&problem).map_err(CliError::sim)?;

    let names: Vec<String> = vars.iter().map(|v| v.name()).collect();
    let mut header = vec!["iter".to_string(), "loss".to_string()];
    for prefix in ["param", "grad_ana", "grad_fd"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    let mut csv = CsvOut::create(&common.out.join(TRACE_FILE), "trace", 1, &header)?;
    for (it, loss) in trace.loss.iter().enumerate() {
        let mut row = vec![it.to_string(), num(*loss)];
        row.extend(trace.params[it].iter().map(|x| num(*x)));
        row.extend(trace.grad_analytic[it].iter().map(|x| num(*x)));
        match &trace.grad_fd[it] {
            Some(fd) => row.extend(fd.iter().map(|x| num(*x))),
            None => row.extend(std::iter::repeat_n(String::new(), names.len())),
        }
        csv.row(&row)?;
    }
    csv.finish()?;

    if trace.loss.is_empty() {
        let why = trace.failure.clone().unwrap_or_default();
        return Err(CliError::with_code(EXIT_DIVERGED, anyhow::anyhow!("optimization failed before the first iterate: {why}")));
    }
    let metrics = trace.metrics();
    write_json(
        &common.out.join(METRICS_FILE),
        &serde_json::json!({
            "metrics": metrics,
            "variables": names,
            "final_params": trace.final_params(),
            "target": target,
            "diverged": trace.diverged,
            "failure": trace.failure,
        }),
    )?;
    if trace.diverged {
        let why = trace.failure.clone().unwrap_or_default();
        return Err(CliError::with_code(EXIT_DIVERGED, anyhow::anyhow!("optimization diverged ({why}); trace truncated after {} iterates", trace.loss.len())));
    }
    eprintln!("final parameters {:?}; wrote {}", trace.final_params().unwrap_or(&[]), common.out.join(TRACE_FILE).display());
    Ok(())
}

use clap::Args;
use serde::Serialize;

use softgrad::ident::{fd_gradient, metrics::relative_error, OptProblem, Variable};

use crate::error::{CliError, CliResult, EXIT_CHECK_FAILED};
use crate::run::{num, write_manifest, CommonArgs, CsvOut};

pub const GRADCHECK_FILE: &str = "gradcheck.csv";

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated variables, e.g. `stiffness`, `E,nu`, `mu`, `f_x`, `v0_z`.
    #[arg(long = "var", value_delimiter = ',', required = true)]
    pub vars: Vec<String>,
    /// Rollout length.
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Relative finite-difference steps; one row per (variable, η).
    #[arg(long, value_delimiter = ',', default_value = "1e-6")]
    pub eta: Vec<f64>,
    /// Pass threshold on the relative error of non-friction variables.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Parameter values at which gradients are checked (default: the scene's).
    #[arg(long, value_delimiter = ',')]
    pub at: Option<Vec<f64>>,
    /// Values that generate the target trajectory (default: 1.1 × `--at`, or 0.1 where that is 0).
    #[arg(long, value_delimiter = ',')]
    pub target: Option<Vec<f64>>,
    /// Compare every state of the trajectory instead of the final one.
    #[arg(long)]
    pub trajectory: bool,
}

pub fn parse_vars(names: &[String]) -> CliResult<Vec<Variable>> {
    names
        .iter()
        .map(|n| Variable::parse(n).ok_or_else(|| CliError::input(anyhow::anyhow!("unknown variable {n:?}"))))
        .collect()
}

pub fn check_len(what: &str, values: &[f64], n: usize) -> CliResult<()> {
    if values.len() != n {
        return Err(CliError::input(anyhow::anyhow!("{what} has {} values for {n} variables", values.len())));
    }
    Ok(())
}

pub fn run(args: &GradcheckArgs) -> CliResult<()> {
    let common = &args.common;
    common.init_threads()?;
    let loaded = common.load_scene()?;
    let vars = parse_vars(&args.vars)?;
    for v in &vars {
        v.check(&loaded.scene).map_err(CliError::sim)?;
    }
    if args.eta.iter().any(|e| !(*e > 0.0)) {
        return Err(CliError::input(anyhow::anyhow!("--eta values must be positive")));
    }
    let scene_values: Vec<f64> = vars.iter().map(|v| v.read(&loaded.scene, &loaded.scene)).collect();
    let at = args.at.clone().unwrap_or(scene_values);
    check_len("--at", &at, vars.len())?;
    let target = args.target.clone().unwrap_or_else(|| at.iter().map(|&x| if x == 0.0 { 0.1 } else { 1.1 * x }).collect());
    check_len("--target", &target, vars.len())?;
    common.prepare_out()?;
    write_manifest(common, "gradcheck", &loaded, args)?;

    let problem = OptProblem::self_generated(loaded.scene.clone(), args.horizon, vars.clone(), &target, !args.trajectory).map_err(CliError::sim)?;
    let (_, grad) = problem.loss_and_gradient(&at).map_err(CliError::sim)?;

    let header: Vec<String> = ["var", "eta", "grad_ana", "grad_fd", "relerr", "friction_flag"].map(String::from).to_vec();
    let mut csv = CsvOut::create(&common.out.join(GRADCHECK_FILE), "gradcheck", 1, &header)?;
    let mut failures = Vec::new();
    for &eta in &args.eta {
        let fd = fd_gradient(&problem, &at, eta).map_err(CliError::sim)?;
        for (i, v) in vars.iter().enumerate() {
            let rel = relative_error(&[grad[i]], &[fd[i]]);
            csv.row(&[v.name(), num(eta), num(grad[i]), num(fd[i]), num(rel), v.is_friction().to_string()])?;
            // Friction gradients are reported but not gated: the smoothed
            // contact model makes FD references step-size dependent.
            if !v.is_friction() && !(rel <= args.tol) {
                failures.push(format!("{} (η={eta:e}): relative error {rel:.3e}", v.name()));
            }
        }
    }
    csv.finish()?;
    if !failures.is_empty() {
        return Err(CliError::with_code(EXIT_CHECK_FAILED, anyhow::anyhow!("gradient check above tolerance {:e}: {}", args.tol, failures.join("; "))));
    }
    eprintln!("gradient check passed; wrote {}", common.out.join(GRADCHECK_FILE).display());
    Ok(())
}

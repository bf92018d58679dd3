use clap::Args;
use serde::Serialize;

use softgrad::{assemble_system_matrix, rollout, ForwardConfig};

use crate::error::{CliError, CliResult};
use crate::run::{num, write_json, write_manifest, CommonArgs, CsvOut};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const FORWARD_FILE: &str = "forward.json";

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of time steps.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Newton tolerance on the scaled residual.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

/// Per-step summary written to `forward.json`.
#[derive(Debug, Serialize)]
struct StepSummary {
    step: usize,
    newton_iterations: usize,
    final_residual: f64,
    /// Present when the step stopped at the residual's rounding noise.
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_floor: Option<f64>,
    contacts: usize,
    sliding_contacts: usize,
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let common = &args.common;
    common.init_threads()?;
    let loaded = common.load_scene()?;
    common.prepare_out()?;
    write_manifest(common, "simulate", &loaded, args)?;
    let scene = &loaded.scene;
    let sys = assemble_system_matrix(scene).map_err(CliError::sim)?;
    let cfg = ForwardConfig { tol: args.tol, ..ForwardConfig::default() };
    let ro = rollout(scene, &sys, &scene.initial_state(), args.steps, &cfg).map_err(CliError::sim)?;

    let header: Vec<String> = ["step", "vid", "x", "y", "z"].map(String::from).to_vec();
    let mut csv = CsvOut::create(&common.out.join(TRAJECTORY_FILE), "trajectory", 1, &header)?;
    for (t, st) in ro.states.iter().enumerate() {
        for (v, x) in st.q.chunks_exact(3).enumerate() {
            csv.row(&[t.to_string(), v.to_string(), num(x[0]), num(x[1]), num(x[2])])?;
        }
    }
    csv.finish()?;

    let steps: Vec<StepSummary> = ro
        .caches
        .iter()
        .enumerate()
        .map(|(t, c)| StepSummary {
            step: t + 1,
            newton_iterations: c.iterations,
            final_residual: c.final_residual,
            noise_floor: c.noise_floor,
            contacts: c.contacts.len(),
            sliding_contacts: c.contacts.iter().filter(|cp| cp.regime == softgrad::contact::FrictionRegime::Sliding).count(),
        })
        .collect();
    write_json(&common.out.join(FORWARD_FILE), &serde_json::json!({ "steps": steps }))?;
    eprintln!("simulated {} steps; wrote {}", args.steps, common.out.join(TRAJECTORY_FILE).display());
    Ok(())
}

//! Command-line front end: load a JSON run config, execute one command,
//! write CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 1 numerical non-convergence or failed audit,
//! 2 usage or config error.

use crate::error::{Error, Result};
use crate::functionals::{
    convention_audit, energy_constancy, energy_trace, FunctionalConfig, ResidualSystem,
};
use crate::loop_space::Loop;
use crate::lotka_volterra::{self, LvConfig};
use crate::solvers::{continue_in_tau, solve_periodic, OrbitResult, SolverConfig};
use crate::symplectic::registry;
use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "delay-action", about = "Delay action functionals on loop space", version)]
pub struct Cli {
    /// Path to the JSON run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for artifacts
    #[arg(long, default_value = "./out")]
    pub out: PathBuf,
    /// Seed for all randomness in the run
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negate the reported gradient in the audit (audit testing only)
    #[arg(long, default_value_t = false)]
    pub debug_flip_j: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Solve,
    CheckGrad,
    /// Alias of check-grad.
    Audit,
    LvReduce,
    SweepTau,
}

/// Initial loop for solve-type commands.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SeedSpec {
    Constant { point: Vec<f64> },
    Circle { radius: f64, center: Vec<f64> },
    File { path: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default)]
    pub functional: Option<FunctionalConfig>,
    #[serde(default)]
    pub lv: Option<LvConfig>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub seed_spec: Option<SeedSpec>,
    /// Trial count for the gradient audit.
    #[serde(default)]
    pub trials: Option<usize>,
    /// Delay path (in grid steps) for sweep-tau; must start at 0.
    #[serde(default)]
    pub tau_path: Option<Vec<usize>>,
    /// Phase-loop CSV consumed by lv-reduce.
    #[serde(default)]
    pub input_loop: Option<PathBuf>,
    /// Let lv-reduce run the phase-space solver before reducing.
    #[serde(default)]
    pub solve_first: bool,
}

/// Parse arguments, run, and return the process exit code.
pub fn run_from_args() -> i32 {
    let cli = Cli::parse();
    run(&cli)
}

pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::SolverBreakdown(_) | Error::BlowUp { .. } | Error::NonFinite { .. } => 1,
                _ => 2,
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let text = fs::read_to_string(&cli.config)?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad run config: {e}")))?;
    fs::create_dir_all(&cli.out)?;
    match config.command {
        CommandKind::Solve => cmd_solve(cli, &config),
        CommandKind::CheckGrad | CommandKind::Audit => cmd_check_grad(cli, &config),
        CommandKind::LvReduce => cmd_lv_reduce(cli, &config),
        CommandKind::SweepTau => cmd_sweep_tau(cli, &config),
    }
}

fn functional_config(config: &RunConfig) -> Result<&FunctionalConfig> {
    config
        .functional
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs a 'functional' section".into()))
}

fn build_seed(spec: &SeedSpec, half_dim: usize, grid_size: usize) -> Result<Loop> {
    match spec {
        SeedSpec::Constant { point } => Loop::constant(half_dim, grid_size, point),
        SeedSpec::Circle { radius, center } => {
            Loop::circle(half_dim, grid_size, *radius, center)
        }
        SeedSpec::File { path } => Loop::from_csv(&fs::read_to_string(path)?),
    }
}

fn write_text(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::write(dir.join(name), content)?;
    Ok(())
}

fn cmd_solve(cli: &Cli, config: &RunConfig) -> Result<i32> {
    let fc = functional_config(config)?;
    let functional = fc.build()?;
    let system = ResidualSystem::new(functional, fc.n, fc.grid_size)?;
    let spec = config
        .seed_spec
        .as_ref()
        .ok_or_else(|| Error::Config("solve needs a 'seed_spec'".into()))?;
    let guess = build_seed(spec, fc.n, fc.grid_size)?;
    let solver = config.solver.clone().unwrap_or_default();
    let mut result = solve_periodic(&system, &guess, &solver)?;

    // family B with H = K conserves H along the orbit; record and emit it
    if let (true, Some(h_id)) = (fc.family == "B" && fc.h == fc.k, &fc.h) {
        let h = registry::parse_field(h_id, fc.n)?;
        result.energy_std = Some(energy_constancy(&h, &result.orbit)?);
        let trace = energy_trace(&h, &result.orbit)?;
        let mut csv = String::from("t,energy\n");
        for (k, e) in trace.iter().enumerate() {
            csv.push_str(&format!(
                "{:.16e},{:.16e}\n",
                k as f64 / fc.grid_size as f64,
                e
            ));
        }
        write_text(&cli.out, "energy.csv", &csv)?;
    }

    write_text(&cli.out, "orbit.csv", &result.orbit.to_csv())?;
    write_text(
        &cli.out,
        "result.json",
        &serde_json::to_string_pretty(&result).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    if result.converged {
        // a constant orbit is a valid critical point but usually a trap
        // when a periodic solution was sought; flag it distinctly
        let first = result.orbit.point(0).to_vec();
        let constant = (0..result.orbit.grid_size())
            .all(|k| result.orbit.point(k).iter().zip(&first).all(|(a, b)| a == b));
        if constant {
            eprintln!(
                "note: converged to a constant loop; consider a larger seed radius"
            );
        }
        Ok(0)
    } else {
        eprintln!(
            "did not converge: residual_sup {:.3e} after {} iterations",
            result.residual_sup, result.iters
        );
        Ok(1)
    }
}

#[derive(Serialize)]
struct GradCheckReport {
    trials: usize,
    eps: f64,
    tolerance: f64,
    max_error: f64,
    passed: bool,
}

fn cmd_check_grad(cli: &Cli, config: &RunConfig) -> Result<i32> {
    let fc = functional_config(config)?;
    let functional = fc.build()?;
    let trials = config.trials.unwrap_or(20);
    if trials == 0 {
        return Err(Error::Config("audit needs at least one trial".into()));
    }
    let eps = 1e-5;
    let tolerance = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let max_error = convention_audit(
        &functional,
        fc.n,
        fc.grid_size,
        trials,
        eps,
        cli.debug_flip_j,
        &mut rng,
    )?;
    let report = GradCheckReport {
        trials,
        eps,
        tolerance,
        max_error,
        passed: max_error <= tolerance,
    };
    write_text(
        &cli.out,
        "gradcheck.json",
        &serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    if report.passed {
        Ok(0)
    } else {
        eprintln!("gradient audit failed: max error {max_error:.3e}");
        Ok(1)
    }
}

#[derive(Serialize)]
struct LvResidualReport {
    residual_sup: f64,
    qdot_identity_sup: f64,
    pdot_identity_sup: f64,
    reduction_chain_defect: f64,
    solver_converged: Option<bool>,
}

fn cmd_lv_reduce(cli: &Cli, config: &RunConfig) -> Result<i32> {
    let lv = config
        .lv
        .as_ref()
        .ok_or_else(|| Error::Config("lv-reduce needs an 'lv' section".into()))?;
    let model = lv.build()?;
    let mut solver_converged = None;
    let v = if let Some(path) = &config.input_loop {
        Loop::from_csv(&fs::read_to_string(path)?)?
    } else if config.solve_first {
        let functional = crate::functionals::DelayFunctional::A(
            lotka_volterra::build_lv_functional(&model),
        );
        let system = ResidualSystem::new(functional, model.species(), lv.grid_size)?;
        let (eq, _) = lotka_volterra::equilibrium(&model)?;
        // seed p at log of the equilibrium populations, q at zero
        let mut point = vec![0.0; 2 * model.species()];
        for (i, x) in eq.iter().enumerate() {
            point[model.species() + i] = x.max(1e-3).ln();
        }
        let guess = Loop::constant(model.species(), lv.grid_size, &point)?;
        let result = solve_periodic(&system, &guess, &config.solver.clone().unwrap_or_default())?;
        solver_converged = Some(result.converged);
        result.orbit
    } else {
        return Err(Error::Config(
            "lv-reduce needs 'input_loop' or 'solve_first'".into(),
        ));
    };

    let x = lotka_volterra::reduce_to_x(&v)?;
    let residual = lotka_volterra::lv_delay_residual(&model, &x)?;
    let report = LvResidualReport {
        residual_sup: residual.sup_norm(),
        qdot_identity_sup: lotka_volterra::diagnostics::qdot_identity_sup(&model, &v)?,
        pdot_identity_sup: lotka_volterra::diagnostics::pdot_identity_sup(&model, &v)?,
        reduction_chain_defect: lotka_volterra::diagnostics::reduction_chain_defect(&model, &v)?,
        solver_converged,
    };
    write_text(&cli.out, "x_loop.csv", &x.to_csv())?;
    write_text(
        &cli.out,
        "lv_residual.json",
        &serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    match solver_converged {
        Some(false) => Ok(1),
        _ => Ok(0),
    }
}

fn cmd_sweep_tau(cli: &Cli, config: &RunConfig) -> Result<i32> {
    let fc = functional_config(config)?;
    let path = config
        .tau_path
        .as_ref()
        .ok_or_else(|| Error::Config("sweep-tau needs a 'tau_path'".into()))?;
    if path.first() != Some(&0) {
        return Err(Error::Config("tau_path must start at 0".into()));
    }
    let spec = config
        .seed_spec
        .as_ref()
        .ok_or_else(|| Error::Config("sweep-tau needs a 'seed_spec'".into()))?;
    let guess = build_seed(spec, fc.n, fc.grid_size)?;
    let solver = config.solver.clone().unwrap_or_default();
    let branch = continue_in_tau(
        |delay| {
            let mut cfg = fc.clone();
            cfg.tau_steps = crate::functionals::TauSpec::Steps(delay.steps());
            ResidualSystem::new(cfg.build()?, cfg.n, cfg.grid_size)
        },
        path,
        &guess,
        &solver,
    )?;

    let mut csv = String::from("tau,residual_sup,action,converged\n");
    for (s, result) in &branch {
        csv.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{}\n",
            *s as f64 / fc.grid_size as f64,
            result.residual_sup,
            result.action_value,
            result.converged
        ));
        write_text(
            &cli.out,
            &format!("orbit_tau_{s}.csv"),
            &result.orbit.to_csv(),
        )?;
    }
    write_text(&cli.out, "branch.csv", &csv)?;
    let all_converged = branch.iter().all(|(_, r)| r.converged);
    Ok(if all_converged { 0 } else { 1 })
}

#[allow(dead_code)]
fn _result_type_is_serializable(r: &OrbitResult) -> String {
    serde_json::to_string(r).unwrap()
}

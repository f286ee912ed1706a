//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{collapse_fit, fit_power_law, grid, Curve, RunConfig, RunRecord, Source};
use crate::circuits::{dump, SpinBasis};
use crate::engine::{optimise_x, run_ensemble, run_trajectory, InitialState, StepBuilder, TrajectoryConfig, XMode};
use crate::error::{Error, Result};
use crate::noise::{fidelity_vs_size, NoiseConfig};
use crate::operators::ModelKind;
use crate::oracle::{initial_density, integrate_lindblad, jump_monte_carlo, OracleSettings};

#[derive(Debug, Parser)]
#[command(name = "trajsim", version, about = "Circuit-level quantum trajectories for open spin chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Circuit-engine trajectory ensemble.
    Simulate(RunArgs),
    /// Direct RK4 integration of the master equation.
    Oracle(RunArgs),
    /// Continuous-time quantum-jump Monte Carlo.
    Jumpmc(RunArgs),
    /// Optimal splitting parameter on the initial state.
    OptimizeX(RunArgs),
    /// Fidelity of noisy against noiseless ensembles.
    NoiseSweep(SweepArgs),
    /// Power-law fit of a recorded observable.
    Fit(FitArgs),
    /// Finite-size scaling collapse of several records.
    Collapse(CollapseArgs),
    /// Text dump of one step circuit.
    DumpCircuit(DumpArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML file with any of the flags below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    j: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    traj: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// const:<v>, initial or adaptive.
    #[arg(long)]
    x_mode: Option<String>,
    /// Two-qubit depolarising probability; one-qubit gates use a tenth of it.
    #[arg(long)]
    noise_p: Option<f64>,
    #[arg(long)]
    shots: Option<usize>,
    /// Outer repeats for the error bar.
    #[arg(long)]
    repeats: Option<usize>,
    /// RK4 steps per output interval.
    #[arg(long)]
    substeps: Option<usize>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let flags = RunConfig {
            model: self.model,
            n: self.n,
            j: self.j,
            delta: self.delta,
            gamma: self.gamma,
            kappa: self.kappa,
            omega: self.omega,
            dt: self.dt,
            steps: self.steps,
            traj: self.traj,
            seed: self.seed,
            x_mode: self.x_mode.clone(),
            noise_p: self.noise_p,
            shots: self.shots,
            repeats: self.repeats,
            substeps: self.substeps,
            out: self.out.clone(),
        };
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(&flags))
    }
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated two-qubit error probabilities.
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.03")]
    p_list: Vec<f64>,
    /// Comma-separated system sizes; defaults to --n.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "n")]
    obs: String,
    /// Window bounds in units of gamma * t.
    #[arg(long, default_value_t = 1.0)]
    tmin: f64,
    #[arg(long, default_value_t = 8.0)]
    tmax: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CollapseArgs {
    /// One record per system size; N is read from its metadata.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "n")]
    obs: String,
    #[arg(long, default_value_t = 0.2)]
    alpha_min: f64,
    #[arg(long, default_value_t = 0.45)]
    alpha_max: f64,
    #[arg(long, default_value_t = 0.01)]
    alpha_step: f64,
    #[arg(long, default_value_t = 1.0)]
    z_min: f64,
    #[arg(long, default_value_t = 2.0)]
    z_max: f64,
    #[arg(long, default_value_t = 0.05)]
    z_step: f64,
    /// Only times with gamma * t >= tmin enter the collapse.
    #[arg(long, default_value_t = 0.5)]
    tmin: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Splitting parameter; the optimum on the initial state when absent.
    #[arg(long)]
    x: Option<f64>,
    /// Emit native gates only.
    #[arg(long)]
    lowered: bool,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn with_config(mut rec: RunRecord, cfg: &RunConfig) -> Result<RunRecord> {
    for (k, v) in cfg.resolved_pairs()? {
        rec.set_meta(&k, v);
    }
    Ok(rec)
}

fn simulate(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let model = cfg.model_spec()?.build()?;
    let tc = cfg.trajectory()?;
    let res = run_ensemble(&tc, &model)?;
    let rec = with_config(RunRecord::from_ensemble(Source::Engine, &res), &cfg)?;
    emit(cfg.out.as_deref(), &rec.to_csv_string()?)
}

fn oracle(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let model = cfg.model_spec()?.build()?;
    let tc = cfg.trajectory()?;
    let settings = OracleSettings { dt_out: tc.dt, n_out: tc.n_steps, substeps: cfg.substeps.unwrap_or(10), estimate_error: true };
    let series = integrate_lindblad(&model, &initial_density(&InitialState::AllUp, model.n_sites())?, &settings)?;
    let mut rec = with_config(RunRecord::from_oracle(&series), &cfg)?;
    rec.set_meta("substeps", settings.substeps);
    emit(cfg.out.as_deref(), &rec.to_csv_string()?)
}

fn jumpmc(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let model = cfg.model_spec()?.build()?;
    let tc = cfg.trajectory()?;
    let res = jump_monte_carlo(&model, &tc)?;
    let rec = with_config(RunRecord::from_ensemble(Source::JumpMc, &res), &cfg)?;
    emit(cfg.out.as_deref(), &rec.to_csv_string()?)
}

fn optimize_x(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let model = cfg.model_spec()?.build()?;
    let s0 = InitialState::AllUp.prepare(model.n_sites())?;
    let opt = optimise_x(&model.h, &model.lindblads, &s0)?;
    let mut text = format!("x0 {:.4}\nx0_full {}\nobjective {}\ndegenerate {}\n", opt.x, opt.x, opt.objective, opt.degenerate);
    let steps = cfg.steps.unwrap_or(0);
    if steps > 0 {
        let tc = TrajectoryConfig { n_steps: steps, n_traj: 1, x_mode: XMode::Adaptive, repeats: 1, ..cfg.trajectory()? };
        let traj = run_trajectory(&tc, &model, 0)?;
        for (k, x) in traj.x.iter().enumerate() {
            text.push_str(&format!("step {k} x {x}\n"));
        }
    }
    emit(cfg.out.as_deref(), &text)
}

fn noise_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let spec = cfg.model_spec()?;
    let tc = TrajectoryConfig { repeats: 1, ..cfg.trajectory()? };
    let sizes = if args.sizes.is_empty() { vec![spec.n] } else { args.sizes.clone() };
    let mut text = String::new();
    for (k, v) in cfg.resolved_pairs()? {
        text.push_str(&format!("# {k}={v}\n"));
    }
    text.push_str("n,p,fidelity\n");
    for &p in &args.p_list {
        let noise = NoiseConfig::new(p);
        noise.validate()?;
        for (n, f) in fidelity_vs_size(&spec, &tc, &noise, &sizes)? {
            text.push_str(&format!("{n},{p},{f:.16e}\n"));
        }
    }
    emit(cfg.out.as_deref(), &text)
}

fn gamma_of(rec: &RunRecord) -> Result<f64> {
    rec.meta("gamma").map_or(Ok(1.0), |g| g.parse().map_err(|_| Error::Parse(format!("bad gamma `{g}` in metadata"))))
}

fn fit(args: &FitArgs) -> Result<()> {
    let rec = RunRecord::read(&args.input)?;
    let gamma = gamma_of(&rec)?;
    let gt: Vec<f64> = rec.t.iter().map(|t| gamma * t).collect();
    let mut result = fit_power_law(&gt, rec.mean(&args.obs)?, args.tmin, args.tmax)?;
    let reps: Vec<f64> = (0..)
        .map_while(|r| rec.column(&format!("{}_rep{r}", args.obs)).ok())
        .map(|col| fit_power_law(&gt, col, args.tmin, args.tmax).map(|f| f.alpha))
        .collect::<Result<_>>()?;
    if reps.len() > 1 {
        let (_, se) = crate::engine::mean_stderr(&reps);
        result.alpha_repeat_stderr = Some(se);
    }
    let json = serde_json::to_string_pretty(&result).map_err(|e| Error::Parse(e.to_string()))?;
    emit(args.out.as_deref(), &(json + "\n"))
}

fn collapse(args: &CollapseArgs) -> Result<()> {
    let curves = args
        .inputs
        .iter()
        .map(|path| {
            let rec = RunRecord::read(path)?;
            let size: f64 = rec
                .meta("n")
                .ok_or_else(|| Error::Parse(format!("{}: no system size in metadata", path.display())))?
                .parse()
                .map_err(|_| Error::Parse(format!("{}: bad system size", path.display())))?;
            let gamma = gamma_of(&rec)?;
            let (t, n): (Vec<f64>, Vec<f64>) = rec
                .t
                .iter()
                .zip(rec.mean(&args.obs)?)
                .map(|(t, n)| (gamma * t, *n))
                .filter(|(gt, _)| *gt >= args.tmin && *gt > 0.0)
                .unzip();
            Ok(Curve { size, t, n })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = collapse_fit(
        &curves,
        &grid(args.alpha_min, args.alpha_max, args.alpha_step)?,
        &grid(args.z_min, args.z_max, args.z_step)?,
    )?;
    let json = serde_json::to_string_pretty(&result).map_err(|e| Error::Parse(e.to_string()))?;
    emit(args.out.as_deref(), &(json + "\n"))
}

fn dump_circuit(args: &DumpArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let model = cfg.model_spec()?.build()?;
    let tc = cfg.trajectory()?;
    tc.validate(&model)?;
    let x = match args.x {
        Some(x) => x,
        None => optimise_x(&model.h, &model.lindblads, &InitialState::AllUp.prepare(model.n_sites())?)?.x,
    };
    let circuit = StepBuilder::new(&model, tc.dt, SpinBasis::UpIsZero, args.lowered)?.circuit(x)?;
    emit(cfg.out.as_deref(), &dump(&circuit))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::CorruptedState(_) | Error::NonUnitary(_) => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 success, 1 I/O failure, 2 bad arguments or input,
/// 3 numerical failure.
pub fn cli_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Oracle(a) => oracle(a),
        Command::Jumpmc(a) => jumpmc(a),
        Command::OptimizeX(a) => optimize_x(a),
        Command::NoiseSweep(a) => noise_sweep(a),
        Command::Fit(a) => fit(a),
        Command::Collapse(a) => collapse(a),
        Command::DumpCircuit(a) => dump_circuit(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> i32 {
        cli_run(std::iter::once("trajsim").chain(args.iter().copied()))
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(&["--help"]), 0);
        assert_eq!(run(&["--version"]), 0);
        assert_eq!(run(&["simulate", "--bogus"]), 2);
        assert_eq!(run(&["simulate", "--model", "dti"]), 2);
        assert_eq!(run(&["simulate", "--model", "dti", "--n", "2", "--x-mode", "sometimes"]), 2);
        assert_eq!(run(&["simulate", "--model", "dti", "--n", "2", "--gamma", "30", "--dt", "0.1"]), 2);
    }

    #[test]
    fn error_classes() {
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::MissingColumn("n_mean".into())), 2);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 1);
    }
}

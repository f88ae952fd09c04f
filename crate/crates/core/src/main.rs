//! Command-line entry point: train surrogate nets, plan operations, plan
//! expansion, and validate operating states.
//!
//! Exit codes are part of the interface for scripted benchmarking:
//! 0 feasible / success, 2 training divergence, 3 the MIP admits no feasible
//! point, 4 feasibility restoration failed, 1 any other error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gasplan::netmodel::{load_problem, Mode};
use gasplan::physics::{residuals, FlowState};
use gasplan::pipeline::{
    default_mip_config, run_expand, run_plan, CapSetting, Formulation, NetSet, PipelineError,
    RunOutcome, RunSettings, TrainSettings, RESTORE_TOL,
};
use gasplan::report::render_table;

#[derive(Parser)]
#[command(
    name = "gasplan",
    about = "Emission-aware gas network planning with piecewise-linear flow surrogates",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the surrogate nets a network needs and write them as JSON files.
    Train(TrainArgs),
    /// Dispatch supplies on a fixed network under an optional emission cap.
    Plan(PlanArgs),
    /// Choose pipe diameters and dispatch together (expansion planning).
    Expand(ExpandArgs),
    /// Score an operating state against the exact network physics.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Output directory for the net files.
    #[arg(long)]
    out: PathBuf,
    /// Training seed.
    #[arg(long, default_value_t = TrainSettings::default().seed)]
    seed: u64,
    /// Hidden-layer width (at most 15).
    #[arg(long, default_value_t = TrainSettings::default().neurons)]
    neurons: usize,
    /// Training epochs.
    #[arg(long, default_value_t = TrainSettings::default().epochs)]
    epochs: usize,
}

#[derive(Args)]
struct PlanArgs {
    /// Network JSON file (operational mode).
    #[arg(long)]
    network: PathBuf,
    /// Directory of trained net files (from `train`).
    #[arg(long)]
    nets: PathBuf,
    /// MIP formulation: the envelope indicator model or the tangent-cut
    /// relaxation.
    #[arg(long, default_value = "icnn")]
    formulation: Formulation,
    /// Emission cap in kT/day, or "inf"; defaults to the network file's cap.
    #[arg(long)]
    cap: Option<String>,
    /// Newton-restore the candidate to exact physics (exit 4 if that fails).
    #[arg(long)]
    restore: bool,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the final operating state (restored when available, otherwise
    /// the solver candidate) as JSON to this path; `validate` reads it back.
    #[arg(long)]
    save_state: Option<PathBuf>,
}

#[derive(Args)]
struct ExpandArgs {
    /// Network JSON file (expansion mode: diameter bounds on every pipe).
    #[arg(long)]
    network: PathBuf,
    /// Directory of trained net files, including the diameter-normalized
    /// pair.
    #[arg(long)]
    nets: PathBuf,
    /// Emission cap in kT/day, or "inf"; defaults to the network file's cap.
    #[arg(long)]
    cap: Option<String>,
    /// Newton-restore the candidate to exact physics (exit 4 if that fails).
    #[arg(long)]
    restore: bool,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the final operating state (restored when available, otherwise
    /// the solver candidate) as JSON to this path; `validate` reads it back.
    #[arg(long)]
    save_state: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Network JSON file.
    #[arg(long)]
    network: PathBuf,
    /// Operating state JSON file (injections, flows, squared pressures, and
    /// diameters for expansion networks).
    #[arg(long)]
    state: PathBuf,
}

fn cmd_train(args: &TrainArgs) -> Result<(), PipelineError> {
    if args.neurons == 0 || args.neurons > 15 {
        return Err(PipelineError::Config(format!(
            "--neurons must be between 1 and 15, got {}",
            args.neurons
        )));
    }
    let problem = load_problem(&args.network)?;
    let settings =
        TrainSettings { neurons: args.neurons, epochs: args.epochs, seed: args.seed };
    let set = NetSet::train(&problem, &settings)?;
    let paths = set.save_dir(&args.out)?;
    println!("trained {} net(s):", paths.len());
    for (net, path) in set.nets.iter().zip(&paths) {
        println!(
            "  {} ({:?} on {:?}, final loss {:.3e})",
            path.display(),
            net.meta.target,
            net.domain,
            net.meta.final_loss
        );
    }
    Ok(())
}

fn parse_cap(text: &Option<String>) -> Result<CapSetting, PipelineError> {
    match text {
        None => Ok(CapSetting::FromNetwork),
        Some(t) => CapSetting::parse(t).map_err(PipelineError::Config),
    }
}

fn finish_run(
    outcome: &RunOutcome,
    report_path: &Option<PathBuf>,
    state_path: &Option<PathBuf>,
) -> Result<(), PipelineError> {
    print!("{}", render_table(std::slice::from_ref(&outcome.report)));
    if let Some(path) = report_path {
        std::fs::write(path, outcome.report.to_json())?;
        eprintln!("report written to {}", path.display());
    }
    if let Some(path) = state_path {
        let state = outcome.restored.as_ref().unwrap_or(&outcome.candidate);
        let text = serde_json::to_string_pretty(state)
            .map_err(|e| PipelineError::Config(format!("state serialization: {e}")))?;
        std::fs::write(path, text)?;
        eprintln!("state written to {}", path.display());
    }
    Ok(())
}

/// On a restoration failure the solver side of the run is still real; print
/// and persist it before the error propagates to the exit code.
fn surface_partial_report(err: &PipelineError, report_path: &Option<PathBuf>) {
    if let PipelineError::RestorationFailed { report, .. } = err {
        print!("{}", render_table(std::slice::from_ref(report.as_ref())));
        if let Some(path) = report_path {
            let _ = std::fs::write(path, report.to_json());
        }
    }
}

fn cmd_plan(args: &PlanArgs) -> Result<(), PipelineError> {
    let problem = load_problem(&args.network)?;
    let nets = NetSet::load_dir(&args.nets)?;
    let settings = RunSettings {
        formulation: args.formulation,
        cap: parse_cap(&args.cap)?,
        restore: args.restore,
        mip: default_mip_config()?,
        ..RunSettings::default()
    };
    let outcome = run_plan(&problem, &nets, &settings).inspect_err(|e| {
        surface_partial_report(e, &args.report);
    })?;
    finish_run(&outcome, &args.report, &args.save_state)
}

fn cmd_expand(args: &ExpandArgs) -> Result<(), PipelineError> {
    let problem = load_problem(&args.network)?;
    let nets = NetSet::load_dir(&args.nets)?;
    let settings = RunSettings {
        formulation: Formulation::Icnn,
        cap: parse_cap(&args.cap)?,
        restore: args.restore,
        mip: default_mip_config()?,
        ..RunSettings::default()
    };
    let outcome = run_expand(&problem, &nets, &settings).inspect_err(|e| {
        surface_partial_report(e, &args.report);
    })?;
    finish_run(&outcome, &args.report, &args.save_state)
}

fn cmd_validate(args: &ValidateArgs) -> Result<bool, PipelineError> {
    let problem = load_problem(&args.network)?;
    let text = std::fs::read_to_string(&args.state)?;
    let state: FlowState = serde_json::from_str(&text).map_err(|e| {
        PipelineError::Config(format!("state file {}: {e}", args.state.display()))
    })?;
    if problem.mode == Mode::Expansion && state.diameters.is_none() {
        return Err(PipelineError::Config(
            "expansion-mode networks need diameters in the state file".to_string(),
        ));
    }
    let score = residuals(&problem.network, &state)?;
    println!("mass residual (inf):      {:.6e}", score.mass_residual_inf);
    println!("coupling residual (inf):  {:.6e}", score.weymouth_residual_inf);
    println!("bound violation (inf):    {:.6e}", score.bound_violation_inf);
    println!("emissions (kT/day):       {:.6}", score.emission_total);
    println!("cost:                     {:.6}", score.cost_total);
    let ok = score.is_feasible(RESTORE_TOL);
    println!("feasible at {RESTORE_TOL:.0e}: {}", if ok { "yes" } else { "no" });
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool, PipelineError> = match &cli.command {
        Command::Train(args) => cmd_train(args).map(|()| true),
        Command::Plan(args) => cmd_plan(args).map(|()| true),
        Command::Expand(args) => cmd_expand(args).map(|()| true),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

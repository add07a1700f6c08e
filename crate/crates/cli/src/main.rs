//! `ikp`: simulate, identify, optimize, predict and bench from the shell.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ikp_core::bench::run_benchmark;
use ikp_core::ikp::{measurements_at, objective, run_predictor};
use ikp_core::model::{regular_schedule, Schedule, WarmupConfig};
use ikp_core::optimizer::{exhaustive_search, genetic_search};
use ikp_core::synth::{inject_noise, load_trajectory_csv, respiratory_surrogate};
use ikp_core::sysid::{fit, select_order};
use ikp_core::{simulate_mass_spring, Error, Model, Result, Traj};

use config::{RunConfig, SearchMethod, Source};

#[derive(Parser)]
#[command(name = "ikp", version, about = "Intermittent Kalman prediction under a measurement budget")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the file and derives every stage seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trajectory CSV (overrides `paths.trajectory`).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Model JSON (overrides `paths.model`).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Schedule JSON (overrides `paths.schedule`).
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory (mass-spring or respiratory surrogate).
    Simulate(Common),
    /// Fit a linear Gaussian model to a measurement CSV with EM.
    Identify(Common),
    /// Choose measurement times for a model and budget.
    Optimize(Common),
    /// Run the intermittent predictor over a schedule.
    Predict(Common),
    /// Compare hold and Kalman predictors on regular and optimized schedules.
    Bench(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    let (common, stage): (Common, fn(&RunConfig, &Path) -> Result<()>) = match command {
        Command::Simulate(c) => (c, cmd_simulate),
        Command::Identify(c) => (c, cmd_identify),
        Command::Optimize(c) => (c, cmd_optimize),
        Command::Predict(c) => (c, cmd_predict),
        Command::Bench(c) => (c, cmd_bench),
    };
    let config = resolve_config(&common)?;
    let out = config.out_dir();
    std::fs::create_dir_all(&out)?;
    write_file(&out.join("config.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &config)?;
        writeln!(w)?;
        Ok(())
    })?;
    stage(&config, &out)
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        config.rng_seed = common.seed;
    }
    config.apply_master_seed();
    let paths = &mut config.paths;
    for (flag, slot) in [
        (&common.out, &mut paths.out_dir),
        (&common.trajectory, &mut paths.trajectory),
        (&common.model, &mut paths.model),
        (&common.schedule, &mut paths.schedule),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    Ok(config)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<S: serde::Serialize>(path: &Path, value: &S) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<()> {
    let sim = &config.simulate;
    let traj: Traj = match sim.source {
        Source::MassSpring => {
            sim.mass_spring.validate()?;
            if let Some(warning) = sim.mass_spring.resolution_warning() {
                eprintln!("warning: {warning}");
            }
            let (traj, model) = simulate_mass_spring(&sim.mass_spring)?;
            model.write_json(out.join("model.json"))?;
            traj
        }
        Source::Surrogate => {
            let truth = respiratory_surrogate(&sim.surrogate)?;
            inject_noise(
                &truth,
                sim.surrogate_noise_sigma2,
                ikp_core::rng::derive_seed(sim.surrogate.rng_seed, &[1]),
            )?
        }
    };
    write_file(&out.join("truth.csv"), |w| traj.write_csv(w))?;
    write_file(&out.join("measurements.csv"), |w| traj.write_noisy_csv(w))?;
    println!("wrote {} steps to {}", traj.len(), out.display());
    Ok(())
}

fn cmd_identify(config: &RunConfig, out: &Path) -> Result<()> {
    let section = &config.identify;
    let traj: Traj = load_trajectory_csv(RunConfig::require(&config.paths.trajectory, "trajectory")?)?;
    let rows = match section.train_steps {
        Some(k) if k > traj.len() => {
            return Err(Error::InvalidInput(format!(
                "train_steps = {k} exceeds the {} rows available",
                traj.len()
            )))
        }
        Some(k) => &traj.truth[..k],
        None => &traj.truth[..],
    };
    let result = if section.order_candidates.is_empty() {
        fit(rows, &section.em)?
    } else {
        select_order(rows, &section.order_candidates, &section.em)?
    };
    result.model.write_json(out.join("model.json"))?;
    write_json(&out.join("fit.json"), &result.diagnostics)?;
    let d = &result.diagnostics;
    println!(
        "n = {}, {} iterations, log-likelihood {:.6e}{}",
        d.state_dim_n,
        d.iterations,
        d.loglik_history.last().copied().unwrap_or(f64::NAN),
        if d.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

fn cmd_optimize(config: &RunConfig, out: &Path) -> Result<()> {
    let section = &config.optimize;
    let model = Model::read_json(RunConfig::require(&config.paths.model, "model")?)?;
    let warmup = WarmupConfig::new(section.warmup_t0, section.horizon_t)?;
    let result = match section.method {
        SearchMethod::Genetic => {
            genetic_search(&model, section.horizon_t, section.budget_n, warmup, &section.ga)?
        }
        SearchMethod::Exhaustive => {
            exhaustive_search(&model, section.horizon_t, section.budget_n, warmup)?
        }
    };
    write_json(&out.join("schedule.json"), &result.to_doc())?;
    let regular = regular_schedule(section.horizon_t, section.budget_n)?;
    let reference = objective(&model, &regular, warmup)?;
    println!(
        "objective {:.6e}, regular {:.6e}, ratio {:.4}",
        result.best_objective,
        reference,
        result.best_objective / reference
    );
    Ok(())
}

fn cmd_predict(config: &RunConfig, out: &Path) -> Result<()> {
    let model = Model::read_json(RunConfig::require(&config.paths.model, "model")?)?;
    let text = std::fs::read_to_string(RunConfig::require(&config.paths.schedule, "schedule")?)?;
    let schedule = Schedule::from_json(&text)?;
    let traj: Traj = load_trajectory_csv(RunConfig::require(&config.paths.trajectory, "trajectory")?)?;
    if traj.dim() != model.output_dim() {
        return Err(Error::InvalidInput(format!(
            "trajectory has {} columns, the model has {} outputs",
            traj.dim(),
            model.output_dim()
        )));
    }
    let measurements = measurements_at(&schedule, &traj.truth)?;
    let belief = run_predictor(&model, &schedule, &measurements)?;
    write_file(&out.join("belief.csv"), |w| belief.write_csv(&model, w))?;
    println!("predicted {} steps with {} measurements", schedule.horizon(), schedule.budget());
    Ok(())
}

fn cmd_bench(config: &RunConfig, out: &Path) -> Result<()> {
    let section = &config.bench;
    let truth: Traj = match &config.paths.trajectory {
        Some(_) => load_trajectory_csv(RunConfig::require(&config.paths.trajectory, "trajectory")?)?,
        None => respiratory_surrogate(&section.surrogate)?,
    };
    let report = run_benchmark(&section.protocol, &truth)?;
    write_file(&out.join("bench.csv"), |w| report.write_csv(w))?;
    let table = report.table(Some(truth.dt));
    write_file(&out.join("table.txt"), |w| {
        w.write_all(table.as_bytes())?;
        Ok(())
    })?;
    print!("{table}");
    Ok(())
}

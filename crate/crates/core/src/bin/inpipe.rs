use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use inpipe_control::config::{Preset, RunConfig};
use inpipe_control::linmodel::{numeric_linear_model, reconcile, LinearModel};
use inpipe_control::plant::PlantState;
use inpipe_control::sweep::{run_sweep, sweep_points, write_summary};
use inpipe_control::telemetry::{metrics_summary, write_telemetry};
use inpipe_control::validation::{format_report, run_all, ValidationOptions};

/// LQR attitude stabilization and PID speed tracking for a three-wheel
/// in-pipe robot.
#[derive(Parser)]
#[command(name = "inpipe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the LQR gain and print it with solver diagnostics.
    Gain(ConfigArgs),
    /// Print the linear design model next to the numerically linearized plant.
    Linearize {
        #[command(flatten)]
        config: ConfigArgs,
        /// Central-difference step for the numeric Jacobian.
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Run one closed-loop simulation and write telemetry CSV.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        run: RunOverrides,
        /// Telemetry file (default: `[output] telemetry`, else stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Cartesian product of the `[sweep]` axes.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        run: RunOverrides,
        /// Output directory (default: `[output] sweep_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance criteria and report pass/fail for each.
    Validate {
        /// Relative perturbation applied to the synthesized gain.
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb_gain: f64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file, layered over the preset if both are given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset: paper-iter1, paper-iter2, paper-iter3 or paper-gain.
    #[arg(long)]
    preset: Option<Preset>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        Ok(RunConfig::load(self.preset, self.config.as_deref())?)
    }
}

#[derive(Args)]
struct RunOverrides {
    /// Integration step [s].
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time [s].
    #[arg(long)]
    duration: Option<f64>,
    /// Measurement-noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(dt) = self.dt {
            cfg.scenario.dt = dt;
        }
        if let Some(d) = self.duration {
            cfg.scenario.duration = d;
        }
        if let Some(s) = self.seed {
            cfg.controller.seed = s;
        }
    }
}

fn print_model(title: &str, m: &LinearModel) {
    println!("{title}");
    println!("A ={:.4}", m.a);
    println!("B ={:.4}", m.b);
}

fn gain(args: &ConfigArgs) -> Result<()> {
    let cfg = args.load()?;
    let outcome = cfg.resolve_gain()?;
    if let Some(w) = &outcome.warning {
        eprintln!("warning: {w}");
    }
    println!("K =");
    for i in 0..3 {
        let row: Vec<String> = (0..4).map(|j| format!("{:>10.4}", outcome.gain.0[(i, j)])).collect();
        println!("  [{} ]", row.join(""));
    }
    match &outcome.synthesis {
        Some(syn) => {
            let sol = &syn.solution;
            println!(
                "CARE residual (Frobenius): {:.3e} (bound {:.3e}, {} Newton steps)",
                sol.residual_norm,
                sol.residual_bound(),
                sol.newton_steps
            );
            println!("closed-loop eigenvalues:");
            for e in &sol.closed_loop_eigs {
                println!("  {:>10.4} {:+.4}i", e.re, e.im);
            }
        }
        None if outcome.warning.is_none() => println!("gain taken from config, no synthesis run"),
        None => {}
    }
    Ok(())
}

fn linearize(args: &ConfigArgs, step: f64) -> Result<()> {
    let cfg = args.load()?;
    let design = cfg.design_model()?;
    let numeric = numeric_linear_model(&cfg.robot, step)?;
    let eq = PlantState::equilibrium(cfg.robot.flow_velocity);
    println!(
        "operating point: x = 0, v = {} m/s, attitude level, zero torque",
        eq.velocity
    );
    print_model(&format!("design model ({:?}):", cfg.controller.b_variant), &design);
    print_model(&format!("numeric Jacobian (h = {step:e}):"), &numeric);
    let rep = reconcile(&design, &numeric, 1e-9);
    println!(
        "sparsity A: {}, sparsity B: {}, signs: {}",
        rep.a_sparsity_match, rep.b_sparsity_match, rep.sign_match
    );
    println!("numeric / design ratios of B:");
    for row in rep.b_ratios {
        let cells: Vec<String> = row
            .iter()
            .map(|r| r.map_or_else(|| format!("{:>10}", "-"), |r| format!("{r:>10.4}")))
            .collect();
        println!("  {}", cells.join(""));
    }
    println!("controllability rank: {}", design.controllability_rank());
    Ok(())
}

fn simulate(args: &ConfigArgs, run: &RunOverrides, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = args.load()?;
    run.apply(&mut cfg);
    let outcome = cfg.resolve_gain()?;
    if let Some(w) = &outcome.warning {
        eprintln!("warning: {w}");
    }
    let result = inpipe_control::sim::run_scenario(&cfg.scenario_with_gain(outcome.gain)?)?;
    let path = out.or(cfg.output.telemetry.clone());
    match &path {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_telemetry(BufWriter::new(f), &result.trajectory)?;
            print!("{}", metrics_summary(&result.metrics));
            println!("telemetry written to {}", p.display());
        }
        None => {
            write_telemetry(io::stdout().lock(), &result.trajectory)?;
            eprint!("{}", metrics_summary(&result.metrics));
        }
    }
    if result.metrics.diverged {
        bail!("simulation diverged");
    }
    Ok(())
}

fn sweep(args: &ConfigArgs, run: &RunOverrides, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = args.load()?;
    run.apply(&mut cfg);
    let Some(axes) = cfg.sweep.clone() else {
        bail!("config has no [sweep] table");
    };
    let Some(dir) = out.or(cfg.output.sweep_dir.clone()) else {
        bail!("no output directory: pass --out or set [output] sweep_dir");
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let n = sweep_points(&cfg, &axes)?.len();
    let width = n.to_string().len().max(4);
    let run_path = |i: usize| -> PathBuf { dir.join(format!("run_{i:0width$}.csv")) };
    let rows = run_sweep(&cfg, &axes, |i, _, out| {
        let f = File::create(run_path(i))?;
        write_telemetry(BufWriter::new(f), &out.trajectory)
    })?;
    let summary = dir.join("summary.csv");
    write_summary(File::create(&summary)?, &rows)?;
    let settled = rows.iter().filter(|r| r.metrics.settled()).count();
    println!("{n} runs, {settled} settled; summary in {}", summary.display());
    Ok(())
}

fn validate(perturb_gain: f64) -> Result<bool> {
    let results = run_all(&ValidationOptions {
        gain_perturbation: perturb_gain,
    });
    let mut stdout = io::stdout().lock();
    stdout.write_all(format_report(&results).as_bytes())?;
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gain(c) => gain(c).map(|_| true),
        Command::Linearize { config, step } => linearize(config, *step).map(|_| true),
        Command::Simulate { config, run, out } => simulate(config, run, out.clone()).map(|_| true),
        Command::Sweep { config, run, out } => sweep(config, run, out.clone()).map(|_| true),
        Command::Validate { perturb_gain } => validate(*perturb_gain),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

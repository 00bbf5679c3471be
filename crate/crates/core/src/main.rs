use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pact::contract::verify_feasibility;
use pact::experiment::{run_qos, run_solve, run_sweep_liability, simulate_population_within, ExperimentError};
use pact::report::{self, fmt_num};
use pact::scenario::{load_scenario_file, Scenario};
use pact::solver::SolveMode;

/// Menus read back from CSV carry 9 significant digits, so binding
/// constraints can miss by a few 1e-9.
const CSV_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "pact", version, about = "Contract-based pricing for LLM services")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    SecondBest,
    FirstBest,
}

#[derive(Subcommand)]
enum Command {
    /// Latency breakdown and QoS score per service.
    Qos {
        #[arg(short = 'c', long)]
        scenario: PathBuf,
        #[arg(short = 'o', long)]
        out: PathBuf,
    },
    /// Fit the cost curve and solve for a menu.
    Solve {
        #[arg(short = 'c', long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "second-best")]
        mode: Mode,
        /// Fit costs without liability surcharges.
        #[arg(long)]
        no_liability: bool,
        #[arg(short = 'o', long)]
        out: PathBuf,
    },
    /// Check a menu against every participation and truth-telling constraint.
    Verify {
        #[arg(short = 'c', long)]
        scenario: PathBuf,
        #[arg(short = 'm', long)]
        menu: PathBuf,
        #[arg(long, default_value_t = CSV_TOLERANCE)]
        tolerance: f64,
    },
    /// Re-solve with liability surcharges scaled by each multiplier.
    SweepLiability {
        #[arg(short = 'c', long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5")]
        multipliers: Vec<f64>,
        #[arg(short = 'o', long)]
        out: PathBuf,
    },
    /// Draw users from the type distribution and let them choose from a menu.
    Simulate {
        #[arg(short = 'c', long)]
        scenario: PathBuf,
        #[arg(short = 'm', long)]
        menu: PathBuf,
        #[arg(short = 'n', long)]
        n: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = CSV_TOLERANCE)]
        tolerance: f64,
        #[arg(short = 'o', long)]
        out: PathBuf,
    },
}

enum Failure {
    Validation(String),
    Infeasible(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    Ok(load_scenario_file(path)?)
}

fn cmd_qos(scenario: &Path, out: &Path) -> Result<(), Failure> {
    let sc = load(scenario)?;
    let rep = run_qos(&sc)?;
    println!(
        "gamma calibration: x{} applied to listed GFLOPS (effective throughput = gamma_gflops * 1e9 * {})",
        fmt_num(rep.gamma_calibration),
        fmt_num(rep.gamma_calibration)
    );
    println!("{:>4} {:>12} {:>10} {:>10} {:>10}", "k", "t_total", "q", "expected", "dev");
    for ((svc, lvl), dev) in sc.services.iter().zip(&rep.table.levels).zip(&rep.deviations) {
        let expected = svc.expected_q.map(fmt_num).unwrap_or_else(|| "-".into());
        let dev = dev.map(fmt_num).unwrap_or_else(|| "-".into());
        let warn = if lvl.latency_warning { "  (latency > 1 s, q clamped)" } else { "" };
        println!(
            "{:>4} {:>12} {:>10} {:>10} {:>10}{warn}",
            lvl.id,
            fmt_num(lvl.latency.t_total),
            fmt_num(lvl.q),
            expected,
            dev
        );
    }
    if let Some(max) = rep.max_abs_deviation() {
        println!("max |q - expected_q| = {}", fmt_num(max));
    }
    for dup in &rep.table.duplicates {
        println!("duplicate q values for services {dup:?}");
    }
    write_artifact(out, "qos.csv", &report::qos_csv(&rep, &sc.services)?)
}

fn cmd_solve(scenario: &Path, mode: Mode, no_liability: bool, out: &Path) -> Result<(), Failure> {
    let sc = load(scenario)?;
    let mode = match mode {
        Mode::SecondBest => SolveMode::SecondBest,
        Mode::FirstBest => SolveMode::FirstBest,
    };
    let with_liability = sc.liability_enabled && !no_liability;
    let run = run_solve(&sc, mode, with_liability)?;
    let r = &run.result;
    println!("expected profit:   {}", fmt_num(r.expected_profit));
    println!("mean user utility: {}", fmt_num(r.expected_user_utility()));
    println!("social welfare:    {}", fmt_num(r.social_welfare));
    if let Some(f) = &run.feasibility {
        println!(
            "constraints checked: {} (max violation {})",
            f.constraints_checked,
            fmt_num(f.max_violation)
        );
    }
    write_artifact(out, "menu.csv", &report::menu_csv(&run)?)?;
    write_artifact(out, "summary.csv", &report::summary_csv(&run)?)
}

fn read_menu(sc: &Scenario, path: &Path) -> Result<pact::ContractMenu, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    let rows = report::parse_menu_csv(&text)?;
    Ok(report::menu_from_rows(&rows, &sc.types)?)
}

fn cmd_verify(scenario: &Path, menu: &Path, tolerance: f64) -> Result<(), Failure> {
    let sc = load(scenario)?;
    let menu = read_menu(&sc, menu)?;
    let rep = verify_feasibility(&menu, &sc.types, &sc.valuation, tolerance)?;
    println!(
        "checked {} constraints at tolerance {}: max violation {}",
        rep.constraints_checked,
        fmt_num(tolerance),
        fmt_num(rep.max_violation)
    );
    for v in &rep.ir_violations {
        println!("IR violated: type {} utility {}", v.type_index + 1, fmt_num(v.slack));
    }
    for v in &rep.ic_violations {
        println!(
            "IC violated: type {} prefers item {} by {}",
            v.type_index + 1,
            v.deviation + 1,
            fmt_num(-v.slack)
        );
    }
    if rep.feasible {
        println!("feasible");
        Ok(())
    } else {
        Err(Failure::Infeasible("menu is not feasible".into()))
    }
}

fn cmd_sweep(scenario: &Path, multipliers: &[f64], out: &Path) -> Result<(), Failure> {
    let sc = load(scenario)?;
    let rows = run_sweep_liability(&sc, multipliers)?;
    for r in &rows {
        println!("x{:<6} profit {}", fmt_num(r.multiplier), fmt_num(r.expected_profit));
    }
    write_artifact(out, "sweep.csv", &report::sweep_csv(&rows)?)
}

fn cmd_simulate(scenario: &Path, menu: &Path, n: u64, seed: u64, tolerance: f64, out: &Path) -> Result<(), Failure> {
    let sc = load(scenario)?;
    let menu = read_menu(&sc, menu)?;
    let outcome = match simulate_population_within(&sc, &menu, n, seed, tolerance) {
        Err(ExperimentError::Infeasible(rep)) => {
            return Err(Failure::Infeasible(format!(
                "menu is not feasible (max violation {})",
                fmt_num(rep.max_violation)
            )))
        }
        other => other?,
    };
    println!("empirical profit:       {}", fmt_num(outcome.empirical_profit));
    println!("empirical user utility: {}", fmt_num(outcome.empirical_mean_utility));
    println!("empirical welfare:      {}", fmt_num(outcome.empirical_social_welfare));
    write_artifact(out, "sim.csv", &report::sim_csv(&outcome)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Qos { scenario, out } => cmd_qos(scenario, out),
        Command::Solve {
            scenario,
            mode,
            no_liability,
            out,
        } => cmd_solve(scenario, *mode, *no_liability, out),
        Command::Verify {
            scenario,
            menu,
            tolerance,
        } => cmd_verify(scenario, menu, *tolerance),
        Command::SweepLiability {
            scenario,
            multipliers,
            out,
        } => cmd_sweep(scenario, multipliers, out),
        Command::Simulate {
            scenario,
            menu,
            n,
            seed,
            tolerance,
            out,
        } => cmd_simulate(scenario, menu, *n, *seed, *tolerance, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Infeasible(msg)) => {
            eprintln!("infeasible: {msg}");
            ExitCode::from(2)
        }
    }
}

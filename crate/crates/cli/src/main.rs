//! `sotbt`: run, validate and list behavior-tree / stack-of-tasks scenarios.
//!
//! Exit status is 0 when every run succeeds, 1 when a run ends in failure,
//! timeout or error (or an output file cannot be written), and 2 on usage
//! or parse errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use sotbt::kinematics::ManipulatorModel;
use sotbt::scenario::{
    builtin, run, run_batch_with, run_concurrent, write_control_csv, write_plot_csv, write_summary,
    write_tick_csv, Rates, RunResult, RunSummary, Scenario, ScenarioError,
};

#[derive(Debug, Parser)]
#[command(name = "sotbt", version, about = "Behavior trees driving a prioritized stack of tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario file, or a built-in scenario by name.
    Run {
        scenario: String,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; created if missing.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Files to write into `--out`; all of them when omitted.
        #[arg(long, value_enum, value_delimiter = ',', requires = "out")]
        export: Vec<Export>,
        /// Control period and control steps per tick, as `dt,R`.
        #[arg(long, value_parser = parse_rates)]
        rates: Option<Rates>,
        /// Run the tree and the control loop on separate threads.
        #[arg(long)]
        concurrent: bool,
    },
    /// Check a scenario or model file without running it.
    Validate { file: PathBuf },
    /// List the built-in scenarios.
    ListScenarios,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Export {
    Csv,
    Summary,
    Plotdata,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("`{0}` is neither a file nor a built-in scenario (see `sotbt list-scenarios`)")]
    UnknownScenario(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Write { .. } => 1,
            _ => 2,
        }
    }
}

fn parse_rates(s: &str) -> Result<Rates, String> {
    Rates::parse(s).map_err(|e| e.to_string())
}

fn resolve(name: &str) -> Result<Scenario, CliError> {
    let path = Path::new(name);
    if path.exists() {
        return Ok(Scenario::load(path)?);
    }
    match builtin::scenario(name) {
        Some(s) => Ok(s?),
        None => Err(CliError::UnknownScenario(name.to_string())),
    }
}

fn write_file(path: PathBuf, fill: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    fill(&mut buf).map_err(|message| CliError::Write { path: path.clone(), message })?;
    fs::write(&path, buf).map_err(|e| CliError::Write { path, message: e.to_string() })
}

fn export_traces(result: &RunResult, dir: &Path, prefix: &str, exports: &[Export]) -> Result<(), CliError> {
    if exports.contains(&Export::Csv) {
        write_file(dir.join(format!("{prefix}trace.csv")), |b| {
            write_control_csv(&result.trace, b).map_err(|e| e.to_string())
        })?;
        write_file(dir.join(format!("{prefix}ticks.csv")), |b| {
            write_tick_csv(&result.trace, b).map_err(|e| e.to_string())
        })?;
    }
    if exports.contains(&Export::Plotdata) {
        write_file(dir.join(format!("{prefix}plotdata.csv")), |b| {
            write_plot_csv(&result.trace, b).map_err(|e| e.to_string())
        })?;
    }
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!("scenario       {} (trial {}, seed {})", s.scenario, s.trial, s.seed);
    match &s.error {
        Some(e) => println!("outcome        {} ({e})", s.outcome),
        None => println!("outcome        {}", s.outcome),
    }
    println!(
        "sim time       {:.3} s ({} ticks, {} control steps, dt {} s, {} steps/tick)",
        s.sim_time, s.ticks, s.control_steps, s.control_dt, s.ticks_ratio
    );
    if let Some(c) = s.min_clearance {
        println!("min clearance  {c:.4} m");
    }
    println!("control step   mean {:.1} us, max {:.1} us", s.mean_step_us, s.max_step_us);
    println!("revisions      {}", s.final_revision);
    if s.disturbances_fired > 0 {
        println!("disturbances   {}", s.disturbances_fired);
    }
    if !s.failed_nodes.is_empty() {
        println!("failed nodes   {}", s.failed_nodes.join(", "));
    }
    if s.singular_steps > 0 {
        println!("singular steps {}", s.singular_steps);
    }
}

struct RunArgs {
    scenario: String,
    trials: u64,
    seed: Option<u64>,
    out: Option<PathBuf>,
    export: Vec<Export>,
    rates: Option<Rates>,
    concurrent: bool,
}

fn run_command(args: RunArgs) -> Result<bool, CliError> {
    let mut scenario = resolve(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(rates) = args.rates {
        scenario.rates = rates;
    }
    let exports = if args.export.is_empty() { vec![Export::Csv, Export::Summary, Export::Plotdata] } else { args.export };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| CliError::Write { path: dir.clone(), message: e.to_string() })?;
    }

    if args.trials == 1 {
        let result = if args.concurrent { run_concurrent(&scenario, 0) } else { run(&scenario, 0) };
        print_summary(&result.summary);
        if let Some(dir) = &args.out {
            export_traces(&result, dir, "", &exports)?;
            if exports.contains(&Export::Summary) {
                let text = write_summary(&result.summary);
                write_file(dir.join("summary.toml"), |b| {
                    b.extend_from_slice(text.as_bytes());
                    Ok(())
                })?;
            }
        }
        return Ok(result.outcome.is_success());
    }

    let width = (args.trials - 1).to_string().len();
    let first_error: Mutex<Option<CliError>> = Mutex::new(None);
    let report = run_batch_with(&scenario, args.trials, args.concurrent, |result| {
        if let Some(dir) = &args.out {
            let prefix = format!("trial_{:0width$}_", result.summary.trial);
            if let Err(e) = export_traces(result, dir, &prefix, &exports) {
                first_error.lock().unwrap().get_or_insert(e);
            }
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    print!("{}", report.render());
    let mean_step = report.runs.iter().map(|r| r.mean_step_us).sum::<f64>() / report.runs.len() as f64;
    println!("mean control step {mean_step:.1} us");
    for r in report.runs.iter().filter(|r| r.outcome != "root_success") {
        println!("trial {} {}", r.trial, r.outcome);
    }
    if let (Some(dir), true) = (&args.out, exports.contains(&Export::Summary)) {
        let text = toml::to_string(&report).map_err(|e| CliError::Write {
            path: dir.join("summary.toml"),
            message: e.to_string(),
        })?;
        write_file(dir.join("summary.toml"), |b| {
            b.extend_from_slice(text.as_bytes());
            Ok(())
        })?;
    }
    Ok(report.all_succeeded())
}

/// Model files carry a `joints` array and no `tree`.
fn validate(path: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    let table: toml::Table = toml::from_str(&text).map_err(ScenarioError::from)?;
    if table.contains_key("joints") && !table.contains_key("tree") {
        let model = ManipulatorModel::from_toml(&text).map_err(|e| CliError::Model(e.to_string()))?;
        return Ok(format!("model `{}`: {} joints", model.name(), model.dof()));
    }
    let s = Scenario::from_toml(&text, path.parent())?;
    Ok(format!(
        "scenario `{}`: {} tasks, {} disturbances, {} start positions",
        s.name,
        s.tasks.len(),
        s.disturbances.len(),
        s.positions()
    ))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { scenario, trials, seed, out, export, rates, concurrent } => {
            run_command(RunArgs { scenario, trials, seed, out, export, rates, concurrent })
        }
        Command::Validate { file } => validate(&file).map(|msg| {
            println!("ok: {msg}");
            true
        }),
        Command::ListScenarios => {
            for name in builtin::names() {
                let description = match builtin::scenario(name) {
                    Some(Ok(s)) => s.description,
                    _ => String::new(),
                };
                println!("{name:<20} {description}");
            }
            Ok(true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

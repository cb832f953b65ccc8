use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use neurosr::autodiff::predict;
use neurosr::evolution::evaluate_fitness;
use neurosr::extraction::{extract_expression, simplify};
use neurosr::{execute_experiment, Checkpoint, ProblemName, ProblemOptions, RunConfig, RunReport};

#[derive(Parser)]
#[command(name = "neurosr", version, about = "Neuro-evolutionary symbolic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded multi-run experiment.
    Run {
        /// TOML configuration file; defaults are used for missing keys.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        problem: Option<ProblemName>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rebuild the report of an experiment directory from its logs.
    Report {
        dir: PathBuf,
    },
    /// Load a checkpoint and print its expression and metrics.
    Eval {
        checkpoint: PathBuf,
        /// Print the LaTeX form as well.
        #[arg(long)]
        latex: bool,
    },
    /// Write the data sets and constraint samples of a benchmark.
    GenData {
        problem: ProblemName,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long, default_value = "data")]
        output: PathBuf,
    },
    /// Print the default configuration.
    Config,
}

fn run(
    config: Option<PathBuf>,
    problem: Option<ProblemName>,
    runs: Option<usize>,
    seed: Option<u64>,
    output: Option<PathBuf>,
) -> Result<ExitCode> {
    let mut cfg = match &config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(p) = problem {
        cfg.problem = p;
    }
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    let report = execute_experiment(&cfg)?;
    print!("{}", report.to_table());
    println!("results written to {}", cfg.output_dir.display());
    if report.n_failed() > 0 {
        eprintln!("{} run(s) failed", report.n_failed());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn report(dir: PathBuf) -> Result<ExitCode> {
    let report = RunReport::from_logs(&dir).with_context(|| format!("reading logs under {}", dir.display()))?;
    report.write(&dir)?;
    print!("{}", report.to_table());
    Ok(if report.n_failed() > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn eval(path: PathBuf, latex: bool) -> Result<ExitCode> {
    let cp = Checkpoint::load(&path).with_context(|| format!("reading {}", path.display()))?;
    let sub = cp.subtopology()?;
    let problem = cp.problem()?;
    let mut settings = neurosr::LossSettings::default();
    settings.theta_div = cp.theta_div;
    let fitness = evaluate_fitness(&sub, &problem.training_data(), &settings)?;
    let rmse_int_ext = problem.rmse_int_ext(|x| predict(&sub, x, cp.theta_div));
    let expr = simplify(&extract_expression(&sub, cp.theta_div), neurosr::topology::DEFAULT_THETA_A);
    let names = &problem.train.input_names;
    println!("problem        {}", cp.problem);
    println!("run / seed     {} / {}", cp.run, cp.seed);
    println!("complexity     {}/{}", fitness.n_active_units, fitness.n_active_links);
    println!("rmse_valid     {:.6e}", fitness.rmse_valid);
    println!("rmse_cons      {:.6e}", fitness.rmse_constraint);
    println!("rmse_int_ext   {:.6e}", rmse_int_ext);
    println!("expression     {} = {}", problem.train.target_name, expr.to_infix(names));
    if latex {
        println!("latex          {}", expr.to_latex(names));
    }
    if (rmse_int_ext - cp.rmse_int_ext).abs() > 1e-12 * (1.0 + cp.rmse_int_ext.abs()) {
        bail!("recomputed rmse_int_ext {rmse_int_ext:e} differs from stored {:e}", cp.rmse_int_ext);
    }
    Ok(ExitCode::SUCCESS)
}

fn gen_data(problem: ProblemName, seed: u64, output: PathBuf) -> Result<ExitCode> {
    let p = neurosr::generate_problem_with(problem, seed, &ProblemOptions::default())?;
    fs::create_dir_all(&output)?;
    for (name, ds) in [("train", &p.train), ("valid", &p.valid), ("test", &p.test)] {
        let path = output.join(format!("{problem}_{name}.csv"));
        ds.write_csv(fs::File::create(&path)?)?;
        println!("wrote {} ({} rows)", path.display(), ds.len());
    }
    let path = output.join(format!("{problem}_constraints.json"));
    fs::write(&path, p.constraints.to_json()?)?;
    println!("wrote {} ({} samples)", path.display(), p.constraints.n_samples());
    if let Some(note) = &p.synthetic_note {
        println!("note: {note}");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, problem, runs, seed, output } => run(config, problem, runs, seed, output),
        Command::Report { dir } => report(dir),
        Command::Eval { checkpoint, latex } => eval(checkpoint, latex),
        Command::GenData { problem, seed, output } => gen_data(problem, seed, output),
        Command::Config => RunConfig::default()
            .to_toml()
            .map(|t| {
                print!("{t}");
                ExitCode::SUCCESS
            })
            .map_err(Into::into),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

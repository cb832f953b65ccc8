//! Run configuration, multi-run experiments, reports, logs and checkpoints.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::predict;
use crate::error::{Error, Result};
use crate::evolution::{run_en4sr, EvolutionConfig, FitnessVector, GenerationLog};
use crate::extraction::{extract_expression, simplify};
use crate::losses::LossSettings;
use crate::optimizer::{AdamConfig, TrainSettings};
use crate::problems::{generate_problem_with, MasterSelector, ProblemInstance, ProblemName, ProblemOptions};
use crate::stats::median;
use crate::topology::{MasterTopology, Subtopology, TopologySpec};

/// Flat experiment configuration. Every key is optional; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemName,
    /// Master template; the problem's default when absent.
    pub master: Option<MasterSelector>,
    /// Custom hidden layers in compact notation; overrides `master`.
    pub layers: Option<String>,

    pub pop_size: usize,
    pub stages: usize,
    pub generations: usize,
    pub newborn_steps: u64,
    pub tuning_steps: u64,
    pub finetune_steps: u64,
    pub budget: u64,
    pub offspring: usize,
    pub p_crossover: f64,
    pub p_mutation: f64,
    pub p_lead: f64,
    pub p_inherit: f64,
    pub p_memory: f64,
    pub memory_size: usize,

    pub theta_a: f64,
    pub theta_div: f64,
    pub l05_knot: f64,
    pub lambda_reg: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,

    pub resistors_noise: f64,
    pub magman_c1: f64,
    pub magman_c2: f64,
    pub magman_current: f64,
    pub constraint_samples: usize,

    /// Seed of the first run; run `i` uses `seed + i`.
    pub seed: u64,
    /// Seed of the generated data sets, shared by all runs.
    pub data_seed: u64,
    pub runs: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let evo = EvolutionConfig::default();
        let loss = LossSettings::default();
        let adam = AdamConfig::default();
        let opts = ProblemOptions::default();
        Self {
            problem: ProblemName::Resistors,
            master: None,
            layers: None,
            pop_size: evo.pop_size,
            stages: evo.stages,
            generations: evo.generations,
            newborn_steps: evo.newborn_steps,
            tuning_steps: evo.tuning_steps,
            finetune_steps: evo.finetune_steps,
            budget: evo.budget,
            offspring: evo.offspring,
            p_crossover: evo.p_crossover,
            p_mutation: evo.p_mutation,
            p_lead: evo.p_lead,
            p_inherit: evo.p_inherit,
            p_memory: evo.p_memory,
            memory_size: evo.memory_size,
            theta_a: evo.train.theta_a,
            theta_div: loss.theta_div,
            l05_knot: loss.l05_knot,
            lambda_reg: loss.lambda_reg,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            resistors_noise: opts.resistors_noise,
            magman_c1: opts.magman_c1,
            magman_c2: opts.magman_c2,
            magman_current: opts.magman_current,
            constraint_samples: opts.constraint_samples,
            seed: 0,
            data_seed: 0,
            runs: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.evolution().validate()?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be positive".into()));
        }
        if self.theta_a < 0.0 || self.theta_div < 0.0 || self.l05_knot <= 0.0 || self.lambda_reg < 0.0 {
            return Err(Error::Config("thresholds must be non-negative and the L0.5 knot positive".into()));
        }
        if self.learning_rate <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        let spec = self.topology()?;
        if spec.input_dim != self.problem.input_dim() {
            return Err(Error::Config("master input width does not match the problem".into()));
        }
        MasterTopology::build(spec)?;
        Ok(())
    }

    pub fn evolution(&self) -> EvolutionConfig {
        EvolutionConfig {
            pop_size: self.pop_size,
            stages: self.stages,
            generations: self.generations,
            newborn_steps: self.newborn_steps,
            tuning_steps: self.tuning_steps,
            finetune_steps: self.finetune_steps,
            budget: self.budget,
            offspring: self.offspring,
            p_crossover: self.p_crossover,
            p_mutation: self.p_mutation,
            p_lead: self.p_lead,
            p_inherit: self.p_inherit,
            p_memory: self.p_memory,
            memory_size: self.memory_size,
            train: TrainSettings {
                adam: AdamConfig {
                    learning_rate: self.learning_rate,
                    beta1: self.beta1,
                    beta2: self.beta2,
                    epsilon: self.epsilon,
                },
                loss: LossSettings { theta_div: self.theta_div, l05_knot: self.l05_knot, lambda_reg: self.lambda_reg },
                theta_a: self.theta_a,
            },
        }
    }

    pub fn problem_options(&self) -> ProblemOptions {
        ProblemOptions {
            resistors_noise: self.resistors_noise,
            magman_c1: self.magman_c1,
            magman_c2: self.magman_c2,
            magman_current: self.magman_current,
            constraint_samples: self.constraint_samples,
        }
    }

    pub fn topology(&self) -> Result<TopologySpec> {
        let dim = self.problem.input_dim();
        match &self.layers {
            Some(text) => TopologySpec::parse_layers(dim, text),
            None => Ok(self.master.unwrap_or_else(|| self.problem.default_master()).spec(dim)),
        }
    }

    pub fn generate_problem(&self) -> Result<ProblemInstance> {
        generate_problem_with(self.problem, self.data_seed, &self.problem_options())
    }
}

/// Serialized model plus what is needed to rebuild its problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub problem: ProblemName,
    pub data_seed: u64,
    pub options: ProblemOptions,
    pub run: usize,
    pub seed: u64,
    pub topology: TopologySpec,
    pub digest: String,
    pub theta_div: f64,
    pub weights: Vec<f64>,
    pub enabled: Vec<bool>,
    pub skips: Vec<bool>,
    pub fitness: Option<FitnessVector>,
    pub rmse_int_ext: f64,
    pub expression: String,
}

impl Checkpoint {
    pub fn subtopology(&self) -> Result<Subtopology> {
        let master = MasterTopology::build(self.topology.clone())?;
        if master.digest() != self.digest {
            return Err(Error::MasterMismatch);
        }
        Subtopology::from_parts(Arc::new(master), self.weights.clone(), self.enabled.clone(), self.skips.clone())
    }

    pub fn problem(&self) -> Result<ProblemInstance> {
        generate_problem_with(self.problem, self.data_seed, &self.options)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// One report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub status: String,
    pub units: usize,
    pub links: usize,
    pub rmse_valid: f64,
    pub rmse_constraint: f64,
    pub rmse_int_ext: f64,
    pub budget_used: u64,
    pub expression: String,
}

impl RunRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn failed(run: usize, seed: u64, err: &Error) -> Self {
        Self {
            run,
            seed,
            status: format!("failed: {err}"),
            units: 0,
            links: 0,
            rmse_valid: f64::NAN,
            rmse_constraint: f64::NAN,
            rmse_int_ext: f64::NAN,
            budget_used: 0,
            expression: String::new(),
        }
    }
}

/// Final record of a run's log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum LogRecord {
    Generation(GenerationLog),
    Result(RunRow),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: ProblemName,
    pub rows: Vec<RunRow>,
    /// Wall-clock seconds per run; kept out of the report files so reports
    /// stay reproducible.
    #[serde(skip)]
    pub wall_times: Vec<f64>,
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

impl RunReport {
    fn ok_rows(&self) -> impl Iterator<Item = &RunRow> {
        self.rows.iter().filter(|r| r.is_ok())
    }

    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    fn med(&self, f: impl Fn(&RunRow) -> f64) -> f64 {
        median(&self.ok_rows().map(f).collect::<Vec<_>>())
    }

    pub fn median_rmse_int_ext(&self) -> f64 {
        self.med(|r| r.rmse_int_ext)
    }

    pub fn median_rmse_valid(&self) -> f64 {
        self.med(|r| r.rmse_valid)
    }

    pub fn median_rmse_constraint(&self) -> f64 {
        self.med(|r| r.rmse_constraint)
    }

    pub fn median_units(&self) -> f64 {
        self.med(|r| r.units as f64)
    }

    pub fn median_links(&self) -> f64 {
        self.med(|r| r.links as f64)
    }

    /// Median complexity as "units/links".
    pub fn median_complexity(&self) -> String {
        format!("{}/{}", fmt_num(self.median_units()), fmt_num(self.median_links()))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "run",
            "seed",
            "status",
            "units",
            "links",
            "rmse_valid",
            "rmse_constraint",
            "rmse_int_ext",
            "budget_used",
            "expression",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.run.to_string(),
                r.seed.to_string(),
                r.status.clone(),
                r.units.to_string(),
                r.links.to_string(),
                format!("{:e}", r.rmse_valid),
                format!("{:e}", r.rmse_constraint),
                format!("{:e}", r.rmse_int_ext),
                r.budget_used.to_string(),
                r.expression.clone(),
            ])?;
        }
        w.write_record([
            "median".to_string(),
            String::new(),
            format!("{} failed", self.n_failed()),
            fmt_num(self.median_units()),
            fmt_num(self.median_links()),
            format!("{:e}", self.median_rmse_valid()),
            format!("{:e}", self.median_rmse_constraint()),
            format!("{:e}", self.median_rmse_int_ext()),
            String::new(),
            String::new(),
        ])?;
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "problem: {}", self.problem);
        let _ = writeln!(
            out,
            "{:>4} {:>6} {:>11} {:>12} {:>12} {:>12} {:>7}  status",
            "run", "seed", "units/links", "rmse_valid", "rmse_cons", "rmse_int_ext", "steps"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>4} {:>6} {:>11} {:>12.4e} {:>12.4e} {:>12.4e} {:>7}  {}",
                r.run,
                r.seed,
                format!("{}/{}", r.units, r.links),
                r.rmse_valid,
                r.rmse_constraint,
                r.rmse_int_ext,
                r.budget_used,
                r.status
            );
        }
        let _ = writeln!(
            out,
            "median complexity {}  rmse_int_ext {:.4e}  rmse_valid {:.4e}  rmse_constraint {:.4e}",
            self.median_complexity(),
            self.median_rmse_int_ext(),
            self.median_rmse_valid(),
            self.median_rmse_constraint()
        );
        out
    }

    /// Writes `report.csv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv()?)?;
        fs::write(dir.join("report.txt"), self.to_table())?;
        Ok(())
    }

    /// Rebuilds a report from the final records of `dir/logs/run_*.jsonl`.
    pub fn from_logs(dir: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        let mut problem = None;
        let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("logs"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let mut last = None;
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                if let LogRecord::Result(row) = serde_json::from_str(&line)? {
                    last = Some(row);
                }
            }
            let row = last.ok_or_else(|| Error::Format(format!("{} has no result record", path.display())))?;
            rows.push(row);
        }
        if let Ok(text) = fs::read_to_string(dir.join("config.toml")) {
            problem = Some(RunConfig::from_toml(&text)?.problem);
        }
        rows.sort_by_key(|r| r.run);
        Ok(Self { problem: problem.unwrap_or(ProblemName::Resistors), rows, wall_times: Vec::new() })
    }
}

struct RunOutput {
    row: RunRow,
    logs: Vec<GenerationLog>,
    checkpoint: Option<Checkpoint>,
    wall: f64,
}

fn single_run(cfg: &RunConfig, problem: &ProblemInstance, master: &Arc<MasterTopology>, run: usize) -> RunOutput {
    let seed = cfg.seed + run as u64;
    let start = Instant::now();
    let theta = cfg.theta_div;
    match run_en4sr(&cfg.evolution(), problem, master.clone(), run, seed) {
        Ok(result) => {
            let best = &result.best;
            let f = *result.best_fitness();
            let rmse_int_ext = problem.rmse_int_ext(|x| predict(best, x, theta));
            let expr = simplify(&extract_expression(best, theta), cfg.theta_a);
            let expression = expr.to_infix(&problem.train.input_names);
            let row = RunRow {
                run,
                seed,
                status: "ok".into(),
                units: f.n_active_units,
                links: f.n_active_links,
                rmse_valid: f.rmse_valid,
                rmse_constraint: f.rmse_constraint,
                rmse_int_ext,
                budget_used: result.budget.used,
                expression: expression.clone(),
            };
            let checkpoint = Checkpoint {
                problem: cfg.problem,
                data_seed: cfg.data_seed,
                options: problem.options,
                run,
                seed,
                topology: master.spec().clone(),
                digest: master.digest().to_string(),
                theta_div: theta,
                weights: best.weights().to_vec(),
                enabled: best.enabled().to_vec(),
                skips: best.skips().to_vec(),
                fitness: Some(f),
                rmse_int_ext,
                expression,
            };
            RunOutput { row, logs: result.logs, checkpoint: Some(checkpoint), wall: start.elapsed().as_secs_f64() }
        }
        Err(e) => RunOutput {
            row: RunRow::failed(run, seed, &e),
            logs: Vec::new(),
            checkpoint: None,
            wall: start.elapsed().as_secs_f64(),
        },
    }
}

fn write_log(path: &Path, out: &RunOutput) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for g in &out.logs {
        serde_json::to_writer(&mut w, &LogRecord::Generation(g.clone()))?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut w, &LogRecord::Result(out.row.clone()))?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Runs `cfg.runs` independent seeded runs without touching the file system.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport> {
    Ok(collect(cfg)?.0)
}

fn collect(cfg: &RunConfig) -> Result<(RunReport, Vec<RunOutput>)> {
    cfg.validate()?;
    let problem = cfg.generate_problem()?;
    let master = Arc::new(MasterTopology::build(cfg.topology()?)?);
    let outputs: Vec<RunOutput> = (0..cfg.runs).into_par_iter().map(|i| single_run(cfg, &problem, &master, i)).collect();
    let report = RunReport {
        problem: cfg.problem,
        rows: outputs.iter().map(|o| o.row.clone()).collect(),
        wall_times: outputs.iter().map(|o| o.wall).collect(),
    };
    Ok((report, outputs))
}

/// Runs the experiment and writes the report, per-run logs, checkpoints,
/// wall times and the resolved configuration under `cfg.output_dir`.
pub fn execute_experiment(cfg: &RunConfig) -> Result<RunReport> {
    let (report, outputs) = collect(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir.join("logs"))?;
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    for (i, out) in outputs.iter().enumerate() {
        write_log(&dir.join("logs").join(format!("run_{i}.jsonl")), out)?;
        if let Some(cp) = &out.checkpoint {
            cp.save(&dir.join("checkpoints").join(format!("run_{i}.json")))?;
        }
    }
    let mut timing = String::from("run,wall_seconds\n");
    for (i, t) in report.wall_times.iter().enumerate() {
        let _ = writeln!(timing, "{i},{t:.3}");
    }
    fs::write(dir.join("timing.csv"), timing)?;
    report.write(dir)?;
    Ok(report)
}

//! Command-line driver: generation, solving, simulation and export.
//!
//! Each subcommand reads a JSON [`RunConfig`], applies flag overrides and
//! writes its artifacts under the output directory together with a manifest
//! holding the effective config and a SHA-256 of every artifact. Files contain
//! no timings, so reruns are byte-identical; wall-clock times go to stderr.
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 solver failure,
//! 4 result/model mismatch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, Scenario};
use crate::gridworld::{build_mdp_with_layout, build_pomdp_with_layout, generate_layout, layout_csv, GridError, GridSpec, Layout};
use crate::mdp_solver::{export_dcp, solve_constrained, MdpSolveResult, SolveStatus, SolverError};
use crate::model::{Mdp, ModelError, Pomdp};
use crate::pomdp_solver::{policy_iteration, FscSolveResult};
use crate::risk::RiskMeasure;
use crate::sim::{fsc_heatmap_inputs, heatmap_csv, monte_carlo, records_csv, rollout, summarize, Controller, SimError};

#[derive(Debug, Parser)]
#[command(name = "riskplan", version, about = "Risk-averse planning for constrained MDPs and POMDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate grid models and the obstacle layout.
    Gen(CommonArgs),
    /// Solve the constrained risk-averse MDP.
    SolveMdp(CommonArgs),
    /// Synthesize a finite-state controller for the POMDP.
    SolvePomdp(CommonArgs),
    /// Monte Carlo robustness evaluation of a saved result.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Result file written by solve-mdp or solve-pomdp.
        #[arg(long)]
        result: PathBuf,
    },
    /// Export the MDP program in difference-of-convex form.
    ExportDcp(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides the grid seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the risk level.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Overrides the risk measure: expectation, cvar or evar.
    #[arg(long)]
    pub measure: Option<String>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("grid error: {0}")]
    Grid(#[from] GridError),
    #[error("solver failure: {0}")]
    Solver(#[from] SolverError),
    #[error("input mismatch: {0}")]
    Mismatch(String),
    #[error("simulation failure: {0}")]
    Sim(SimError),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Mismatch(m) => CliError::Mismatch(m),
            SimError::Model(ModelError::DimensionMismatch(m)) => CliError::Mismatch(m),
            other => CliError::Sim(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Io { .. } | CliError::Model(_) => 2,
            CliError::Grid(GridError::InvalidSpec(_)) => 2,
            CliError::Grid(_) | CliError::Solver(_) | CliError::Sim(_) => 3,
            CliError::Mismatch(_) => 4,
        }
    }
}

/// Manifest written next to the artifacts of one command.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    /// Artifact file name to hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

struct Output {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Output { dir: dir.to_path_buf(), artifacts: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.artifacts.insert(name.to_string(), hex::encode(Sha256::digest(contents.as_bytes())));
        Ok(path)
    }

    fn finish(self, command: &str, config: &RunConfig) -> Result<(), CliError> {
        let manifest = Manifest { command: command.to_string(), config: config.clone(), artifacts: self.artifacts };
        let path = self.dir.join(format!("manifest-{command}.json"));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
        std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("result serialization cannot fail")
}

/// Loads the config and applies flag overrides.
pub fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        match &mut cfg.scenario {
            Scenario::Grid(g) => g.seed = seed,
            Scenario::ModelPath(_) => return Err(CliError::Usage("--seed applies to grid scenarios only".into())),
        }
    }
    if let Some(e) = args.epsilon {
        if !(e > 0.0 && e <= 1.0) {
            return Err(CliError::Usage(format!("--epsilon must lie in (0, 1], got {e}")));
        }
    }
    if args.measure.is_some() || args.epsilon.is_some() {
        let kind = args.measure.clone().unwrap_or_else(|| cfg.measure.kind().to_string());
        let epsilon = args.epsilon.unwrap_or(match cfg.measure {
            RiskMeasure::Expectation => 0.2,
            m => m.epsilon(),
        });
        cfg.measure = RiskMeasure::parse(&kind, epsilon).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_budgets(mdp: &mut Mdp, cfg: &RunConfig) -> Result<(), CliError> {
    if let Some(b) = &cfg.budgets {
        if b.len() != mdp.num_constraints() {
            return Err(CliError::Mismatch(format!("{} budgets given for {} constraints", b.len(), mdp.num_constraints())));
        }
        mdp.budgets = b.clone();
    }
    Ok(())
}

fn load_mdp(cfg: &RunConfig) -> Result<(Mdp, Option<(GridSpec, Layout)>), CliError> {
    let (mut mdp, grid) = match &cfg.scenario {
        Scenario::Grid(spec) => {
            let layout = generate_layout(spec)?;
            (build_mdp_with_layout(spec, &layout)?, Some((spec.clone(), layout)))
        }
        Scenario::ModelPath(p) => (Mdp::from_json_file(p)?, None),
    };
    apply_budgets(&mut mdp, cfg)?;
    Ok((mdp, grid))
}

fn load_pomdp(cfg: &RunConfig) -> Result<(Pomdp, Option<(GridSpec, Layout)>), CliError> {
    let (mut pomdp, grid) = match &cfg.scenario {
        Scenario::Grid(spec) => {
            let layout = generate_layout(spec)?;
            (build_pomdp_with_layout(spec, &layout)?, Some((spec.clone(), layout)))
        }
        Scenario::ModelPath(p) => (Pomdp::from_json_file(p)?, None),
    };
    apply_budgets(&mut pomdp.mdp, cfg)?;
    Ok((pomdp, grid))
}

fn elapsed(label: &str, t: Instant) {
    eprintln!("{label}: {:.3} s", t.elapsed().as_secs_f64());
}

fn cmd_gen(cfg: &RunConfig) -> Result<(), CliError> {
    let Scenario::Grid(spec) = &cfg.scenario else {
        return Err(CliError::Usage("gen needs a grid scenario".into()));
    };
    let t = Instant::now();
    let layout = generate_layout(spec)?;
    let mut mdp = build_mdp_with_layout(spec, &layout)?;
    apply_budgets(&mut mdp, cfg)?;
    let mut pomdp = build_pomdp_with_layout(spec, &layout)?;
    pomdp.mdp.budgets = mdp.budgets.clone();
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("model_mdp.json", &mdp.to_json_string())?;
    out.write("model_pomdp.json", &pomdp.to_json_string())?;
    out.write("layout.csv", &layout_csv(spec, &layout))?;
    out.finish("gen", cfg)?;
    println!(
        "grid {}x{}: {} states, {} obstacles ({} uncertain: {:?}), start {:?}, goal {:?}",
        spec.rows,
        spec.cols,
        mdp.num_states,
        layout.obstacle_cells().len(),
        layout.uncertain.len(),
        layout.uncertain,
        spec.start,
        spec.goal
    );
    elapsed("generation", t);
    Ok(())
}

fn status_note(status: SolveStatus) {
    if status != SolveStatus::Converged {
        eprintln!("warning: solver status {status:?}");
    }
}

fn cmd_solve_mdp(cfg: &RunConfig) -> Result<(), CliError> {
    let (mdp, grid) = load_mdp(cfg)?;
    let t = Instant::now();
    let result = solve_constrained(&mdp, &cfg.measure, &cfg.solver)?;
    elapsed("solve", t);
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("mdp_result.json", &to_json(&result))?;
    if let Some((spec, layout)) = &grid {
        out.write("heatmap.csv", &heatmap_csv(&result.value, Some(&result.policy), spec, layout)?)?;
    }
    out.finish("solve-mdp", cfg)?;
    println!("measure {}", result.measure);
    println!("lower bound J = {}", result.lower_bound);
    println!("multipliers {:?}", result.multipliers);
    println!("constraint values {:?} (budgets {:?})", result.constraint_values, mdp.budgets);
    println!("status {:?}, {} dual iterates", result.status, result.trace.len());
    status_note(result.status);
    Ok(())
}

fn trace_csv(result: &FscSolveResult) -> String {
    let mut s = String::from("entry,iteration,num_istates,lower_bound,improved,step,istate\n");
    for (i, e) in result.trace.iter().enumerate() {
        let step = serde_json::to_value(e.step).expect("step serializes");
        s.push_str(&format!(
            "{i},{},{},{},{},{},{}\n",
            e.iteration,
            e.num_istates,
            e.lower_bound,
            u8::from(e.improved),
            step.as_str().unwrap_or_default(),
            e.istate.map(|g| g.to_string()).unwrap_or_default()
        ));
    }
    s
}

fn cmd_solve_pomdp(cfg: &RunConfig) -> Result<(), CliError> {
    let (pomdp, grid) = load_pomdp(cfg)?;
    let t = Instant::now();
    let result = policy_iteration(&pomdp, &cfg.measure, &cfg.pi)?;
    elapsed("solve", t);
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("pomdp_result.json", &to_json(&result))?;
    out.write("trace.csv", &trace_csv(&result))?;
    if let Some((spec, layout)) = &grid {
        let (values, actions) = fsc_heatmap_inputs(&pomdp, &result.fsc, &result.value, result.g_init);
        out.write("heatmap.csv", &heatmap_csv(&values, Some(&actions), spec, layout)?)?;
    }
    out.finish("solve-pomdp", cfg)?;
    println!("measure {}", result.measure);
    println!("lower bound J = {}", result.lower_bound);
    println!("multipliers {:?}", result.multipliers);
    println!("I-states {} (initial {})", result.fsc.num_istates, result.g_init);
    println!("status {:?}, {} trace entries", result.status, result.trace.len());
    status_note(result.status);
    Ok(())
}

/// Either kind of saved result.
enum Saved {
    Mdp(MdpSolveResult),
    Fsc(FscSolveResult),
}

fn read_result(path: &Path) -> Result<Saved, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Mismatch(format!("{} is not a result file: {e}", path.display())))?;
    let parsed = if value.get("fsc").is_some() {
        serde_json::from_value(value).map(Saved::Fsc)
    } else {
        serde_json::from_value(value).map(Saved::Mdp)
    };
    parsed.map_err(|e| CliError::Mismatch(format!("{} is not a result file: {e}", path.display())))
}

fn cmd_simulate(cfg: &RunConfig, result_path: &Path) -> Result<(), CliError> {
    let saved = read_result(result_path)?;
    let t = Instant::now();
    let (summary, records) = match &cfg.scenario {
        Scenario::Grid(spec) => match &saved {
            Saved::Mdp(r) => monte_carlo(spec, Controller::Policy(&r.policy), false, &cfg.mc, &cfg.solver.inner)?,
            Saved::Fsc(r) => monte_carlo(spec, Controller::Fsc(&r.fsc), true, &cfg.mc, &cfg.solver.inner)?,
        },
        Scenario::ModelPath(_) => {
            // no obstacle map: plain rollouts on the stored model
            let (pomdp, controller) = match &saved {
                Saved::Mdp(r) => {
                    let (mdp, _) = load_mdp(cfg)?;
                    (Pomdp::fully_observable(mdp)?, Controller::Policy(&r.policy))
                }
                Saved::Fsc(r) => (load_pomdp(cfg)?.0, Controller::Fsc(&r.fsc)),
            };
            let mask = vec![false; pomdp.mdp.num_states];
            let mut records = Vec::with_capacity(cfg.mc.n_runs);
            for i in 0..cfg.mc.n_runs {
                let seed = crate::sim::trial_seed(cfg.mc.master_seed, i as u64);
                records.push(rollout(&pomdp, controller, cfg.mc.horizon, seed, &mask)?);
            }
            let summary = summarize(&records, &pomdp.mdp.budgets, cfg.mc.horizon, cfg.mc.master_seed, cfg.mc.risk_epsilon, &cfg.solver.inner)?;
            (summary, records)
        }
    };
    elapsed("simulation", t);
    let mut out = Output::new(&cfg.output_dir)?;
    let kind = match saved {
        Saved::Mdp(_) => "mdp",
        Saved::Fsc(_) => "pomdp",
    };
    out.write(&format!("mc_summary_{kind}.json"), &to_json(&summary))?;
    out.write(&format!("mc_runs_{kind}.csv"), &records_csv(&records))?;
    out.finish("simulate", cfg)?;
    println!("{}", to_json(&json!({
        "runs": summary.n_runs,
        "failure_rate": summary.failure_rate,
        "mean_cost": summary.mean_cost,
        "cvar_cost": summary.cvar_cost,
        "evar_cost": summary.evar_cost,
    })));
    Ok(())
}

fn cmd_export_dcp(cfg: &RunConfig) -> Result<(), CliError> {
    let (mdp, _) = load_mdp(cfg)?;
    let program = export_dcp(&mdp, &cfg.measure);
    let mut out = Output::new(&cfg.output_dir)?;
    let path = out.write("dcp.json", &to_json(&program))?;
    out.finish("export-dcp", cfg)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&load_config(&a)?),
        Command::SolveMdp(a) => cmd_solve_mdp(&load_config(&a)?),
        Command::SolvePomdp(a) => cmd_solve_pomdp(&load_config(&a)?),
        Command::Simulate { common, result } => cmd_simulate(&load_config(&common)?, &result),
        Command::ExportDcp(a) => cmd_export_dcp(&load_config(&a)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Solver(SolverError::InvalidMultipliers("x".into())).exit_code(), 3);
        assert_eq!(CliError::Mismatch("x".into()).exit_code(), 4);
        assert_eq!(CliError::from(SimError::Mismatch("x".into())).exit_code(), 4);
    }

    #[test]
    fn overrides_apply() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"scenario": {"grid": {"seed": 1}}, "measure": {"kind": "cvar", "epsilon": 0.3}}"#).unwrap();
        let args = CommonArgs {
            config: path,
            seed: Some(9),
            epsilon: Some(0.1),
            measure: Some("evar".into()),
            out: Some(dir.path().join("o")),
        };
        let cfg = load_config(&args).unwrap();
        assert_eq!(cfg.grid().unwrap().seed, 9);
        assert_eq!(cfg.measure, RiskMeasure::evar(0.1).unwrap());
        assert_eq!(cfg.output_dir, dir.path().join("o"));
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let c = Cli::try_parse_from(["riskplan", "simulate", "--config", "c.json", "--result", "r.json"]).unwrap();
        assert!(matches!(c.command, Command::Simulate { .. }));
    }
}

//! Monte Carlo rollouts and robustness statistics.
//!
//! Every trial draws its randomness from a ChaCha8 stream keyed by a per-trial
//! seed derived from the master seed and the trial index, so results do not
//! depend on execution order. Obstacle perturbation and the rollout itself use
//! separate streams of the same key.

use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{build_mdp_with_layout, generate_layout, perturb_layout, GridError, GridSpec, Layout, ACTIONS};
use crate::model::{action_marginal, state_to_cell, Fsc, Mdp, ModelError, Pomdp};
use crate::pomdp_solver::ProductValueFunction;
use crate::risk::{static_risk, InnerSolveParams, RiskError, RiskMeasure};

/// Rollout length used when none is given; `0.95^400 · 10 < 1e-7`.
pub const DEFAULT_HORIZON: usize = 400;
const ROLLOUT_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("input mismatch: {0}")]
    Mismatch(String),
    #[error("invalid simulation settings: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub cost: f64,
    pub constraint_costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub trajectory: Vec<Step>,
    pub discounted_cost: f64,
    pub discounted_constraint_costs: Vec<f64>,
    /// Some visited state was an obstacle cell.
    pub collided: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n_runs: usize,
    pub horizon: usize,
    pub master_seed: u64,
    pub failure_rate: f64,
    pub mean_cost: f64,
    /// Standard error of `mean_cost`.
    pub std_error: f64,
    /// Level used for the static tail statistics.
    pub risk_epsilon: f64,
    pub cvar_cost: f64,
    pub evar_cost: f64,
    pub mean_constraint_costs: Vec<f64>,
    /// Fraction of runs whose discounted constraint costs all meet their budgets.
    pub constraint_satisfaction_rate: f64,
}

/// A decision rule to simulate.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    Policy(&'a [usize]),
    Fsc(&'a Fsc),
}

/// Counter-style trial seed: `splitmix64(master ⊕ splitmix64(i))`.
pub fn trial_seed(master_seed: u64, trial: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(trial))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample(rng: &mut ChaCha8Rng, dist: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// States that are absorbing and cost-free under every action.
fn terminal_states(mdp: &Mdp) -> Vec<bool> {
    (0..mdp.num_states)
        .map(|s| {
            (0..mdp.num_actions).all(|a| {
                mdp.transition[s][a][s] == 1.0
                    && mdp.stage_cost[s][a] == 0.0
                    && mdp.constraint_costs.iter().all(|d| d[s][a] == 0.0)
            })
        })
        .collect()
}

fn check_controller(model: &Pomdp, controller: Controller, collision: &[bool]) -> Result<(), SimError> {
    let ns = model.mdp.num_states;
    if collision.len() != ns {
        return Err(SimError::Mismatch(format!("collision mask has {} cells, model has {ns} states", collision.len())));
    }
    match controller {
        Controller::Policy(p) => {
            if p.len() != ns || p.iter().any(|&a| a >= model.mdp.num_actions) {
                return Err(SimError::Mismatch(format!("policy of length {} does not fit {ns} states", p.len())));
            }
        }
        Controller::Fsc(f) => f.check_compatible(model)?,
    }
    Ok(())
}

fn rollout_inner(model: &Pomdp, controller: Controller, horizon: usize, seed: u64, collision: &[bool], terminal: &[bool]) -> RolloutRecord {
    let mdp = &model.mdp;
    let nc = mdp.num_constraints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ROLLOUT_STREAM);
    let mut s = sample(&mut rng, &mdp.initial_dist);
    let mut g = match controller {
        Controller::Fsc(f) => sample(&mut rng, &f.kappa),
        Controller::Policy(_) => 0,
    };
    let mut trajectory = Vec::new();
    let mut discounted_cost = 0.0;
    let mut discounted_constraint_costs = vec![0.0; nc];
    let mut collided = false;
    let mut weight = 1.0;
    for _ in 0..horizon {
        collided |= collision[s];
        if terminal[s] {
            break;
        }
        let a = match controller {
            Controller::Policy(p) => p[s],
            Controller::Fsc(f) => {
                let o = sample(&mut rng, &model.observation[s]);
                let k = sample(&mut rng, &f.omega[g][o]);
                g = k / mdp.num_actions;
                k % mdp.num_actions
            }
        };
        let cost = mdp.stage_cost[s][a];
        let d: Vec<f64> = (0..nc).map(|i| mdp.constraint_costs[i][s][a]).collect();
        discounted_cost += weight * cost;
        for (acc, x) in discounted_constraint_costs.iter_mut().zip(&d) {
            *acc += weight * x;
        }
        trajectory.push(Step { state: s, action: a, cost, constraint_costs: d });
        weight *= mdp.discount;
        s = sample(&mut rng, &mdp.transition[s][a]);
    }
    RolloutRecord { trajectory, discounted_cost, discounted_constraint_costs, collided, seed }
}

/// Samples one closed-loop run of `horizon` steps. The run ends early once it
/// reaches a cost-free absorbing state, which contributes nothing further.
pub fn rollout(model: &Pomdp, controller: Controller, horizon: usize, seed: u64, collision: &[bool]) -> Result<RolloutRecord, SimError> {
    if horizon == 0 {
        return Err(SimError::Invalid("horizon must be at least 1".into()));
    }
    check_controller(model, controller, collision)?;
    Ok(rollout_inner(model, controller, horizon, seed, collision, &terminal_states(&model.mdp)))
}

/// MDP form of [`rollout`] with a deterministic policy.
pub fn rollout_mdp(mdp: &Mdp, policy: &[usize], horizon: usize, seed: u64, collision: &[bool]) -> Result<RolloutRecord, SimError> {
    let model = Pomdp::fully_observable(mdp.clone())?;
    rollout(&model, Controller::Policy(policy), horizon, seed, collision)
}

/// Aggregates run records; statistics come from the records in trial order.
pub fn summarize(
    records: &[RolloutRecord],
    budgets: &[f64],
    horizon: usize,
    master_seed: u64,
    risk_epsilon: f64,
    inner: &InnerSolveParams,
) -> Result<McSummary, SimError> {
    let n = records.len();
    if n == 0 {
        return Err(SimError::Invalid("at least one run is required".into()));
    }
    let costs: Vec<f64> = records.iter().map(|r| r.discounted_cost).collect();
    let mean = static_risk(&RiskMeasure::Expectation, &costs, inner)?;
    let var = if n > 1 { costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let nc = budgets.len();
    let mean_constraint_costs = (0..nc)
        .map(|i| records.iter().map(|r| r.discounted_constraint_costs[i]).sum::<f64>() / n as f64)
        .collect();
    let satisfied = records
        .iter()
        .filter(|r| r.discounted_constraint_costs.iter().zip(budgets).all(|(d, b)| d <= b))
        .count();
    Ok(McSummary {
        n_runs: n,
        horizon,
        master_seed,
        failure_rate: records.iter().filter(|r| r.collided).count() as f64 / n as f64,
        mean_cost: mean,
        std_error: (var / n as f64).sqrt(),
        risk_epsilon,
        cvar_cost: static_risk(&RiskMeasure::cvar(risk_epsilon)?, &costs, inner)?,
        evar_cost: static_risk(&RiskMeasure::evar(risk_epsilon)?, &costs, inner)?,
        mean_constraint_costs,
        constraint_satisfaction_rate: satisfied as f64 / n as f64,
    })
}

/// Settings shared by Monte Carlo runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McParams {
    pub n_runs: usize,
    pub horizon: usize,
    pub master_seed: u64,
    pub risk_epsilon: f64,
}

impl Default for McParams {
    fn default() -> Self {
        McParams { n_runs: 100, horizon: DEFAULT_HORIZON, master_seed: 0, risk_epsilon: 0.2 }
    }
}

/// Robustness protocol on a grid: each trial perturbs the uncertain obstacles
/// of the base layout, rebuilds the model and rolls out `controller` on it.
/// Failure means visiting a cell that is an obstacle in that trial's layout.
pub fn monte_carlo(
    spec: &GridSpec,
    controller: Controller,
    partially_observable: bool,
    params: &McParams,
    inner: &InnerSolveParams,
) -> Result<(McSummary, Vec<RolloutRecord>), SimError> {
    if params.n_runs == 0 || params.horizon == 0 {
        return Err(SimError::Invalid("n_runs and horizon must be at least 1".into()));
    }
    let base = generate_layout(spec)?;
    let base_mdp = build_mdp_with_layout(spec, &base)?;
    let terminal = terminal_states(&base_mdp);
    let observation = if partially_observable {
        Some(crate::gridworld::build_pomdp_with_layout(spec, &base)?.observation)
    } else {
        None
    };
    let mut records = Vec::with_capacity(params.n_runs);
    for i in 0..params.n_runs {
        let seed = trial_seed(params.master_seed, i as u64);
        let layout = perturb_layout(spec, &base, seed);
        let model = trial_model(spec, &layout, &base_mdp, observation.as_ref())?;
        if i == 0 {
            check_controller(&model, controller, &layout.obstacles)?;
        }
        records.push(rollout_inner(&model, controller, params.horizon, seed, &layout.obstacles, &terminal));
    }
    let summary = summarize(&records, &base_mdp.budgets, params.horizon, params.master_seed, params.risk_epsilon, inner)?;
    Ok((summary, records))
}

/// The base model with costs taken from a perturbed layout. Dynamics and
/// observations do not depend on obstacle positions in the simulator: the
/// agent keeps sensing the map it planned on.
fn trial_model(spec: &GridSpec, layout: &Layout, base: &Mdp, observation: Option<&Vec<Vec<f64>>>) -> Result<Pomdp, SimError> {
    let mut mdp = base.clone();
    mdp.stage_cost = build_mdp_with_layout(spec, layout)?.stage_cost;
    let observation = match observation {
        Some(o) => o.clone(),
        None => (0..mdp.num_states)
            .map(|s| (0..mdp.num_states).map(|o| if o == s { 1.0 } else { 0.0 }).collect())
            .collect(),
    };
    Ok(Pomdp { num_observations: observation[0].len(), mdp, observation })
}

/// Per-run CSV: trial, seed, discounted cost, constraint costs, collision, steps.
pub fn records_csv(records: &[RolloutRecord]) -> String {
    let nc = records.first().map_or(0, |r| r.discounted_constraint_costs.len());
    let mut out = String::from("trial,seed,discounted_cost");
    for i in 0..nc {
        out.push_str(&format!(",constraint_{i}"));
    }
    out.push_str(",collided,steps\n");
    for (i, r) in records.iter().enumerate() {
        out.push_str(&format!("{i},{},{}", r.seed, r.discounted_cost));
        for d in &r.discounted_constraint_costs {
            out.push_str(&format!(",{d}"));
        }
        out.push_str(&format!(",{},{}\n", u8::from(r.collided), r.trajectory.len()));
    }
    out
}

/// Heatmap rows `x,y,value,action_label,obstacle_flag,goal_flag` in state order.
pub fn heatmap_csv(values: &[f64], actions: Option<&[usize]>, spec: &GridSpec, layout: &Layout) -> Result<String, SimError> {
    let n = spec.num_cells();
    if values.len() != n || actions.is_some_and(|a| a.len() != n) || layout.obstacles.len() != n {
        return Err(SimError::Mismatch(format!("heatmap inputs do not match {n} grid cells")));
    }
    let goal = crate::model::cell_to_state(spec.goal.0, spec.goal.1, spec.rows);
    let mut out = String::from("x,y,value,action_label,obstacle_flag,goal_flag\n");
    for s in 0..n {
        let (x, y) = state_to_cell(s, spec.rows);
        let label = actions.map_or("", |a| ACTIONS.get(a[s]).map_or("?", |x| x.0));
        out.push_str(&format!("{x},{y},{},{label},{},{}\n", values[s], u8::from(layout.obstacles[s]), u8::from(s == goal)));
    }
    Ok(out)
}

/// Writes [`heatmap_csv`] to `path`.
pub fn export_heatmap(
    values: &[f64],
    actions: Option<&[usize]>,
    spec: &GridSpec,
    layout: &Layout,
    path: impl AsRef<Path>,
) -> Result<(), SimError> {
    let csv = heatmap_csv(values, actions, spec, layout)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(csv.as_bytes())?;
    Ok(())
}

/// Values at I-state `g` and the most likely action there, for heatmaps of a
/// controller.
pub fn fsc_heatmap_inputs(pomdp: &Pomdp, fsc: &Fsc, value: &ProductValueFunction, g: usize) -> (Vec<f64>, Vec<usize>) {
    let values = value.istate_values(g);
    let actions = (0..pomdp.mdp.num_states)
        .map(|s| {
            let p = action_marginal(pomdp, fsc, s, g);
            let mut best = 0;
            for (a, &q) in p.iter().enumerate() {
                if q > p[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    (values, actions)
}

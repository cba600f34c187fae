//! Exhaustive reference solver for tiny constrained MDPs.
//!
//! Every deterministic stationary policy is evaluated. With the expectation
//! measure and at most one constraint the exact randomized optimum is also
//! returned: the constrained LP over occupancy measures attains its optimum on
//! an edge between two deterministic vertices, so it is the best mixture of a
//! feasible and an infeasible policy that meets the budget with equality.

use serde::{Deserialize, Serialize};

use super::{Backup, CostSelector, Policy, SolverError, SolverParams};
use crate::model::Mdp;
use crate::risk::RiskMeasure;

pub const ORACLE_MAX_STATES: usize = 6;
pub const ORACLE_MAX_ACTIONS: usize = 3;

const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub policies_enumerated: usize,
    pub feasible: bool,
    pub best_policy: Option<Policy>,
    /// Best objective risk among feasible deterministic policies.
    pub best_deterministic: Option<f64>,
    /// Exact optimum over randomized policies (expectation, at most one constraint).
    pub mixed_optimum: Option<f64>,
    /// `max_λ min_π <κ0, V_λ> − <λ, β>` over the grid `{0, 0.1, …, 50}^{n_c}`.
    pub lagrangian_grid_bound: Option<f64>,
    /// Smallest and largest constraint risk over deterministic policies.
    pub constraint_ranges: Vec<(f64, f64)>,
}

impl OracleResult {
    /// The tightest certified constrained optimum available.
    pub fn optimum(&self) -> Option<f64> {
        self.mixed_optimum.or(self.best_deterministic)
    }
}

fn next_policy(policy: &mut [usize], na: usize) -> bool {
    for a in policy.iter_mut() {
        *a += 1;
        if *a < na {
            return true;
        }
        *a = 0;
    }
    false
}

pub fn brute_force_constrained_oracle(
    mdp: &Mdp,
    measure: &RiskMeasure,
    params: &SolverParams,
    lambda_grid: bool,
) -> Result<OracleResult, SolverError> {
    let (ns, na, nc) = (mdp.num_states, mdp.num_actions, mdp.num_constraints());
    if ns > ORACLE_MAX_STATES || na > ORACLE_MAX_ACTIONS {
        return Err(SolverError::TooLarge { states: ns, actions: na });
    }
    let backup = Backup::new(mdp, *measure, params.inner)?;

    let mut evaluated: Vec<(Policy, f64, Vec<f64>)> = Vec::new();
    let mut policy = vec![0; ns];
    loop {
        let j = backup.initial_risk(&backup.evaluate_policy(&policy, &CostSelector::Objective, params)?);
        let d = (0..nc)
            .map(|i| Ok(backup.initial_risk(&backup.evaluate_policy(&policy, &CostSelector::Constraint(i), params)?)))
            .collect::<Result<Vec<f64>, SolverError>>()?;
        evaluated.push((policy.clone(), j, d));
        if !next_policy(&mut policy, na) {
            break;
        }
    }

    let feasible_of = |d: &[f64]| d.iter().zip(&mdp.budgets).all(|(x, b)| *x <= b + FEASIBILITY_TOL);
    let mut best: Option<(Policy, f64)> = None;
    for (p, j, d) in &evaluated {
        if feasible_of(d) && best.as_ref().map_or(true, |(_, bj)| j < bj) {
            best = Some((p.clone(), *j));
        }
    }

    let mixed_optimum = match (measure, nc, &best) {
        (RiskMeasure::Expectation, 0, Some((_, j))) => Some(*j),
        (RiskMeasure::Expectation, 1, Some((_, j))) => {
            let beta = mdp.budgets[0];
            let mut opt = *j;
            for (_, ji, di) in evaluated.iter().filter(|(_, _, d)| d[0] <= beta + FEASIBILITY_TOL) {
                for (_, jj, dj) in evaluated.iter().filter(|(_, _, d)| d[0] > beta + FEASIBILITY_TOL) {
                    if jj < ji {
                        let theta = (dj[0] - beta) / (dj[0] - di[0]);
                        opt = opt.min(theta * ji + (1.0 - theta) * jj);
                    }
                }
            }
            Some(opt)
        }
        _ => None,
    };

    let lagrangian_grid_bound = if lambda_grid && nc <= 2 {
        let grid: Vec<f64> = (0..=500).map(|k| k as f64 * 0.1).collect();
        let mut best_bound = f64::NEG_INFINITY;
        let mut idx = vec![0usize; nc];
        let mut warm: Option<Vec<f64>> = None;
        loop {
            let lambda: Vec<f64> = idx.iter().map(|&k| grid[k]).collect();
            let vi = backup.value_iteration(&lambda, warm.as_deref(), params)?;
            let bound = backup.initial_risk(&vi.value) - lambda.iter().zip(&mdp.budgets).map(|(l, b)| l * b).sum::<f64>();
            best_bound = best_bound.max(bound);
            warm = Some(vi.value);
            if !next_policy(&mut idx, grid.len()) {
                break;
            }
        }
        Some(best_bound)
    } else {
        None
    };

    let constraint_ranges = (0..nc)
        .map(|i| {
            evaluated.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, _, d)| (lo.min(d[i]), hi.max(d[i])))
        })
        .collect();

    Ok(OracleResult {
        policies_enumerated: evaluated.len(),
        feasible: best.is_some(),
        best_deterministic: best.as_ref().map(|(_, j)| *j),
        best_policy: best.map(|(p, _)| p),
        mixed_optimum,
        lagrangian_grid_bound,
        constraint_ranges,
    })
}

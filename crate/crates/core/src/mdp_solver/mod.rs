//! Constrained risk-averse MDP synthesis.
//!
//! For fixed multipliers λ the inner problem is solved exactly by risk-averse
//! value iteration on the Lagrangian stage cost `c + <λ, d>`. The outer problem
//! maximizes the dual bound `<κ0, V_λ> − <λ, β>` over λ ⪰ 0, first by projected
//! subgradient ascent with step `step0/√(k+1)` and then by bisection on each
//! multiplier once the sign of its constraint residual has been bracketed.
//! Every evaluated λ yields a valid lower bound; the best one is reported.

mod dcp;
pub(crate) mod dual;
mod oracle;

pub use dcp::export_dcp;
pub use oracle::{brute_force_constrained_oracle, OracleResult, ORACLE_MAX_ACTIONS, ORACLE_MAX_STATES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Kernel, Mdp, ModelError, Validate};
use crate::risk::{InnerSolveParams, RiskError, RiskEval, RiskMeasure};

/// Value per state, in cost units.
pub type ValueFunction = Vec<f64>;
/// Deterministic stationary policy: one action index per state.
pub type Policy = Vec<usize>;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("fixed-point iteration did not converge in {iterations} sweeps (residual {residual:e})")]
    IterationCap { iterations: usize, residual: f64 },
    #[error("instance too large for exhaustive enumeration ({states} states, {actions} actions)")]
    TooLarge { states: usize, actions: usize },
    #[error("invalid multipliers: {0}")]
    InvalidMultipliers(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("subproblem did not converge (best improvement {best_epsilon:e})")]
    SubproblemNotConverged { best_epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub vi_tol: f64,
    pub vi_max_iters: usize,
    pub dual_step0: f64,
    pub dual_iters: usize,
    /// Multiplier size beyond which a persistently violated constraint is declared infeasible.
    pub lambda_cap: f64,
    /// Bisection steps per multiplier once its optimum is bracketed.
    pub polish_iters: usize,
    pub inner: InnerSolveParams,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            vi_tol: 1e-8,
            vi_max_iters: 100_000,
            dual_step0: 1.0,
            dual_iters: 200,
            lambda_cap: 1e6,
            polish_iters: 60,
            inner: InnerSolveParams::default(),
        }
    }
}

impl SolverParams {
    /// Constraint residuals within this slack count as satisfied.
    pub fn feasibility_slack(&self, discount: f64) -> f64 {
        10.0 * self.vi_tol / (1.0 - discount)
    }
}

/// Which cost stream a policy evaluation accumulates.
#[derive(Debug, Clone, PartialEq)]
pub enum CostSelector {
    Objective,
    Constraint(usize),
    Lagrangian(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterationCap,
    InfeasibleSuspected,
}

/// One evaluated multiplier vector of the outer ascent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualIterate {
    pub lambda: Vec<f64>,
    pub lower_bound: f64,
    /// `D_i(κ0, π_λ) − β_i` for the greedy policy at λ.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSolveResult {
    pub measure: RiskMeasure,
    pub value: ValueFunction,
    pub multipliers: Vec<f64>,
    pub policy: Policy,
    pub lower_bound: f64,
    pub constraint_values: Vec<f64>,
    pub trace: Vec<DualIterate>,
    pub status: SolveStatus,
}

/// Output of [`risk_value_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViOutcome {
    pub value: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
    /// Sup-norm residual of each sweep.
    pub residuals: Vec<f64>,
}

/// One-step risk `σ(v, row)` of a sparse successor row.
pub(crate) fn row_risk(
    measure: &RiskMeasure,
    v: &[f64],
    row: &[(usize, f64)],
    params: &InnerSolveParams,
    buf: &mut Vec<(f64, f64)>,
) -> Result<f64, RiskError> {
    row_eval(measure, v, row, params, buf).map(|e| e.value)
}

/// Like [`row_risk`], keeping the inner minimizer.
pub(crate) fn row_eval(
    measure: &RiskMeasure,
    v: &[f64],
    row: &[(usize, f64)],
    params: &InnerSolveParams,
    buf: &mut Vec<(f64, f64)>,
) -> Result<RiskEval, RiskError> {
    buf.clear();
    buf.extend(row.iter().map(|&(j, p)| (v[j], p)));
    measure.evaluate_unchecked(buf, params)
}

/// Sweeps until the sup-norm change drops to `tol`, with a floor at the
/// floating-point resolution of the iterate so huge costs still terminate.
pub(crate) fn fixed_point<F>(
    mut v: Vec<f64>,
    tol: f64,
    max_iters: usize,
    mut sweep: F,
) -> Result<(Vec<f64>, usize, Vec<f64>), SolverError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), SolverError>,
{
    let mut next = vec![0.0; v.len()];
    let mut residuals = Vec::new();
    for it in 1..=max_iters {
        sweep(&v, &mut next)?;
        let mut res = 0.0f64;
        let mut scale = 0.0f64;
        for (a, b) in v.iter().zip(&next) {
            res = res.max((a - b).abs());
            scale = scale.max(b.abs());
        }
        residuals.push(res);
        std::mem::swap(&mut v, &mut next);
        if !res.is_finite() {
            break;
        }
        if res <= tol.max(64.0 * f64::EPSILON * scale) {
            return Ok((v, it, residuals));
        }
    }
    Err(SolverError::IterationCap { iterations: max_iters, residual: residuals.last().copied().unwrap_or(f64::NAN) })
}

/// Precomputed pieces shared by all backups on one MDP.
pub(crate) struct Backup<'a> {
    mdp: &'a Mdp,
    kernel: Kernel,
    measure: RiskMeasure,
    inner: InnerSolveParams,
}

impl<'a> Backup<'a> {
    pub(crate) fn new(mdp: &'a Mdp, measure: RiskMeasure, inner: InnerSolveParams) -> Result<Self, SolverError> {
        let report = mdp.validate();
        if !report.is_valid() {
            return Err(ModelError::Invalid(report).into());
        }
        measure.validate()?;
        Ok(Backup { mdp, kernel: Kernel::from_mdp(mdp), measure, inner })
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<(), SolverError> {
        if lambda.len() != self.mdp.num_constraints() {
            return Err(SolverError::DimensionMismatch(format!(
                "{} multipliers for {} constraints",
                lambda.len(),
                self.mdp.num_constraints()
            )));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(SolverError::InvalidMultipliers(format!("{lambda:?}")));
        }
        Ok(())
    }

    /// Stage costs `[s * |Act| + a]` for the selected stream.
    fn stage_costs(&self, selector: &CostSelector) -> Result<Vec<f64>, SolverError> {
        let m = self.mdp;
        let mut out = Vec::with_capacity(m.num_states * m.num_actions);
        for s in 0..m.num_states {
            for a in 0..m.num_actions {
                out.push(match selector {
                    CostSelector::Objective => m.stage_cost[s][a],
                    CostSelector::Constraint(i) => {
                        if *i >= m.num_constraints() {
                            return Err(SolverError::DimensionMismatch(format!("no constraint {i}")));
                        }
                        m.constraint_costs[*i][s][a]
                    }
                    CostSelector::Lagrangian(l) => {
                        self.check_lambda(l)?;
                        m.lagrangian_cost(s, a, l)
                    }
                });
            }
        }
        Ok(out)
    }

    fn q_value(&self, cost: f64, s: usize, a: usize, v: &[f64], buf: &mut Vec<(f64, f64)>) -> Result<f64, SolverError> {
        let r = row_risk(&self.measure, v, self.kernel.successors(s, a), &self.inner, buf)?;
        Ok(cost + self.mdp.discount * r)
    }

    /// Greedy sweep; `policy` receives the lowest-index argmin per state.
    fn sweep(&self, costs: &[f64], v: &[f64], out: &mut [f64], policy: &mut [usize]) -> Result<(), SolverError> {
        let na = self.mdp.num_actions;
        let mut buf = Vec::new();
        for s in 0..self.mdp.num_states {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for a in 0..na {
                let q = self.q_value(costs[s * na + a], s, a, v, &mut buf)?;
                if q < best {
                    best = q;
                    arg = a;
                }
            }
            out[s] = best;
            policy[s] = arg;
        }
        Ok(())
    }

    fn policy_sweep(&self, costs: &[f64], policy: &[usize], v: &[f64], out: &mut [f64]) -> Result<(), SolverError> {
        let na = self.mdp.num_actions;
        let mut buf = Vec::new();
        for (s, &a) in policy.iter().enumerate() {
            out[s] = self.q_value(costs[s * na + a], s, a, v, &mut buf)?;
        }
        Ok(())
    }

    pub(crate) fn value_iteration(
        &self,
        lambda: &[f64],
        start: Option<&[f64]>,
        params: &SolverParams,
    ) -> Result<ViOutcome, SolverError> {
        self.check_lambda(lambda)?;
        let costs = self.stage_costs(&CostSelector::Lagrangian(lambda.to_vec()))?;
        let n = self.mdp.num_states;
        let v0 = start.map_or_else(|| vec![0.0; n], |s| s.to_vec());
        let mut policy = vec![0; n];
        let (value, iterations, residuals) =
            fixed_point(v0, params.vi_tol, params.vi_max_iters, |v, out| self.sweep(&costs, v, out, &mut policy))?;
        // the policy from the last sweep is greedy w.r.t. the previous iterate; recompute on the final one
        let mut scratch = vec![0.0; n];
        self.sweep(&costs, &value, &mut scratch, &mut policy)?;
        Ok(ViOutcome { value, policy, iterations, residuals })
    }

    pub(crate) fn evaluate_policy(
        &self,
        policy: &[usize],
        selector: &CostSelector,
        params: &SolverParams,
    ) -> Result<ValueFunction, SolverError> {
        if policy.len() != self.mdp.num_states {
            return Err(SolverError::DimensionMismatch(format!(
                "policy has {} entries for {} states",
                policy.len(),
                self.mdp.num_states
            )));
        }
        if let Some(&a) = policy.iter().find(|&&a| a >= self.mdp.num_actions) {
            return Err(SolverError::DimensionMismatch(format!("action {a} out of range")));
        }
        let costs = self.stage_costs(selector)?;
        let v0 = vec![0.0; self.mdp.num_states];
        let (v, _, _) =
            fixed_point(v0, params.vi_tol, params.vi_max_iters, |v, out| self.policy_sweep(&costs, policy, v, out))?;
        Ok(v)
    }

    fn initial_risk(&self, v: &[f64]) -> f64 {
        dot(&self.mdp.initial_dist, v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One Jacobi backup `V'(s) = min_a [c + <λ,d> + γ σ(V, T[s][a])]` and its greedy policy.
pub fn bellman_backup(
    mdp: &Mdp,
    measure: &RiskMeasure,
    lambda: &[f64],
    v: &[f64],
    params: &SolverParams,
) -> Result<(ValueFunction, Policy), SolverError> {
    let b = Backup::new(mdp, *measure, params.inner)?;
    b.check_lambda(lambda)?;
    if v.len() != mdp.num_states {
        return Err(SolverError::DimensionMismatch(format!("value has {} entries", v.len())));
    }
    let costs = b.stage_costs(&CostSelector::Lagrangian(lambda.to_vec()))?;
    let mut out = vec![0.0; mdp.num_states];
    let mut policy = vec![0; mdp.num_states];
    b.sweep(&costs, v, &mut out, &mut policy)?;
    Ok((out, policy))
}

/// Iterates the backup from `V = 0` to its fixed point.
pub fn risk_value_iteration(
    mdp: &Mdp,
    measure: &RiskMeasure,
    lambda: &[f64],
    params: &SolverParams,
) -> Result<ViOutcome, SolverError> {
    Backup::new(mdp, *measure, params.inner)?.value_iteration(lambda, None, params)
}

/// Greedy policy with respect to `v` at multipliers `lambda`.
pub fn extract_policy(
    mdp: &Mdp,
    measure: &RiskMeasure,
    v: &[f64],
    lambda: &[f64],
    params: &SolverParams,
) -> Result<Policy, SolverError> {
    bellman_backup(mdp, measure, lambda, v, params).map(|(_, p)| p)
}

/// Nested discounted risk of the selected cost stream under a fixed policy.
pub fn policy_risk_evaluation(
    mdp: &Mdp,
    policy: &[usize],
    measure: &RiskMeasure,
    selector: &CostSelector,
    params: &SolverParams,
) -> Result<ValueFunction, SolverError> {
    Backup::new(mdp, *measure, params.inner)?.evaluate_policy(policy, selector, params)
}

/// `D_i(κ0, π)` for every constraint.
pub fn constraint_risks(
    mdp: &Mdp,
    policy: &[usize],
    measure: &RiskMeasure,
    params: &SolverParams,
) -> Result<Vec<f64>, SolverError> {
    let b = Backup::new(mdp, *measure, params.inner)?;
    (0..mdp.num_constraints())
        .map(|i| Ok(b.initial_risk(&b.evaluate_policy(policy, &CostSelector::Constraint(i), params)?)))
        .collect()
}

/// Dual ascent on the Lagrangian bound with exact inner value iteration.
pub fn solve_constrained(mdp: &Mdp, measure: &RiskMeasure, params: &SolverParams) -> Result<MdpSolveResult, SolverError> {
    let backup = Backup::new(mdp, *measure, params.inner)?;
    let nc = mdp.num_constraints();
    let mut warm: Option<Vec<f64>> = None;
    let mut best: Option<(f64, ViOutcome, Vec<f64>)> = None;

    let run = dual::dual_ascent(nc, params, params.feasibility_slack(mdp.discount), |lambda| {
        let vi = backup.value_iteration(lambda, warm.as_deref(), params)?;
        let lower_bound = backup.initial_risk(&vi.value) - dot(lambda, &mdp.budgets);
        let mut constraint_values = Vec::with_capacity(nc);
        for i in 0..nc {
            let d = backup.evaluate_policy(&vi.policy, &CostSelector::Constraint(i), params)?;
            constraint_values.push(backup.initial_risk(&d));
        }
        let residuals = constraint_values.iter().zip(&mdp.budgets).map(|(d, b)| d - b).collect();
        warm = Some(vi.value.clone());
        if best.as_ref().map_or(true, |(lb, _, _)| lower_bound > *lb) {
            best = Some((lower_bound, vi, constraint_values));
        }
        Ok(dual::DualEval { lower_bound, residuals })
    })?;

    let (lower_bound, vi, constraint_values) = best.expect("at least one dual iterate is evaluated");
    Ok(MdpSolveResult {
        measure: *measure,
        value: vi.value,
        multipliers: run.best_lambda,
        policy: vi.policy,
        lower_bound,
        constraint_values,
        trace: run.trace,
        status: run.status,
    })
}

#[cfg(test)]
pub(crate) mod testing {
    use crate::model::Mdp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn self_loop(c: f64, d: Option<(f64, f64)>) -> Mdp {
        let (cc, budgets) = match d {
            Some((d, b)) => (vec![vec![vec![d]]], vec![b]),
            None => (vec![], vec![]),
        };
        Mdp::new(vec![vec![vec![1.0]]], vec![1.0], vec![vec![c]], cc, budgets, 0.95).unwrap()
    }

    /// Random dense MDP with `nc` constraints and budget `budget_frac` of the
    /// worst discounted constraint cost.
    pub fn random_mdp(seed: u64, ns: usize, na: usize, nc: usize, discount: f64) -> Mdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let row = |rng: &mut ChaCha8Rng, n: usize| {
            let w: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() }).collect();
            let t: f64 = w.iter().sum();
            if t == 0.0 {
                let mut v = vec![0.0; n];
                v[rng.gen_range(0..n)] = 1.0;
                v
            } else {
                w.into_iter().map(|x| x / t).collect()
            }
        };
        let transition = (0..ns).map(|_| (0..na).map(|_| row(&mut rng, ns)).collect()).collect();
        let initial = row(&mut rng, ns);
        let cost = (0..ns).map(|_| (0..na).map(|_| rng.gen_range(0.0..5.0)).collect()).collect();
        let cc: Vec<Vec<Vec<f64>>> =
            (0..nc).map(|_| (0..ns).map(|_| (0..na).map(|_| rng.gen_range(0.0..3.0)).collect()).collect()).collect();
        let budgets = (0..nc).map(|_| 3.0 / (1.0 - discount) * 0.5).collect();
        Mdp::new(transition, initial, cost, cc, budgets, discount).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::risk::sigma;
    use proptest::prelude::*;

    fn measures() -> Vec<RiskMeasure> {
        vec![RiskMeasure::Expectation, RiskMeasure::cvar(0.3).unwrap(), RiskMeasure::evar(0.3).unwrap()]
    }

    fn p() -> SolverParams {
        SolverParams::default()
    }

    #[test]
    fn self_loop_backup_and_fixed_point() {
        let mdp = self_loop(1.0, None);
        for m in measures() {
            let (v, pi) = bellman_backup(&mdp, &m, &[], &[0.0], &p()).unwrap();
            assert_eq!(v, vec![1.0]);
            assert_eq!(pi, vec![0]);
            let vi = risk_value_iteration(&mdp, &m, &[], &p()).unwrap();
            assert!((vi.value[0] - 20.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_costs_converge_in_one_sweep() {
        let mut mdp = random_mdp(1, 4, 2, 0, 0.9);
        mdp.stage_cost = vec![vec![0.0; 2]; 4];
        let vi = risk_value_iteration(&mdp, &RiskMeasure::Expectation, &[], &p()).unwrap();
        assert_eq!(vi.value, vec![0.0; 4]);
        assert_eq!(vi.iterations, 1);
    }

    /// Tail-average CVaR used as an independent oracle.
    fn tail_cvar(v: &[f64], p: &[f64], eps: f64) -> f64 {
        let mut idx: Vec<usize> = (0..v.len()).filter(|&i| p[i] > 0.0).collect();
        idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
        let (mut mass, mut acc) = (0.0, 0.0);
        for i in idx {
            let take = p[i].min(eps - mass);
            if take <= 0.0 {
                break;
            }
            acc += take * v[i];
            mass += take;
        }
        acc / eps
    }

    #[test]
    fn cvar_backup_matches_exhaustive_action_enumeration() {
        let mdp = random_mdp(7, 2, 2, 0, 0.9);
        let v = vec![3.0, -1.0];
        let (out, pi) = bellman_backup(&mdp, &RiskMeasure::cvar(0.5).unwrap(), &[], &v, &p()).unwrap();
        for s in 0..2 {
            let q: Vec<f64> = (0..2)
                .map(|a| mdp.stage_cost[s][a] + 0.9 * tail_cvar(&v, &mdp.transition[s][a], 0.5))
                .collect();
            let best = if q[1] < q[0] { 1 } else { 0 };
            assert!((out[s] - q[best]).abs() < 1e-12);
            assert_eq!(pi[s], best);
        }
    }

    /// Dense Gaussian elimination for `(I − γ P) v = c`.
    fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for k in col..n {
                        a[r][k] -= f * a[col][k];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        (0..n).map(|i| b[i] / a[i][i]).collect()
    }

    fn linear_policy_value(mdp: &Mdp, pi: &[usize]) -> Vec<f64> {
        let n = mdp.num_states;
        let a = (0..n)
            .map(|s| {
                (0..n)
                    .map(|j| (if s == j { 1.0 } else { 0.0 }) - mdp.discount * mdp.transition[s][pi[s]][j])
                    .collect()
            })
            .collect();
        let b = (0..n).map(|s| mdp.stage_cost[s][pi[s]]).collect();
        solve_linear(a, b)
    }

    #[test]
    fn expectation_vi_matches_linear_solve_and_is_policy_stable() {
        for seed in 0..5 {
            let mdp = random_mdp(seed, 4, 3, 0, 0.9);
            let vi = risk_value_iteration(&mdp, &RiskMeasure::Expectation, &[], &p()).unwrap();
            let exact = linear_policy_value(&mdp, &vi.policy);
            for s in 0..4 {
                assert!((vi.value[s] - exact[s]).abs() < 1e-6);
            }
            // no single-state deviation improves the greedy policy
            for s in 0..4 {
                for a in 0..3 {
                    let q: f64 = mdp.stage_cost[s][a]
                        + 0.9 * (0..4).map(|j| mdp.transition[s][a][j] * exact[j]).sum::<f64>();
                    assert!(q >= exact[s] - 1e-6);
                }
            }
        }
    }

    #[test]
    fn residual_trace_contracts_geometrically() {
        for m in measures() {
            let mdp = random_mdp(3, 5, 3, 0, 0.95);
            let vi = risk_value_iteration(&mdp, &m, &[], &p()).unwrap();
            for k in 6..vi.residuals.len() {
                assert!(vi.residuals[k] <= 0.95 * vi.residuals[k - 1] + 1e-12, "{m}: sweep {k}");
            }
        }
    }

    #[test]
    fn policy_evaluation_simple_cases() {
        let mdp = self_loop(1.0, Some((2.0, 40.0)));
        let v = policy_risk_evaluation(&mdp, &[0], &RiskMeasure::cvar(0.2).unwrap(), &CostSelector::Constraint(0), &p())
            .unwrap();
        assert!((v[0] - 40.0).abs() < 1e-6);
        let mut z = random_mdp(2, 3, 2, 1, 0.9);
        z.constraint_costs[0] = vec![vec![0.0; 2]; 3];
        let v = policy_risk_evaluation(&z, &[0, 1, 0], &RiskMeasure::Expectation, &CostSelector::Constraint(0), &p())
            .unwrap();
        assert_eq!(v, vec![0.0; 3]);
    }

    fn truncated_nested(mdp: &Mdp, pi: &[usize], m: &RiskMeasure, depth: usize) -> Vec<f64> {
        let mut v = vec![0.0; mdp.num_states];
        for _ in 0..depth {
            v = (0..mdp.num_states)
                .map(|s| {
                    let a = pi[s];
                    mdp.stage_cost[s][a]
                        + mdp.discount * sigma(m, &v, &mdp.transition[s][a], &InnerSolveParams::default()).unwrap()
                })
                .collect();
        }
        v
    }

    #[test]
    fn cvar_policy_evaluation_matches_truncated_recursion() {
        let mdp = random_mdp(11, 3, 2, 0, 0.9);
        let m = RiskMeasure::cvar(0.3).unwrap();
        let pi = vec![1, 0, 1];
        let v = policy_risk_evaluation(&mdp, &pi, &m, &CostSelector::Objective, &p()).unwrap();
        let oracle = truncated_nested(&mdp, &pi, &m, 200);
        let tail = 5.0 * 0.9f64.powi(200) / 0.1;
        for s in 0..3 {
            assert!((v[s] - oracle[s]).abs() < 1e-5 + tail);
        }
    }

    #[test]
    fn extract_policy_agrees_with_enumeration_and_vi() {
        for seed in 0..5 {
            let mdp = random_mdp(100 + seed, 4, 3, 0, 0.9);
            for m in measures() {
                let vi = risk_value_iteration(&mdp, &m, &[], &p()).unwrap();
                let pi = extract_policy(&mdp, &m, &vi.value, &[], &p()).unwrap();
                assert_eq!(pi, vi.policy);
                for s in 0..4 {
                    let q: Vec<f64> = (0..3)
                        .map(|a| {
                            mdp.stage_cost[s][a]
                                + 0.9 * sigma(&m, &vi.value, &mdp.transition[s][a], &p().inner).unwrap()
                        })
                        .collect();
                    let min = q.iter().copied().fold(f64::INFINITY, f64::min);
                    let first = q.iter().position(|&x| x == min).unwrap();
                    assert_eq!(pi[s], first);
                }
            }
        }
    }

    #[test]
    fn single_action_policy_is_trivial() {
        let mdp = random_mdp(5, 3, 1, 0, 0.9);
        let pi = extract_policy(&mdp, &RiskMeasure::Expectation, &[1.0, 2.0, 3.0], &[], &p()).unwrap();
        assert_eq!(pi, vec![0, 0, 0]);
    }

    #[test]
    fn slack_constraint_gives_zero_multiplier() {
        let mut mdp = random_mdp(21, 4, 3, 1, 0.9);
        mdp.budgets = vec![10.0 * 3.0 / 0.1];
        let r = solve_constrained(&mdp, &RiskMeasure::Expectation, &p()).unwrap();
        let free = risk_value_iteration(&mdp, &RiskMeasure::Expectation, &[0.0], &p()).unwrap();
        assert_eq!(r.multipliers, vec![0.0]);
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.lower_bound - dot(&mdp.initial_dist, &free.value)).abs() < 1e-10);
    }

    #[test]
    fn tight_single_policy_constraint() {
        let mdp = self_loop(1.0, Some((2.0, 40.0)));
        let r = solve_constrained(&mdp, &RiskMeasure::Expectation, &p()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.lower_bound - 20.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_constraint_is_flagged() {
        let mut mdp = random_mdp(4, 3, 2, 1, 0.9);
        mdp.budgets = vec![1e-3];
        for row in mdp.constraint_costs[0].iter_mut() {
            for d in row.iter_mut() {
                *d += 1.0;
            }
        }
        let r = solve_constrained(&mdp, &RiskMeasure::Expectation, &p()).unwrap();
        assert_eq!(r.status, SolveStatus::InfeasibleSuspected);
    }

    #[test]
    fn lower_bound_matches_stored_fields() {
        let mdp = random_mdp(9, 4, 3, 1, 0.9);
        for m in measures() {
            let r = solve_constrained(&mdp, &m, &p()).unwrap();
            let recomputed = dot(&mdp.initial_dist, &r.value) - dot(&r.multipliers, &mdp.budgets);
            assert!((r.lower_bound - recomputed).abs() < 1e-10);
            let json = serde_json::to_string(&r).unwrap();
            let back: MdpSolveResult = serde_json::from_str(&json).unwrap();
            assert_eq!(back.policy, r.policy);
        }
    }

    #[test]
    fn unconstrained_values_are_ordered_by_measure() {
        for seed in 0..5 {
            let mdp = random_mdp(300 + seed, 5, 3, 0, 0.9);
            let v: Vec<f64> = [RiskMeasure::Expectation, RiskMeasure::cvar(0.2).unwrap(), RiskMeasure::evar(0.2).unwrap()]
                .iter()
                .map(|m| solve_constrained(&mdp, m, &p()).unwrap().lower_bound)
                .collect();
            assert!(v[0] <= v[1] + 1e-6 && v[1] <= v[2] + 1e-6, "{v:?}");
        }
    }

    fn measure_strategy() -> impl Strategy<Value = RiskMeasure> {
        prop_oneof![
            Just(RiskMeasure::Expectation),
            (0.05f64..=1.0).prop_map(|e| RiskMeasure::Cvar { epsilon: e }),
            (0.05f64..=1.0).prop_map(|e| RiskMeasure::Evar { epsilon: e }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn backup_is_a_contraction(seed in 0u64..10_000, m in measure_strategy(),
                                   u in prop::collection::vec(-20.0f64..20.0, 5),
                                   w in prop::collection::vec(-20.0f64..20.0, 5)) {
            let mdp = random_mdp(seed, 5, 3, 0, 0.9);
            let (bu, _) = bellman_backup(&mdp, &m, &[], &u, &p()).unwrap();
            let (bw, _) = bellman_backup(&mdp, &m, &[], &w, &p()).unwrap();
            let lhs = bu.iter().zip(&bw).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let rhs = u.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(lhs <= 0.9 * rhs + 1e-10);
        }

        #[test]
        fn backup_is_monotone(seed in 0u64..10_000, m in measure_strategy(),
                              u in prop::collection::vec(-20.0f64..20.0, 5),
                              bump in prop::collection::vec(0.0f64..5.0, 5)) {
            let mdp = random_mdp(seed, 5, 3, 0, 0.9);
            let w: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let (bu, _) = bellman_backup(&mdp, &m, &[], &u, &p()).unwrap();
            let (bw, _) = bellman_backup(&mdp, &m, &[], &w, &p()).unwrap();
            for (a, b) in bu.iter().zip(&bw) {
                prop_assert!(*a <= *b + 1e-10);
            }
        }
    }
}

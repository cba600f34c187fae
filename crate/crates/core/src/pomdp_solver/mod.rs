//! Risk-averse finite-state controller synthesis by policy iteration.
//!
//! A POMDP closed with a controller is a Markov chain over `S × G`, so a
//! controller is evaluated by nested risk evaluation on that chain. Each
//! I-state's rows are then improved by a small program with the inner risk
//! minimizers frozen, and the controller grows when no I-state improves.
//! Constraint multipliers are handled by the same outer dual search as the
//! MDP solver, with policy iteration run to a stall at every multiplier.
//!
//! All comparisons are oriented to cost minimization: the initial I-state
//! minimizes expected cost and an improvement lowers the evaluated values.

mod grow;
mod improve;

pub use grow::add_istates;
pub use improve::{improve_istate, IstateImprovement};

use serde::{Deserialize, Serialize};

use crate::mdp_solver::dual::{dual_ascent, DualEval};
use crate::mdp_solver::{dot, fixed_point, row_risk, DualIterate, SolveStatus, SolverError, SolverParams};
use crate::model::{product_chain_with_kernel, Fsc, Kernel, ModelError, Pomdp, ProductChain, Validate};
use crate::risk::RiskMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PiParams {
    /// Largest controller size.
    pub n_max: usize,
    /// I-states to try adding when no I-state improves.
    pub n_new: usize,
    pub max_iterations: usize,
    pub improvement_tol: f64,
    pub solver: SolverParams,
    /// Projected-gradient step for EVaR improvement programs.
    pub pg_step: f64,
    pub pg_iters: usize,
}

impl Default for PiParams {
    fn default() -> Self {
        PiParams {
            n_max: 6,
            n_new: 1,
            max_iterations: 100,
            improvement_tol: 1e-7,
            solver: SolverParams::default(),
            pg_step: 0.1,
            pg_iters: 5000,
        }
    }
}

impl PiParams {
    fn check(&self) -> Result<(), SolverError> {
        if self.n_max == 0 || self.n_new == 0 || self.n_new > self.n_max {
            return Err(SolverError::DimensionMismatch(format!(
                "need 1 <= n_new ({}) <= n_max ({})",
                self.n_new, self.n_max
            )));
        }
        Ok(())
    }
}

/// Values over product states, flat with index `s * |G| + g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductValueFunction {
    pub num_states: usize,
    pub num_istates: usize,
    pub values: Vec<f64>,
}

impl ProductValueFunction {
    pub fn get(&self, s: usize, g: usize) -> f64 {
        self.values[s * self.num_istates + g]
    }

    /// `V(·, g)` as a vector over states.
    pub fn istate_values(&self, g: usize) -> Vec<f64> {
        (0..self.num_states).map(|s| self.get(s, g)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiStep {
    Evaluate,
    Improve,
    Grow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiTraceEntry {
    pub iteration: usize,
    pub num_istates: usize,
    pub lower_bound: f64,
    pub improved: bool,
    pub step: PiStep,
    /// I-state whose rows changed, for improvement steps.
    pub istate: Option<usize>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FscSolveResult {
    pub measure: RiskMeasure,
    pub fsc: Fsc,
    pub value: ProductValueFunction,
    pub multipliers: Vec<f64>,
    pub g_init: usize,
    pub lower_bound: f64,
    pub constraint_values: Vec<f64>,
    pub trace: Vec<PiTraceEntry>,
    pub dual_trace: Vec<DualIterate>,
    pub status: SolveStatus,
}

/// Shared evaluation machinery for one POMDP and measure.
pub(crate) struct Context<'a> {
    pub pomdp: &'a Pomdp,
    pub kernel: Kernel,
    pub measure: RiskMeasure,
    pub params: SolverParams,
}

impl<'a> Context<'a> {
    pub(crate) fn new(pomdp: &'a Pomdp, measure: &RiskMeasure, params: &SolverParams) -> Result<Self, SolverError> {
        let report = pomdp.validate();
        if !report.is_valid() {
            return Err(ModelError::Invalid(report).into());
        }
        measure.validate()?;
        Ok(Context { pomdp, kernel: Kernel::from_mdp(&pomdp.mdp), measure: *measure, params: *params })
    }

    pub(crate) fn check_fsc(&self, fsc: &Fsc) -> Result<(), SolverError> {
        let report = fsc.validate();
        if !report.is_valid() {
            return Err(ModelError::Invalid(report).into());
        }
        fsc.check_compatible(self.pomdp)?;
        Ok(())
    }

    pub(crate) fn check_lambda(&self, lambda: &[f64]) -> Result<(), SolverError> {
        if lambda.len() != self.pomdp.mdp.num_constraints() {
            return Err(SolverError::DimensionMismatch(format!(
                "{} multipliers for {} constraints",
                lambda.len(),
                self.pomdp.mdp.num_constraints()
            )));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(SolverError::InvalidMultipliers(format!("{lambda:?}")));
        }
        Ok(())
    }

    pub(crate) fn chain(&self, fsc: &Fsc) -> ProductChain {
        product_chain_with_kernel(self.pomdp, &self.kernel, fsc)
    }

    /// Nested risk of a lifted cost stream on the product chain.
    pub(crate) fn evaluate_costs(
        &self,
        chain: &ProductChain,
        costs: &[f64],
        warm: Option<&[f64]>,
    ) -> Result<Vec<f64>, SolverError> {
        let gamma = self.pomdp.mdp.discount;
        let n = chain.num_product_states();
        let v0 = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            _ => vec![0.0; n],
        };
        let mut buf = Vec::new();
        let (v, _, _) = fixed_point(v0, self.params.vi_tol, self.params.vi_max_iters, |v, out| {
            for (i, row) in chain.transition.iter().enumerate() {
                out[i] = costs[i] + gamma * row_risk(&self.measure, v, row, &self.params.inner, &mut buf)?;
            }
            Ok(())
        })?;
        Ok(v)
    }

    pub(crate) fn evaluate(
        &self,
        fsc: &Fsc,
        lambda: &[f64],
        warm: Option<&[f64]>,
    ) -> Result<(ProductChain, Vec<f64>), SolverError> {
        let chain = self.chain(fsc);
        let costs = chain.lagrangian_cost(lambda);
        let v = self.evaluate_costs(&chain, &costs, warm)?;
        Ok((chain, v))
    }

    /// Discounted occupancy `Σ_t γ^t ι P^t` of the product chain.
    pub(crate) fn occupancy(&self, chain: &ProductChain) -> Vec<f64> {
        let gamma = self.pomdp.mdp.discount;
        let iota = &chain.initial_dist;
        let mut mu = iota.clone();
        let mut next = vec![0.0; mu.len()];
        for _ in 0..10_000 {
            next.copy_from_slice(iota);
            for (i, row) in chain.transition.iter().enumerate() {
                let m = mu[i];
                if m != 0.0 {
                    for &(j, p) in row {
                        next[j] += gamma * m * p;
                    }
                }
            }
            let diff = mu.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            std::mem::swap(&mut mu, &mut next);
            if diff <= 1e-12 {
                break;
            }
        }
        mu
    }
}

/// Evaluates `fsc` on `pomdp` at multipliers `lambda`.
pub fn evaluate_fsc(
    pomdp: &Pomdp,
    fsc: &Fsc,
    measure: &RiskMeasure,
    lambda: &[f64],
    params: &SolverParams,
) -> Result<ProductValueFunction, SolverError> {
    let ctx = Context::new(pomdp, measure, params)?;
    ctx.check_fsc(fsc)?;
    ctx.check_lambda(lambda)?;
    let (_, v) = ctx.evaluate(fsc, lambda, None)?;
    Ok(ProductValueFunction { num_states: pomdp.mdp.num_states, num_istates: fsc.num_istates, values: v })
}

/// I-state minimizing `Σ_s κ0(s) V(s, g)`; ties go to the lowest index.
pub fn select_initial_istate(value: &ProductValueFunction, initial_dist: &[f64]) -> usize {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for g in 0..value.num_istates {
        let score: f64 = initial_dist.iter().enumerate().map(|(s, k)| k * value.get(s, g)).sum();
        if score < best {
            best = score;
            arg = g;
        }
    }
    arg
}

fn initial_product(kappa0: &[f64], kappa: &[f64]) -> Vec<f64> {
    kappa0.iter().flat_map(|k| kappa.iter().map(move |q| k * q)).collect()
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

struct InnerOutcome {
    fsc: Fsc,
    chain: ProductChain,
    value: Vec<f64>,
    g_init: usize,
    converged: bool,
}

struct Runner<'a, 'b> {
    ctx: &'b Context<'a>,
    params: &'b PiParams,
    trace: Vec<PiTraceEntry>,
    iteration: usize,
}

impl<'a, 'b> Runner<'a, 'b> {
    fn bound(&self, v: &[f64], g_init: usize, ng: usize, lambda: &[f64]) -> f64 {
        let mdp = &self.ctx.pomdp.mdp;
        let j: f64 = mdp.initial_dist.iter().enumerate().map(|(s, k)| k * v[s * ng + g_init]).sum();
        j - dot(lambda, &mdp.budgets)
    }

    fn record(&mut self, step: PiStep, istate: Option<usize>, improved: bool, fsc: &Fsc, v: &[f64], g_init: usize, lambda: &[f64]) {
        let lower_bound = self.bound(v, g_init, fsc.num_istates, lambda);
        self.trace.push(PiTraceEntry {
            iteration: self.iteration,
            num_istates: fsc.num_istates,
            lower_bound,
            improved,
            step,
            istate,
            lambda: lambda.to_vec(),
        });
    }

    fn set_initial(&self, fsc: &mut Fsc, v: &[f64]) -> usize {
        let pv = ProductValueFunction {
            num_states: self.ctx.pomdp.mdp.num_states,
            num_istates: fsc.num_istates,
            values: v.to_vec(),
        };
        let g = select_initial_istate(&pv, &self.ctx.pomdp.mdp.initial_dist);
        fsc.kappa = one_hot(fsc.num_istates, g);
        g
    }

    /// Policy iteration at fixed multipliers until no I-state improves and no
    /// useful I-state can be added.
    fn run(&mut self, mut fsc: Fsc, lambda: &[f64], warm: Option<&[f64]>) -> Result<InnerOutcome, SolverError> {
        let slack = self.params.solver.feasibility_slack(self.ctx.pomdp.mdp.discount);
        let warm = warm.filter(|w| w.len() == self.ctx.pomdp.mdp.num_states * fsc.num_istates);
        let (_, v0) = self.ctx.evaluate(&fsc, lambda, warm)?;
        let mut v = v0;
        let mut g_init = self.set_initial(&mut fsc, &v);
        let mut chain = self.ctx.chain(&fsc);
        self.record(PiStep::Evaluate, None, false, &fsc, &v, g_init, lambda);

        let mut converged = false;
        for _ in 0..self.params.max_iterations {
            self.iteration += 1;
            let before = self.bound(&v, g_init, fsc.num_istates, lambda);
            let mut improved = false;
            for g in 0..fsc.num_istates {
                let occupancy = self.ctx.occupancy(&chain);
                let imp = improve::improve_with_context(self.ctx, &chain, &v, &fsc, g, lambda, &occupancy, self.params)?;
                let Some(rows) = imp.rows else { continue };
                let mut candidate = fsc.clone();
                candidate.omega[g] = rows;
                let (new_chain, new_v) = self.ctx.evaluate(&candidate, lambda, Some(&v))?;
                let worst = new_v.iter().zip(&v).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
                if worst > slack {
                    continue;
                }
                fsc = candidate;
                v = new_v;
                chain = new_chain;
                g_init = self.set_initial(&mut fsc, &v);
                chain.initial_dist = initial_product(&self.ctx.pomdp.mdp.initial_dist, &fsc.kappa);
                improved = true;
                self.record(PiStep::Improve, Some(g), true, &fsc, &v, g_init, lambda);
            }
            // A sweep that only moves values at states the controller barely
            // reaches counts as a stall, so growth gets its turn.
            let after = self.bound(&v, g_init, fsc.num_istates, lambda);
            if improved && before - after > self.params.improvement_tol * (1.0 + before.abs()) {
                continue;
            }
            if fsc.num_istates < self.params.n_max {
                let room = self.params.n_max - fsc.num_istates;
                let pv = ProductValueFunction {
                    num_states: self.ctx.pomdp.mdp.num_states,
                    num_istates: fsc.num_istates,
                    values: v.clone(),
                };
                let occupancy = self.ctx.occupancy(&chain);
                let (grown, added) =
                    grow::grow_with_context(
                    self.ctx,
                    &fsc,
                    &pv,
                    lambda,
                    self.params.n_new.min(room),
                    &occupancy,
                    self.params.improvement_tol,
                )?;
                if added > 0 {
                    fsc = grown;
                    let (new_chain, new_v) = self.ctx.evaluate(&fsc, lambda, None)?;
                    v = new_v;
                    g_init = self.set_initial(&mut fsc, &v);
                    chain = new_chain;
                    chain.initial_dist = initial_product(&self.ctx.pomdp.mdp.initial_dist, &fsc.kappa);
                    self.record(PiStep::Grow, None, true, &fsc, &v, g_init, lambda);
                    continue;
                }
            }
            converged = true;
            break;
        }
        Ok(InnerOutcome { fsc, chain, value: v, g_init, converged })
    }
}

/// Policy iteration from the single-I-state uniform controller.
pub fn policy_iteration(pomdp: &Pomdp, measure: &RiskMeasure, params: &PiParams) -> Result<FscSolveResult, SolverError> {
    let init = Fsc::uniform(pomdp.num_observations, pomdp.mdp.num_actions);
    policy_iteration_from(pomdp, measure, init, params)
}

/// Policy iteration from a given controller.
pub fn policy_iteration_from(
    pomdp: &Pomdp,
    measure: &RiskMeasure,
    initial: Fsc,
    params: &PiParams,
) -> Result<FscSolveResult, SolverError> {
    params.check()?;
    let ctx = Context::new(pomdp, measure, &params.solver)?;
    ctx.check_fsc(&initial)?;
    if initial.num_istates > params.n_max {
        return Err(SolverError::DimensionMismatch(format!(
            "initial controller has {} I-states, n_max is {}",
            initial.num_istates, params.n_max
        )));
    }
    let mdp = &pomdp.mdp;
    let nc = mdp.num_constraints();
    let mut runner = Runner { ctx: &ctx, params, trace: Vec::new(), iteration: 0 };
    let mut current = initial;
    let mut warm: Option<Vec<f64>> = None;
    struct Best {
        lower_bound: f64,
        fsc: Fsc,
        value: Vec<f64>,
        g_init: usize,
        constraint_values: Vec<f64>,
        converged: bool,
    }
    let mut best: Option<Best> = None;

    let run = dual_ascent(nc, &params.solver, params.solver.feasibility_slack(mdp.discount), |lambda| {
        let out = runner.run(current.clone(), lambda, warm.as_deref())?;
        let ng = out.fsc.num_istates;
        let lower_bound = runner.bound(&out.value, out.g_init, ng, lambda);
        let mut constraint_values = Vec::with_capacity(nc);
        for i in 0..nc {
            let d = ctx.evaluate_costs(&out.chain, &out.chain.lifted_constraint_costs[i], None)?;
            constraint_values.push(dot(&out.chain.initial_dist, &d));
        }
        let residuals = constraint_values.iter().zip(&mdp.budgets).map(|(d, b)| d - b).collect();
        current = out.fsc.clone();
        warm = Some(out.value.clone());
        if best.as_ref().map_or(true, |b| lower_bound > b.lower_bound) {
            best = Some(Best {
                lower_bound,
                fsc: out.fsc,
                value: out.value,
                g_init: out.g_init,
                constraint_values,
                converged: out.converged,
            });
        }
        Ok(DualEval { lower_bound, residuals })
    })?;

    let best = best.expect("at least one dual iterate is evaluated");
    let status = match run.status {
        SolveStatus::Converged if !best.converged => SolveStatus::IterationCap,
        s => s,
    };
    Ok(FscSolveResult {
        measure: *measure,
        value: ProductValueFunction { num_states: mdp.num_states, num_istates: best.fsc.num_istates, values: best.value },
        fsc: best.fsc,
        multipliers: run.best_lambda,
        g_init: best.g_init,
        lower_bound: best.lower_bound,
        constraint_values: best.constraint_values,
        trace: runner.trace,
        dual_trace: run.trace,
        status,
    })
}

#[cfg(test)]
pub(crate) mod testing {
    use crate::mdp_solver::testing::random_mdp;
    use crate::model::Pomdp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random POMDP with noisy observations of the state.
    pub fn random_pomdp(seed: u64, ns: usize, na: usize, no: usize, nc: usize) -> Pomdp {
        let mdp = random_mdp(seed, ns, na, nc, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let obs = (0..ns)
            .map(|_| {
                let w: Vec<f64> = (0..no).map(|_| rng.gen::<f64>() + 0.05).collect();
                let t: f64 = w.iter().sum();
                w.into_iter().map(|x| x / t).collect()
            })
            .collect();
        Pomdp::new(mdp, obs).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::random_pomdp;
    use super::*;
    use crate::mdp_solver::testing::random_mdp;
    use crate::mdp_solver::{policy_risk_evaluation, solve_constrained, CostSelector};
    use crate::model::Mdp;
    use crate::risk::sigma;
    use proptest::prelude::*;

    fn sp() -> SolverParams {
        SolverParams::default()
    }

    #[test]
    fn zero_cost_pomdp_has_zero_value() {
        let mut p = random_pomdp(1, 3, 2, 2, 0);
        p.mdp.stage_cost = vec![vec![0.0; 2]; 3];
        let v = evaluate_fsc(&p, &Fsc::uniform(2, 2), &RiskMeasure::cvar(0.3).unwrap(), &[], &sp()).unwrap();
        assert!(v.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn memoryless_fsc_on_observable_pomdp_matches_mdp_evaluation() {
        let mdp = random_mdp(5, 4, 3, 0, 0.9);
        let p = Pomdp::fully_observable(mdp.clone()).unwrap();
        let policy = vec![2, 0, 1, 1];
        let fsc = Fsc::memoryless(&policy, 3);
        for m in [RiskMeasure::Expectation, RiskMeasure::cvar(0.3).unwrap(), RiskMeasure::evar(0.3).unwrap()] {
            let v = evaluate_fsc(&p, &fsc, &m, &[], &sp()).unwrap();
            let oracle = policy_risk_evaluation(&mdp, &policy, &m, &CostSelector::Objective, &sp()).unwrap();
            for s in 0..4 {
                assert!((v.get(s, 0) - oracle[s]).abs() < 1e-8, "{m}");
            }
        }
    }

    /// Depth-limited recursion on the dense product chain.
    fn truncated_product(p: &Pomdp, fsc: &Fsc, m: &RiskMeasure, depth: usize) -> Vec<f64> {
        let chain = crate::model::product_chain(p, fsc).unwrap();
        let n = chain.num_product_states();
        let mut v = vec![0.0; n];
        for _ in 0..depth {
            v = (0..n)
                .map(|i| {
                    chain.lifted_cost[i]
                        + p.mdp.discount * sigma(m, &v, &chain.dense_row(i), &Default::default()).unwrap()
                })
                .collect();
        }
        v
    }

    #[test]
    fn two_istate_cvar_evaluation_matches_truncated_recursion() {
        let p = random_pomdp(9, 2, 2, 2, 0);
        let fsc = Fsc::new(
            vec![
                vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 0.0, 0.0, 0.5]],
                vec![vec![0.0, 1.0, 0.0, 0.0], vec![0.25, 0.25, 0.25, 0.25]],
            ],
            vec![1.0, 0.0],
        )
        .unwrap();
        let m = RiskMeasure::cvar(0.5).unwrap();
        let v = evaluate_fsc(&p, &fsc, &m, &[], &sp()).unwrap();
        let oracle = truncated_product(&p, &fsc, &m, 200);
        for (a, b) in v.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn initial_istate_selection() {
        let single = ProductValueFunction { num_states: 2, num_istates: 1, values: vec![3.0, 4.0] };
        assert_eq!(select_initial_istate(&single, &[0.5, 0.5]), 0);
        let two = ProductValueFunction { num_states: 2, num_istates: 2, values: vec![1.0, 2.0, 1.0, 2.0] };
        assert_eq!(select_initial_istate(&two, &[0.5, 0.5]), 0);
        let mut rng_values = vec![0.0; 6];
        for (i, x) in rng_values.iter_mut().enumerate() {
            *x = ((i * 7919) % 13) as f64;
        }
        let three = ProductValueFunction { num_states: 2, num_istates: 3, values: rng_values.clone() };
        let kappa = [0.3, 0.7];
        let scores: Vec<f64> = (0..3).map(|g| 0.3 * rng_values[g] + 0.7 * rng_values[3 + g]).collect();
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(select_initial_istate(&three, &kappa), scores.iter().position(|&x| x == min).unwrap());
    }

    #[test]
    fn zero_cost_pomdp_stops_immediately() {
        let mut p = random_pomdp(2, 3, 2, 2, 0);
        p.mdp.stage_cost = vec![vec![0.0; 2]; 3];
        let r = policy_iteration(&p, &RiskMeasure::Expectation, &PiParams::default()).unwrap();
        assert_eq!(r.lower_bound, 0.0);
        assert_eq!(r.multipliers, Vec::<f64>::new());
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.status, SolveStatus::Converged);
    }

    #[test]
    fn single_action_pomdp_terminates_at_once() {
        let p = random_pomdp(3, 3, 1, 2, 0);
        let params = PiParams { n_max: 1, ..Default::default() };
        let r = policy_iteration(&p, &RiskMeasure::cvar(0.4).unwrap(), &params).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.fsc.num_istates, 1);
    }

    #[test]
    fn observable_pomdp_reaches_mdp_bound() {
        for seed in 0..3 {
            let mut mdp = random_mdp(60 + seed, 4, 3, 1, 0.9);
            mdp.budgets = vec![12.0];
            let p = Pomdp::fully_observable(mdp.clone()).unwrap();
            let fsc = policy_iteration(&p, &RiskMeasure::Expectation, &PiParams::default()).unwrap();
            let m = solve_constrained(&mdp, &RiskMeasure::Expectation, &sp()).unwrap();
            assert!((fsc.lower_bound - m.lower_bound).abs() < 1e-3, "{} vs {}", fsc.lower_bound, m.lower_bound);
        }
    }

    #[test]
    fn accepted_steps_lower_cost_at_fixed_lambda() {
        for m in [RiskMeasure::Expectation, RiskMeasure::cvar(0.3).unwrap(), RiskMeasure::evar(0.3).unwrap()] {
            let p = random_pomdp(12, 4, 3, 3, 0);
            let r = policy_iteration(&p, &m, &PiParams { n_max: 3, ..Default::default() }).unwrap();
            for w in r.trace.windows(2) {
                if w[1].improved && w[1].step == PiStep::Improve && w[0].lambda == w[1].lambda {
                    assert!(w[1].lower_bound <= w[0].lower_bound + 1e-9, "{m}");
                }
            }
            assert!(r.fsc.validate().is_valid());
            assert!(r.fsc.num_istates <= 3);
        }
    }

    fn measure_strategy() -> impl Strategy<Value = RiskMeasure> {
        prop_oneof![
            Just(RiskMeasure::Expectation),
            (0.05f64..=1.0).prop_map(|e| RiskMeasure::Cvar { epsilon: e }),
            (0.05f64..=1.0).prop_map(|e| RiskMeasure::Evar { epsilon: e }),
        ]
    }

    fn sweep(ctx: &Context, chain: &ProductChain, v: &[f64]) -> Vec<f64> {
        let mut buf = Vec::new();
        chain
            .transition
            .iter()
            .enumerate()
            .map(|(i, row)| {
                chain.lifted_cost[i]
                    + ctx.pomdp.mdp.discount * row_risk(&ctx.measure, v, row, &ctx.params.inner, &mut buf).unwrap()
            })
            .collect()
    }

    fn random_fsc(seed: u64, no: usize, na: usize, ng: usize) -> Fsc {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let omega = (0..ng)
            .map(|_| {
                (0..no)
                    .map(|_| {
                        let w: Vec<f64> = (0..ng * na).map(|_| rng.gen::<f64>()).collect();
                        let t: f64 = w.iter().sum();
                        w.into_iter().map(|x| x / t).collect()
                    })
                    .collect()
            })
            .collect();
        Fsc::new(omega, one_hot(ng, 0)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn product_evaluation_is_a_contraction(seed in 0u64..1000, m in measure_strategy(),
                                               u in prop::collection::vec(-10.0f64..10.0, 8),
                                               w in prop::collection::vec(-10.0f64..10.0, 8)) {
            let p: Pomdp = random_pomdp(seed, 4, 2, 2, 0);
            let fsc = random_fsc(seed, 2, 2, 2);
            let ctx = Context::new(&p, &m, &sp()).unwrap();
            let chain = ctx.chain(&fsc);
            let (bu, bw) = (sweep(&ctx, &chain, &u), sweep(&ctx, &chain, &w));
            let lhs = bu.iter().zip(&bw).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let rhs = u.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(lhs <= 0.9 * rhs + 1e-10);
        }

        #[test]
        fn product_rows_are_stochastic(seed in 0u64..1000) {
            let p: Pomdp = random_pomdp(seed, 4, 3, 3, 0);
            let fsc = random_fsc(seed, 3, 3, 2);
            let chain = crate::model::product_chain(&p, &fsc).unwrap();
            for row in &chain.transition {
                let t: f64 = row.iter().map(|(_, q)| q).sum();
                prop_assert!((t - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn memoryless_chain_marginal_matches_mdp() {
        let mdp: Mdp = random_mdp(77, 4, 3, 0, 0.9);
        let p = random_pomdp(77, 4, 3, 2, 0);
        let fsc = Fsc::memoryless(&[1, 1], 3);
        let chain = crate::model::product_chain(&p, &fsc).unwrap();
        for s in 0..4 {
            let row = chain.dense_row(s);
            for j in 0..4 {
                assert!((row[j] - p.mdp.transition[s][1][j]).abs() < 1e-12);
            }
        }
        let _ = mdp;
    }
}

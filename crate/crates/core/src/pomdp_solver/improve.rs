//! Per-I-state improvement programs.
//!
//! With the value function and the inner risk minimizers ζ frozen, the
//! right-hand side of the evaluation equation at `[s, g]` is a function of the
//! rows `ω(·,·|g, o)` alone:
//!
//! * expectation and CVaR: linear in ω, so the program is an LP;
//! * EVaR: `(log Σ O ω e^{L} − log ε)/ζ` plus a linear cost term, concave in ω.
//!
//! The program maximizes a weighted sum of per-state slacks `Vref_s − RHS_s(ω)`
//! subject to every slack being nonnegative. States and observations split into
//! independent blocks (connected through `O(o|s) > 0`), solved one at a time.
//! The concave case runs a few tangent LPs (each feasible by concavity) and
//! then projected gradient from the best point found.

use serde::{Deserialize, Serialize};

use super::{Context, PiParams, ProductValueFunction};
use crate::mdp_solver::{row_eval, SolverError};
use crate::model::{Fsc, ProductChain};
use crate::optim::{project_to_simplex, solve_lp, LinearProgram, LpOutcome, Relation};
use crate::risk::RiskMeasure;

/// Outcome of one I-state improvement program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IstateImprovement {
    /// Replacement rows `omega[g]`, present when some block improved by more
    /// than the improvement tolerance.
    pub rows: Option<Vec<Vec<f64>>>,
    /// Largest per-state decrease of the frozen right-hand side.
    pub epsilon: f64,
    /// False when projected gradient hit its iteration cap.
    pub converged: bool,
}

/// Weight added to every state so unreached states still count.
const WEIGHT_FLOOR: f64 = 1e-3;
/// Penalty on constraint violation inside projected gradient.
const PG_PENALTY: f64 = 100.0;
const PG_PATIENCE: usize = 200;
const TANGENT_ROUNDS: usize = 5;
const FEAS_TOL: f64 = 1e-10;

/// Frozen right-hand side at one state.
enum Rhs {
    /// `RHS(ω) = Σ_o O(o|s) Σ_k ω_{o,k} lin_k`
    Linear(Vec<f64>),
    /// `RHS(ω) = Σ_o O Σ_k ω c_k + γ (log Σ_o Σ_k O ω e^{L_k} − log ε) / ζ`
    Entropic { cost: Vec<f64>, log_mgf: Vec<f64>, zeta: f64, log_eps: f64 },
}

struct StateProgram {
    /// Observations seen at this state with their probabilities.
    obs: Vec<(usize, f64)>,
    rhs: Rhs,
    vref: f64,
    weight: f64,
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl StateProgram {
    fn value(&self, omega: &[Vec<f64>], gamma: f64) -> f64 {
        match &self.rhs {
            Rhs::Linear(lin) => self
                .obs
                .iter()
                .map(|&(o, po)| po * omega[o].iter().zip(lin).map(|(w, l)| w * l).sum::<f64>())
                .sum(),
            Rhs::Entropic { cost, log_mgf, zeta, log_eps } => {
                let mut linear = 0.0;
                let mut logs = Vec::new();
                for &(o, po) in &self.obs {
                    for (k, &w) in omega[o].iter().enumerate() {
                        if w > 0.0 {
                            linear += po * w * cost[k];
                            logs.push((po * w).ln() + log_mgf[k]);
                        }
                    }
                }
                linear + gamma * (log_sum_exp(logs.into_iter()) - log_eps) / zeta
            }
        }
    }

    /// `value` and `gradient` sharing one pass over the log-partition sum.
    fn value_and_gradient(&self, omega: &[Vec<f64>], gamma: f64) -> (f64, Vec<(usize, Vec<f64>)>) {
        match &self.rhs {
            Rhs::Linear(_) => (self.value(omega, gamma), self.gradient(omega, gamma)),
            Rhs::Entropic { cost, log_mgf, zeta, log_eps } => {
                let mut linear = 0.0;
                let mut logs = Vec::new();
                for &(o, po) in &self.obs {
                    for (k, &w) in omega[o].iter().enumerate() {
                        if w > 0.0 {
                            linear += po * w * cost[k];
                            logs.push((po * w).ln() + log_mgf[k]);
                        }
                    }
                }
                let log_z = log_sum_exp(logs.into_iter());
                let scale = gamma / zeta;
                let shared: Vec<f64> = cost.iter().zip(log_mgf).map(|(c, l)| (c, scale * (l - log_z).min(700.0).exp())).map(|(c, e)| c + e).collect();
                let grads = self.obs.iter().map(|&(o, po)| (o, shared.iter().map(|x| po * x).collect())).collect();
                (linear + scale * (log_z - log_eps), grads)
            }
        }
    }

    /// Gradient with respect to `ω_{o,·}` for each seen observation.
    fn gradient(&self, omega: &[Vec<f64>], gamma: f64) -> Vec<(usize, Vec<f64>)> {
        match &self.rhs {
            Rhs::Linear(lin) => self.obs.iter().map(|&(o, po)| (o, lin.iter().map(|l| po * l).collect())).collect(),
            Rhs::Entropic { cost, log_mgf, zeta, .. } => {
                let log_z = log_sum_exp(
                    self.obs
                        .iter()
                        .flat_map(|&(o, po)| omega[o].iter().enumerate().filter(|(_, w)| **w > 0.0).map(move |(k, w)| (po * w).ln() + log_mgf[k])),
                );
                self.obs
                    .iter()
                    .map(|&(o, po)| {
                        let g = cost
                            .iter()
                            .zip(log_mgf)
                            .map(|(c, l)| po * c + gamma / zeta * po * (l - log_z).min(700.0).exp())
                            .collect();
                        (o, g)
                    })
                    .collect()
            }
        }
    }
}

/// Disjoint-set forest over states followed by observations.
struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

struct Block {
    states: Vec<usize>,
    obs: Vec<usize>,
}

fn blocks(ctx: &Context) -> Vec<Block> {
    let ns = ctx.pomdp.mdp.num_states;
    let no = ctx.pomdp.num_observations;
    let mut uf = UnionFind((0..ns + no).collect());
    for s in 0..ns {
        for (o, _) in ctx.pomdp.observations_of(s) {
            uf.union(s, ns + o);
        }
    }
    let mut by_root: std::collections::BTreeMap<usize, Block> = Default::default();
    for x in 0..ns + no {
        let r = uf.find(x);
        let b = by_root.entry(r).or_insert_with(|| Block { states: Vec::new(), obs: Vec::new() });
        if x < ns {
            b.states.push(x);
        } else {
            b.obs.push(x - ns);
        }
    }
    by_root.into_values().filter(|b| !b.states.is_empty()).collect()
}

/// Per-state slacks `Vref_s − RHS_s(ω)` over a block.
fn slacks(programs: &[StateProgram], states: &[usize], omega: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    states.iter().map(|&s| programs[s].vref - programs[s].value(omega, gamma)).collect()
}

fn score(programs: &[StateProgram], states: &[usize], slack: &[f64]) -> Option<f64> {
    if slack.iter().any(|e| *e < -FEAS_TOL || !e.is_finite()) {
        return None;
    }
    Some(states.iter().zip(slack).map(|(&s, e)| programs[s].weight * e).sum())
}

fn clean_row(row: &mut [f64]) {
    for x in row.iter_mut() {
        if *x < 1e-12 {
            *x = 0.0;
        }
    }
    let t: f64 = row.iter().sum();
    for x in row.iter_mut() {
        *x /= t;
    }
}

/// Solves `max Σ w_s ε_s` s.t. `Σ coef·ω + ε_s ≤ rhs_s`, rows of ω on simplices.
fn linear_program(
    programs: &[StateProgram],
    block: &Block,
    omega: &[Vec<f64>],
    width: usize,
    gamma: f64,
    tangent: bool,
) -> Option<Vec<Vec<f64>>> {
    let nobs = block.obs.len();
    let nvar = nobs * width + block.states.len();
    let pos: std::collections::HashMap<usize, usize> = block.obs.iter().enumerate().map(|(i, &o)| (o, i)).collect();
    let mut objective = vec![0.0; nvar];
    for (i, &s) in block.states.iter().enumerate() {
        objective[nobs * width + i] = programs[s].weight;
    }
    let mut lp = LinearProgram::new(objective);
    for (i, &s) in block.states.iter().enumerate() {
        let p = &programs[s];
        let mut coefs = vec![0.0; nvar];
        let mut rhs = p.vref;
        for (o, grad) in p.gradient(omega, gamma) {
            let base = pos[&o] * width;
            coefs[base..base + width].copy_from_slice(&grad);
            if tangent {
                rhs += grad.iter().zip(&omega[o]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if tangent {
            rhs -= p.value(omega, gamma);
        }
        coefs[nobs * width + i] = 1.0;
        lp.add(coefs, Relation::Le, rhs);
    }
    for j in 0..nobs {
        let mut coefs = vec![0.0; nvar];
        coefs[j * width..(j + 1) * width].iter_mut().for_each(|x| *x = 1.0);
        lp.add(coefs, Relation::Eq, 1.0);
    }
    match solve_lp(&lp) {
        Ok(LpOutcome::Optimal { x, .. }) => {
            let mut out = omega.to_vec();
            for (j, &o) in block.obs.iter().enumerate() {
                let mut row = x[j * width..(j + 1) * width].to_vec();
                clean_row(&mut row);
                out[o] = row;
            }
            Some(out)
        }
        _ => None,
    }
}

/// Projected gradient on the penalized weighted slack, from `start`. Stops
/// once a window of `PG_PATIENCE` steps raises the best feasible score by no
/// more than the improvement tolerance.
fn projected_gradient(
    programs: &[StateProgram],
    block: &Block,
    start: &[Vec<f64>],
    gamma: f64,
    params: &PiParams,
) -> (Vec<Vec<f64>>, f64, bool) {
    let mut omega = start.to_vec();
    let mut best = start.to_vec();
    let mut best_score = f64::NEG_INFINITY;
    let mut window_best = f64::NEG_INFINITY;
    let min_gain = params.improvement_tol.max(1e-12);
    for it in 0..=params.pg_iters {
        let evals: Vec<(f64, Vec<(usize, Vec<f64>)>)> = block.states.iter().map(|&s| programs[s].value_and_gradient(&omega, gamma)).collect();
        let slack: Vec<f64> = block.states.iter().zip(&evals).map(|(&s, (v, _))| programs[s].vref - v).collect();
        if let Some(v) = score(programs, &block.states, &slack) {
            if v > best_score {
                best_score = v;
                best.clone_from(&omega);
            }
        }
        if it == 0 {
            window_best = best_score;
        } else if it % PG_PATIENCE == 0 {
            if !(best_score - window_best > min_gain) {
                return (best, best_score, true);
            }
            window_best = best_score;
        }
        if it == params.pg_iters {
            break;
        }
        // ascent direction of Σ w e_s − μ Σ (−e_s)+
        let mut dir: std::collections::BTreeMap<usize, Vec<f64>> = block.obs.iter().map(|&o| (o, vec![0.0; omega[o].len()])).collect();
        for ((&s, e), (_, grads)) in block.states.iter().zip(&slack).zip(evals) {
            let scale = programs[s].weight + if *e < 0.0 { PG_PENALTY } else { 0.0 };
            for (o, grad) in grads {
                for (d, g) in dir.get_mut(&o).expect("block observation").iter_mut().zip(grad) {
                    *d -= scale * g;
                }
            }
        }
        let norm = dir.values().flat_map(|v| v.iter()).map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return (best, best_score, true);
        }
        for (o, d) in dir {
            for (w, x) in omega[o].iter_mut().zip(d) {
                *w += params.pg_step * x / norm;
            }
            project_to_simplex(&mut omega[o]);
        }
    }
    (best, best_score, false)
}

fn state_programs(
    ctx: &Context,
    chain: &ProductChain,
    v: &[f64],
    fsc: &Fsc,
    g: usize,
    lambda: &[f64],
    occupancy: &[f64],
) -> Result<Vec<StateProgram>, SolverError> {
    let mdp = &ctx.pomdp.mdp;
    let (ns, na, ng) = (mdp.num_states, mdp.num_actions, fsc.num_istates);
    let gamma = mdp.discount;
    let width = ng * na;

    let mass: f64 = (0..ns).map(|s| occupancy[s * ng + g]).sum();
    let weight = |s: usize| {
        let share = if mass > 0.0 { occupancy[s * ng + g] / mass } else { 1.0 / ns as f64 };
        share + WEIGHT_FLOOR / ns as f64
    };

    let (vmin, vmax) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let global_range = vmax - vmin;
    let mut buf = Vec::new();
    let mut out = Vec::with_capacity(ns);
    for s in 0..ns {
        let cost: Vec<f64> = (0..width).map(|k| mdp.lagrangian_cost(s, k % na, lambda)).collect();
        let idx = s * ng + g;
        let entropic = match ctx.measure {
            RiskMeasure::Evar { epsilon } if epsilon < 1.0 && global_range > 1e-12 => Some(epsilon),
            _ => None,
        };
        let rhs = match (ctx.measure, entropic) {
            (_, Some(epsilon)) => {
                let eval = row_eval(&ctx.measure, v, &chain.transition[idx], &ctx.params.inner, &mut buf)?;
                let zeta = eval.zeta.unwrap_or(ctx.params.inner.zeta_max / global_range);
                let log_mgf = (0..width)
                    .map(|k| {
                        let (gn, a) = (k / na, k % na);
                        let succ = ctx.kernel.successors(s, a);
                        let m = succ.iter().map(|&(sn, _)| v[sn * ng + gn]).fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = succ.iter().map(|&(sn, t)| t * (zeta * (v[sn * ng + gn] - m)).exp()).sum();
                        zeta * m + z.ln()
                    })
                    .collect();
                Rhs::Entropic { cost, log_mgf, zeta, log_eps: epsilon.ln() }
            }
            (RiskMeasure::Cvar { epsilon }, None) => {
                let eval = row_eval(&ctx.measure, v, &chain.transition[idx], &ctx.params.inner, &mut buf)?;
                let zeta = eval.zeta.unwrap_or(eval.value);
                let lin = (0..width)
                    .map(|k| {
                        let (gn, a) = (k / na, k % na);
                        let tail: f64 = ctx
                            .kernel
                            .successors(s, a)
                            .iter()
                            .map(|&(sn, t)| t * (v[sn * ng + gn] - zeta).max(0.0))
                            .sum();
                        cost[k] + gamma * (zeta + tail / epsilon)
                    })
                    .collect();
                Rhs::Linear(lin)
            }
            _ => {
                let lin = (0..width)
                    .map(|k| {
                        let (gn, a) = (k / na, k % na);
                        let ev: f64 = ctx.kernel.successors(s, a).iter().map(|&(sn, t)| t * v[sn * ng + gn]).sum();
                        cost[k] + gamma * ev
                    })
                    .collect();
                Rhs::Linear(lin)
            }
        };
        let mut p = StateProgram { obs: ctx.pomdp.observations_of(s).collect(), rhs, vref: v[idx], weight: weight(s) };
        p.vref = p.vref.max(p.value(&fsc.omega[g], gamma));
        out.push(p);
    }
    Ok(out)
}

pub(crate) fn improve_with_context(
    ctx: &Context,
    chain: &ProductChain,
    v: &[f64],
    fsc: &Fsc,
    g: usize,
    lambda: &[f64],
    occupancy: &[f64],
    params: &PiParams,
) -> Result<IstateImprovement, SolverError> {
    let gamma = ctx.pomdp.mdp.discount;
    let width = fsc.num_istates * ctx.pomdp.mdp.num_actions;
    let programs = state_programs(ctx, chain, v, fsc, g, lambda, occupancy)?;
    let current = &fsc.omega[g];
    let mut rows = current.clone();
    let mut epsilon = 0.0f64;
    let mut changed = false;
    let mut converged = true;

    for block in blocks(ctx) {
        let base = score(&programs, &block.states, &slacks(&programs, &block.states, current, gamma)).unwrap_or(0.0);
        let linear = programs[block.states[0]].rhs.is_linear();
        let candidate = if linear {
            linear_program(&programs, &block, current, width, gamma, false)
        } else {
            let mut point = current.clone();
            let mut point_score = base;
            for _ in 0..TANGENT_ROUNDS {
                let Some(next) = linear_program(&programs, &block, &point, width, gamma, true) else { break };
                match score(&programs, &block.states, &slacks(&programs, &block.states, &next, gamma)) {
                    Some(s) if s > point_score + 1e-12 => {
                        point = next;
                        point_score = s;
                    }
                    _ => break,
                }
            }
            let (best, _, done) = projected_gradient(&programs, &block, &point, gamma, params);
            converged &= done;
            Some(best)
        };
        let Some(candidate) = candidate else { continue };
        let slack = slacks(&programs, &block.states, &candidate, gamma);
        if score(&programs, &block.states, &slack).is_none() {
            continue;
        }
        // improvement relative to the current rows, per state
        let before = slacks(&programs, &block.states, current, gamma);
        let gain = slack.iter().zip(&before).map(|(a, b)| a - b).fold(0.0, f64::max);
        if gain > params.improvement_tol {
            epsilon = epsilon.max(gain);
            for &o in &block.obs {
                rows[o] = candidate[o].clone();
            }
            changed = true;
        }
    }
    Ok(IstateImprovement { rows: changed.then_some(rows), epsilon, converged })
}

impl Rhs {
    fn is_linear(&self) -> bool {
        matches!(self, Rhs::Linear(_))
    }
}

/// Improvement program for I-state `g` of `fsc` at its current fixed point
/// `value` and multipliers `lambda`.
///
/// Fails with [`SolverError::SubproblemNotConverged`] when the EVaR projected
/// gradient exhausts `pg_iters` without settling.
pub fn improve_istate(
    pomdp: &crate::model::Pomdp,
    fsc: &Fsc,
    g: usize,
    value: &ProductValueFunction,
    lambda: &[f64],
    measure: &RiskMeasure,
    params: &PiParams,
) -> Result<IstateImprovement, SolverError> {
    let ctx = Context::new(pomdp, measure, &params.solver)?;
    ctx.check_fsc(fsc)?;
    ctx.check_lambda(lambda)?;
    if g >= fsc.num_istates || value.num_istates != fsc.num_istates || value.num_states != pomdp.mdp.num_states {
        return Err(SolverError::DimensionMismatch(format!(
            "I-state {g} or value shape {}x{} does not fit the controller",
            value.num_states, value.num_istates
        )));
    }
    let chain = ctx.chain(fsc);
    let occupancy = ctx.occupancy(&chain);
    let out = improve_with_context(&ctx, &chain, &value.values, fsc, g, lambda, &occupancy, params)?;
    if !out.converged {
        return Err(SolverError::SubproblemNotConverged { best_epsilon: out.epsilon });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testing::random_pomdp;
    use super::super::{evaluate_fsc, PiParams};
    use super::*;
    use crate::model::{Mdp, Pomdp};

    fn value_of(p: &Pomdp, fsc: &Fsc, m: &RiskMeasure) -> ProductValueFunction {
        evaluate_fsc(p, fsc, m, &[], &Default::default()).unwrap()
    }

    #[test]
    fn single_action_has_nothing_to_improve() {
        let p = random_pomdp(4, 3, 1, 2, 0);
        let fsc = Fsc::uniform(2, 1);
        for m in [RiskMeasure::Expectation, RiskMeasure::cvar(0.3).unwrap(), RiskMeasure::evar(0.3).unwrap()] {
            let v = value_of(&p, &fsc, &m);
            let r = improve_istate(&p, &fsc, 0, &v, &[], &m, &PiParams::default()).unwrap();
            assert!(r.rows.is_none());
            assert!(r.epsilon <= 1e-7);
        }
    }

    /// Two states, two actions: action 1 costs less everywhere with the same dynamics.
    fn dominated() -> Pomdp {
        let mdp = Mdp::new(
            vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![vec![0.3, 0.7], vec![0.3, 0.7]]],
            vec![1.0, 0.0],
            vec![vec![3.0, 1.0], vec![2.0, 0.5]],
            vec![],
            vec![],
            0.9,
        )
        .unwrap();
        Pomdp::new(mdp, vec![vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn dominated_action_is_dropped() {
        let p = dominated();
        let fsc = Fsc::uniform(2, 2);
        for m in [RiskMeasure::Expectation, RiskMeasure::cvar(0.4).unwrap(), RiskMeasure::evar(0.4).unwrap()] {
            let v = value_of(&p, &fsc, &m);
            let r = improve_istate(&p, &fsc, 0, &v, &[], &m, &PiParams::default()).unwrap();
            assert!(r.epsilon > 0.0, "{m}");
            let rows = r.rows.unwrap();
            for row in &rows {
                assert!((row[1] - 1.0).abs() < 1e-6, "{m}: {row:?}");
            }
            // exhaustive check over deterministic rows: all-B is the best one
            let best = (0..4)
                .map(|mask: usize| {
                    let f = Fsc::memoryless(&[mask & 1, (mask >> 1) & 1], 2);
                    (mask, value_of(&p, &f, &m).values.iter().sum::<f64>())
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(best.0, 3);
        }
    }

    /// Exhaustive search of the same frozen program over a grid of rows.
    #[test]
    fn expectation_program_matches_grid_search() {
        let mut improved = 0;
        for seed in 0..20 {
            // a single shared observation and two actions: the rows form a segment
            let mdp = crate::mdp_solver::testing::random_mdp(100 + seed, 2, 2, 0, 0.9);
            let p = Pomdp::new(mdp, vec![vec![1.0], vec![1.0]]).unwrap();
            let fsc = Fsc::uniform(1, 2);
            let m = RiskMeasure::Expectation;
            let v = value_of(&p, &fsc, &m);
            let ctx = Context::new(&p, &m, &Default::default()).unwrap();
            let chain = ctx.chain(&fsc);
            let occ = ctx.occupancy(&chain);
            let programs = state_programs(&ctx, &chain, &v.values, &fsc, 0, &[], &occ).unwrap();
            let states = [0usize, 1];
            let r = improve_with_context(&ctx, &chain, &v.values, &fsc, 0, &[], &occ, &PiParams::default()).unwrap();
            let rows = r.rows.clone().unwrap_or_else(|| fsc.omega[0].clone());
            let lp = score(&programs, &states, &slacks(&programs, &states, &rows, 0.9)).unwrap();
            let mut grid_best = f64::NEG_INFINITY;
            for i in 0..=10_000 {
                let x = i as f64 / 10_000.0;
                let omega = vec![vec![x, 1.0 - x]];
                if let Some(s) = score(&programs, &states, &slacks(&programs, &states, &omega, 0.9)) {
                    grid_best = grid_best.max(s);
                }
            }
            assert!(lp >= grid_best - 1e-9, "lp {lp} grid {grid_best}");
            assert!(lp - grid_best < 1e-3 + 1e-9, "lp {lp} grid {grid_best}");
            improved += usize::from(r.rows.is_some());
        }
        assert!(improved > 0);
    }

    #[test]
    fn improved_rows_are_stochastic() {
        for m in [RiskMeasure::Expectation, RiskMeasure::cvar(0.3).unwrap(), RiskMeasure::evar(0.3).unwrap()] {
            let p = random_pomdp(21, 4, 3, 3, 0);
            let fsc = Fsc::uniform(3, 3);
            let v = value_of(&p, &fsc, &m);
            let r = improve_istate(&p, &fsc, 0, &v, &[], &m, &PiParams::default()).unwrap();
            if let Some(rows) = r.rows {
                for row in rows {
                    assert!(row.iter().all(|x| *x >= 0.0));
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn blocks_follow_observation_support() {
        let mdp = crate::mdp_solver::testing::random_mdp(1, 3, 2, 0, 0.9);
        let p = Pomdp::new(mdp, vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.5], vec![0.0, 0.0, 1.0]]).unwrap();
        let ctx = Context::new(&p, &RiskMeasure::Expectation, &Default::default()).unwrap();
        let b = blocks(&ctx);
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].states.clone(), b[0].obs.clone()), (vec![0], vec![0]));
        assert_eq!((b[1].states.clone(), b[1].obs.clone()), (vec![1, 2], vec![1, 2]));
    }
}

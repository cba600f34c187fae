//! Controller growth by one-step greedy backups.
//!
//! A candidate I-state takes, for every observation, the single
//! (next I-state, action) pair minimizing the one-step backup
//! `a_{s,k} = c̃(s, α) + γ σ(V(·, g'), T(·|s, α))` averaged under a state
//! weighting. Weightings are tried in order: the discounted occupancy of the
//! current controller, uniform, then point masses on the most visited states.
//! A candidate is kept only if it beats every existing I-state at some state
//! and differs from all existing rows.

use super::{Context, ProductValueFunction};
use crate::mdp_solver::{row_risk, SolverError, SolverParams};
use crate::model::Fsc;
use crate::risk::RiskMeasure;

const DUPLICATE_TOL: f64 = 1e-9;
/// Usefulness margin for a new I-state.
const USEFUL_TOL: f64 = 1e-7;

fn same_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.iter().zip(b).all(|(x, y)| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= DUPLICATE_TOL))
}

pub(crate) fn grow_with_context(
    ctx: &Context,
    fsc: &Fsc,
    value: &ProductValueFunction,
    lambda: &[f64],
    n_new: usize,
    occupancy: &[f64],
    tol: f64,
) -> Result<(Fsc, usize), SolverError> {
    if n_new == 0 {
        return Ok((fsc.clone(), 0));
    }
    let pomdp = ctx.pomdp;
    let mdp = &pomdp.mdp;
    let (ns, na, ng, no) = (mdp.num_states, mdp.num_actions, fsc.num_istates, pomdp.num_observations);
    let width = ng * na;
    let v = &value.values;

    // one-step backups a[s][k]
    let mut buf = Vec::new();
    let mut succ = Vec::new();
    let mut backup = vec![vec![0.0; width]; ns];
    for s in 0..ns {
        for k in 0..width {
            let (gn, a) = (k / na, k % na);
            succ.clear();
            succ.extend(ctx.kernel.successors(s, a).iter().map(|&(sn, t)| (sn * ng + gn, t)));
            backup[s][k] = mdp.lagrangian_cost(s, a, lambda) + mdp.discount * row_risk(&ctx.measure, v, &succ, &ctx.params.inner, &mut buf)?;
        }
    }
    let best_existing: Vec<f64> = (0..ns).map(|s| (0..ng).map(|g| value.get(s, g)).fold(f64::INFINITY, f64::min)).collect();

    let marginal: Vec<f64> = (0..ns).map(|s| (0..ng).map(|g| occupancy[s * ng + g]).sum()).collect();
    let uniform = vec![1.0 / ns as f64; ns];
    let mut weightings = vec![marginal.clone(), uniform.clone()];
    let mut order: Vec<usize> = (0..ns).collect();
    order.sort_by(|&a, &b| marginal[b].total_cmp(&marginal[a]).then(a.cmp(&b)));
    weightings.extend(order.into_iter().map(|s| {
        let mut w = vec![0.0; ns];
        w[s] = 1.0;
        w
    }));

    let argmin_under = |b: &[f64], o: usize| -> Option<usize> {
        let mass: f64 = (0..ns).map(|s| b[s] * pomdp.observation[s][o]).sum();
        if mass <= 0.0 {
            return None;
        }
        let mut best = (f64::INFINITY, 0);
        for k in 0..width {
            let score: f64 = (0..ns).map(|s| b[s] * pomdp.observation[s][o] * backup[s][k]).sum();
            if score < best.0 {
                best = (score, k);
            }
        }
        Some(best.1)
    };

    let mut added: Vec<Vec<Vec<f64>>> = Vec::new();
    for b in &weightings {
        if added.len() >= n_new {
            break;
        }
        let choice: Vec<usize> = (0..no)
            .map(|o| argmin_under(b, o).or_else(|| argmin_under(&uniform, o)).unwrap_or(0))
            .collect();
        let useful = (0..ns).any(|s| {
            let q: f64 = pomdp.observations_of(s).map(|(o, po)| po * backup[s][choice[o]]).sum();
            q < best_existing[s] - tol.max(USEFUL_TOL)
        });
        if !useful {
            continue;
        }
        let rows: Vec<Vec<f64>> = choice
            .iter()
            .map(|&k| {
                let mut r = vec![0.0; width];
                r[k] = 1.0;
                r
            })
            .collect();
        if fsc.omega.iter().any(|existing| same_rows(existing, &rows)) || added.iter().any(|x| same_rows(x, &rows)) {
            continue;
        }
        added.push(rows);
    }

    let count = added.len();
    if count == 0 {
        return Ok((fsc.clone(), 0));
    }
    let new_width = (ng + count) * na;
    let extend = |r: &Vec<f64>| {
        let mut x = r.clone();
        x.resize(new_width, 0.0);
        x
    };
    let omega = fsc.omega.iter().chain(added.iter()).map(|rows| rows.iter().map(extend).collect()).collect();
    let mut kappa = fsc.kappa.clone();
    kappa.resize(ng + count, 0.0);
    Ok((Fsc { num_istates: ng + count, omega, kappa }, count))
}

/// Appends up to `n_new` greedy I-states to `fsc`; returns the grown
/// controller and how many were added.
pub fn add_istates(
    pomdp: &crate::model::Pomdp,
    fsc: &Fsc,
    value: &ProductValueFunction,
    lambda: &[f64],
    measure: &RiskMeasure,
    n_new: usize,
    params: &SolverParams,
) -> Result<(Fsc, usize), SolverError> {
    let ctx = Context::new(pomdp, measure, params)?;
    ctx.check_fsc(fsc)?;
    ctx.check_lambda(lambda)?;
    if value.num_istates != fsc.num_istates || value.num_states != pomdp.mdp.num_states {
        return Err(SolverError::DimensionMismatch(format!(
            "value shape {}x{} does not fit the controller",
            value.num_states, value.num_istates
        )));
    }
    let chain = ctx.chain(fsc);
    let occupancy = ctx.occupancy(&chain);
    grow_with_context(&ctx, fsc, value, lambda, n_new, &occupancy, USEFUL_TOL)
}

#[cfg(test)]
mod tests {
    use super::super::testing::random_pomdp;
    use super::super::evaluate_fsc;
    use super::*;
    use crate::model::{Mdp, Pomdp, Validate};

    fn grow(p: &Pomdp, fsc: &Fsc, n: usize) -> (Fsc, usize) {
        let m = RiskMeasure::Expectation;
        let v = evaluate_fsc(p, fsc, &m, &[], &Default::default()).unwrap();
        add_istates(p, fsc, &v, &[], &m, n, &Default::default()).unwrap()
    }

    #[test]
    fn zero_requested_is_identity() {
        let p = random_pomdp(1, 3, 2, 2, 0);
        let fsc = Fsc::uniform(2, 2);
        let (out, n) = grow(&p, &fsc, 0);
        assert_eq!(n, 0);
        assert_eq!(out, fsc);
    }

    #[test]
    fn single_action_single_observation_cannot_grow() {
        let p = random_pomdp(2, 3, 1, 1, 0);
        let fsc = Fsc::uniform(1, 1);
        let (out, n) = grow(&p, &fsc, 1);
        assert_eq!(n, 0);
        assert_eq!(out, fsc);
    }

    #[test]
    fn greedy_istate_is_appended() {
        // action 1 is cheaper everywhere; the uniform controller is beaten at every state
        let mdp = Mdp::new(
            vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![vec![0.3, 0.7], vec![0.3, 0.7]]],
            vec![1.0, 0.0],
            vec![vec![3.0, 1.0], vec![2.0, 0.5]],
            vec![],
            vec![],
            0.9,
        )
        .unwrap();
        let p = Pomdp::new(mdp, vec![vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
        let fsc = Fsc::uniform(2, 2);
        let (out, n) = grow(&p, &fsc, 1);
        assert_eq!(n, 1);
        assert_eq!(out.num_istates, 2);
        assert!(out.validate().is_valid());
        // new I-state plays action 1 and stays in the old I-state
        for row in &out.omega[1] {
            assert_eq!(row, &vec![0.0, 1.0, 0.0, 0.0]);
        }
        // old rows are padded with zeros for the new I-state
        for row in &out.omega[0] {
            assert_eq!(row, &vec![0.5, 0.5, 0.0, 0.0]);
        }
        assert_eq!(out.kappa, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_cost_never_grows() {
        let mut p = random_pomdp(3, 3, 2, 2, 0);
        p.mdp.stage_cost = vec![vec![0.0; 2]; 3];
        let (_, n) = grow(&p, &Fsc::uniform(2, 2), 2);
        assert_eq!(n, 0);
    }
}

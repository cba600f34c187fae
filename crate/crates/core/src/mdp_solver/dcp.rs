//! Export of the joint (V, λ) program as a difference-of-convex description.
//!
//! The program is
//!
//! ```text
//! minimize   f0(λ) − g0(V)            f0 = <λ, β>,  g0 = <κ0, V>
//! subject to f1(V) − g1(λ) − g2(V) ≤ 0 for every (s, a)
//!            f1 = V(s),  g1 = c(s,a) + <λ, d(s,a)>,  g2 = γ σ(V, T[s][a])
//!            λ ⪰ 0
//! ```
//!
//! where `g2` is linear for the expectation, a positive-part sum for CVaR and
//! a log-sum-exp term for EVaR. Each CVaR/EVaR record carries its own ζ.

use serde_json::{json, Value};

use crate::model::Mdp;
use crate::risk::RiskMeasure;

fn successor_terms(mdp: &Mdp, s: usize, a: usize) -> Vec<Value> {
    mdp.transition[s][a]
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(j, p)| json!({ "var": format!("V[{j}]"), "prob": p }))
        .collect()
}

fn risk_block(mdp: &Mdp, measure: &RiskMeasure, s: usize, a: usize) -> Value {
    let terms = successor_terms(mdp, s, a);
    let zeta = format!("zeta[{s},{a}]");
    match *measure {
        RiskMeasure::Expectation => json!({
            "curvature": "linear",
            "kind": "expectation",
            "scale": mdp.discount,
            "terms": terms,
        }),
        RiskMeasure::Cvar { epsilon } => json!({
            "curvature": "convex",
            "kind": "cvar",
            "scale": mdp.discount,
            "zeta": zeta,
            "positive_part": { "coefficient": 1.0 / epsilon, "terms": terms },
        }),
        RiskMeasure::Evar { epsilon } => json!({
            "curvature": "convex",
            "kind": "evar",
            "scale": mdp.discount,
            "zeta": zeta,
            "log_sum_exp": { "offset": -epsilon.ln(), "terms": terms },
        }),
    }
}

/// Builds the program description for `mdp` under `measure`.
pub fn export_dcp(mdp: &Mdp, measure: &RiskMeasure) -> Value {
    let (ns, na, nc) = (mdp.num_states, mdp.num_actions, mdp.num_constraints());
    let mut variables: Vec<Value> = (0..ns).map(|s| json!({ "name": format!("V[{s}]"), "kind": "value" })).collect();
    variables.extend((0..nc).map(|i| json!({ "name": format!("lambda[{i}]"), "kind": "multiplier", "lower": 0.0 })));
    if !matches!(measure, RiskMeasure::Expectation) {
        for s in 0..ns {
            for a in 0..na {
                let lower = if matches!(measure, RiskMeasure::Evar { .. }) { json!(0.0) } else { Value::Null };
                variables.push(json!({ "name": format!("zeta[{s},{a}]"), "kind": "auxiliary", "lower": lower }));
            }
        }
    }

    let mut constraints = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let lambda_terms: Vec<Value> = (0..nc)
                .map(|i| json!({ "var": format!("lambda[{i}]"), "coef": mdp.constraint_costs[i][s][a] }))
                .collect();
            constraints.push(json!({
                "state": s,
                "action": a,
                "f1": { "curvature": "linear", "terms": [{ "var": format!("V[{s}]"), "coef": 1.0 }] },
                "g1": { "curvature": "linear", "constant": mdp.stage_cost[s][a], "terms": lambda_terms },
                "g2": risk_block(mdp, measure, s, a),
            }));
        }
    }

    let f0: Vec<Value> =
        (0..nc).map(|i| json!({ "var": format!("lambda[{i}]"), "coef": mdp.budgets[i] })).collect();
    let g0: Vec<Value> = (0..ns)
        .filter(|&s| mdp.initial_dist[s] > 0.0)
        .map(|s| json!({ "var": format!("V[{s}]"), "coef": mdp.initial_dist[s] }))
        .collect();

    json!({
        "format": "riskplan-dcp",
        "version": 1,
        "measure": measure,
        "discount": mdp.discount,
        "num_states": ns,
        "num_actions": na,
        "num_constraints": nc,
        "variables": variables,
        "objective": {
            "sense": "minimize",
            "form": "f0 - g0",
            "f0": { "curvature": "linear", "terms": f0 },
            "g0": { "curvature": "linear", "terms": g0 },
        },
        "constraint_form": "f1 - g1 - g2 <= 0",
        "constraints": constraints,
    })
}

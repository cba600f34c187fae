//! Finite MDP / POMDP / finite-state-controller data model.
//!
//! All indices are dense and 0-based. Transition tensors are stored as
//! nested vectors `[s][a][s']` so they round-trip through the JSON model
//! format unchanged; solvers work on the sparse [`Kernel`] view instead.
//!
//! Product states of a POMDP closed with an FSC are indexed as
//! `s * |G| + g`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating probability vectors.
pub const PROB_TOL: f64 = 1e-9;

/// Normalizers at or below this value mean the conditioning event is impossible.
pub const NORMALIZER_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("observation {observation} has zero probability under the given belief")]
    ImpossibleObservation { observation: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A single violated model invariant, with the indices where it was found.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape { what: &'static str, expected: usize, found: usize },
    EmptySpace { what: &'static str },
    TransitionRowSum { state: usize, action: usize, sum: f64 },
    NegativeTransition { state: usize, action: usize, next: usize, value: f64 },
    InitialDistSum { sum: f64 },
    NegativeInitial { state: usize, value: f64 },
    StageCost { state: usize, action: usize, value: f64 },
    ConstraintCost { constraint: usize, state: usize, action: usize, value: f64 },
    Budget { constraint: usize, value: f64 },
    Discount { value: f64 },
    ObservationRowSum { state: usize, sum: f64 },
    NegativeObservation { state: usize, observation: usize, value: f64 },
    OmegaRowSum { istate: usize, observation: usize, sum: f64 },
    NegativeOmega { istate: usize, observation: usize, next_istate: usize, action: usize, value: f64 },
    KappaSum { sum: f64 },
    NegativeKappa { istate: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            Shape { what, expected, found } => {
                write!(f, "{what}: expected length {expected}, found {found}")
            }
            EmptySpace { what } => write!(f, "{what} must be nonempty"),
            TransitionRowSum { state, action, sum } => {
                write!(f, "transition row (s={state}, a={action}) sums to {sum}")
            }
            NegativeTransition { state, action, next, value } => {
                write!(f, "transition (s={state}, a={action}, s'={next}) = {value} is not a probability")
            }
            InitialDistSum { sum } => write!(f, "initial distribution sums to {sum}"),
            NegativeInitial { state, value } => {
                write!(f, "initial distribution entry s={state} = {value} is not a probability")
            }
            StageCost { state, action, value } => {
                write!(f, "stage cost (s={state}, a={action}) = {value} is negative or not finite")
            }
            ConstraintCost { constraint, state, action, value } => write!(
                f,
                "constraint cost {constraint} at (s={state}, a={action}) = {value} is negative or not finite"
            ),
            Budget { constraint, value } => {
                write!(f, "budget {constraint} = {value} must be positive and finite")
            }
            Discount { value } => write!(f, "discount {value} is outside (0, 1)"),
            ObservationRowSum { state, sum } => {
                write!(f, "observation row s={state} sums to {sum}")
            }
            NegativeObservation { state, observation, value } => {
                write!(f, "observation (s={state}, o={observation}) = {value} is not a probability")
            }
            OmegaRowSum { istate, observation, sum } => {
                write!(f, "controller row (g={istate}, o={observation}) sums to {sum}")
            }
            NegativeOmega { istate, observation, next_istate, action, value } => write!(
                f,
                "controller entry (g={istate}, o={observation}, g'={next_istate}, a={action}) = {value} is not a probability"
            ),
            KappaSum { sum } => write!(f, "initial I-state distribution sums to {sum}"),
            NegativeKappa { istate, value } => {
                write!(f, "initial I-state entry g={istate} = {value} is not a probability")
            }
        }
    }
}

/// List of violated invariants; empty for a valid model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    fn into_result(self) -> Result<(), ModelError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(ModelError::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

pub trait Validate {
    fn validate(&self) -> ValidationReport;
}

fn is_prob(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

fn is_cost(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

/// Finite controlled Markov process with stage costs, constraint costs and budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    /// `stage_cost[s][a]`
    pub stage_cost: Vec<Vec<f64>>,
    /// `constraint_costs[i][s][a]`
    #[serde(default)]
    pub constraint_costs: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub budgets: Vec<f64>,
    pub discount: f64,
}

impl Mdp {
    /// Builds and validates an MDP.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        initial_dist: Vec<f64>,
        stage_cost: Vec<Vec<f64>>,
        constraint_costs: Vec<Vec<Vec<f64>>>,
        budgets: Vec<f64>,
        discount: f64,
    ) -> Result<Self, ModelError> {
        let num_states = transition.len();
        let num_actions = transition.first().map_or(0, |r| r.len());
        let mdp = Mdp {
            num_states,
            num_actions,
            transition,
            initial_dist,
            stage_cost,
            constraint_costs,
            budgets,
            discount,
        };
        mdp.validate().into_result()?;
        Ok(mdp)
    }

    pub fn num_constraints(&self) -> usize {
        self.constraint_costs.len()
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let mdp: Mdp = serde_json::from_str(s)?;
        mdp.validate().into_result()?;
        Ok(mdp)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    /// Largest stage cost over all (s, a).
    pub fn max_stage_cost(&self) -> f64 {
        self.stage_cost.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Largest value of constraint cost `i`.
    pub fn max_constraint_cost(&self, i: usize) -> f64 {
        self.constraint_costs[i].iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Stage cost `c(s,a) + <lambda, d(s,a)>`.
    pub fn lagrangian_cost(&self, s: usize, a: usize, lambda: &[f64]) -> f64 {
        let mut c = self.stage_cost[s][a];
        for (i, l) in lambda.iter().enumerate() {
            if *l != 0.0 {
                c += l * self.constraint_costs[i][s][a];
            }
        }
        c
    }
}

impl Validate for Mdp {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 {
            r.push(Violation::EmptySpace { what: "state space" });
        }
        if na == 0 {
            r.push(Violation::EmptySpace { what: "action space" });
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            r.push(Violation::Discount { value: self.discount });
        }
        if self.transition.len() != ns {
            r.push(Violation::Shape { what: "transition", expected: ns, found: self.transition.len() });
        }
        for (s, rows) in self.transition.iter().enumerate() {
            if rows.len() != na {
                r.push(Violation::Shape { what: "transition[s]", expected: na, found: rows.len() });
                continue;
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != ns {
                    r.push(Violation::Shape { what: "transition[s][a]", expected: ns, found: row.len() });
                    continue;
                }
                for (next, &p) in row.iter().enumerate() {
                    if !is_prob(p) {
                        r.push(Violation::NegativeTransition { state: s, action: a, next, value: p });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL || !sum.is_finite() {
                    r.push(Violation::TransitionRowSum { state: s, action: a, sum });
                }
            }
        }
        if self.initial_dist.len() != ns {
            r.push(Violation::Shape { what: "initial_dist", expected: ns, found: self.initial_dist.len() });
        } else {
            for (s, &p) in self.initial_dist.iter().enumerate() {
                if !is_prob(p) {
                    r.push(Violation::NegativeInitial { state: s, value: p });
                }
            }
            let sum: f64 = self.initial_dist.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL || !sum.is_finite() {
                r.push(Violation::InitialDistSum { sum });
            }
        }
        if self.stage_cost.len() != ns {
            r.push(Violation::Shape { what: "stage_cost", expected: ns, found: self.stage_cost.len() });
        }
        for (s, row) in self.stage_cost.iter().enumerate() {
            if row.len() != na {
                r.push(Violation::Shape { what: "stage_cost[s]", expected: na, found: row.len() });
                continue;
            }
            for (a, &c) in row.iter().enumerate() {
                if !is_cost(c) {
                    r.push(Violation::StageCost { state: s, action: a, value: c });
                }
            }
        }
        if self.budgets.len() != self.constraint_costs.len() {
            r.push(Violation::Shape {
                what: "budgets",
                expected: self.constraint_costs.len(),
                found: self.budgets.len(),
            });
        }
        for (i, &b) in self.budgets.iter().enumerate() {
            if !(b.is_finite() && b > 0.0) {
                r.push(Violation::Budget { constraint: i, value: b });
            }
        }
        for (i, d) in self.constraint_costs.iter().enumerate() {
            if d.len() != ns {
                r.push(Violation::Shape { what: "constraint_costs[i]", expected: ns, found: d.len() });
                continue;
            }
            for (s, row) in d.iter().enumerate() {
                if row.len() != na {
                    r.push(Violation::Shape { what: "constraint_costs[i][s]", expected: na, found: row.len() });
                    continue;
                }
                for (a, &c) in row.iter().enumerate() {
                    if !is_cost(c) {
                        r.push(Violation::ConstraintCost { constraint: i, state: s, action: a, value: c });
                    }
                }
            }
        }
        r
    }
}

/// Sparse successor lists of an MDP, indexed by `s * |Act| + a`.
#[derive(Debug, Clone)]
pub struct Kernel {
    num_actions: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Kernel {
    pub fn from_mdp(mdp: &Mdp) -> Self {
        let mut rows = Vec::with_capacity(mdp.num_states * mdp.num_actions);
        for per_action in &mdp.transition {
            for row in per_action {
                rows.push(
                    row.iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(j, &p)| (j, p))
                        .collect(),
                );
            }
        }
        Kernel { num_actions: mdp.num_actions, rows }
    }

    /// Nonzero `(s', T(s'|s,a))` pairs in increasing `s'` order.
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[s * self.num_actions + a]
    }
}

/// POMDP: an MDP plus an observation model `observation[s][o] = O(o|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pomdp {
    #[serde(flatten)]
    pub mdp: Mdp,
    pub num_observations: usize,
    pub observation: Vec<Vec<f64>>,
}

impl Pomdp {
    pub fn new(mdp: Mdp, observation: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let num_observations = observation.first().map_or(0, |r| r.len());
        let p = Pomdp { mdp, num_observations, observation };
        p.validate().into_result()?;
        Ok(p)
    }

    /// Fully observable POMDP: `O = I`.
    pub fn fully_observable(mdp: Mdp) -> Result<Self, ModelError> {
        let n = mdp.num_states;
        let observation = (0..n)
            .map(|s| (0..n).map(|o| if o == s { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(mdp, observation)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let p: Pomdp = serde_json::from_str(s)?;
        p.validate().into_result()?;
        Ok(p)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    /// Nonzero `(o, O(o|s))` pairs.
    pub fn observations_of(&self, s: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.observation[s].iter().copied().enumerate().filter(|(_, p)| *p > 0.0)
    }
}

impl Validate for Pomdp {
    fn validate(&self) -> ValidationReport {
        let mut r = self.mdp.validate();
        if self.num_observations == 0 {
            r.push(Violation::EmptySpace { what: "observation space" });
        }
        if self.observation.len() != self.mdp.num_states {
            r.push(Violation::Shape {
                what: "observation",
                expected: self.mdp.num_states,
                found: self.observation.len(),
            });
        }
        for (s, row) in self.observation.iter().enumerate() {
            if row.len() != self.num_observations {
                r.push(Violation::Shape { what: "observation[s]", expected: self.num_observations, found: row.len() });
                continue;
            }
            for (o, &p) in row.iter().enumerate() {
                if !is_prob(p) {
                    r.push(Violation::NegativeObservation { state: s, observation: o, value: p });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL || !sum.is_finite() {
                r.push(Violation::ObservationRowSum { state: s, sum });
            }
        }
        r
    }
}

/// Probability vector over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !is_prob(*p)) || (sum - 1.0).abs() > PROB_TOL {
            return Err(ModelError::DimensionMismatch(format!(
                "belief must be a nonempty probability vector (sum {sum})"
            )));
        }
        Ok(Belief(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn from_unnormalized(mut w: Vec<f64>, observation: usize) -> Result<Self, ModelError> {
        let z: f64 = w.iter().sum();
        if !(z > NORMALIZER_FLOOR) {
            return Err(ModelError::ImpossibleObservation { observation });
        }
        for x in &mut w {
            *x /= z;
        }
        Ok(Belief(w))
    }
}

/// Bayes filter step: `b'(s) ∝ O(o|s) Σ_{s'} T(s|s',a) b(s')`.
pub fn belief_update(pomdp: &Pomdp, prior: &Belief, action: usize, observation: usize) -> Result<Belief, ModelError> {
    let n = pomdp.mdp.num_states;
    if prior.0.len() != n {
        return Err(ModelError::DimensionMismatch(format!("belief has {} entries, model has {n} states", prior.0.len())));
    }
    if action >= pomdp.mdp.num_actions {
        return Err(ModelError::IndexOutOfRange(format!("action {action}")));
    }
    if observation >= pomdp.num_observations {
        return Err(ModelError::IndexOutOfRange(format!("observation {observation}")));
    }
    let mut predicted = vec![0.0; n];
    for (sp, &b) in prior.0.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (s, &t) in pomdp.mdp.transition[sp][action].iter().enumerate() {
            predicted[s] += t * b;
        }
    }
    let w = predicted
        .iter()
        .enumerate()
        .map(|(s, &p)| pomdp.observation[s][observation] * p)
        .collect();
    Belief::from_unnormalized(w, observation)
}

/// Initial belief from the first observation: `b0(s) ∝ κ0(s) O(o0|s)`.
pub fn initial_belief(pomdp: &Pomdp, observation: usize) -> Result<Belief, ModelError> {
    if observation >= pomdp.num_observations {
        return Err(ModelError::IndexOutOfRange(format!("observation {observation}")));
    }
    let w = pomdp
        .mdp
        .initial_dist
        .iter()
        .enumerate()
        .map(|(s, &k)| k * pomdp.observation[s][observation])
        .collect();
    Belief::from_unnormalized(w, observation)
}

/// Stochastic finite-state controller.
///
/// `omega[g][o][g' * |Act| + a] = ω(g', a | g, o)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fsc {
    pub num_istates: usize,
    pub omega: Vec<Vec<Vec<f64>>>,
    pub kappa: Vec<f64>,
}

impl Fsc {
    pub fn new(omega: Vec<Vec<Vec<f64>>>, kappa: Vec<f64>) -> Result<Self, ModelError> {
        let fsc = Fsc { num_istates: omega.len(), omega, kappa };
        fsc.validate().into_result()?;
        Ok(fsc)
    }

    /// Single I-state controller choosing uniformly among actions.
    pub fn uniform(num_observations: usize, num_actions: usize) -> Self {
        let row = vec![1.0 / num_actions as f64; num_actions];
        Fsc { num_istates: 1, omega: vec![vec![row; num_observations]], kappa: vec![1.0] }
    }

    /// Single I-state controller taking `policy[o]` on observation `o`.
    pub fn memoryless(policy: &[usize], num_actions: usize) -> Self {
        let omega = policy
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; num_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Fsc { num_istates: 1, omega: vec![omega], kappa: vec![1.0] }
    }

    pub fn num_observations(&self) -> usize {
        self.omega.first().map_or(0, |r| r.len())
    }

    pub fn num_actions(&self) -> usize {
        if self.num_istates == 0 {
            return 0;
        }
        self.omega
            .first()
            .and_then(|r| r.first())
            .map_or(0, |row| row.len() / self.num_istates)
    }

    #[inline]
    pub fn prob(&self, g: usize, o: usize, next: usize, a: usize) -> f64 {
        self.omega[g][o][next * self.num_actions() + a]
    }

    /// Checks that the controller's alphabets match the POMDP's.
    pub fn check_compatible(&self, pomdp: &Pomdp) -> Result<(), ModelError> {
        if self.num_observations() != pomdp.num_observations || self.num_actions() != pomdp.mdp.num_actions {
            return Err(ModelError::DimensionMismatch(format!(
                "controller has |O|={}, |Act|={}; model has |O|={}, |Act|={}",
                self.num_observations(),
                self.num_actions(),
                pomdp.num_observations,
                pomdp.mdp.num_actions
            )));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let f: Fsc = serde_json::from_str(s)?;
        f.validate().into_result()?;
        Ok(f)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("controller serialization cannot fail")
    }
}

impl Validate for Fsc {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let ng = self.num_istates;
        if ng == 0 {
            r.push(Violation::EmptySpace { what: "I-state space" });
            return r;
        }
        if self.omega.len() != ng {
            r.push(Violation::Shape { what: "omega", expected: ng, found: self.omega.len() });
        }
        let no = self.num_observations();
        let width = self.omega.first().and_then(|r| r.first()).map_or(0, |row| row.len());
        if width == 0 || width % ng != 0 {
            r.push(Violation::Shape { what: "omega[g][o]", expected: ng, found: width });
            return r;
        }
        let na = width / ng;
        for (g, rows) in self.omega.iter().enumerate() {
            if rows.len() != no {
                r.push(Violation::Shape { what: "omega[g]", expected: no, found: rows.len() });
                continue;
            }
            for (o, row) in rows.iter().enumerate() {
                if row.len() != width {
                    r.push(Violation::Shape { what: "omega[g][o]", expected: width, found: row.len() });
                    continue;
                }
                for (k, &p) in row.iter().enumerate() {
                    if !is_prob(p) {
                        r.push(Violation::NegativeOmega {
                            istate: g,
                            observation: o,
                            next_istate: k / na,
                            action: k % na,
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL || !sum.is_finite() {
                    r.push(Violation::OmegaRowSum { istate: g, observation: o, sum });
                }
            }
        }
        if self.kappa.len() != ng {
            r.push(Violation::Shape { what: "kappa", expected: ng, found: self.kappa.len() });
        } else {
            for (g, &p) in self.kappa.iter().enumerate() {
                if !is_prob(p) {
                    r.push(Violation::NegativeKappa { istate: g, value: p });
                }
            }
            let sum: f64 = self.kappa.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL || !sum.is_finite() {
                r.push(Violation::KappaSum { sum });
            }
        }
        r
    }
}

/// Closed-loop Markov chain over `S × G`.
#[derive(Debug, Clone)]
pub struct ProductChain {
    pub num_states: usize,
    pub num_istates: usize,
    /// Sparse rows of `T^M`, successors in increasing product index.
    pub transition: Vec<Vec<(usize, f64)>>,
    pub initial_dist: Vec<f64>,
    pub lifted_cost: Vec<f64>,
    /// `lifted_constraint_costs[i][product]`
    pub lifted_constraint_costs: Vec<Vec<f64>>,
}

impl ProductChain {
    pub fn num_product_states(&self) -> usize {
        self.num_states * self.num_istates
    }

    #[inline]
    pub fn index(&self, s: usize, g: usize) -> usize {
        s * self.num_istates + g
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.num_product_states()];
        for &(j, p) in &self.transition[i] {
            row[j] = p;
        }
        row
    }

    /// Lifted `c + <lambda, d>` per product state.
    pub fn lagrangian_cost(&self, lambda: &[f64]) -> Vec<f64> {
        let mut c = self.lifted_cost.clone();
        for (i, l) in lambda.iter().enumerate() {
            if *l != 0.0 {
                for (x, d) in c.iter_mut().zip(&self.lifted_constraint_costs[i]) {
                    *x += l * d;
                }
            }
        }
        c
    }
}

/// `p(a | s, g) = Σ_o O(o|s) Σ_{g'} ω(g', a | g, o)`.
pub fn policy_action_distribution(pomdp: &Pomdp, fsc: &Fsc, s: usize, g: usize) -> Result<Vec<f64>, ModelError> {
    fsc.check_compatible(pomdp)?;
    if s >= pomdp.mdp.num_states || g >= fsc.num_istates {
        return Err(ModelError::IndexOutOfRange(format!("(s={s}, g={g})")));
    }
    Ok(action_marginal(pomdp, fsc, s, g))
}

pub(crate) fn action_marginal(pomdp: &Pomdp, fsc: &Fsc, s: usize, g: usize) -> Vec<f64> {
    let na = pomdp.mdp.num_actions;
    let mut p = vec![0.0; na];
    for (o, po) in pomdp.observations_of(s) {
        for (k, &w) in fsc.omega[g][o].iter().enumerate() {
            if w > 0.0 {
                p[k % na] += po * w;
            }
        }
    }
    p
}

/// Closes the loop around `pomdp` with `fsc`.
pub fn product_chain(pomdp: &Pomdp, fsc: &Fsc) -> Result<ProductChain, ModelError> {
    fsc.check_compatible(pomdp)?;
    let kernel = Kernel::from_mdp(&pomdp.mdp);
    Ok(product_chain_with_kernel(pomdp, &kernel, fsc))
}

pub(crate) fn product_chain_with_kernel(pomdp: &Pomdp, kernel: &Kernel, fsc: &Fsc) -> ProductChain {
    let mdp = &pomdp.mdp;
    let (ns, na, ng) = (mdp.num_states, mdp.num_actions, fsc.num_istates);
    let np = ns * ng;
    let nc = mdp.num_constraints();

    let mut transition = Vec::with_capacity(np);
    let mut lifted_cost = vec![0.0; np];
    let mut lifted_constraint_costs = vec![vec![0.0; np]; nc];
    let mut scratch = vec![0.0; np];
    let mut touched: Vec<usize> = Vec::new();

    for s in 0..ns {
        for g in 0..ng {
            let idx = s * ng + g;
            for (o, po) in pomdp.observations_of(s) {
                for (k, &w) in fsc.omega[g][o].iter().enumerate() {
                    if w <= 0.0 {
                        continue;
                    }
                    let (gn, a) = (k / na, k % na);
                    let weight = po * w;
                    lifted_cost[idx] += weight * mdp.stage_cost[s][a];
                    for i in 0..nc {
                        lifted_constraint_costs[i][idx] += weight * mdp.constraint_costs[i][s][a];
                    }
                    for &(sn, t) in kernel.successors(s, a) {
                        let j = sn * ng + gn;
                        if scratch[j] == 0.0 {
                            touched.push(j);
                        }
                        scratch[j] += weight * t;
                    }
                }
            }
            touched.sort_unstable();
            let row: Vec<(usize, f64)> = touched.iter().map(|&j| (j, scratch[j])).filter(|(_, p)| *p > 0.0).collect();
            for &j in &touched {
                scratch[j] = 0.0;
            }
            touched.clear();
            transition.push(row);
        }
    }

    let mut initial_dist = vec![0.0; np];
    for s in 0..ns {
        for g in 0..ng {
            initial_dist[s * ng + g] = mdp.initial_dist[s] * fsc.kappa[g];
        }
    }

    ProductChain {
        num_states: ns,
        num_istates: ng,
        transition,
        initial_dist,
        lifted_cost,
        lifted_constraint_costs,
    }
}

/// Grid cell `(x, y)` (0-based) to state index `x + m·y`.
pub fn cell_to_state(x: usize, y: usize, m: usize) -> usize {
    x + m * y
}

pub fn state_to_cell(s: usize, m: usize) -> (usize, usize) {
    (s % m, s / m)
}

/// 1-based grid coordinates to 0-based state index.
pub fn one_based_cell_to_state(x: usize, y: usize, m: usize) -> Option<usize> {
    if x == 0 || y == 0 || x > m {
        return None;
    }
    Some(cell_to_state(x - 1, y - 1, m))
}

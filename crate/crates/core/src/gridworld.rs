//! Rover navigation benchmark on an `M × N` grid.
//!
//! Cells are indexed `s = x + M·y` with `x ∈ 0..M`, `y ∈ 0..N` and `y = 0` the
//! bottom row. Eight compass actions move to the intended neighbour with
//! probability `intent_prob`; the rest is spread uniformly over the other
//! neighbours that exist. Obstacles are cost regions, not walls: entering one
//! costs `obstacle_cost` every step spent there and motion continues. The goal
//! is absorbing and free.
//!
//! The POMDP variant observes its own cell unless it borders an obstacle, in
//! which case it sees the obstacle's cell with probability `detect_prob` and
//! one of the obstacle's neighbours otherwise. Both adjacency relations of the
//! observation model are the 4-neighbourhood; dynamics and obstacle
//! perturbations use the 8-neighbourhood.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{cell_to_state, state_to_cell, Mdp, ModelError, Pomdp};

/// Compass actions in index order.
pub const ACTIONS: [(&str, i64, i64); 8] = [
    ("E", 1, 0),
    ("W", -1, 0),
    ("N", 0, 1),
    ("S", 0, -1),
    ("NE", 1, 1),
    ("NW", -1, 1),
    ("SE", 1, -1),
    ("SW", -1, -1),
];

const LAYOUT_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("no layout with a free path and {needed} isolated obstacles after {attempts} attempts")]
    NoFeasibleLayout { attempts: usize, needed: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Cells along x (`M`).
    pub rows: usize,
    /// Cells along y (`N`).
    pub cols: usize,
    pub obstacle_density: f64,
    /// Goal cell `[x, y]`.
    pub goal: (usize, usize),
    /// Start cell `[x, y]`; the initial distribution is one-hot here.
    pub start: (usize, usize),
    pub intent_prob: f64,
    pub slip_prob: f64,
    pub obstacle_cost: f64,
    pub step_cost: f64,
    pub goal_cost: f64,
    pub discount: f64,
    pub detect_prob: f64,
    pub n_uncertain: usize,
    pub perturb_prob: f64,
    /// Fuel budget for the single constraint.
    pub budget: f64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rows: 10,
            cols: 10,
            obstacle_density: 0.25,
            goal: (9, 9),
            start: (1, 0),
            intent_prob: 0.7,
            slip_prob: 0.3,
            obstacle_cost: 10.0,
            step_cost: 2.0,
            goal_cost: 0.0,
            discount: 0.95,
            detect_prob: 0.6,
            n_uncertain: 0,
            perturb_prob: 0.3,
            budget: 50.0,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn num_obstacles(&self) -> usize {
        (self.obstacle_density * self.num_cells() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: String| Err(GridError::InvalidSpec(m));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("grid must be nonempty, got {}x{}", self.rows, self.cols));
        }
        if !(0.0..1.0).contains(&self.obstacle_density) {
            return bad(format!("obstacle_density must lie in [0, 1), got {}", self.obstacle_density));
        }
        for (name, (x, y)) in [("goal", self.goal), ("start", self.start)] {
            if x >= self.rows || y >= self.cols {
                return bad(format!("{name} ({x}, {y}) lies outside the {}x{} grid", self.rows, self.cols));
            }
        }
        let probs = [
            ("intent_prob", self.intent_prob),
            ("slip_prob", self.slip_prob),
            ("detect_prob", self.detect_prob),
            ("perturb_prob", self.perturb_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if (self.intent_prob + self.slip_prob - 1.0).abs() > 1e-12 {
            return bad(format!("intent_prob + slip_prob = {}, expected 1", self.intent_prob + self.slip_prob));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        for (name, c) in [("obstacle_cost", self.obstacle_cost), ("step_cost", self.step_cost), ("goal_cost", self.goal_cost), ("budget", self.budget)] {
            if !c.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        let reserved = if self.start == self.goal { 1 } else { 2 };
        if self.num_obstacles() + reserved > self.num_cells() {
            return bad(format!("{} obstacles do not fit with start and goal", self.num_obstacles()));
        }
        if self.n_uncertain > self.num_obstacles() {
            return bad(format!("n_uncertain {} exceeds obstacle count {}", self.n_uncertain, self.num_obstacles()));
        }
        Ok(())
    }

    fn state(&self, (x, y): (usize, usize)) -> usize {
        cell_to_state(x, y, self.rows)
    }

    fn neighbours(&self, s: usize, offsets: &[(i64, i64)]) -> Vec<usize> {
        let (x, y) = state_to_cell(s, self.rows);
        offsets
            .iter()
            .filter_map(|&(dx, dy)| self.offset(x, y, dx, dy))
            .collect()
    }

    fn offset(&self, x: usize, y: usize, dx: i64, dy: i64) -> Option<usize> {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        (nx >= 0 && ny >= 0 && (nx as usize) < self.rows && (ny as usize) < self.cols)
            .then(|| cell_to_state(nx as usize, ny as usize, self.rows))
    }

    /// Existing 8-neighbours of `s`, in action order.
    pub fn neighbours8(&self, s: usize) -> Vec<usize> {
        let offsets: Vec<(i64, i64)> = ACTIONS.iter().map(|&(_, dx, dy)| (dx, dy)).collect();
        self.neighbours(s, &offsets)
    }

    /// Existing 4-neighbours of `s` (E, W, N, S).
    pub fn neighbours4(&self, s: usize) -> Vec<usize> {
        self.neighbours(s, &[(1, 0), (-1, 0), (0, 1), (0, -1)])
    }
}

/// Obstacle placement for one grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub obstacles: Vec<bool>,
    /// Isolated obstacles subject to perturbation, in increasing cell order.
    pub uncertain: Vec<usize>,
}

impl Layout {
    pub fn obstacle_cells(&self) -> Vec<usize> {
        (0..self.obstacles.len()).filter(|&s| self.obstacles[s]).collect()
    }
}

fn isolated(spec: &GridSpec, obstacles: &[bool], s: usize) -> bool {
    obstacles[s] && spec.neighbours8(s).iter().all(|&n| !obstacles[n])
}

/// Whether the goal is reachable from the start through obstacle-free cells.
fn connected(spec: &GridSpec, obstacles: &[bool]) -> bool {
    let (start, goal) = (spec.state(spec.start), spec.state(spec.goal));
    let mut seen = vec![false; obstacles.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(s) = stack.pop() {
        if s == goal {
            return true;
        }
        for n in spec.neighbours8(s) {
            if !seen[n] && !obstacles[n] {
                seen[n] = true;
                stack.push(n);
            }
        }
    }
    false
}

/// Seeded obstacle placement, resampled until the start reaches the goal and
/// enough isolated obstacles exist.
pub fn generate_layout(spec: &GridSpec) -> Result<Layout, GridError> {
    spec.validate()?;
    let n = spec.num_cells();
    let (start, goal) = (spec.state(spec.start), spec.state(spec.goal));
    let mut candidates: Vec<usize> = (0..n).filter(|&s| s != start && s != goal).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..LAYOUT_ATTEMPTS {
        let (chosen, _) = candidates.partial_shuffle(&mut rng, spec.num_obstacles());
        let mut obstacles = vec![false; n];
        for &s in chosen.iter() {
            obstacles[s] = true;
        }
        if !connected(spec, &obstacles) {
            continue;
        }
        let uncertain: Vec<usize> = (0..n).filter(|&s| isolated(spec, &obstacles, s)).take(spec.n_uncertain).collect();
        if uncertain.len() < spec.n_uncertain {
            continue;
        }
        return Ok(Layout { obstacles, uncertain });
    }
    Err(GridError::NoFeasibleLayout { attempts: LAYOUT_ATTEMPTS, needed: spec.n_uncertain })
}

/// Moves each uncertain obstacle to a uniformly chosen 8-neighbour other than
/// the goal with probability `perturb_prob`.
pub fn perturb_layout(spec: &GridSpec, layout: &Layout, trial_seed: u64) -> Layout {
    let goal = spec.state(spec.goal);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let mut obstacles = layout.obstacles.clone();
    let mut uncertain = Vec::with_capacity(layout.uncertain.len());
    for &s in &layout.uncertain {
        let u: f64 = rng.gen();
        let moved = if u < spec.perturb_prob {
            // the goal stays free
            let nb: Vec<usize> = spec.neighbours8(s).into_iter().filter(|&t| t != goal).collect();
            if nb.is_empty() {
                s
            } else {
                nb[rng.gen_range(0..nb.len())]
            }
        } else {
            s
        };
        obstacles[s] = false;
        uncertain.push(moved);
    }
    for &s in &uncertain {
        obstacles[s] = true;
    }
    uncertain.sort_unstable();
    Layout { obstacles, uncertain }
}

fn transitions(spec: &GridSpec) -> Vec<Vec<Vec<f64>>> {
    let n = spec.num_cells();
    let goal = spec.state(spec.goal);
    (0..n)
        .map(|s| {
            let (x, y) = state_to_cell(s, spec.rows);
            let nb = spec.neighbours8(s);
            ACTIONS
                .iter()
                .map(|&(_, dx, dy)| {
                    let mut row = vec![0.0; n];
                    if s == goal {
                        row[s] = 1.0;
                        return row;
                    }
                    match spec.offset(x, y, dx, dy) {
                        Some(target) => {
                            row[target] += spec.intent_prob;
                            let others: Vec<usize> = nb.iter().copied().filter(|&t| t != target).collect();
                            if others.is_empty() {
                                row[target] += spec.slip_prob;
                            } else {
                                for t in &others {
                                    row[*t] += spec.slip_prob / others.len() as f64;
                                }
                            }
                        }
                        None => {
                            row[s] += spec.intent_prob;
                            if nb.is_empty() {
                                row[s] += spec.slip_prob;
                            } else {
                                for t in &nb {
                                    row[*t] += spec.slip_prob / nb.len() as f64;
                                }
                            }
                        }
                    }
                    row
                })
                .collect()
        })
        .collect()
}

/// Builds the MDP for an explicit layout.
pub fn build_mdp_with_layout(spec: &GridSpec, layout: &Layout) -> Result<Mdp, GridError> {
    spec.validate()?;
    let n = spec.num_cells();
    let na = ACTIONS.len();
    let goal = spec.state(spec.goal);
    let stage_cost = (0..n)
        .map(|s| {
            let c = if s == goal {
                spec.goal_cost
            } else if layout.obstacles[s] {
                spec.obstacle_cost
            } else {
                spec.step_cost
            };
            vec![c; na]
        })
        .collect();
    let fuel = (0..n).map(|s| vec![if s == goal { 0.0 } else { spec.step_cost }; na]).collect();
    let mut initial = vec![0.0; n];
    initial[spec.state(spec.start)] = 1.0;
    Ok(Mdp::new(transitions(spec), initial, stage_cost, vec![fuel], vec![spec.budget], spec.discount)?)
}

fn observations(spec: &GridSpec, layout: &Layout) -> Vec<Vec<f64>> {
    let n = spec.num_cells();
    (0..n)
        .map(|s| {
            let mut row = vec![0.0; n];
            let near: Vec<usize> = spec.neighbours4(s).into_iter().filter(|&t| layout.obstacles[t]).collect();
            if near.is_empty() {
                row[s] = 1.0;
                return row;
            }
            // average of the per-obstacle observation distributions
            let share = 1.0 / near.len() as f64;
            for &ob in &near {
                let nb = spec.neighbours4(ob);
                row[ob] += share * spec.detect_prob;
                for &t in &nb {
                    row[t] += share * (1.0 - spec.detect_prob) / nb.len() as f64;
                }
            }
            row
        })
        .collect()
}

/// Builds the POMDP for an explicit layout.
pub fn build_pomdp_with_layout(spec: &GridSpec, layout: &Layout) -> Result<Pomdp, GridError> {
    let mdp = build_mdp_with_layout(spec, layout)?;
    Ok(Pomdp::new(mdp, observations(spec, layout))?)
}

pub fn build_mdp(spec: &GridSpec) -> Result<Mdp, GridError> {
    build_mdp_with_layout(spec, &generate_layout(spec)?)
}

pub fn build_pomdp(spec: &GridSpec) -> Result<Pomdp, GridError> {
    build_pomdp_with_layout(spec, &generate_layout(spec)?)
}

/// The base layout with uncertain obstacles perturbed under `trial_seed`.
pub fn perturb_obstacles(spec: &GridSpec, trial_seed: u64) -> Result<Mdp, GridError> {
    let layout = perturb_layout(spec, &generate_layout(spec)?, trial_seed);
    build_mdp_with_layout(spec, &layout)
}

/// POMDP counterpart of [`perturb_obstacles`].
pub fn perturb_obstacles_pomdp(spec: &GridSpec, trial_seed: u64) -> Result<Pomdp, GridError> {
    let layout = perturb_layout(spec, &generate_layout(spec)?, trial_seed);
    build_pomdp_with_layout(spec, &layout)
}

/// Layout mask as CSV with one row per cell in state order.
pub fn layout_csv(spec: &GridSpec, layout: &Layout) -> String {
    let (start, goal) = (spec.state(spec.start), spec.state(spec.goal));
    let mut out = String::from("x,y,obstacle,uncertain,start,goal\n");
    for s in 0..spec.num_cells() {
        let (x, y) = state_to_cell(s, spec.rows);
        out.push_str(&format!(
            "{x},{y},{},{},{},{}\n",
            u8::from(layout.obstacles[s]),
            u8::from(layout.uncertain.contains(&s)),
            u8::from(s == start),
            u8::from(s == goal)
        ));
    }
    out
}

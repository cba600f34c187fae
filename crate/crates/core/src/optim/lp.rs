//! Linear programs in the form used by the improvement step, solved with the
//! sparse revised simplex of `microlp`.
//!
//! Maximizes `cᵀx` subject to linear rows and `x ≥ 0`.

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coefficients: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    /// Objective coefficients, maximized.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram { objective, constraints: Vec::new() }
    }

    pub fn add(&mut self, coefficients: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coefficients, relation, rhs });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("constraint {row} has {found} coefficients, expected {expected}")]
    Shape { row: usize, expected: usize, found: usize },
    #[error("LP backend failure: {0}")]
    Backend(String),
}

/// Solves `lp`. Zero coefficients are dropped before the problem reaches the
/// sparse backend.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    let n = lp.objective.len();
    for (row, c) in lp.constraints.iter().enumerate() {
        if c.coefficients.len() != n {
            return Err(LpError::Shape { row, expected: n, found: c.coefficients.len() });
        }
    }
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = lp.objective.iter().map(|&c| problem.add_var(c, (0.0, f64::INFINITY))).collect();
    for c in &lp.constraints {
        let terms: Vec<_> = c.coefficients.iter().zip(&vars).filter(|(a, _)| **a != 0.0).map(|(&a, &v)| (v, a)).collect();
        let op = match c.relation {
            Relation::Le => ComparisonOp::Le,
            Relation::Eq => ComparisonOp::Eq,
            Relation::Ge => ComparisonOp::Ge,
        };
        problem.add_constraint(terms.as_slice(), op, c.rhs);
    }
    match problem.solve() {
        Ok(SolveOutcome::Solution(sol)) => {
            let x: Vec<f64> = vars.iter().map(|&v| sol.var_value(v).max(0.0)).collect();
            let value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            Ok(LpOutcome::Optimal { x, value })
        }
        Ok(SolveOutcome::Interrupted(_)) => Err(LpError::Backend("solve interrupted".into())),
        Err(microlp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
        Err(microlp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
        Err(e) => Err(LpError::Backend(format!("{e:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(o: LpOutcome) -> (Vec<f64>, f64) {
        match o {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let mut lp = LinearProgram::new(vec![3.0, 5.0]);
        lp.add(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, v) = optimal(solve(&lp).unwrap());
        assert!((v - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max −x − 2y with x + y = 1, x ≥ 0.3 → x = 1
        let mut lp = LinearProgram::new(vec![-1.0, -2.0]);
        lp.add(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add(vec![1.0, 0.0], Relation::Ge, 0.3);
        let (x, v) = optimal(solve(&lp).unwrap());
        assert!((v + 1.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add(vec![1.0], Relation::Le, 1.0);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        assert_eq!(solve(&lp).unwrap(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new(vec![1.0, 0.0]);
        lp.add(vec![0.0, 1.0], Relation::Le, 1.0);
        assert_eq!(solve(&lp).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn negative_rhs() {
        // max x s.t. −x ≥ −3
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add(vec![-1.0], Relation::Ge, -3.0);
        let (x, _) = optimal(solve(&lp).unwrap());
        assert!((x[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add(vec![2.0, 2.0], Relation::Eq, 2.0);
        let (_, v) = optimal(solve(&lp).unwrap());
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example, which cycles under the plain largest-coefficient rule
        let mut lp = LinearProgram::new(vec![0.75, -150.0, 0.02, -6.0]);
        lp.add(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0);
        lp.add(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0);
        lp.add(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let (_, v) = optimal(solve(&lp).unwrap());
        assert!((v - 0.05).abs() < 1e-9);
    }

    #[test]
    fn shape_is_checked() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add(vec![1.0], Relation::Le, 1.0);
        assert_eq!(solve(&lp), Err(LpError::Shape { row: 0, expected: 2, found: 1 }));
    }
}

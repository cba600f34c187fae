//! Outer maximization of the Lagrangian bound over λ ⪰ 0.
//!
//! Phase one is projected subgradient ascent with step `step0/√(k+1)`. It stops
//! once complementary slackness holds or, with one constraint, as soon as the
//! residual sign has been bracketed. Phase two bisects each multiplier on the
//! sign of its residual, doubling first when no upper end is known.

use super::{DualIterate, SolveStatus, SolverError, SolverParams};

pub(crate) struct DualEval {
    pub lower_bound: f64,
    pub residuals: Vec<f64>,
}

pub(crate) struct DualRun {
    pub best_lambda: Vec<f64>,
    pub trace: Vec<DualIterate>,
    pub status: SolveStatus,
}

struct Search<F> {
    eval: F,
    params: SolverParams,
    slack: f64,
    trace: Vec<DualIterate>,
    best: Option<(f64, Vec<f64>)>,
    over_cap: Vec<usize>,
    infeasible: bool,
}

impl<F> Search<F>
where
    F: FnMut(&[f64]) -> Result<DualEval, SolverError>,
{
    fn evaluate(&mut self, lambda: &[f64]) -> Result<Vec<f64>, SolverError> {
        let DualEval { lower_bound, residuals } = (self.eval)(lambda)?;
        for (i, g) in residuals.iter().enumerate() {
            if lambda[i] > self.params.lambda_cap && *g > self.slack {
                self.over_cap[i] += 1;
                if self.over_cap[i] >= 10 {
                    self.infeasible = true;
                }
            } else {
                self.over_cap[i] = 0;
            }
        }
        self.trace.push(DualIterate { lambda: lambda.to_vec(), lower_bound, residuals: residuals.clone() });
        if self.best.as_ref().map_or(true, |(lb, _)| lower_bound > *lb) {
            self.best = Some((lower_bound, lambda.to_vec()));
        }
        Ok(residuals)
    }

    fn violated(&self, g: f64) -> bool {
        g > self.slack
    }

    /// Bisection on multiplier `i` with the others fixed; false if the bracket
    /// could not be closed.
    fn polish(
        &mut self,
        lambda: &mut [f64],
        i: usize,
        mut lo: f64,
        mut hi: Option<f64>,
        lo_known_violated: bool,
    ) -> Result<bool, SolverError> {
        if hi.is_none() && !lo_known_violated {
            lambda[i] = lo;
            let g = self.evaluate(lambda)?[i];
            if !self.violated(g) {
                return Ok(true);
            }
        }
        if hi.is_none() {
            let mut probe = (2.0 * lo).max(1.0);
            loop {
                lambda[i] = probe;
                let g = self.evaluate(lambda)?[i];
                if self.infeasible {
                    return Ok(false);
                }
                if self.violated(g) {
                    lo = probe;
                    probe *= 2.0;
                } else {
                    hi = Some(probe);
                    break;
                }
            }
        }
        let mut hi = hi.expect("bracket upper end set above");
        for _ in 0..self.params.polish_iters {
            if hi - lo <= 1e-12 * hi.max(1.0) {
                break;
            }
            lambda[i] = 0.5 * (lo + hi);
            let g = self.evaluate(lambda)?[i];
            if self.violated(g) {
                lo = lambda[i];
            } else {
                hi = lambda[i];
            }
        }
        lambda[i] = hi;
        Ok(true)
    }
}

/// Maximizes the bound returned by `eval`. The best multiplier vector is the
/// first one attaining the largest bound.
pub(crate) fn dual_ascent<F>(nc: usize, params: &SolverParams, slack: f64, eval: F) -> Result<DualRun, SolverError>
where
    F: FnMut(&[f64]) -> Result<DualEval, SolverError>,
{
    let mut search = Search {
        eval,
        params: *params,
        slack,
        trace: Vec::new(),
        best: None,
        over_cap: vec![0; nc],
        infeasible: false,
    };

    let mut lambda = vec![0.0; nc];
    // per-multiplier bracket: largest λ_i seen violated, smallest λ_i seen satisfied
    let mut lo = vec![0.0f64; nc];
    let mut hi: Vec<Option<f64>> = vec![None; nc];
    let mut status = SolveStatus::IterationCap;

    for k in 0..params.dual_iters.max(1) {
        let g = search.evaluate(&lambda)?;
        if search.infeasible {
            status = SolveStatus::InfeasibleSuspected;
            break;
        }
        let complementary = g
            .iter()
            .zip(&lambda)
            .all(|(gi, li)| !search.violated(*gi) && (*li == 0.0 || gi.abs() <= search.slack));
        if complementary {
            status = SolveStatus::Converged;
            break;
        }
        for i in 0..nc {
            if search.violated(g[i]) {
                lo[i] = lo[i].max(lambda[i]);
            } else if lambda[i] > 0.0 {
                hi[i] = Some(hi[i].map_or(lambda[i], |h: f64| h.min(lambda[i])));
            }
        }
        if nc == 1 && hi[0].is_some() {
            break;
        }
        let step = params.dual_step0 / ((k + 1) as f64).sqrt();
        for i in 0..nc {
            lambda[i] = (lambda[i] + step * g[i]).max(0.0);
        }
    }

    if status == SolveStatus::IterationCap && nc > 0 {
        let sweeps = if nc == 1 { 1 } else { 4 };
        let mut closed = true;
        if let Some((_, best_lambda)) = &search.best {
            lambda = best_lambda.clone();
        }
        'sweeps: for _ in 0..sweeps {
            for i in 0..nc {
                closed &= if nc == 1 {
                    search.polish(&mut lambda, i, lo[i], hi[i], true)?
                } else {
                    search.polish(&mut lambda, i, 0.0, None, false)?
                };
                if search.infeasible {
                    break 'sweeps;
                }
            }
        }
        status = if search.infeasible {
            SolveStatus::InfeasibleSuspected
        } else if closed {
            SolveStatus::Converged
        } else {
            SolveStatus::IterationCap
        };
    }

    let (_, best_lambda) = search.best.expect("at least one dual iterate is evaluated");
    Ok(DualRun { best_lambda, trace: search.trace, status })
}

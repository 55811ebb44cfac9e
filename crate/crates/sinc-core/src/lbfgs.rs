//! Bounded-memory quasi-Newton minimizer with Armijo backtracking.
//!
//! Tailored to the latent-row subproblems: dense low-dimensional objectives
//! whose gradient is cheap once the objective has been evaluated, so every
//! evaluation returns both. History pairs that fail the curvature condition
//! are dropped rather than repaired.

use std::collections::VecDeque;

use crate::error::SincError;
use crate::model::LbfgsSettings;

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK_FACTOR: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
/// Pairs with s.y below this times |s||y| carry no curvature information.
const CURVATURE_EPS: f64 = 1e-10;

/// Result of a minimization run. `x` is the best accepted iterate; its
/// objective value never exceeds the starting value.
#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    /// Gradient infinity norm fell below the tolerance.
    pub converged: bool,
    /// Backtracking ran out of shrinks; `x` holds the last accepted iterate.
    pub line_search_failed: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Two-loop recursion: returns the search direction -H g using the stored
/// curvature pairs, scaling the seed matrix by s.y / y.y of the newest pair.
fn search_direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    if history.is_empty() {
        return d;
    }
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &d);
        for (di, yi) in d.iter_mut().zip(y) {
            *di -= a * yi;
        }
        alphas.push(a);
    }
    let (s_last, y_last, _) = history.back().expect("history non-empty");
    let gamma = dot(s_last, y_last) / dot(y_last, y_last);
    for di in d.iter_mut() {
        *di *= gamma;
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &d);
        for (di, si) in d.iter_mut().zip(s) {
            *di += (a - b) * si;
        }
    }
    d
}

/// Minimizes a smooth objective from `x0`. `eval` must write the gradient at
/// `x` into its second argument and return the objective value.
///
/// Returns `NonFiniteResult` only when the objective is non-finite at the
/// starting point; non-finite trial values during the line search just force
/// a shorter step.
pub fn minimize<F>(
    mut eval: F,
    x0: &[f64],
    settings: &LbfgsSettings,
) -> Result<LbfgsOutcome, SincError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; dim];
    let mut f = eval(&x, &mut g);
    let mut evals = 1usize;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(SincError::NonFiniteResult("objective at starting point"));
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut first_step = true;
    let mut converged = inf_norm(&g) <= settings.grad_tol;
    let mut line_search_failed = false;

    let mut g_new = vec![0.0; dim];
    while !converged && evals < settings.max_evals {
        let mut d = search_direction(&g, &history);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) || slope.is_nan() {
            // Numerical breakdown of the metric; fall back to steepest descent.
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                break;
            }
        }

        let mut alpha = if first_step {
            (1.0 / inf_norm(&g).max(1.0)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut x_new = vec![0.0; dim];
        let mut f_new = f64::INFINITY;
        for _ in 0..MAX_BACKTRACKS {
            if evals >= settings.max_evals {
                break;
            }
            for i in 0..dim {
                x_new[i] = x[i] + alpha * d[i];
            }
            f_new = eval(&x_new, &mut g_new);
            evals += 1;
            if f_new.is_finite()
                && g_new.iter().all(|v| v.is_finite())
                && f_new <= f + ARMIJO_C1 * alpha * slope
            {
                accepted = true;
                break;
            }
            alpha *= BACKTRACK_FACTOR;
        }
        if !accepted {
            if evals < settings.max_evals {
                line_search_failed = true;
            }
            break;
        }
        first_step = false;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > CURVATURE_EPS * s_norm * y_norm {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;
        converged = inf_norm(&g) <= settings.grad_tol;
    }

    Ok(LbfgsOutcome {
        x,
        f,
        evals,
        converged,
        line_search_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn settings() -> LbfgsSettings {
        LbfgsSettings::default()
    }

    #[test]
    fn quadratic_reaches_exact_minimum() {
        // f(x) = 0.5 sum c_i (x_i - t_i)^2 with distinct curvatures.
        let c = [1.0, 4.0, 9.0, 0.5];
        let t = [1.0, -2.0, 0.5, 3.0];
        let eval = |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..4 {
                let d = x[i] - t[i];
                f += 0.5 * c[i] * d * d;
                g[i] = c[i] * d;
            }
            f
        };
        let out = minimize(eval, &[0.0; 4], &settings()).unwrap();
        assert!(out.converged);
        for i in 0..4 {
            assert_relative_eq!(out.x[i], t[i], max_relative = 1e-4, epsilon = 1e-5);
        }
        assert!(out.f < 1e-9);
    }

    #[test]
    fn rosenbrock_reaches_known_minimum() {
        let eval = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let s = LbfgsSettings {
            max_evals: 500,
            grad_tol: 1e-8,
            ..settings()
        };
        let out = minimize(eval, &[-1.2, 1.0], &s).unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.x[0], 1.0, max_relative = 1e-5);
        assert_relative_eq!(out.x[1], 1.0, max_relative = 1e-5);
    }

    #[test]
    fn objective_never_increases() {
        // Badly scaled quartic valley; every accepted step must descend.
        let mut trace = Vec::new();
        let eval = |x: &[f64], g: &mut [f64]| {
            let f = x[0].powi(4) + 100.0 * x[1] * x[1] + 0.01 * (x[0] - x[1]).powi(2);
            g[0] = 4.0 * x[0].powi(3) + 0.02 * (x[0] - x[1]);
            g[1] = 200.0 * x[1] - 0.02 * (x[0] - x[1]);
            f
        };
        let out = minimize(
            |x, g| {
                let f = eval(x, g);
                trace.push(f);
                f
            },
            &[3.0, -2.0],
            &settings(),
        )
        .unwrap();
        assert!(out.f <= trace[0]);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let eval = |x: &[f64], g: &mut [f64]| {
            g[0] = 1.0;
            if x[0] == 0.0 {
                f64::NAN
            } else {
                x[0]
            }
        };
        assert!(matches!(
            minimize(eval, &[0.0], &settings()),
            Err(SincError::NonFiniteResult(_))
        ));
    }

    #[test]
    fn non_finite_region_forces_shorter_steps() {
        // Objective blows up past x = 2; the minimizer must stay inside.
        let eval = |x: &[f64], g: &mut [f64]| {
            if x[0] > 2.0 {
                g[0] = f64::NAN;
                return f64::INFINITY;
            }
            g[0] = 2.0 * (x[0] - 1.9);
            (x[0] - 1.9) * (x[0] - 1.9)
        };
        let out = minimize(eval, &[-10.0], &settings()).unwrap();
        assert!(out.x[0] <= 2.0);
        assert_relative_eq!(out.x[0], 1.9, max_relative = 1e-3, epsilon = 1e-4);
    }

    #[test]
    fn respects_evaluation_budget() {
        let s = LbfgsSettings {
            max_evals: 7,
            ..settings()
        };
        let mut count = 0usize;
        let out = minimize(
            |x: &[f64], g: &mut [f64]| {
                count += 1;
                g[0] = 2.0 * x[0];
                x[0] * x[0] + (x[0].sin() * 50.0).cos()
            },
            &[5.0],
            &s,
        )
        .unwrap();
        assert!(count <= 7);
        assert_eq!(out.evals, count);
    }
}

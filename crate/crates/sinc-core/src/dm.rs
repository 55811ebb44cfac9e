//! Collapsed Dirichlet-multinomial row likelihood and the latent-row update.
//!
//! With alpha = exp(z), integrating the Dirichlet composition out of the
//! multinomial leaves, up to terms constant in z,
//!
//! ```text
//! K(x, z) = sum_j [lgamma(alpha_j + x_j) - lgamma(alpha_j)]
//!           + lgamma(sum_j alpha_j) - lgamma(sum_j alpha_j + sum_j x_j)
//! ```
//!
//! Each latent row minimizes `f(z) = -K(x, z) + 0.5 (z - m)' Omega (z - m)`,
//! the negative complete-data log posterior of that row given its Gaussian
//! mean m. Rows are independent given Omega, so they are optimized in
//! parallel.

use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::SincError;
use crate::lbfgs;
use crate::model::{CountMatrix, LbfgsSettings};

/// Exponent ceiling used inside the optimizer: alpha = exp(min(z, Z_CLAMP)).
/// Counts in the intended regime keep optima far below the ceiling; hitting
/// it is reported as a warning.
pub const Z_CLAMP: f64 = 30.0;

/// Log likelihood kernel of one sample row, dropping terms constant in z.
///
/// Evaluates exp(z) without clamping; `NonFiniteResult` signals overflow or a
/// degenerate argument, which in context means the optimization diverged.
pub fn dm_kernel_loglik(x_row: &[f64], z_row: &[f64]) -> Result<f64, SincError> {
    assert_eq!(x_row.len(), z_row.len(), "count/latent length mismatch");
    let mut s_alpha = 0.0;
    let mut s_x = 0.0;
    let mut pair_terms = 0.0;
    for (&x, &z) in x_row.iter().zip(z_row) {
        let alpha = z.exp();
        s_alpha += alpha;
        s_x += x;
        if x > 0.0 {
            pair_terms += ln_gamma(alpha + x) - ln_gamma(alpha);
        }
    }
    // Grouping the total terms as their own difference makes the one-category
    // and zero-count cases cancel exactly instead of to rounding error.
    let total_terms = ln_gamma(s_alpha) - ln_gamma(s_alpha + s_x);
    let k = pair_terms + total_terms;
    if k.is_finite() {
        Ok(k)
    } else {
        Err(SincError::NonFiniteResult("dm kernel"))
    }
}

/// Row objective `-K(x, z) + 0.5 (z - m)' Omega (z - m)`, the function the
/// latent update minimizes.
pub fn z_objective_row(
    x_row: &[f64],
    z_row: &[f64],
    mean_row: &[f64],
    omega: &DMatrix<f64>,
) -> Result<f64, SincError> {
    let k = dm_kernel_loglik(x_row, z_row)?;
    let p = z_row.len();
    assert_eq!(mean_row.len(), p, "mean length mismatch");
    assert_eq!(omega.nrows(), p, "precision size mismatch");
    let v: Vec<f64> = z_row.iter().zip(mean_row).map(|(z, m)| z - m).collect();
    let mut quad = 0.0;
    for j in 0..p {
        let mut wj = 0.0;
        for i in 0..p {
            wj += omega[(j, i)] * v[i];
        }
        quad += v[j] * wj;
    }
    let f = -k + 0.5 * quad;
    if f.is_finite() {
        Ok(f)
    } else {
        Err(SincError::NonFiniteResult("latent row objective"))
    }
}

/// Gradient of `z_objective_row` in z:
/// `g_j = -alpha_j [psi(alpha_j + x_j) - psi(alpha_j) - psi(s_a + s_x) + psi(s_a)]
///        + [Omega (z - m)]_j`.
pub fn z_gradient_row(
    x_row: &[f64],
    z_row: &[f64],
    mean_row: &[f64],
    omega: &DMatrix<f64>,
) -> Result<Vec<f64>, SincError> {
    let p = z_row.len();
    assert_eq!(x_row.len(), p, "count length mismatch");
    assert_eq!(mean_row.len(), p, "mean length mismatch");
    assert_eq!(omega.nrows(), p, "precision size mismatch");
    let alpha: Vec<f64> = z_row.iter().map(|z| z.exp()).collect();
    let s_alpha: f64 = alpha.iter().sum();
    let s_x: f64 = x_row.iter().sum();
    if !s_alpha.is_finite() {
        return Err(SincError::NonFiniteResult("latent row gradient"));
    }
    let coupling = digamma(s_alpha + s_x) - digamma(s_alpha);
    let v: Vec<f64> = z_row.iter().zip(mean_row).map(|(z, m)| z - m).collect();
    let mut g = vec![0.0; p];
    for j in 0..p {
        let own = if x_row[j] > 0.0 {
            digamma(alpha[j] + x_row[j]) - digamma(alpha[j])
        } else {
            0.0
        };
        let mut wj = 0.0;
        for i in 0..p {
            wj += omega[(j, i)] * v[i];
        }
        g[j] = -alpha[j] * (own - coupling) + wj;
        if !g[j].is_finite() {
            return Err(SincError::NonFiniteResult("latent row gradient"));
        }
    }
    Ok(g)
}

/// One row's optimization problem with the clamped-exponent objective the
/// quasi-Newton iteration actually sees. Coordinates at the ceiling have zero
/// likelihood gradient because the clamp flattens the kernel there.
struct RowProblem<'a> {
    x: Vec<f64>,
    s_x: f64,
    positive: Vec<usize>,
    mean: Vec<f64>,
    omega: &'a DMatrix<f64>,
    alpha: Vec<f64>,
    resid: Vec<f64>,
    omega_resid: Vec<f64>,
}

impl<'a> RowProblem<'a> {
    fn new(x: Vec<f64>, mean: Vec<f64>, omega: &'a DMatrix<f64>) -> Self {
        let p = x.len();
        let s_x = x.iter().sum();
        let positive = (0..p).filter(|&j| x[j] > 0.0).collect();
        Self {
            x,
            s_x,
            positive,
            mean,
            omega,
            alpha: vec![0.0; p],
            resid: vec![0.0; p],
            omega_resid: vec![0.0; p],
        }
    }

    fn eval(&mut self, z: &[f64], grad: &mut [f64]) -> f64 {
        let p = z.len();
        let mut s_alpha = 0.0;
        for j in 0..p {
            self.alpha[j] = z[j].min(Z_CLAMP).exp();
            s_alpha += self.alpha[j];
            self.resid[j] = z[j] - self.mean[j];
        }
        let mut kernel = ln_gamma(s_alpha) - ln_gamma(s_alpha + self.s_x);
        for &j in &self.positive {
            kernel += ln_gamma(self.alpha[j] + self.x[j]) - ln_gamma(self.alpha[j]);
        }

        // omega_resid = Omega (z - m), accumulated down columns to stay in
        // the matrix's storage order.
        self.omega_resid.fill(0.0);
        let data = self.omega.as_slice();
        for j in 0..p {
            let vj = self.resid[j];
            if vj != 0.0 {
                let col = &data[j * p..(j + 1) * p];
                for i in 0..p {
                    self.omega_resid[i] += col[i] * vj;
                }
            }
        }
        let mut quad = 0.0;
        for j in 0..p {
            quad += self.resid[j] * self.omega_resid[j];
        }

        let coupling = digamma(s_alpha + self.s_x) - digamma(s_alpha);
        for j in 0..p {
            let own = if self.x[j] > 0.0 {
                digamma(self.alpha[j] + self.x[j]) - digamma(self.alpha[j])
            } else {
                0.0
            };
            let dm_part = if z[j] < Z_CLAMP {
                -self.alpha[j] * (own - coupling)
            } else {
                0.0
            };
            grad[j] = dm_part + self.omega_resid[j];
        }
        -kernel + 0.5 * quad
    }
}

/// Summary of one latent pass: rows are updated in place.
#[derive(Debug, Clone, Default)]
pub struct LatentOutcome {
    /// Rows whose line search stalled; they keep their last accepted iterate.
    pub rows_stalled: Vec<usize>,
    /// Rows whose optimum sits at the exponent ceiling.
    pub rows_clamped: Vec<usize>,
    pub total_evals: usize,
}

impl LatentOutcome {
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        for &i in &self.rows_stalled {
            w.push(format!("latent row {i}: line search stalled, kept last accepted point"));
        }
        for &i in &self.rows_clamped {
            w.push(format!("latent row {i}: optimum clamped at z = {Z_CLAMP}"));
        }
        w
    }
}

/// Optimizes every latent row given its Gaussian mean, warm-starting from the
/// current `z`. Row objectives never increase: a row only moves to points the
/// line search accepted.
pub fn optimize_latent(
    x: &CountMatrix,
    means: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    z: &mut DMatrix<f64>,
    settings: &LbfgsSettings,
) -> Result<LatentOutcome, SincError> {
    let (n, p) = (x.n(), x.p());
    assert_eq!(means.nrows(), n, "mean rows mismatch");
    assert_eq!(means.ncols(), p, "mean cols mismatch");
    assert_eq!(z.nrows(), n, "latent rows mismatch");
    assert_eq!(z.ncols(), p, "latent cols mismatch");
    assert_eq!(omega.nrows(), p, "precision size mismatch");

    let per_row: Vec<Result<(Vec<f64>, bool, bool, usize), SincError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x_row = x.row_f64(i);
            let mean_row: Vec<f64> = means.row(i).iter().copied().collect();
            let z_row: Vec<f64> = z.row(i).iter().copied().collect();
            let mut problem = RowProblem::new(x_row, mean_row, omega);
            let out = lbfgs::minimize(|zv, g| problem.eval(zv, g), &z_row, settings)?;
            let clamped = out.x.iter().any(|&v| v >= Z_CLAMP);
            Ok((out.x, out.line_search_failed, clamped, out.evals))
        })
        .collect();

    let mut outcome = LatentOutcome::default();
    for (i, row) in per_row.into_iter().enumerate() {
        let (x_new, stalled, clamped, evals) = row?;
        for j in 0..p {
            z[(i, j)] = x_new[j];
        }
        if stalled {
            outcome.rows_stalled.push(i);
        }
        if clamped {
            outcome.rows_clamped.push(i);
        }
        outcome.total_evals += evals;
    }
    Ok(outcome)
}

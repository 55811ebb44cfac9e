//! Spike-and-slab variational regression for one latent response column.
//!
//! Column j of the latent matrix is regressed on the covariates under a
//! working Gaussian model `z_j - b0_j ~ N(M b_j, sigma*_j I)` whose residual
//! variance comes from the current precision matrix. Each coefficient carries
//! a Bernoulli-Gaussian posterior `q(b_kj, gamma_kj) = phi_kj N(mu_kj,
//! sigma_kj)` with slab prior `N(0, nu_b sigma*_j)`, and coordinate ascent on
//! (sigma, mu, phi) maximizes the column's variational objective one entry at
//! a time. The entry updates are closed-form, so a sweep never decreases the
//! objective.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::model::{RegressionState, PHI_EPS};

/// Numerically stable logistic function.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Slab posterior variance for coefficient k of a column with residual
/// variance `sigma_star`: `sigma* / ((M'M)_kk + 1/nu_b)`.
pub fn update_sigma_entry(sigma_star: f64, mtm_kk: f64, nu_b: f64) -> f64 {
    sigma_star / (mtm_kk + 1.0 / nu_b)
}

/// Slab posterior mean given the de-regressed residual correlation
/// `residual_k = {M'(z_j - b0_j)}_k - sum_{l != k} (M'M)_lk phi_l mu_l`.
pub fn update_mu_entry(sigma_kj: f64, sigma_star: f64, residual_k: f64) -> f64 {
    sigma_kj / sigma_star * residual_k
}

/// Posterior inclusion probability of coefficient k, clamped away from 0 and
/// 1 so downstream logits stay finite.
pub fn update_phi_entry(
    theta: f64,
    sigma_kj: f64,
    sigma_star: f64,
    nu_b: f64,
    mu_kj: f64,
) -> f64 {
    let logit = (theta / (1.0 - theta)).ln()
        + 0.5 * (sigma_kj / (nu_b * sigma_star)).ln()
        + mu_kj * mu_kj / (2.0 * sigma_kj);
    sigmoid(logit).clamp(PHI_EPS, 1.0 - PHI_EPS)
}

/// One column's regression problem with sufficient statistics precomputed:
/// `u = M'(z_j - b0_j)`, `zz = |z_j - b0_j|^2`, and the shared Gram matrix.
#[derive(Debug)]
pub struct ColumnRegressionProblem<'a> {
    pub mtm: &'a DMatrix<f64>,
    pub u: DVector<f64>,
    pub zz: f64,
    pub n: usize,
    pub sigma_star: f64,
    pub theta: f64,
    pub nu_b: f64,
}

impl<'a> ColumnRegressionProblem<'a> {
    /// Builds the problem for response column `z_col` with intercept `b0_j`.
    pub fn new(
        z_col: DVectorView<'_, f64>,
        b0_j: f64,
        m: &DMatrix<f64>,
        mtm: &'a DMatrix<f64>,
        sigma_star: f64,
        theta: f64,
        nu_b: f64,
    ) -> Self {
        assert_eq!(m.nrows(), z_col.len(), "design/response length mismatch");
        assert_eq!(m.ncols(), mtm.nrows(), "Gram matrix size mismatch");
        assert!(sigma_star > 0.0, "sigma_star must be positive");
        let z_tilde = z_col.map(|v| v - b0_j);
        let u = m.transpose() * &z_tilde;
        let zz = z_tilde.dot(&z_tilde);
        Self {
            mtm,
            u,
            zz,
            n: m.nrows(),
            sigma_star,
            theta,
            nu_b,
        }
    }

    pub fn q(&self) -> usize {
        self.mtm.nrows()
    }
}

/// Variational parameters of one column.
#[derive(Debug, Clone)]
pub struct ColumnState {
    pub mu: DVector<f64>,
    pub sigma: DVector<f64>,
    pub phi: DVector<f64>,
}

impl ColumnState {
    pub fn from_regression(reg: &RegressionState, j: usize) -> Self {
        Self {
            mu: reg.mu.column(j).into_owned(),
            sigma: reg.sigma.column(j).into_owned(),
            phi: reg.phi.column(j).into_owned(),
        }
    }

    pub fn b_bar(&self) -> DVector<f64> {
        self.phi.component_mul(&self.mu)
    }
}

/// One coordinate-ascent pass over k = 0..q in index order. Returns the
/// largest absolute change in the working point estimates phi_k mu_k.
pub fn vi_sweep_column(prob: &ColumnRegressionProblem, state: &mut ColumnState) -> f64 {
    let q = prob.q();
    let mut b_bar = state.b_bar();
    let mut w = prob.mtm * &b_bar;
    let mut max_delta = 0.0f64;
    for k in 0..q {
        let mtm_kk = prob.mtm[(k, k)];
        let sigma_k = update_sigma_entry(prob.sigma_star, mtm_kk, prob.nu_b);
        let residual = prob.u[k] - (w[k] - mtm_kk * b_bar[k]);
        let mu_k = update_mu_entry(sigma_k, prob.sigma_star, residual);
        let phi_k = update_phi_entry(prob.theta, sigma_k, prob.sigma_star, prob.nu_b, mu_k);
        let b_new = phi_k * mu_k;
        let delta = b_new - b_bar[k];
        if delta != 0.0 {
            w.axpy(delta, &prob.mtm.column(k), 1.0);
            b_bar[k] = b_new;
        }
        state.sigma[k] = sigma_k;
        state.mu[k] = mu_k;
        state.phi[k] = phi_k;
        max_delta = max_delta.max(delta.abs());
    }
    max_delta
}

/// Outcome of iterating sweeps on one column until the point estimates stop
/// moving.
#[derive(Debug, Clone)]
pub struct ColumnOutcome {
    pub state: ColumnState,
    pub sweeps: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Runs sweeps until the largest phi*mu change drops below `tol` or the sweep
/// budget is exhausted.
pub fn solve_column(
    prob: &ColumnRegressionProblem,
    mut state: ColumnState,
    tol: f64,
    max_sweeps: usize,
) -> ColumnOutcome {
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        let delta = vi_sweep_column(prob, &mut state);
        sweeps += 1;
        if delta < tol {
            converged = true;
            break;
        }
    }
    let objective = column_objective(prob, &state);
    ColumnOutcome {
        state,
        sweeps,
        converged,
        objective,
    }
}

/// The column's variational objective: expected working-model log likelihood
/// plus expected spike-and-slab prior, plus the posterior entropy. The sweep
/// updates are exact coordinate maximizers of this function.
pub fn column_objective(prob: &ColumnRegressionProblem, state: &ColumnState) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let s = prob.sigma_star;
    let b_bar = state.b_bar();
    let rss = prob.zz - 2.0 * b_bar.dot(&prob.u) + b_bar.dot(&(prob.mtm * &b_bar));
    let mut f = -(prob.n as f64) / 2.0 * (two_pi * s).ln() - rss / (2.0 * s);
    for k in 0..prob.q() {
        let (mu, sig, phi) = (state.mu[k], state.sigma[k], state.phi[k]);
        let second_moment = sig + mu * mu;
        let var_k = phi * second_moment - (phi * mu) * (phi * mu);
        f -= prob.mtm[(k, k)] * var_k / (2.0 * s);
        f += phi * prob.theta.ln() + (1.0 - phi) * (1.0 - prob.theta).ln();
        f += phi * (-0.5 * (two_pi * prob.nu_b * s).ln() - second_moment / (2.0 * prob.nu_b * s));
        f += -phi * phi.ln() - (1.0 - phi) * (1.0 - phi).ln()
            + phi * 0.5 * (two_pi * std::f64::consts::E * sig).ln();
    }
    f
}

/// Replaces the working point estimates with the hard-thresholded ones:
/// `b_kj = mu_kj` where `phi_kj > 1/2`, zero elsewhere. Safe to call more
/// than once because it recomputes from mu and phi.
pub fn finalize_coefficients(reg: &mut RegressionState) {
    let (q, p) = (reg.q(), reg.p());
    for j in 0..p {
        for k in 0..q {
            reg.b[(k, j)] = if reg.phi[(k, j)] > 0.5 { reg.mu[(k, j)] } else { 0.0 };
        }
    }
}

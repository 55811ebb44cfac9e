//! Orchestration: initialization, the outer coordinate-ascent loop, and the
//! spike-scale grid search with sparsity-targeted model selection.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dm::optimize_latent;
use crate::elbo::compute_elbo;
use crate::error::SincError;
use crate::metrics::{confusion, scores, SelectionUniverse};
use crate::model::{
    max_asymmetry, validate_inputs, CountMatrix, CovariateMatrix, FitConfig, FitResult,
    Hyperparameters, LatentState, NetworkState, OmegaDiagnostic, RegressionState,
};
use crate::network::{
    e_step, sigma_star, update_intercepts, update_pi, update_precision, update_tau,
    update_theta_gamma, ResidualScatter,
};
use crate::vi::{finalize_coefficients, solve_column, ColumnRegressionProblem, ColumnState};

/// Outcome of fitting the model once per spike scale on a shared dataset.
#[derive(Debug, Clone)]
pub struct GridResult {
    pub nu0_values: Vec<f64>,
    pub fits: Vec<FitResult>,
    /// Index of the fit whose edge density lies nearest the sparsity target;
    /// ties go to the smaller spike scale.
    pub selected_index: usize,
    /// Per-grid-point (FPR, TPR) against a known adjacency, when one is given.
    pub roc: Option<Vec<(f64, f64)>>,
}

impl GridResult {
    pub fn selected(&self) -> &FitResult {
        &self.fits[self.selected_index]
    }
}

/// The default spike-scale sweep: 20 log-spaced values spanning 1e-4 to 1e-1.
pub fn default_nu0_grid() -> Vec<f64> {
    let (lo, hi, count) = (1e-4f64, 1e-1f64, 20);
    let step = (hi.ln() - lo.ln()) / (count - 1) as f64;
    (0..count).map(|k| (lo.ln() + step * k as f64).exp()).collect()
}

/// Fits the model once. Builds a thread pool of `cfg.thread_count` workers;
/// results do not depend on that count because parallel units are disjoint
/// and every reduction runs sequentially.
pub fn fit_once(
    x: &CountMatrix,
    m: &CovariateMatrix,
    hp: &Hyperparameters,
    cfg: &FitConfig,
) -> Result<FitResult, SincError> {
    hp.validate()?;
    cfg.validate()?;
    validate_inputs(x, m)?;
    let pool = build_pool(cfg.thread_count)?;
    pool.install(|| fit_impl(x, m, hp, cfg))
}

/// Fits once per grid value and selects the fit with edge density closest to
/// `sparsity_target` (ties broken toward the smaller spike scale). With a
/// reference adjacency, also reports each grid point's (FPR, TPR).
pub fn fit_grid(
    x: &CountMatrix,
    m: &CovariateMatrix,
    hp_base: &Hyperparameters,
    cfg: &FitConfig,
    nu0_grid: &[f64],
    sparsity_target: f64,
    truth: Option<&DMatrix<bool>>,
) -> Result<GridResult, SincError> {
    if nu0_grid.is_empty() {
        return Err(SincError::InvalidConfig("spike-scale grid is empty".into()));
    }
    if !(sparsity_target.is_finite() && (0.0..=1.0).contains(&sparsity_target)) {
        return Err(SincError::InvalidConfig(format!(
            "sparsity target must lie in [0, 1], got {sparsity_target}"
        )));
    }
    cfg.validate()?;
    validate_inputs(x, m)?;
    for &nu0 in nu0_grid {
        Hyperparameters { nu0, ..hp_base.clone() }.validate()?;
    }

    let pool = build_pool(cfg.thread_count)?;
    let fits: Vec<Result<FitResult, SincError>> = pool.install(|| {
        nu0_grid
            .par_iter()
            .map(|&nu0| fit_impl(x, m, &Hyperparameters { nu0, ..hp_base.clone() }, cfg))
            .collect()
    });
    let fits: Vec<FitResult> = fits.into_iter().collect::<Result<_, _>>()?;

    let mut selected_index = 0;
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    for (idx, fit) in fits.iter().enumerate() {
        let key = ((fit.edge_density() - sparsity_target).abs(), nu0_grid[idx]);
        if key < best_key {
            best_key = key;
            selected_index = idx;
        }
    }

    let roc = match truth {
        Some(adj) => {
            let mut points = Vec::with_capacity(fits.len());
            for fit in &fits {
                let counts = confusion(&fit.selected_adjacency, adj, SelectionUniverse::Edges)?;
                let s = scores(&counts);
                points.push((s.fpr, s.tpr));
            }
            Some(points)
        }
        None => None,
    };

    Ok(GridResult {
        nu0_values: nu0_grid.to_vec(),
        fits,
        selected_index,
        roc,
    })
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool, SincError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SincError::InvalidConfig(format!("thread pool: {e}")))
}

/// Ridge-jittered inverse of the empirical scatter. Adds 1e-3 of the mean
/// diagonal until the factorization succeeds, so it also covers n < p.
fn invert_scatter_with_jitter(mut sigma: DMatrix<f64>) -> DMatrix<f64> {
    let p = sigma.nrows();
    let bump = 1e-3 * sigma.trace().abs().max(f64::MIN_POSITIVE) / p as f64;
    for _ in 0..10_000 {
        if let Some(chol) = sigma.clone().cholesky() {
            let inv = chol.inverse();
            // The solve-based inverse can be asymmetric at rounding level;
            // one averaging pass restores exact symmetry.
            return (&inv + inv.transpose()) * 0.5;
        }
        for i in 0..p {
            sigma[(i, i)] += bump;
        }
    }
    unreachable!("diagonal jitter must eventually dominate the scatter");
}

fn fit_impl(
    x: &CountMatrix,
    m: &CovariateMatrix,
    hp: &Hyperparameters,
    cfg: &FitConfig,
) -> Result<FitResult, SincError> {
    let (n, p, q) = (x.n(), x.p(), m.q());
    let include_regression = !cfg.constrain_b_zero && q > 0;
    let include_network = !cfg.constrain_omega_identity;

    // Working abundances start at the log counts; the empirical precision of
    // their centered scatter seeds the network.
    let mut z = DMatrix::from_fn(n, p, |i, j| (x.values()[(i, j)] as f64 + 1.0).ln());
    let col_means = DVector::from_fn(p, |j, _| z.column(j).sum() / n as f64);
    let omega0 = if include_network {
        let mut centered = z.clone();
        for j in 0..p {
            centered.column_mut(j).add_scalar_mut(-col_means[j]);
        }
        invert_scatter_with_jitter(centered.transpose() * &centered / n as f64)
    } else {
        DMatrix::identity(p, p)
    };

    let theta0 = hp.a_gamma / (hp.a_gamma + hp.b_gamma);
    let mut reg = RegressionState::flat(q, p, theta0, include_regression);
    reg.refresh_b();
    let tau0 = 1.0;
    let mut net = NetworkState::new(
        omega0,
        DMatrix::zeros(p, p),
        init_d_star(p, tau0, hp),
        hp.a_pi / (hp.a_pi + hp.b_pi),
        tau0,
    );
    let mut b0 = col_means;

    let mtm = m.values().transpose() * m.values();
    let mut elbo_trace = vec![compute_elbo(x, m, &z, &reg, &net, &b0, hp, cfg)?.total];
    let mut omega_diagnostics = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut latent_warnings: Vec<String> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=cfg.max_outer_iters {
        iterations = iter;

        if include_regression {
            let sigma_stars = sigma_star(&net.omega, cfg.sigma_star_mode);
            let outcomes: Vec<_> = (0..p)
                .into_par_iter()
                .map(|j| {
                    let prob = ColumnRegressionProblem::new(
                        z.column(j),
                        b0[j],
                        m.values(),
                        &mtm,
                        sigma_stars[j],
                        reg.theta_gamma[j],
                        hp.nu_b,
                    );
                    let state = ColumnState::from_regression(&reg, j);
                    solve_column(&prob, state, cfg.inner_tol, cfg.max_inner_iters)
                })
                .collect();
            for (j, out) in outcomes.into_iter().enumerate() {
                reg.mu.set_column(j, &out.state.mu);
                reg.sigma.set_column(j, &out.state.sigma);
                reg.phi.set_column(j, &out.state.phi);
            }
            reg.refresh_b();
        }

        if include_network {
            e_step(&mut net, hp);
        }

        b0 = update_intercepts(&z, m.values(), &reg.b);
        let scatter = ResidualScatter::new(&z, m.values(), &reg.b, &b0);
        if include_network {
            update_precision(
                &mut net.omega,
                &scatter,
                &net.d_star,
                n,
                hp.lambda,
                cfg.inner_tol,
                cfg.max_inner_iters,
            )?;
            omega_diagnostics.push(OmegaDiagnostic {
                min_eigenvalue: net.omega.symmetric_eigenvalues().min(),
                max_asymmetry: max_asymmetry(&net.omega),
            });
        }
        if include_regression {
            reg.theta_gamma = update_theta_gamma(&reg.phi, hp)?;
        }
        if include_network {
            net.pi = update_pi(&net.p_star, hp)?;
            if hp.learn_tau {
                match update_tau(&net.omega, &net.p_star, hp) {
                    Ok(tau) => net.tau = tau,
                    Err(SincError::DegenerateDenominator(_)) => {
                        let msg = "tau update degenerate, kept previous value".to_string();
                        if !warnings.contains(&msg) {
                            warnings.push(msg);
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let mut means = m.values() * &reg.b;
        for j in 0..p {
            means.column_mut(j).add_scalar_mut(b0[j]);
        }
        let outcome = optimize_latent(x, &means, &net.omega, &mut z, &cfg.lbfgs)?;
        latent_warnings = outcome.warnings();

        let elbo = compute_elbo(x, m, &z, &reg, &net, &b0, hp, cfg)?.total;
        let prev = *elbo_trace.last().expect("trace is never empty");
        elbo_trace.push(elbo);
        if (elbo - prev).abs() / prev.abs().max(1.0) < cfg.outer_tol {
            converged = true;
            break;
        }
    }
    warnings.extend(latent_warnings);

    finalize_coefficients(&mut reg);
    let selected_adjacency = DMatrix::from_fn(p, p, |i, j| i != j && net.p_star[(i, j)] > 0.5);
    let selected_coefficients = reg.phi.map(|v| v > 0.5);

    Ok(FitResult {
        regression: reg,
        network: net,
        latent: LatentState::new(z),
        b0,
        elbo_trace,
        selected_adjacency,
        selected_coefficients,
        iterations,
        converged,
        warnings,
        omega_diagnostics,
    })
}

/// Prior-only blend weights before any E-step has run: every edge sits in the
/// spike, so the penalty is tau/nu0 squared off the diagonal.
fn init_d_star(p: usize, tau: f64, hp: &Hyperparameters) -> DMatrix<f64> {
    let fill = tau / (hp.nu0 * hp.nu0);
    DMatrix::from_fn(p, p, |i, j| if i == j { 0.0 } else { fill })
}

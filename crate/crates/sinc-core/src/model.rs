//! Core data types shared by every stage of the fit.
//!
//! The model couples three blocks of unknowns for an n x p count matrix X
//! with an n x q covariate matrix M:
//!
//! * latent Gaussian abundances Z (n x p), one row per sample,
//! * sparse covariate effects B (q x p) with spike-and-slab posteriors,
//! * a sparse precision matrix Omega (p x p) over the latent columns.
//!
//! Rows follow `X_i ~ Multinomial(n_i, h_i)`, `h_i ~ Dirichlet(exp(Z_i))`,
//! `Z_i ~ N(B0 + M_i B, Omega^{-1})`.

use nalgebra::{DMatrix, DVector};

use crate::error::SincError;

/// Lower clamp for spike-and-slab inclusion probabilities; the upper clamp is
/// `1 - PHI_EPS`. Keeps logits finite when a coefficient is decisively in or
/// out of the model.
pub const PHI_EPS: f64 = 1e-12;

/// Clamp for the per-column inclusion rates theta_gamma, which sit inside
/// logits and Beta log densities.
pub const THETA_EPS: f64 = 1e-6;

/// Observed counts with cached row totals.
///
/// Invariants: entries are nonnegative integers by construction and
/// `row_totals[i]` equals the sum of row i.
#[derive(Debug, Clone)]
pub struct CountMatrix {
    values: DMatrix<u64>,
    row_totals: Vec<u64>,
}

impl CountMatrix {
    pub fn new(values: DMatrix<u64>) -> Self {
        let row_totals = (0..values.nrows())
            .map(|i| values.row(i).iter().sum())
            .collect();
        Self { values, row_totals }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<u64> {
        &self.values
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    /// Row i as f64, in column order. The latent-row optimizer works on this
    /// representation so the integer counts are converted once per row.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().map(|&x| x as f64).collect()
    }

    /// Whole matrix as f64, used for initialization.
    pub fn to_f64(&self) -> DMatrix<f64> {
        self.values.map(|x| x as f64)
    }
}

/// Design matrix of sample-level covariates.
///
/// Invariant: all entries finite. Columns are used as given; the synthetic
/// generator centers and scales them, external callers are expected to do the
/// same if they want comparable effect sizes.
#[derive(Debug, Clone)]
pub struct CovariateMatrix {
    values: DMatrix<f64>,
}

impl CovariateMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self, SincError> {
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(SincError::NonFiniteEntry { row: i, col: j });
                }
            }
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Latent Gaussian abundances, one row per sample.
///
/// Invariant: all entries finite.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub z: DMatrix<f64>,
}

impl LatentState {
    pub fn new(z: DMatrix<f64>) -> Self {
        debug_assert!(z.iter().all(|v| v.is_finite()));
        Self { z }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }
}

/// Variational posterior over the covariate effects B (all q x p).
///
/// `mu` and `sigma` are the slab mean and variance of each coefficient,
/// `phi` its inclusion probability clamped to [PHI_EPS, 1 - PHI_EPS], and
/// `b` the working point estimate. During coordinate ascent `b = mu * phi`
/// elementwise; `finalize` replaces it with the thresholded estimate.
#[derive(Debug, Clone)]
pub struct RegressionState {
    pub mu: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Per-response inclusion rates theta_gamma, clamped to
    /// (THETA_EPS, 1 - THETA_EPS); length p.
    pub theta_gamma: DVector<f64>,
}

impl RegressionState {
    /// Flat-start state: undecided inclusions, zero means, unit variances.
    pub fn flat(q: usize, p: usize, theta0: f64, include: bool) -> Self {
        let phi0 = if include { 0.5 } else { PHI_EPS };
        Self {
            mu: DMatrix::zeros(q, p),
            sigma: DMatrix::from_element(q, p, 1.0),
            phi: DMatrix::from_element(q, p, phi0),
            b: DMatrix::zeros(q, p),
            theta_gamma: DVector::from_element(p, theta0.clamp(THETA_EPS, 1.0 - THETA_EPS)),
        }
    }

    /// Refresh the working point estimate `b = mu * phi`.
    pub fn refresh_b(&mut self) {
        self.b = self.mu.component_mul(&self.phi);
    }

    pub fn q(&self) -> usize {
        self.mu.nrows()
    }

    pub fn p(&self) -> usize {
        self.mu.ncols()
    }
}

/// Precision matrix block with its edge posteriors.
///
/// Invariants: `omega` is symmetric positive definite; `p_star` holds the
/// posterior slab probability of each off-diagonal entry (diagonal unused,
/// kept at zero); `d_star` holds the blended prior precision scale with
/// `tau / nu1^2 <= d_star[ij] <= tau / nu0^2` off the diagonal.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub omega: DMatrix<f64>,
    pub p_star: DMatrix<f64>,
    pub d_star: DMatrix<f64>,
    /// Prior edge-inclusion weight pi in (0, 1).
    pub pi: f64,
    /// Global precision-scale multiplier tau > 0.
    pub tau: f64,
}

/// Largest tolerated |omega - omega^T| entry before the state is considered
/// corrupt. Column updates write both triangles, so in practice asymmetry is
/// exactly zero.
pub const OMEGA_SYMMETRY_TOL: f64 = 1e-10;

impl NetworkState {
    /// Builds a network state, verifying symmetry and positive definiteness.
    /// Violation is a program error, not a recoverable state.
    pub fn new(
        omega: DMatrix<f64>,
        p_star: DMatrix<f64>,
        d_star: DMatrix<f64>,
        pi: f64,
        tau: f64,
    ) -> Self {
        let state = Self {
            omega,
            p_star,
            d_star,
            pi,
            tau,
        };
        state.assert_valid();
        state
    }

    /// Panics unless omega is symmetric within `OMEGA_SYMMETRY_TOL` and admits
    /// a Cholesky factorization.
    pub fn assert_valid(&self) {
        let asym = max_asymmetry(&self.omega);
        assert!(
            asym <= OMEGA_SYMMETRY_TOL,
            "precision matrix asymmetry {asym:e} exceeds tolerance"
        );
        assert!(
            self.omega.clone().cholesky().is_some(),
            "precision matrix is not positive definite"
        );
        assert!(self.pi > 0.0 && self.pi < 1.0, "pi outside (0, 1)");
        assert!(self.tau > 0.0, "tau must be positive");
    }

    pub fn p(&self) -> usize {
        self.omega.nrows()
    }
}

/// Largest absolute difference between a square matrix and its transpose.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let p = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..p {
        for j in (i + 1)..p {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Prior settings. `nu0` is the spike scale swept by the grid search; `nu1`
/// the slab scale; `lambda` the exponential rate on diagonal precision
/// entries; `nu_b` the slab variance multiplier for covariate effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub nu0: f64,
    pub nu1: f64,
    pub nu_b: f64,
    pub lambda: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub a_pi: f64,
    pub b_pi: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    /// When false, tau stays fixed at its initial value.
    pub learn_tau: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            nu0: 0.01,
            nu1: 10.0,
            nu_b: 1.0,
            lambda: 150.0,
            a_gamma: 2.0,
            b_gamma: 2.0,
            a_pi: 2.0,
            b_pi: 2.0,
            a_tau: 2.0,
            b_tau: 2.0,
            learn_tau: false,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), SincError> {
        let positive = [
            ("nu0", self.nu0),
            ("nu1", self.nu1),
            ("nu_b", self.nu_b),
            ("lambda", self.lambda),
            ("a_gamma", self.a_gamma),
            ("b_gamma", self.b_gamma),
            ("a_pi", self.a_pi),
            ("b_pi", self.b_pi),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SincError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if self.nu0 > self.nu1 {
            return Err(SincError::InvalidConfig(format!(
                "nu0 ({}) must not exceed nu1 ({})",
                self.nu0, self.nu1
            )));
        }
        Ok(())
    }
}

/// Which residual variance anchors the per-response regression problem:
/// the marginal variance `(Omega^{-1})_{jj}` or the conditional `1 / Omega_{jj}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaStarMode {
    #[default]
    Marginal,
    Conditional,
}

/// Settings for the bounded-memory quasi-Newton optimizer used on latent rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsSettings {
    pub memory: usize,
    /// Convergence threshold on the gradient infinity norm.
    pub grad_tol: f64,
    /// Budget of objective evaluations per row, line search included.
    pub max_evals: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            memory: 10,
            grad_tol: 1e-5,
            max_evals: 200,
        }
    }
}

/// Knobs controlling a single fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Relative change of the objective that ends the outer loop.
    pub outer_tol: f64,
    /// Largest entry change that ends the precision and regression sweeps.
    pub inner_tol: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub lbfgs: LbfgsSettings,
    pub thread_count: usize,
    /// Recorded for provenance; the fit itself draws no random numbers.
    pub seed: u64,
    /// Force B = 0 and skip the regression stage (network-only model).
    pub constrain_b_zero: bool,
    /// Pin Omega to the identity and skip the network stage (regression-only).
    pub constrain_omega_identity: bool,
    pub sigma_star_mode: SigmaStarMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-4,
            inner_tol: 1e-6,
            max_outer_iters: 200,
            max_inner_iters: 100,
            lbfgs: LbfgsSettings::default(),
            thread_count: 1,
            seed: 0,
            constrain_b_zero: false,
            constrain_omega_identity: false,
            sigma_star_mode: SigmaStarMode::Marginal,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), SincError> {
        if self.constrain_b_zero && self.constrain_omega_identity {
            return Err(SincError::InvalidConfig(
                "constrain_b_zero and constrain_omega_identity are mutually exclusive".into(),
            ));
        }
        for (name, value) in [
            ("outer_tol", self.outer_tol),
            ("inner_tol", self.inner_tol),
            ("lbfgs.grad_tol", self.lbfgs.grad_tol),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(SincError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("max_outer_iters", self.max_outer_iters),
            ("max_inner_iters", self.max_inner_iters),
            ("lbfgs.memory", self.lbfgs.memory),
            ("lbfgs.max_evals", self.lbfgs.max_evals),
            ("thread_count", self.thread_count),
        ] {
            if value == 0 {
                return Err(SincError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Positive-definiteness evidence recorded after every precision update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaDiagnostic {
    pub min_eigenvalue: f64,
    pub max_asymmetry: f64,
}

/// Everything a completed fit exposes.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub regression: RegressionState,
    pub network: NetworkState,
    pub latent: LatentState,
    pub b0: DVector<f64>,
    /// Objective value before the first iteration and after each one.
    pub elbo_trace: Vec<f64>,
    /// Edges with posterior slab probability above one half; symmetric with a
    /// false diagonal.
    pub selected_adjacency: DMatrix<bool>,
    /// Coefficients with inclusion probability above one half.
    pub selected_coefficients: DMatrix<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Recoverable anomalies encountered on the way (kept rows, kept tau).
    pub warnings: Vec<String>,
    /// One entry per outer iteration, recorded right after the precision
    /// update commits.
    pub omega_diagnostics: Vec<OmegaDiagnostic>,
}

impl FitResult {
    pub fn final_elbo(&self) -> f64 {
        *self
            .elbo_trace
            .last()
            .expect("elbo trace holds at least the initial value")
    }

    /// Fraction of possible edges selected, the quantity matched against the
    /// grid-search sparsity target.
    pub fn edge_density(&self) -> f64 {
        let p = self.selected_adjacency.nrows();
        if p < 2 {
            return 0.0;
        }
        let mut count = 0usize;
        for i in 0..p {
            for j in (i + 1)..p {
                if self.selected_adjacency[(i, j)] {
                    count += 1;
                }
            }
        }
        count as f64 / (p * (p - 1) / 2) as f64
    }
}

/// Checks that counts and covariates describe the same samples and are usable:
/// matching row counts, at least two count columns, no all-zero count column,
/// finite covariates.
pub fn validate_inputs(x: &CountMatrix, m: &CovariateMatrix) -> Result<(), SincError> {
    if x.n() != m.n() {
        return Err(SincError::DimensionMismatch(format!(
            "counts have {} rows but covariates have {}",
            x.n(),
            m.n()
        )));
    }
    if x.n() < 2 {
        return Err(SincError::DimensionMismatch(format!(
            "need at least 2 samples, got {}",
            x.n()
        )));
    }
    if x.p() < 2 {
        return Err(SincError::DimensionMismatch(format!(
            "need at least 2 count columns, got {}",
            x.p()
        )));
    }
    for j in 0..x.p() {
        if (0..x.n()).all(|i| x.values()[(i, j)] == 0) {
            return Err(SincError::DegenerateColumn(j));
        }
    }
    for j in 0..m.q() {
        for i in 0..m.n() {
            if !m.values()[(i, j)].is_finite() {
                return Err(SincError::NonFiniteEntry { row: i, col: j });
            }
        }
    }
    Ok(())
}

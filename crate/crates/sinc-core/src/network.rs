//! E-step edge posteriors and M-step updates for the precision matrix and
//! its scalar companions.
//!
//! Off-diagonal precision entries carry a two-component Gaussian scale
//! mixture: spike `N(0, nu0^2/tau)` versus slab `N(0, nu1^2/tau)` with prior
//! edge weight pi. The E-step turns each entry into a slab responsibility
//! p* and a blended reciprocal variance d*; the M-step then maximizes the
//! expected penalized Gaussian log likelihood one column at a time, holding
//! d* fixed, which keeps the matrix exactly symmetric and positive definite
//! by construction (each column update has Schur complement n/(lambda+s22)).

use nalgebra::{DMatrix, DVector};

use crate::error::SincError;
use crate::model::{Hyperparameters, NetworkState, SigmaStarMode, THETA_EPS};

/// Slab responsibility and blended precision scale for one off-diagonal
/// entry. With equal spike and slab scales the likelihood ratio is exactly
/// one, and p* reduces to pi bit-for-bit.
pub fn e_step_edge(omega_ij: f64, pi: f64, tau: f64, hp: &Hyperparameters) -> (f64, f64) {
    // log of spike/slab density ratio: t = ln(nu1/nu0) - w^2 tau/2 (1/nu0^2 - 1/nu1^2).
    let inv0 = 1.0 / (hp.nu0 * hp.nu0);
    let inv1 = 1.0 / (hp.nu1 * hp.nu1);
    let scale_gap = 0.5 * (inv0 - inv1);
    let t = (hp.nu1 / hp.nu0).ln() - omega_ij * omega_ij * tau * scale_gap;
    let p_star = if t == 0.0 {
        // Identical mixture components: the data cannot move the prior.
        pi
    } else {
        pi / (pi + (1.0 - pi) * t.exp())
    };
    let d_star = tau * ((1.0 - p_star) * inv0 + p_star * inv1);
    (p_star, d_star)
}

/// Refreshes the p* and d* matrices for every unordered pair. Diagonals are
/// untouched by the mixture prior and stay at zero.
pub fn e_step(net: &mut NetworkState, hp: &Hyperparameters) {
    let p = net.p();
    for i in 0..p {
        for j in (i + 1)..p {
            let (ps, ds) = e_step_edge(net.omega[(i, j)], net.pi, net.tau, hp);
            net.p_star[(i, j)] = ps;
            net.p_star[(j, i)] = ps;
            net.d_star[(i, j)] = ds;
            net.d_star[(j, i)] = ds;
        }
    }
}

/// Column-mean intercepts of the regression residuals:
/// `b0_j = mean_i(z_ij - (M b)_ij)`.
pub fn update_intercepts(z: &DMatrix<f64>, m: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
    let n = z.nrows() as f64;
    let fitted = m * b;
    DVector::from_fn(z.ncols(), |j, _| {
        (z.column(j) - fitted.column(j)).sum() / n
    })
}

/// Residual cross-products `S = (Z - MB - 1 b0')' (Z - MB - 1 b0')`, built
/// once per outer iteration and partitioned per working column.
#[derive(Debug, Clone)]
pub struct ResidualScatter {
    pub s: DMatrix<f64>,
}

impl ResidualScatter {
    pub fn new(z: &DMatrix<f64>, m: &DMatrix<f64>, b: &DMatrix<f64>, b0: &DVector<f64>) -> Self {
        assert_eq!(z.nrows(), m.nrows(), "sample count mismatch");
        assert_eq!(b.nrows(), m.ncols(), "coefficient rows mismatch");
        assert_eq!(b.ncols(), z.ncols(), "coefficient cols mismatch");
        assert_eq!(b0.len(), z.ncols(), "intercept length mismatch");
        let mut resid = z - m * b;
        for j in 0..resid.ncols() {
            resid.column_mut(j).add_scalar_mut(-b0[j]);
        }
        Self {
            s: resid.transpose() * resid,
        }
    }

    pub fn p(&self) -> usize {
        self.s.nrows()
    }
}

/// The working column's view of Omega: the complement block, its inverse
/// (the conditional covariance scale of the column update), and the current
/// column entries.
#[derive(Debug)]
pub struct OmegaPartition {
    pub others: Vec<usize>,
    pub omega11_inv: DMatrix<f64>,
    pub omega12: DVector<f64>,
    pub omega22: f64,
}

impl OmegaPartition {
    /// Extracts the partition for `col`, inverting the complement block.
    /// Fails with `SingularBlock` if that block is not positive definite.
    pub fn extract(omega: &DMatrix<f64>, col: usize) -> Result<Self, SincError> {
        let p = omega.nrows();
        let others: Vec<usize> = (0..p).filter(|&k| k != col).collect();
        let omega11 = omega.select_rows(others.iter()).select_columns(others.iter());
        let chol = omega11.cholesky().ok_or(SincError::SingularBlock(col))?;
        let omega12 = DVector::from_fn(p - 1, |k, _| omega[(others[k], col)]);
        Ok(Self {
            others,
            omega11_inv: chol.inverse(),
            omega12,
            omega22: omega[(col, col)],
        })
    }
}

/// One block-coordinate maximization of the expected penalized Gaussian log
/// likelihood over column `col` of Omega, holding every other column fixed:
///
/// ```text
/// omega12 <- -((s22 + lambda) Omega11^{-1} + diag(d*12))^{-1} s12
/// omega22 <- omega12' Omega11^{-1} omega12 + n/(lambda + s22)
/// ```
///
/// The column and its mirror row are written together, so symmetry is exact,
/// and the update's Schur complement n/(lambda+s22) > 0 keeps Omega positive
/// definite.
pub fn update_precision_column(
    omega: &mut DMatrix<f64>,
    scat: &ResidualScatter,
    d_star: &DMatrix<f64>,
    col: usize,
    n: usize,
    lambda: f64,
) -> Result<(), SincError> {
    let p = omega.nrows();
    let s22 = scat.s[(col, col)];
    if p == 1 {
        omega[(0, 0)] = n as f64 / (lambda + s22);
        return Ok(());
    }
    let part = OmegaPartition::extract(omega, col)?;
    let mut a = &part.omega11_inv * (s22 + lambda);
    for k in 0..p - 1 {
        a[(k, k)] += d_star[(part.others[k], col)];
    }
    let chol = a.cholesky().ok_or(SincError::SingularBlock(col))?;
    let s12 = DVector::from_fn(p - 1, |k, _| scat.s[(part.others[k], col)]);
    let omega12 = -chol.solve(&s12);
    let omega22 = (&part.omega11_inv * &omega12).dot(&omega12) + n as f64 / (lambda + s22);
    for k in 0..p - 1 {
        omega[(part.others[k], col)] = omega12[k];
        omega[(col, part.others[k])] = omega12[k];
    }
    omega[(col, col)] = omega22;
    Ok(())
}

/// Cycles column updates until the largest entry change in a full cycle
/// drops below `tol` or the cycle budget runs out. Returns the number of
/// cycles performed. d* stays fixed for the whole loop; the E-step refreshes
/// it once per outer iteration.
pub fn update_precision(
    omega: &mut DMatrix<f64>,
    scat: &ResidualScatter,
    d_star: &DMatrix<f64>,
    n: usize,
    lambda: f64,
    tol: f64,
    max_cycles: usize,
) -> Result<usize, SincError> {
    let p = omega.nrows();
    let mut cycles = 0;
    while cycles < max_cycles {
        let before = omega.clone();
        for col in 0..p {
            update_precision_column(omega, scat, d_star, col, n, lambda)?;
        }
        cycles += 1;
        let delta = (&*omega - &before).abs().max();
        if delta < tol {
            break;
        }
    }
    Ok(cycles)
}

/// Per-response inclusion rates:
/// `theta_j = (sum_k phi_kj + a_gamma - 1) / (q + a_gamma + b_gamma - 2)`,
/// clamped away from the boundary.
pub fn update_theta_gamma(
    phi: &DMatrix<f64>,
    hp: &Hyperparameters,
) -> Result<DVector<f64>, SincError> {
    let q = phi.nrows() as f64;
    let denom = q + hp.a_gamma + hp.b_gamma - 2.0;
    if denom <= 0.0 {
        return Err(SincError::DegenerateDenominator("theta_gamma"));
    }
    Ok(DVector::from_fn(phi.ncols(), |j, _| {
        ((phi.column(j).sum() + hp.a_gamma - 1.0) / denom).clamp(THETA_EPS, 1.0 - THETA_EPS)
    }))
}

/// Prior edge weight:
/// `pi = (a_pi + sum_{i<j} p*_ij - 1) / (a_pi + b_pi + p(p-1)/2 - 2)`,
/// with the expected edge count standing in for the latent indicators.
pub fn update_pi(p_star: &DMatrix<f64>, hp: &Hyperparameters) -> Result<f64, SincError> {
    let p = p_star.nrows();
    let pairs = (p * (p - 1) / 2) as f64;
    let denom = hp.a_pi + hp.b_pi + pairs - 2.0;
    if denom <= 0.0 {
        return Err(SincError::DegenerateDenominator("pi"));
    }
    // Summing in value order makes the result invariant under node
    // relabeling bit for bit, not just to rounding.
    let mut addends: Vec<f64> = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            addends.push(p_star[(i, j)]);
        }
    }
    addends.sort_unstable_by(|a, b| a.partial_cmp(b).expect("p* entries are never NaN"));
    let expected_edges: f64 = addends.iter().sum();
    Ok(((hp.a_pi + expected_edges - 1.0) / denom).clamp(THETA_EPS, 1.0 - THETA_EPS))
}

/// Global precision scale:
/// `tau = (a_tau - 1 + p(p-1)/2) / (b_tau - 2 + 0.5 sum_{i<j} w_ij^2 d~_ij)`
/// where `d~ = (1-p*)/nu0^2 + p*/nu1^2` is the tau-free mixture weight.
/// A non-positive denominator is reported so the caller can keep the
/// previous value.
pub fn update_tau(
    omega: &DMatrix<f64>,
    p_star: &DMatrix<f64>,
    hp: &Hyperparameters,
) -> Result<f64, SincError> {
    let p = omega.nrows();
    let inv0 = 1.0 / (hp.nu0 * hp.nu0);
    let inv1 = 1.0 / (hp.nu1 * hp.nu1);
    let mut weighted = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            let d_free = (1.0 - p_star[(i, j)]) * inv0 + p_star[(i, j)] * inv1;
            weighted += omega[(i, j)] * omega[(i, j)] * d_free;
        }
    }
    let numer = hp.a_tau - 1.0 + 0.5 * (p * (p - 1)) as f64;
    let denom = hp.b_tau - 2.0 + 0.5 * weighted;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(SincError::DegenerateDenominator("tau"));
    }
    let tau = numer / denom;
    if tau <= 0.0 || !tau.is_finite() {
        return Err(SincError::DegenerateDenominator("tau"));
    }
    Ok(tau)
}

/// Residual variance anchor of each regression column: the marginal variance
/// `(Omega^{-1})_jj` or the conditional `1/Omega_jj`.
///
/// Panics if Omega lost positive definiteness; that is a broken invariant,
/// not an input condition.
pub fn sigma_star(omega: &DMatrix<f64>, mode: SigmaStarMode) -> Vec<f64> {
    match mode {
        SigmaStarMode::Conditional => (0..omega.nrows()).map(|j| 1.0 / omega[(j, j)]).collect(),
        SigmaStarMode::Marginal => {
            let inv = omega
                .clone()
                .cholesky()
                .expect("precision matrix lost positive definiteness")
                .inverse();
            (0..omega.nrows()).map(|j| inv[(j, j)]).collect()
        }
    }
}

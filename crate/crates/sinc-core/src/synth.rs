//! Synthetic benchmark generation: structured graphs, the matching sparse
//! precision matrix, covariates with sparse effects, and compositional counts
//! drawn through the latent Gaussian / Dirichlet / multinomial cascade.
//!
//! Everything is driven by one seeded generator in a fixed draw order (graph,
//! edge signs, covariates, coefficients, intercepts, latent rows, totals,
//! abundance rows, count rows), so a seed pins the full dataset bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use crate::error::SincError;
use crate::model::{CountMatrix, CovariateMatrix};

/// Network shape used for a benchmark dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    /// Edge iff 0 < |i - j| <= bandwidth.
    Band { p: usize, bandwidth: usize },
    /// Nodes split into groups; every member ties to its group's hub only.
    Hub { p: usize, n_hubs: usize },
    /// Nodes split into even clusters; within-cluster edges are i.i.d.
    /// Bernoulli(within_prob).
    Cluster {
        p: usize,
        n_clusters: usize,
        within_prob: f64,
    },
    /// Every pair is an edge independently with probability edge_prob.
    Random { p: usize, edge_prob: f64 },
}

impl GraphSpec {
    pub fn p(&self) -> usize {
        match *self {
            GraphSpec::Band { p, .. }
            | GraphSpec::Hub { p, .. }
            | GraphSpec::Cluster { p, .. }
            | GraphSpec::Random { p, .. } => p,
        }
    }

    pub fn validate(&self) -> Result<(), SincError> {
        let fail = |msg: String| Err(SincError::InvalidConfig(msg));
        if self.p() < 2 {
            return fail(format!("graph needs at least 2 nodes, got {}", self.p()));
        }
        match *self {
            GraphSpec::Band { bandwidth, .. } => {
                if bandwidth == 0 {
                    return fail("band graph needs bandwidth >= 1".into());
                }
            }
            GraphSpec::Hub { p, n_hubs } => {
                if n_hubs == 0 || n_hubs > p {
                    return fail(format!("hub count {n_hubs} outside 1..={p}"));
                }
            }
            GraphSpec::Cluster {
                p,
                n_clusters,
                within_prob,
            } => {
                if n_clusters == 0 || n_clusters > p {
                    return fail(format!("cluster count {n_clusters} outside 1..={p}"));
                }
                if !(within_prob > 0.0 && within_prob < 1.0) {
                    return fail(format!("within-cluster probability {within_prob} outside (0, 1)"));
                }
            }
            GraphSpec::Random { edge_prob, .. } => {
                if !(edge_prob > 0.0 && edge_prob < 1.0) {
                    return fail(format!("edge probability {edge_prob} outside (0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Sign pattern for the off-diagonal precision entries on edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeSign {
    /// Every edge entry is +v.
    #[default]
    Positive,
    /// Each edge entry is +v or -v with equal probability.
    Random,
}

/// Knobs of the precision construction: edge magnitude `v`, diagonal
/// cushion `u`, and the sign pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSettings {
    pub v: f64,
    pub u: f64,
    pub sign: EdgeSign,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            v: 1.0,
            u: 1e-4,
            sign: EdgeSign::Positive,
        }
    }
}

/// Everything the generator knows about one dataset, including the pieces
/// inference never sees (true network, effects, abundances).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub adjacency: DMatrix<bool>,
    pub omega_true: DMatrix<f64>,
    pub b_true: DMatrix<f64>,
    pub b0_true: DVector<f64>,
    pub z_true: DMatrix<f64>,
    /// Relative abundance rows; each sums to one.
    pub h: DMatrix<f64>,
    pub counts: CountMatrix,
    pub covariates: CovariateMatrix,
}

impl GroundTruth {
    /// True coefficient support, the reference for selection scoring.
    pub fn coefficient_support(&self) -> DMatrix<bool> {
        self.b_true.map(|v| v != 0.0)
    }
}

/// Draws the adjacency for `spec` with its own generator.
pub fn generate_graph(spec: &GraphSpec, seed: u64) -> Result<DMatrix<bool>, SincError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(graph_edges(spec, &mut rng))
}

/// Builds an SPD precision matrix on the given adjacency: off-diagonal
/// entries of magnitude `v` on edges, then a constant diagonal of
/// |lambda_min| + 0.1 + u, which lifts the smallest eigenvalue to 0.1 + u.
pub fn generate_precision(
    adjacency: &DMatrix<bool>,
    settings: &GenerationSettings,
    seed: u64,
) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    precision_on(adjacency, settings, &mut rng)
}

/// Generates a complete benchmark dataset. One generator drives every stage,
/// in this order: graph, edge signs, covariates, coefficients, intercepts,
/// latent rows, totals, abundance rows, count rows.
pub fn generate_dataset(
    spec: &GraphSpec,
    n: usize,
    q: usize,
    settings: &GenerationSettings,
    seed: u64,
) -> Result<GroundTruth, SincError> {
    spec.validate()?;
    if n < 2 {
        return Err(SincError::InvalidConfig(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    let p = spec.p();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let adjacency = graph_edges(spec, &mut rng);
    let omega_true = precision_on(&adjacency, settings, &mut rng);

    // Covariates: standard normal, then centered and scaled per column with
    // the n-1 sample standard deviation.
    let mut m = DMatrix::zeros(n, q);
    for i in 0..n {
        for k in 0..q {
            m[(i, k)] = StandardNormal.sample(&mut rng);
        }
    }
    for k in 0..q {
        let mean = m.column(k).sum() / n as f64;
        let mut ss = 0.0;
        for i in 0..n {
            m[(i, k)] -= mean;
            ss += m[(i, k)] * m[(i, k)];
        }
        let sd = (ss / (n - 1) as f64).sqrt();
        if sd > 0.0 {
            for i in 0..n {
                m[(i, k)] /= sd;
            }
        }
    }

    // Sparse effects: each entry is down-signal, up-signal, or zero with
    // probabilities 0.1 / 0.1 / 0.8; magnitudes are uniform in [1/2, 1].
    let mut b_true = DMatrix::zeros(q, p);
    for k in 0..q {
        for j in 0..p {
            let coin: f64 = rng.random();
            if coin < 0.1 {
                b_true[(k, j)] = -1.0 + 0.5 * rng.random::<f64>();
            } else if coin < 0.2 {
                b_true[(k, j)] = 0.5 + 0.5 * rng.random::<f64>();
            }
        }
    }

    // Intercepts: a high-abundance band [6, 8] with probability 0.2, the
    // common band [2, 4] otherwise.
    let mut b0_true = DVector::zeros(p);
    for j in 0..p {
        let coin: f64 = rng.random();
        let t: f64 = rng.random();
        b0_true[j] = if coin < 0.2 { 6.0 + 2.0 * t } else { 2.0 + 2.0 * t };
    }

    // Latent abundances: row i is MVN(M_i B + B0, Omega^{-1}), sampled by
    // solving L' u = eps against the precision's Cholesky factor.
    let chol = omega_true
        .clone()
        .cholesky()
        .expect("generated precision is SPD by construction");
    let lt = chol.l().transpose();
    let mean = {
        let mut mb = &m * &b_true;
        for j in 0..p {
            mb.column_mut(j).add_scalar_mut(b0_true[j]);
        }
        mb
    };
    let mut z_true = DMatrix::zeros(n, p);
    for i in 0..n {
        let eps = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let u = lt
            .solve_upper_triangular(&eps)
            .expect("Cholesky factor has positive diagonal");
        for j in 0..p {
            z_true[(i, j)] = mean[(i, j)] + u[j];
        }
    }

    // Sequencing depths: normal around 3000, rounded half-to-even.
    let depth = Normal::new(3000.0, 250.0).expect("static parameters");
    let totals: Vec<u64> = (0..n)
        .map(|_| {
            let t: f64 = depth.sample(&mut rng);
            t.round_ties_even().max(0.0) as u64
        })
        .collect();

    let mut h = DMatrix::zeros(n, p);
    for i in 0..n {
        let alpha: Vec<f64> = (0..p).map(|j| z_true[(i, j)].exp()).collect();
        let row = dirichlet_row(&alpha, &mut rng);
        for j in 0..p {
            h[(i, j)] = row[j];
        }
    }

    let mut counts = DMatrix::zeros(n, p);
    for i in 0..n {
        let h_row: Vec<f64> = (0..p).map(|j| h[(i, j)]).collect();
        let row = multinomial_row(&h_row, totals[i], &mut rng);
        for j in 0..p {
            counts[(i, j)] = row[j];
        }
    }

    Ok(GroundTruth {
        adjacency,
        omega_true,
        b_true,
        b0_true,
        z_true,
        h,
        counts: CountMatrix::new(counts),
        covariates: CovariateMatrix::new(m)?,
    })
}

fn graph_edges(spec: &GraphSpec, rng: &mut ChaCha8Rng) -> DMatrix<bool> {
    let p = spec.p();
    let mut adj = DMatrix::from_element(p, p, false);
    let connect = |a: &mut DMatrix<bool>, i: usize, j: usize| {
        a[(i, j)] = true;
        a[(j, i)] = true;
    };
    match *spec {
        GraphSpec::Band { bandwidth, .. } => {
            for i in 0..p {
                for j in (i + 1)..p.min(i + bandwidth + 1) {
                    connect(&mut adj, i, j);
                }
            }
        }
        GraphSpec::Hub { n_hubs, .. } => {
            for group in partition(p, n_hubs) {
                let hub = group.start;
                for member in group.start + 1..group.end {
                    connect(&mut adj, hub, member);
                }
            }
        }
        GraphSpec::Cluster {
            n_clusters,
            within_prob,
            ..
        } => {
            for group in partition(p, n_clusters) {
                for i in group.start..group.end {
                    for j in (i + 1)..group.end {
                        if rng.random::<f64>() < within_prob {
                            connect(&mut adj, i, j);
                        }
                    }
                }
            }
        }
        GraphSpec::Random { edge_prob, .. } => {
            for i in 0..p {
                for j in (i + 1)..p {
                    if rng.random::<f64>() < edge_prob {
                        connect(&mut adj, i, j);
                    }
                }
            }
        }
    }
    adj
}

/// Splits 0..p into `groups` contiguous ranges whose sizes differ by at most
/// one; earlier groups take the remainder.
fn partition(p: usize, groups: usize) -> Vec<std::ops::Range<usize>> {
    let base = p / groups;
    let extra = p % groups;
    let mut out = Vec::with_capacity(groups);
    let mut start = 0;
    for g in 0..groups {
        let size = base + usize::from(g < extra);
        out.push(start..start + size);
        start += size;
    }
    out
}

fn precision_on(
    adjacency: &DMatrix<bool>,
    settings: &GenerationSettings,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let p = adjacency.nrows();
    let mut omega = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            if adjacency[(i, j)] {
                let value = match settings.sign {
                    EdgeSign::Positive => settings.v,
                    EdgeSign::Random => {
                        if rng.random::<bool>() {
                            settings.v
                        } else {
                            -settings.v
                        }
                    }
                };
                omega[(i, j)] = value;
                omega[(j, i)] = value;
            }
        }
    }
    let lambda_min = omega.symmetric_eigenvalues().min();
    let shift = lambda_min.abs() + 0.1 + settings.u;
    for i in 0..p {
        omega[(i, i)] += shift;
    }
    omega
}

/// One Dirichlet draw as normalized Gamma(alpha_j, 1) variates.
pub(crate) fn dirichlet_row(alpha: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut g: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let sum: f64 = g.iter().sum();
    assert!(sum > 0.0, "all gamma draws underflowed to zero");
    for v in &mut g {
        *v /= sum;
    }
    g
}

/// One multinomial draw via sequential conditional binomials, so the row
/// sums to `total` exactly.
pub(crate) fn multinomial_row(h: &[f64], total: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let p = h.len();
    let mut out = vec![0u64; p];
    let mut remaining = total;
    let mut mass_left = 1.0f64;
    for j in 0..p - 1 {
        if remaining == 0 {
            break;
        }
        let prob = (h[j] / mass_left).clamp(0.0, 1.0);
        let draw = if prob >= 1.0 {
            remaining
        } else {
            rand_distr::Binomial::new(remaining, prob)
                .expect("probability is clamped to [0, 1]")
                .sample(rng)
        };
        out[j] = draw;
        remaining -= draw;
        mass_left -= h[j];
        if mass_left <= 0.0 {
            break;
        }
    }
    out[p - 1] = remaining;
    out
}

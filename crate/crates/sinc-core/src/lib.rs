//! Joint estimation of a sparse conditional-dependence network and sparse
//! covariate effects for compositional count data.
//!
//! Counts are modeled through a latent Gaussian layer: each sample's log
//! abundances follow a multivariate normal whose precision matrix carries
//! the network and whose mean carries covariate effects; observed counts
//! arise from a Dirichlet-multinomial on the exponentiated abundances.
//! Spike-and-slab priors on both the precision off-diagonals and the
//! coefficients yield posterior inclusion probabilities for edges and
//! effects. Fitting alternates closed-form coordinate maximization with a
//! variational regression sweep and a quasi-Newton latent update, tracked by
//! an evidence lower bound.
//!
//! Crate layout:
//! - [`model`]: shared state types, hyperparameters, configuration.
//! - [`dm`]: Dirichlet-multinomial kernel and the latent-row optimizer.
//! - [`lbfgs`]: bounded-memory quasi-Newton minimizer.
//! - [`vi`]: per-column spike-and-slab regression sweeps.
//! - [`network`]: edge posteriors and precision-matrix block updates.
//! - [`elbo`]: objective evaluation.
//! - [`driver`]: initialization, outer loop, spike-scale grid search.
//! - [`synth`]: benchmark data generation.
//! - [`metrics`]: selection scoring against ground truth.

pub mod dm;
pub mod driver;
pub mod elbo;
pub mod error;
pub mod lbfgs;
pub mod metrics;
pub mod model;
pub mod network;
pub mod synth;
pub mod vi;

pub use driver::{default_nu0_grid, fit_grid, fit_once, GridResult};
pub use elbo::{compute_elbo, ElboBreakdown};
pub use error::SincError;
pub use metrics::{confusion, roc_auc, scores, ConfusionCounts, SelectionScores, SelectionUniverse};
pub use model::{
    CountMatrix, CovariateMatrix, FitConfig, FitResult, Hyperparameters, LatentState,
    LbfgsSettings, NetworkState, OmegaDiagnostic, RegressionState, SigmaStarMode,
};
pub use synth::{
    generate_dataset, generate_graph, generate_precision, EdgeSign, GenerationSettings, GraphSpec,
    GroundTruth,
};

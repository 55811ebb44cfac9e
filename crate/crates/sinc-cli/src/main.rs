//! Command-line front end: simulate benchmark data, fit the model at one
//! spike scale or across a grid of them, and score estimates against truth.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "sinc",
    version,
    about = "Sparse network and covariate inference for compositional count data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a known network and known effects.
    Simulate(SimulateArgs),
    /// Fit the model at one spike scale.
    Fit(FitArgs),
    /// Fit across a spike-scale grid and keep the fit nearest a target density.
    Grid(GridArgs),
    /// Score an estimate directory against a truth directory.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphKind {
    /// Edges between dimensions within a fixed index distance.
    Band,
    /// Star-shaped groups, each tied to its own hub.
    Hub,
    /// Dense pockets with no edges between them.
    Cluster,
    /// Independent coin flip for every pair.
    Random,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory for the dataset and its generating truth.
    #[arg(long)]
    pub out: PathBuf,
    /// Network shape among the count dimensions.
    #[arg(long, value_enum, default_value_t = GraphKind::Random)]
    pub graph: GraphKind,
    /// Number of count dimensions (taxa).
    #[arg(long)]
    pub p: usize,
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    /// Number of covariates.
    #[arg(long, default_value_t = 0)]
    pub q: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Band graph: connect dimensions within this index distance.
    #[arg(long, default_value_t = 2)]
    pub bandwidth: usize,
    /// Hub graph: number of hubs.
    #[arg(long, default_value_t = 3)]
    pub hubs: usize,
    /// Cluster graph: number of clusters.
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    /// Cluster graph: edge probability within a cluster.
    #[arg(long, default_value_t = 0.5)]
    pub within_prob: f64,
    /// Random graph: edge probability for every pair.
    #[arg(long, default_value_t = 0.1)]
    pub edge_prob: f64,
    /// Magnitude of the precision entries put on edges.
    #[arg(long, default_value_t = 1.0)]
    pub edge_magnitude: f64,
    /// Diagonal cushion beyond the positive-definiteness lift.
    #[arg(long, default_value_t = 1e-4)]
    pub diagonal_cushion: f64,
    /// Draw each edge sign at random instead of keeping all positive.
    #[arg(long)]
    pub random_sign: bool,
}

/// Inputs and setting overrides shared by `fit` and `grid`.
#[derive(Debug, Args)]
pub struct FitInputArgs {
    /// Count table, samples by taxa.
    #[arg(long)]
    pub counts: PathBuf,
    /// Covariate table, samples by covariates; omit for a network-only fit.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Key=value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed recorded with the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Spike standard deviation of the edge prior. For `grid` this collapses
    /// the sweep to a single value.
    #[arg(long)]
    pub nu0: Option<f64>,
    /// Learn the global precision scale instead of holding it fixed.
    #[arg(long)]
    pub learn_tau: bool,
    /// Hold every covariate effect at zero (network-only variant).
    #[arg(long)]
    pub constrain_b_zero: bool,
    /// Hold the precision matrix at the identity (regression-only variant).
    #[arg(long)]
    pub constrain_omega_identity: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: FitInputArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub input: FitInputArgs,
    /// Comma-separated spike scales; defaults to 20 values over 1e-4..1e-1.
    #[arg(long, value_delimiter = ',')]
    pub nu0_grid: Option<Vec<f64>>,
    /// Edge density the grid selection aims for.
    #[arg(long)]
    pub sparsity_target: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory holding a fitted model (adjacency.tsv and, with covariates,
    /// phi.tsv).
    #[arg(long)]
    pub estimate: PathBuf,
    /// Directory holding the generating truth (adjacency_true.tsv, b_true.tsv).
    #[arg(long)]
    pub truth: PathBuf,
    /// Output directory for metrics.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = commands::run(cli) {
        eprintln!("error[{}]: {error}", error.category());
        std::process::exit(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn grid_flags_parse_with_spec_spellings() {
        let cli = Cli::try_parse_from([
            "sinc",
            "grid",
            "--counts",
            "c.tsv",
            "--covariates",
            "m.tsv",
            "--out",
            "o",
            "--nu0-grid",
            "0.001,0.01",
            "--sparsity-target",
            "0.2",
            "--learn-tau",
            "--threads",
            "4",
        ])
        .unwrap();
        match cli.command {
            Command::Grid(args) => {
                assert_eq!(args.nu0_grid, Some(vec![0.001, 0.01]));
                assert_eq!(args.sparsity_target, Some(0.2));
                assert!(args.input.learn_tau);
                assert_eq!(args.input.threads, Some(4));
            }
            _ => panic!("expected the grid subcommand"),
        }
    }

    #[test]
    fn fit_constraint_flags_parse() {
        let cli = Cli::try_parse_from([
            "sinc",
            "fit",
            "--counts",
            "c.tsv",
            "--out",
            "o",
            "--constrain-b-zero",
            "--nu0",
            "0.05",
        ])
        .unwrap();
        match cli.command {
            Command::Fit(args) => {
                assert!(args.input.constrain_b_zero);
                assert!(!args.input.constrain_omega_identity);
                assert_eq!(args.input.nu0, Some(0.05));
                assert_eq!(args.input.covariates, None);
            }
            _ => panic!("expected the fit subcommand"),
        }
    }
}

//! Run settings: defaults, overridden by a key=value settings file,
//! overridden by command-line flags, in that order. A resolved run is
//! recorded next to its outputs as `manifest.json`; the record holds the
//! inputs and every effective setting, and deliberately nothing volatile,
//! so rerunning from the same record reproduces the outputs byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sinc_core::{FitConfig, Hyperparameters, SigmaStarMode};

use crate::error::CliError;

/// Flag values collected from the command line; `None` means not given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub nu0: Option<f64>,
    pub learn_tau: bool,
    pub constrain_b_zero: bool,
    pub constrain_omega_identity: bool,
    pub nu0_grid: Option<Vec<f64>>,
    pub sparsity_target: Option<f64>,
}

/// Everything a fit or grid run needs, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub hyper: Hyperparameters,
    pub fit: FitConfig,
    /// Spike scales for grid runs; `None` falls back to the built-in grid.
    pub nu0_grid: Option<Vec<f64>>,
    /// Edge density the grid selection aims for.
    pub sparsity_target: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            hyper: Hyperparameters::default(),
            fit: FitConfig::default(),
            nu0_grid: None,
            sparsity_target: 0.1,
        }
    }
}

impl RunSettings {
    /// Defaults, then the settings file, then command-line flags.
    pub fn resolve(config: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut settings = RunSettings::default();
        if let Some(path) = config {
            settings.apply_file(path)?;
        }
        settings.apply_overrides(overrides);
        Ok(settings)
    }

    fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{}:{}", path.display(), i + 1);
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("{at}: expected key=value, got {line:?}")));
            };
            self.apply_key(key.trim(), value.trim(), &at)?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str, at: &str) -> Result<(), CliError> {
        fn bad<T>(at: &str, key: &str, value: &str) -> Result<T, CliError> {
            Err(CliError::Config(format!("{at}: cannot parse {key}={value}")))
        }
        fn f64_of(at: &str, key: &str, value: &str) -> Result<f64, CliError> {
            value.parse().or_else(|_| bad(at, key, value))
        }
        fn usize_of(at: &str, key: &str, value: &str) -> Result<usize, CliError> {
            value.parse().or_else(|_| bad(at, key, value))
        }
        fn bool_of(at: &str, key: &str, value: &str) -> Result<bool, CliError> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => bad(at, key, value),
            }
        }

        match key {
            "nu0" => self.hyper.nu0 = f64_of(at, key, value)?,
            "nu1" => self.hyper.nu1 = f64_of(at, key, value)?,
            "nu_b" => self.hyper.nu_b = f64_of(at, key, value)?,
            "lambda" => self.hyper.lambda = f64_of(at, key, value)?,
            "a_gamma" => self.hyper.a_gamma = f64_of(at, key, value)?,
            "b_gamma" => self.hyper.b_gamma = f64_of(at, key, value)?,
            "a_pi" => self.hyper.a_pi = f64_of(at, key, value)?,
            "b_pi" => self.hyper.b_pi = f64_of(at, key, value)?,
            "a_tau" => self.hyper.a_tau = f64_of(at, key, value)?,
            "b_tau" => self.hyper.b_tau = f64_of(at, key, value)?,
            "learn_tau" => self.hyper.learn_tau = bool_of(at, key, value)?,
            "outer_tol" => self.fit.outer_tol = f64_of(at, key, value)?,
            "inner_tol" => self.fit.inner_tol = f64_of(at, key, value)?,
            "max_outer_iters" => self.fit.max_outer_iters = usize_of(at, key, value)?,
            "max_inner_iters" => self.fit.max_inner_iters = usize_of(at, key, value)?,
            "lbfgs_memory" => self.fit.lbfgs.memory = usize_of(at, key, value)?,
            "lbfgs_grad_tol" => self.fit.lbfgs.grad_tol = f64_of(at, key, value)?,
            "lbfgs_max_evals" => self.fit.lbfgs.max_evals = usize_of(at, key, value)?,
            "threads" => self.fit.thread_count = usize_of(at, key, value)?,
            "seed" => self.fit.seed = value.parse().or_else(|_| bad(at, key, value))?,
            "constrain_b_zero" => self.fit.constrain_b_zero = bool_of(at, key, value)?,
            "constrain_omega_identity" => self.fit.constrain_omega_identity = bool_of(at, key, value)?,
            "sigma_star" => {
                self.fit.sigma_star_mode = match value {
                    "marginal" => SigmaStarMode::Marginal,
                    "conditional" => SigmaStarMode::Conditional,
                    _ => return bad(at, key, value),
                }
            }
            "nu0_grid" => {
                let values: Result<Vec<f64>, _> =
                    value.split(',').map(|v| v.trim().parse::<f64>()).collect();
                self.nu0_grid = Some(values.or_else(|_| bad(at, key, value))?);
            }
            "sparsity_target" => self.sparsity_target = f64_of(at, key, value)?,
            _ => return Err(CliError::Config(format!("{at}: unknown key {key:?}"))),
        }
        Ok(())
    }

    fn apply_overrides(&mut self, ov: &Overrides) {
        if let Some(seed) = ov.seed {
            self.fit.seed = seed;
        }
        if let Some(threads) = ov.threads {
            self.fit.thread_count = threads;
        }
        if let Some(nu0) = ov.nu0 {
            self.hyper.nu0 = nu0;
        }
        if ov.learn_tau {
            self.hyper.learn_tau = true;
        }
        if ov.constrain_b_zero {
            self.fit.constrain_b_zero = true;
        }
        if ov.constrain_omega_identity {
            self.fit.constrain_omega_identity = true;
        }
        if let Some(grid) = &ov.nu0_grid {
            self.nu0_grid = Some(grid.clone());
        }
        if let Some(target) = ov.sparsity_target {
            self.sparsity_target = target;
        }
    }
}

/// Effective settings as stored in the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedSettings {
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
    pub learn_tau: bool,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub lbfgs_memory: usize,
    pub lbfgs_grad_tol: f64,
    pub lbfgs_max_evals: usize,
    pub threads: usize,
    pub seed: u64,
    pub constrain_b_zero: bool,
    pub constrain_omega_identity: bool,
    pub sigma_star: String,
}

impl RecordedSettings {
    pub fn new(hyper: &Hyperparameters, fit: &FitConfig) -> Self {
        Self {
            nu0: hyper.nu0,
            nu1: hyper.nu1,
            nu_b: hyper.nu_b,
            lambda: hyper.lambda,
            a_gamma: hyper.a_gamma,
            b_gamma: hyper.b_gamma,
            a_pi: hyper.a_pi,
            b_pi: hyper.b_pi,
            a_tau: hyper.a_tau,
            b_tau: hyper.b_tau,
            learn_tau: hyper.learn_tau,
            outer_tol: fit.outer_tol,
            inner_tol: fit.inner_tol,
            max_outer_iters: fit.max_outer_iters,
            max_inner_iters: fit.max_inner_iters,
            lbfgs_memory: fit.lbfgs.memory,
            lbfgs_grad_tol: fit.lbfgs.grad_tol,
            lbfgs_max_evals: fit.lbfgs.max_evals,
            threads: fit.thread_count,
            seed: fit.seed,
            constrain_b_zero: fit.constrain_b_zero,
            constrain_omega_identity: fit.constrain_omega_identity,
            sigma_star: match fit.sigma_star_mode {
                SigmaStarMode::Marginal => "marginal".into(),
                SigmaStarMode::Conditional => "conditional".into(),
            },
        }
    }
}

/// Grid-specific additions to the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedGrid {
    pub nu0_values: Vec<f64>,
    pub sparsity_target: f64,
    pub selected_index: usize,
    pub selected_nu0: f64,
}

/// Generator parameters recorded by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedSimulation {
    pub graph: String,
    pub p: usize,
    pub n: usize,
    pub q: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hubs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_prob: Option<f64>,
    pub edge_magnitude: f64,
    pub diagonal_cushion: f64,
    pub random_sign: bool,
}

/// How the run ended; recorded for fits and grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedOutcome {
    pub iterations: usize,
    pub converged: bool,
    pub final_elbo: f64,
    pub edge_density: f64,
    pub warnings: Vec<String>,
}

/// The run record written as `manifest.json`. Holds inputs and effective
/// settings only; no timestamps or machine details, so identical runs
/// produce identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariates: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settings: Option<RecordedSettings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<RecordedGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<RecordedSimulation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<RecordedOutcome>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: "sinc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            counts: None,
            covariates: None,
            settings: None,
            grid: None,
            simulation: None,
            outcome: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

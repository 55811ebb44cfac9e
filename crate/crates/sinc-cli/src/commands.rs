//! Implementations behind the four subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use sinc_core::{
    confusion, default_nu0_grid, fit_grid, fit_once, generate_dataset, scores, ConfusionCounts,
    CountMatrix, CovariateMatrix, EdgeSign, FitResult, GenerationSettings, GraphSpec,
    SelectionScores, SelectionUniverse,
};

use crate::config::{
    Overrides, RecordedGrid, RecordedOutcome, RecordedSettings, RecordedSimulation, RunManifest,
    RunSettings,
};
use crate::error::CliError;
use crate::io::{
    generated_names, load_matrix, write_fit_tables, write_text, write_truth_tables, MatrixKind,
};
use crate::{Cli, Command, EvaluateArgs, FitArgs, FitInputArgs, GraphKind, GridArgs, SimulateArgs};

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args),
        Command::Grid(args) => grid(args),
        Command::Evaluate(args) => evaluate(args),
    }
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let spec = match args.graph {
        GraphKind::Band => GraphSpec::Band {
            p: args.p,
            bandwidth: args.bandwidth,
        },
        GraphKind::Hub => GraphSpec::Hub {
            p: args.p,
            n_hubs: args.hubs,
        },
        GraphKind::Cluster => GraphSpec::Cluster {
            p: args.p,
            n_clusters: args.clusters,
            within_prob: args.within_prob,
        },
        GraphKind::Random => GraphSpec::Random {
            p: args.p,
            edge_prob: args.edge_prob,
        },
    };
    let settings = GenerationSettings {
        v: args.edge_magnitude,
        u: args.diagonal_cushion,
        sign: if args.random_sign {
            EdgeSign::Random
        } else {
            EdgeSign::Positive
        },
    };
    let truth = generate_dataset(&spec, args.n, args.q, &settings, args.seed)?;
    write_truth_tables(&args.out, &truth)?;

    let mut manifest = RunManifest::new("simulate");
    manifest.simulation = Some(RecordedSimulation {
        graph: match args.graph {
            GraphKind::Band => "band",
            GraphKind::Hub => "hub",
            GraphKind::Cluster => "cluster",
            GraphKind::Random => "random",
        }
        .into(),
        p: args.p,
        n: args.n,
        q: args.q,
        seed: args.seed,
        bandwidth: matches!(args.graph, GraphKind::Band).then_some(args.bandwidth),
        hubs: matches!(args.graph, GraphKind::Hub).then_some(args.hubs),
        clusters: matches!(args.graph, GraphKind::Cluster).then_some(args.clusters),
        within_prob: matches!(args.graph, GraphKind::Cluster).then_some(args.within_prob),
        edge_prob: matches!(args.graph, GraphKind::Random).then_some(args.edge_prob),
        edge_magnitude: args.edge_magnitude,
        diagonal_cushion: args.diagonal_cushion,
        random_sign: args.random_sign,
    });
    manifest.write(&args.out.join("manifest.json"))?;

    let edges = (0..args.p)
        .flat_map(|i| (i + 1..args.p).map(move |j| (i, j)))
        .filter(|&(i, j)| truth.adjacency[(i, j)])
        .count();
    println!(
        "simulate: {} samples, {} taxa, {} covariates, {} edges -> {}",
        args.n,
        args.p,
        args.q,
        edges,
        args.out.display()
    );
    Ok(())
}

struct FitInputs {
    x: CountMatrix,
    m: CovariateMatrix,
    taxa: Vec<String>,
    covariates: Vec<String>,
}

fn load_inputs(args: &FitInputArgs) -> Result<FitInputs, CliError> {
    let counts = load_matrix(&args.counts, MatrixKind::Counts)?;
    let x = CountMatrix::new(counts.to_counts());
    let taxa = counts
        .column_names
        .unwrap_or_else(|| generated_names("taxon", x.p()));
    let (m_values, covariates) = match &args.covariates {
        Some(path) => {
            let loaded = load_matrix(path, MatrixKind::Reals)?;
            let names = loaded
                .column_names
                .unwrap_or_else(|| generated_names("cov", loaded.values.ncols()));
            (loaded.values, names)
        }
        None => (DMatrix::zeros(x.n(), 0), Vec::new()),
    };
    let m = CovariateMatrix::new(m_values)?;
    Ok(FitInputs {
        x,
        m,
        taxa,
        covariates,
    })
}

fn overrides_from(
    args: &FitInputArgs,
    nu0_grid: Option<Vec<f64>>,
    sparsity_target: Option<f64>,
) -> Overrides {
    Overrides {
        seed: args.seed,
        threads: args.threads,
        nu0: args.nu0,
        learn_tau: args.learn_tau,
        constrain_b_zero: args.constrain_b_zero,
        constrain_omega_identity: args.constrain_omega_identity,
        nu0_grid,
        sparsity_target,
    }
}

fn outcome_of(result: &FitResult) -> RecordedOutcome {
    RecordedOutcome {
        iterations: result.iterations,
        converged: result.converged,
        final_elbo: result.final_elbo(),
        edge_density: result.edge_density(),
        warnings: result.warnings.clone(),
    }
}

fn report_warnings(result: &FitResult) {
    for warning in &result.warnings {
        eprintln!("warning: {warning}");
    }
}

fn fit(args: FitArgs) -> Result<(), CliError> {
    let input = args.input;
    let settings = RunSettings::resolve(
        input.config.as_deref(),
        &overrides_from(&input, None, None),
    )?;
    let data = load_inputs(&input)?;
    let result = fit_once(&data.x, &data.m, &settings.hyper, &settings.fit)?;

    write_fit_tables(&input.out, &result, &data.taxa, &data.covariates)?;
    let mut manifest = RunManifest::new("fit");
    manifest.counts = Some(input.counts.display().to_string());
    manifest.covariates = input.covariates.as_ref().map(|p| p.display().to_string());
    manifest.settings = Some(RecordedSettings::new(&settings.hyper, &settings.fit));
    manifest.outcome = Some(outcome_of(&result));
    manifest.write(&input.out.join("manifest.json"))?;

    report_warnings(&result);
    println!(
        "fit: {} iterations, converged = {}, objective {:.6e}, edge density {:.4} -> {}",
        result.iterations,
        result.converged,
        result.final_elbo(),
        result.edge_density(),
        input.out.display()
    );
    Ok(())
}

fn grid(args: GridArgs) -> Result<(), CliError> {
    let input = args.input;
    // A bare --nu0 collapses the sweep to that single scale.
    let cli_grid = args
        .nu0_grid
        .clone()
        .or_else(|| input.nu0.map(|value| vec![value]));
    let settings = RunSettings::resolve(
        input.config.as_deref(),
        &overrides_from(&input, cli_grid, args.sparsity_target),
    )?;
    let nu0_values = settings.nu0_grid.clone().unwrap_or_else(default_nu0_grid);
    let data = load_inputs(&input)?;
    let result = fit_grid(
        &data.x,
        &data.m,
        &settings.hyper,
        &settings.fit,
        &nu0_values,
        settings.sparsity_target,
        None,
    )?;

    fs::create_dir_all(&input.out).map_err(|source| CliError::Io {
        path: input.out.display().to_string(),
        source,
    })?;
    let mut summary =
        String::from("nu0\tdirectory\tedge_density\telbo\titerations\tconverged\tselected\n");
    for (i, fit) in result.fits.iter().enumerate() {
        let dir_name = format!("nu0_{i:02}");
        write_fit_tables(&input.out.join(&dir_name), fit, &data.taxa, &data.covariates)?;
        let _ = write!(summary, "{:.16e}\t{dir_name}\t", result.nu0_values[i]);
        let _ = write!(summary, "{:.16e}\t{:.16e}\t", fit.edge_density(), fit.final_elbo());
        let _ = writeln!(
            summary,
            "{}\t{}\t{}",
            fit.iterations,
            u8::from(fit.converged),
            u8::from(i == result.selected_index)
        );
    }
    write_text(&input.out.join("grid_summary.tsv"), &summary)?;
    let selected = result.selected();
    write_fit_tables(
        &input.out.join("selected"),
        selected,
        &data.taxa,
        &data.covariates,
    )?;

    let mut manifest = RunManifest::new("grid");
    manifest.counts = Some(input.counts.display().to_string());
    manifest.covariates = input.covariates.as_ref().map(|p| p.display().to_string());
    manifest.settings = Some(RecordedSettings::new(&settings.hyper, &settings.fit));
    manifest.grid = Some(RecordedGrid {
        nu0_values: result.nu0_values.clone(),
        sparsity_target: settings.sparsity_target,
        selected_index: result.selected_index,
        selected_nu0: result.nu0_values[result.selected_index],
    });
    manifest.outcome = Some(outcome_of(selected));
    manifest.write(&input.out.join("manifest.json"))?;

    report_warnings(selected);
    println!(
        "grid: {} fits, selected nu0 {:.3e} with edge density {:.4} -> {}",
        result.fits.len(),
        result.nu0_values[result.selected_index],
        selected.edge_density(),
        input.out.display()
    );
    Ok(())
}

/// Loads the first existing candidate as a boolean selection.
fn load_flags(
    dir: &Path,
    candidates: &[(&str, fn(f64) -> bool)],
) -> Result<Option<DMatrix<bool>>, CliError> {
    for (name, positive) in candidates {
        let path = dir.join(name);
        if path.exists() {
            let loaded = load_matrix(&path, MatrixKind::Reals)?;
            return Ok(Some(loaded.values.map(positive)));
        }
    }
    Ok(None)
}

fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let nonzero: fn(f64) -> bool = |v| v != 0.0;
    let majority: fn(f64) -> bool = |v| v > 0.5;

    let mut rows: Vec<(&str, ConfusionCounts, SelectionScores)> = Vec::new();

    let est_edges = load_flags(
        &args.estimate,
        &[("adjacency.tsv", nonzero), ("adjacency_true.tsv", nonzero)],
    )?;
    let true_edges = load_flags(
        &args.truth,
        &[("adjacency_true.tsv", nonzero), ("adjacency.tsv", nonzero)],
    )?;
    if let (Some(est), Some(truth)) = (est_edges, true_edges) {
        let counts = confusion(&est, &truth, SelectionUniverse::Edges)?;
        rows.push(("edges", counts, scores(&counts)));
    }

    let est_coefficients = load_flags(
        &args.estimate,
        &[("phi.tsv", majority), ("b.tsv", nonzero)],
    )?;
    let true_coefficients = load_flags(&args.truth, &[("b_true.tsv", nonzero)])?;
    if let (Some(est), Some(truth)) = (est_coefficients, true_coefficients) {
        let counts = confusion(&est, &truth, SelectionUniverse::Coefficients)?;
        rows.push(("coefficients", counts, scores(&counts)));
    }

    if rows.is_empty() {
        return Err(CliError::Config(format!(
            "nothing to score: no selection tables found under {} and {}",
            args.estimate.display(),
            args.truth.display()
        )));
    }

    fs::create_dir_all(&args.out).map_err(|source| CliError::Io {
        path: args.out.display().to_string(),
        source,
    })?;
    let mut out = String::from(
        "universe\ttrue_positives\tfalse_positives\tfalse_negatives\ttrue_negatives\ttpr\tfpr\tf1\tmcc\n",
    );
    for (universe, counts, score) in &rows {
        let _ = write!(
            out,
            "{universe}\t{}\t{}\t{}\t{}\t",
            counts.true_positives,
            counts.false_positives,
            counts.false_negatives,
            counts.true_negatives
        );
        let _ = writeln!(
            out,
            "{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}",
            score.tpr, score.fpr, score.f1, score.mcc
        );
    }
    write_text(&args.out.join("metrics.tsv"), &out)?;

    for (universe, _, score) in &rows {
        println!(
            "evaluate: {universe} tpr {:.4} fpr {:.4} f1 {:.4} mcc {:.4}",
            score.tpr, score.fpr, score.f1, score.mcc
        );
    }
    Ok(())
}

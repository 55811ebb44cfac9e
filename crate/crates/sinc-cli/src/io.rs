//! Delimited-table reading and writing for every file the tool touches.
//!
//! Tables are plain text: one row per line, fields separated by tabs, commas,
//! or runs of whitespace (detected from the first line). An optional header
//! row names the columns and an optional first column names the rows; both
//! are detected by trying to parse fields as numbers, so purely numeric
//! labels are indistinguishable from data and are read as data. Written
//! files always use tabs, carry a header, and print floats with 17
//! significant digits, which is enough for reading to reproduce every bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sinc_core::{FitResult, GroundTruth};

use crate::error::CliError;

/// Largest integer stored exactly in an f64; counts above it are rejected.
const MAX_EXACT_COUNT: f64 = 9_007_199_254_740_992.0;

/// Validation applied to the numbers in a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    /// Nonnegative integers.
    Counts,
    /// Finite reals.
    Reals,
}

/// A parsed table plus any labels the file carried.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMatrix {
    pub values: DMatrix<f64>,
    pub column_names: Option<Vec<String>>,
    pub row_names: Option<Vec<String>>,
}

impl LoadedMatrix {
    /// Converts to integer counts. Only meaningful for matrices that were
    /// loaded with `MatrixKind::Counts`, which validates integrality.
    pub fn to_counts(&self) -> DMatrix<u64> {
        self.values.map(|v| {
            debug_assert!(
                v >= 0.0 && v.fract() == 0.0,
                "count matrix loaded without count validation"
            );
            v as u64
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Delimiter {
    Tab,
    Comma,
    Whitespace,
}

fn split_fields(line: &str, delim: Delimiter) -> Vec<&str> {
    match delim {
        Delimiter::Tab => line.split('\t').map(str::trim).collect(),
        Delimiter::Comma => line.split(',').map(str::trim).collect(),
        Delimiter::Whitespace => line.split_whitespace().collect(),
    }
}

fn is_number(field: &str) -> bool {
    field.parse::<f64>().is_ok()
}

/// Reads a delimited table from `path`.
///
/// The delimiter comes from the first non-blank line: a tab wins, then a
/// comma, otherwise whitespace. A first line with a non-numeric field is a
/// header, except when only its first field is non-numeric and data fields
/// follow, which marks a row-label column on an unheaded table instead.
/// Headers over labeled rows may either name the label column or omit it.
/// Blank lines are skipped. Error positions are one-based: `row` is the line
/// number in the file and `col` the field position within that line.
pub fn load_matrix(path: &Path, kind: MatrixKind) -> Result<LoadedMatrix, CliError> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: shown.clone(),
        source,
    })?;

    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line))
        .filter(|(_, line)| !line.trim().is_empty())
        .collect();

    let parse_err = |row: usize, col: usize, message: String| CliError::Parse {
        path: shown.clone(),
        row,
        col,
        message,
    };

    let Some(&(first_no, first_line)) = lines.first() else {
        return Err(parse_err(1, 1, "file holds no data".into()));
    };
    let delim = if first_line.contains('\t') {
        Delimiter::Tab
    } else if first_line.contains(',') {
        Delimiter::Comma
    } else {
        Delimiter::Whitespace
    };

    let first = split_fields(first_line, delim);
    let all_numeric = first.iter().all(|f| is_number(f));
    let labeled_data_line =
        first.len() >= 2 && !is_number(first[0]) && first[1..].iter().all(|f| is_number(f));
    let has_header = !all_numeric && !labeled_data_line;

    let data_start = usize::from(has_header);
    if lines.len() <= data_start {
        return Err(parse_err(first_no, 1, "no data rows after the header".into()));
    }
    let first_data = split_fields(lines[data_start].1, delim);
    let has_row_names = !first_data.is_empty() && !is_number(first_data[0]);
    let label_cols = usize::from(has_row_names);
    if first_data.len() <= label_cols {
        return Err(parse_err(lines[data_start].0, 1, "row has no data fields".into()));
    }
    let width = first_data.len() - label_cols;

    let column_names = if has_header {
        let header = split_fields(first_line, delim);
        if header.len() == width + 1 && label_cols == 1 {
            Some(header[1..].iter().map(|s| s.to_string()).collect())
        } else if header.len() == width {
            Some(header.iter().map(|s| s.to_string()).collect())
        } else {
            return Err(CliError::RaggedRows {
                path: shown,
                row: first_no,
                found: header.len(),
                expected: width + label_cols,
            });
        }
    } else {
        None
    };

    let mut row_names = Vec::new();
    let mut data = Vec::with_capacity((lines.len() - data_start) * width);
    for &(line_no, line) in &lines[data_start..] {
        let fields = split_fields(line, delim);
        if fields.len() != width + label_cols {
            return Err(CliError::RaggedRows {
                path: shown,
                row: line_no,
                found: fields.len(),
                expected: width + label_cols,
            });
        }
        if has_row_names {
            row_names.push(fields[0].to_string());
        }
        for (k, field) in fields[label_cols..].iter().enumerate() {
            let col = label_cols + k + 1;
            let value: f64 = field
                .parse()
                .map_err(|_| parse_err(line_no, col, format!("cannot parse {field:?} as a number")))?;
            match kind {
                MatrixKind::Counts => {
                    if !value.is_finite() || value.fract() != 0.0 || value > MAX_EXACT_COUNT {
                        return Err(parse_err(
                            line_no,
                            col,
                            format!("{field:?} is not an integer count"),
                        ));
                    }
                    if value < 0.0 {
                        return Err(CliError::NegativeCount {
                            path: shown,
                            row: line_no,
                            col,
                        });
                    }
                }
                MatrixKind::Reals => {
                    if !value.is_finite() {
                        return Err(parse_err(line_no, col, format!("non-finite value {field:?}")));
                    }
                }
            }
            data.push(value);
        }
    }

    let rows = data.len() / width;
    Ok(LoadedMatrix {
        values: DMatrix::from_row_iterator(rows, width, data),
        column_names,
        row_names: has_row_names.then_some(row_names),
    })
}

/// One leading digit plus 16 fractional digits: 17 significant digits, which
/// round-trips any finite f64 exactly.
fn push_float(out: &mut String, value: f64) {
    let _ = write!(out, "{value:.16e}");
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn push_header(out: &mut String, column_names: &[String], row_names: Option<(&str, &[String])>) {
    if let Some((corner, _)) = row_names {
        out.push_str(corner);
        out.push('\t');
    }
    out.push_str(&column_names.join("\t"));
    out.push('\n');
}

/// Writes reals as a tab-separated table with a header row and an optional
/// labeled row-name column.
pub fn write_real_matrix(
    path: &Path,
    values: &DMatrix<f64>,
    column_names: &[String],
    row_names: Option<(&str, &[String])>,
) -> Result<(), CliError> {
    assert_eq!(column_names.len(), values.ncols(), "one name per column");
    if let Some((_, names)) = row_names {
        assert_eq!(names.len(), values.nrows(), "one name per row");
    }
    let mut out = String::new();
    push_header(&mut out, column_names, row_names);
    for i in 0..values.nrows() {
        if let Some((_, names)) = row_names {
            out.push_str(&names[i]);
            out.push('\t');
        }
        for j in 0..values.ncols() {
            if j > 0 {
                out.push('\t');
            }
            push_float(&mut out, values[(i, j)]);
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Writes counts as plain integers.
pub fn write_count_matrix(
    path: &Path,
    values: &DMatrix<u64>,
    column_names: &[String],
    row_names: Option<(&str, &[String])>,
) -> Result<(), CliError> {
    assert_eq!(column_names.len(), values.ncols(), "one name per column");
    if let Some((_, names)) = row_names {
        assert_eq!(names.len(), values.nrows(), "one name per row");
    }
    let mut out = String::new();
    push_header(&mut out, column_names, row_names);
    for i in 0..values.nrows() {
        if let Some((_, names)) = row_names {
            out.push_str(&names[i]);
            out.push('\t');
        }
        for j in 0..values.ncols() {
            if j > 0 {
                out.push('\t');
            }
            let _ = write!(out, "{}", values[(i, j)]);
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Writes a boolean matrix as 0/1 flags.
pub fn write_indicator_matrix(
    path: &Path,
    values: &DMatrix<bool>,
    column_names: &[String],
) -> Result<(), CliError> {
    assert_eq!(column_names.len(), values.ncols(), "one name per column");
    let mut out = String::new();
    push_header(&mut out, column_names, None);
    for i in 0..values.nrows() {
        for j in 0..values.ncols() {
            if j > 0 {
                out.push('\t');
            }
            out.push(if values[(i, j)] { '1' } else { '0' });
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Writes a vector as a two-column table: row label, value.
pub fn write_real_vector(
    path: &Path,
    values: &DVector<f64>,
    corner: &str,
    value_name: &str,
    row_names: &[String],
) -> Result<(), CliError> {
    assert_eq!(row_names.len(), values.len(), "one name per entry");
    let mut out = String::new();
    let _ = writeln!(out, "{corner}\t{value_name}");
    for (name, value) in row_names.iter().zip(values.iter()) {
        out.push_str(name);
        out.push('\t');
        push_float(&mut out, *value);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Writes the objective trace: the value before the first iteration, then
/// one value per completed iteration.
pub fn write_elbo_trace(path: &Path, trace: &[f64]) -> Result<(), CliError> {
    let mut out = String::from("iteration\telbo\n");
    for (i, value) in trace.iter().enumerate() {
        let _ = write!(out, "{i}\t");
        push_float(&mut out, *value);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Names like `taxon_1 .. taxon_p`, used when an input carried no labels.
pub fn generated_names(stem: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{stem}_{i}")).collect()
}

/// The file set produced by one fit: precision estimate, edge posterior
/// probabilities, selected adjacency, effect estimates with inclusion
/// probabilities, intercepts, and the objective trace. Coefficient tables
/// are omitted when there are no covariates.
pub fn write_fit_tables(
    dir: &Path,
    fit: &FitResult,
    taxa: &[String],
    covariates: &[String],
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_real_matrix(&dir.join("omega.tsv"), &fit.network.omega, taxa, None)?;
    write_real_matrix(&dir.join("p_star.tsv"), &fit.network.p_star, taxa, None)?;
    write_indicator_matrix(&dir.join("adjacency.tsv"), &fit.selected_adjacency, taxa)?;
    if !covariates.is_empty() {
        write_real_matrix(
            &dir.join("b.tsv"),
            &fit.regression.b,
            taxa,
            Some(("covariate", covariates)),
        )?;
        write_real_matrix(
            &dir.join("phi.tsv"),
            &fit.regression.phi,
            taxa,
            Some(("covariate", covariates)),
        )?;
    }
    write_real_vector(&dir.join("b0.tsv"), &fit.b0, "taxon", "b0", taxa)?;
    write_elbo_trace(&dir.join("elbo_trace.tsv"), &fit.elbo_trace)
}

/// The file set describing a simulated dataset: observable tables plus the
/// generating truth used for scoring.
pub fn write_truth_tables(dir: &Path, truth: &GroundTruth) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let n = truth.counts.n();
    let p = truth.counts.p();
    let q = truth.covariates.q();
    let taxa = generated_names("taxon", p);
    let covariates = generated_names("cov", q);
    let samples = generated_names("sample", n);

    write_count_matrix(
        &dir.join("counts.tsv"),
        truth.counts.values(),
        &taxa,
        Some(("sample", &samples)),
    )?;
    if q > 0 {
        write_real_matrix(
            &dir.join("covariates.tsv"),
            truth.covariates.values(),
            &covariates,
            Some(("sample", &samples)),
        )?;
        write_real_matrix(
            &dir.join("b_true.tsv"),
            &truth.b_true,
            &taxa,
            Some(("covariate", &covariates)),
        )?;
    }
    write_real_vector(&dir.join("b0_true.tsv"), &truth.b0_true, "taxon", "b0", &taxa)?;
    write_real_matrix(&dir.join("omega_true.tsv"), &truth.omega_true, &taxa, None)?;
    write_indicator_matrix(&dir.join("adjacency_true.tsv"), &truth.adjacency, &taxa)
}

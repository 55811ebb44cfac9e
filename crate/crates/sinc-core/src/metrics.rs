//! Selection scoring: confusion counts over edge or coefficient universes,
//! threshold metrics, and trapezoidal AUC over operating points.

use nalgebra::DMatrix;

use crate::error::SincError;

/// Which index set a boolean selection matrix ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionUniverse {
    /// Unordered node pairs i < j of a square adjacency; the diagonal never
    /// counts.
    Edges,
    /// Every entry of a coefficient support matrix.
    Coefficients,
}

/// Standard confusion counts. The four fields always sum to the universe
/// size: p(p-1)/2 for edges, q*p for coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }
}

/// Threshold metrics with the explicit convention that any 0/0 ratio is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionScores {
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
    pub mcc: f64,
}

/// Counts agreement between an estimated and a true selection over the given
/// universe. Both matrices must have identical shape (square for edges).
pub fn confusion(
    est: &DMatrix<bool>,
    truth: &DMatrix<bool>,
    universe: SelectionUniverse,
) -> Result<ConfusionCounts, SincError> {
    if est.shape() != truth.shape() {
        return Err(SincError::UniverseMismatch(est.len(), truth.len()));
    }
    if universe == SelectionUniverse::Edges && est.nrows() != est.ncols() {
        return Err(SincError::UniverseMismatch(est.nrows(), est.ncols()));
    }
    let mut c = ConfusionCounts {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
        true_negatives: 0,
    };
    let mut tally = |e: bool, t: bool| match (e, t) {
        (true, true) => c.true_positives += 1,
        (true, false) => c.false_positives += 1,
        (false, true) => c.false_negatives += 1,
        (false, false) => c.true_negatives += 1,
    };
    match universe {
        SelectionUniverse::Edges => {
            for i in 0..est.nrows() {
                for j in (i + 1)..est.ncols() {
                    tally(est[(i, j)], truth[(i, j)]);
                }
            }
        }
        SelectionUniverse::Coefficients => {
            for j in 0..est.ncols() {
                for i in 0..est.nrows() {
                    tally(est[(i, j)], truth[(i, j)]);
                }
            }
        }
    }
    Ok(c)
}

/// TPR, FPR, F1, and Matthews correlation from confusion counts. Products in
/// the MCC denominator run in floating point so large universes cannot
/// overflow.
pub fn scores(c: &ConfusionCounts) -> SelectionScores {
    let (tp, fp, fn_, tn) = (
        c.true_positives as f64,
        c.false_positives as f64,
        c.false_negatives as f64,
        c.true_negatives as f64,
    );
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    let tpr = ratio(tp, tp + fn_);
    let fpr = ratio(fp, fp + tn);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn_);
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, mcc_den);
    SelectionScores { tpr, fpr, f1, mcc }
}

/// Area under the ROC curve through the given (FPR, TPR) operating points.
/// The endpoints (0,0) and (1,1) are always included; points are sorted by
/// FPR with ties broken by TPR, then integrated trapezoidally.
pub fn roc_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 2);
    pts.push((0.0, 0.0));
    pts.extend_from_slice(points);
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.partial_cmp(b).expect("operating points must be finite"));
    let mut area = 0.0;
    for w in pts.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    area
}

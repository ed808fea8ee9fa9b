//! Constructions that turn classifier outputs into solver inputs.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const DEFAULT_PREDICTION_FLOOR: f64 = 1e-30;

/// Cost `C_ij = −log(max(P_ij, floor))`.
pub fn cost_from_predictions(predictions: &DenseMatrix, floor: f64) -> Result<DenseMatrix> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::invalid(format!("prediction floor must lie in (0, 1), got {floor}")));
    }
    // Probabilities above 1 would give negative cost.
    predictions.map(|p| -p.clamp(floor, 1.0).ln())
}

/// Pairwise cosine similarity between feature rows.
pub fn cosine_similarity(features: &DenseMatrix) -> Result<DenseMatrix> {
    let n = features.rows();
    let mut unit = Vec::with_capacity(features.as_slice().len());
    for i in 0..n {
        let row = features.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid(format!("feature row {i} has zero norm")));
        }
        unit.extend(row.iter().map(|v| v / norm));
    }
    let d = features.cols();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        let ui = &unit[i * d..(i + 1) * d];
        s[i * n + i] = 1.0;
        for j in i + 1..n {
            let uj = &unit[j * d..(j + 1) * d];
            let c = ui.iter().zip(uj).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            s[i * n + j] = c;
            s[j * n + i] = c;
        }
    }
    DenseMatrix::new(n, n, s)
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<DenseMatrix> {
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be positive"));
    }
    if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
        return Err(Error::invalid(format!(
            "label {} at index {i} is out of range for {num_classes} classes",
            labels[i]
        )));
    }
    DenseMatrix::from_fn(labels.len(), num_classes, |i, k| if labels[i] == k { 1.0 } else { 0.0 })
}

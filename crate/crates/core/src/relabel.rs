//! Denoising and relabeling from a transport plan.
//!
//! For a batch of `B` samples over `C` classes the plan `Q` (rows ≤ 1/B,
//! columns = m/C) is read as follows: the pseudo-label of a sample is its
//! row argmax, its confidence is that entry divided by `m/C`, and the
//! `⌊mB⌋` most confident samples are selected. Selected samples whose
//! pseudo-label agrees with the given label are clean; samples whose
//! pseudo-label disagrees are corrupted and get relabeled.

use serde::{Deserialize, Serialize};

use crate::csot::{solve_csot_gcg, GcgConfig};
use crate::error::{Error, Result};
use crate::features::{cosine_similarity, cost_from_predictions, one_hot, DEFAULT_PREDICTION_FLOOR};
use crate::matrix::DenseMatrix;
use crate::problem::{SolveReport, StructureContext, TransportProblem};

/// Linear curriculum budget ramp `m(t) = min(1, m₀ + (t−1)/(T_sup−1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub m0: f64,
    pub t_sup: usize,
}

impl Default for BudgetSchedule {
    fn default() -> Self {
        Self { m0: 0.3, t_sup: 250 }
    }
}

pub fn budget(t: usize, schedule: &BudgetSchedule) -> Result<f64> {
    if schedule.t_sup < 2 {
        return Err(Error::invalid(format!("t_sup must be at least 2, got {}", schedule.t_sup)));
    }
    if !(schedule.m0 > 0.0 && schedule.m0 <= 1.0) {
        return Err(Error::invalid(format!("m0 must lie in (0, 1], got {}", schedule.m0)));
    }
    if t == 0 {
        return Err(Error::invalid("epochs are counted from 1"));
    }
    Ok((schedule.m0 + (t - 1) as f64 / (schedule.t_sup - 1) as f64).min(1.0))
}

/// Row argmax, ties to the lowest column.
pub fn pseudo_labels(q: &DenseMatrix) -> Vec<usize> {
    (0..q.rows())
        .map(|i| {
            let row = q.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `w_i = Q[i, ŷ_i] · C / m`, clamped to `[0, 1]`.
pub fn confidence_weights(q: &DenseMatrix, pseudo: &[usize], m: f64) -> Result<Vec<f64>> {
    if m.is_nan() || m <= 0.0 {
        return Err(Error::invalid(format!("budget must be positive, got {m}")));
    }
    if pseudo.len() != q.rows() {
        return Err(Error::dim(format!("{} pseudo-labels for {} rows", pseudo.len(), q.rows())));
    }
    let per_class = m / q.cols() as f64;
    Ok(pseudo.iter().enumerate().map(|(i, &k)| (q.get(i, k) / per_class).clamp(0.0, 1.0)).collect())
}

/// Marks the `⌊mB⌋` largest weights; ties go to the lower index.
pub fn select(weights: &[f64], m: f64) -> Result<Vec<bool>> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::invalid(format!("budget must lie in (0, 1], got {m}")));
    }
    let k = (m * weights.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut mask = vec![false; weights.len()];
    for &i in &order[..k] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Clean: selected and agreeing. Corrupted: disagreeing, optionally also
/// required to be selected.
pub fn split(
    noisy_labels: &[usize],
    pseudo: &[usize],
    selected: &[bool],
    gate_corrupted_by_selection: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if pseudo.len() != noisy_labels.len() || selected.len() != noisy_labels.len() {
        return Err(Error::dim(format!(
            "split needs equal lengths, got labels {}, pseudo-labels {}, mask {}",
            noisy_labels.len(),
            pseudo.len(),
            selected.len()
        )));
    }
    let mut clean = Vec::new();
    let mut corrupted = Vec::new();
    for (i, ((&y, &yh), &sel)) in noisy_labels.iter().zip(pseudo).zip(selected).enumerate() {
        if yh == y {
            if sel {
                clean.push(i);
            }
        } else if sel || !gate_corrupted_by_selection {
            corrupted.push(i);
        }
    }
    Ok((clean, corrupted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelOutcome {
    pub pseudo_labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub selected: Vec<bool>,
    pub clean_indices: Vec<usize>,
    pub corrupted_indices: Vec<usize>,
}

impl RelabelOutcome {
    pub fn len(&self) -> usize {
        self.pseudo_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo_labels.is_empty()
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// Appends another batch, shifting its indices by the current length.
    pub fn extend(&mut self, other: RelabelOutcome) {
        let offset = self.len();
        self.pseudo_labels.extend(other.pseudo_labels);
        self.weights.extend(other.weights);
        self.selected.extend(other.selected);
        self.clean_indices.extend(other.clean_indices.into_iter().map(|i| i + offset));
        self.corrupted_indices.extend(other.corrupted_indices.into_iter().map(|i| i + offset));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelabelConfig {
    pub epsilon: f64,
    pub kappa: f64,
    pub prediction_floor: f64,
    pub gcg: GcgConfig,
    /// Only admit selected samples into the corrupted set.
    pub gate_corrupted_by_selection: bool,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            kappa: 1.0,
            prediction_floor: DEFAULT_PREDICTION_FLOOR,
            gcg: GcgConfig::default(),
            gate_corrupted_by_selection: false,
        }
    }
}

/// Solves the structure-aware curriculum problem for one batch and reads
/// off labels, weights, selection, and the clean/corrupted split.
pub fn denoise_relabel_batch(
    predictions: &DenseMatrix,
    similarity: &DenseMatrix,
    noisy_labels: &[usize],
    m: f64,
    config: &RelabelConfig,
) -> Result<(RelabelOutcome, SolveReport)> {
    if noisy_labels.len() != predictions.rows() {
        return Err(Error::dim(format!(
            "{} noisy labels for {} prediction rows",
            noisy_labels.len(),
            predictions.rows()
        )));
    }
    let labels = one_hot(noisy_labels, predictions.cols())?;
    let ctx = StructureContext::new(similarity.clone(), predictions.clone(), labels, config.kappa)?;
    let cost = cost_from_predictions(predictions, config.prediction_floor)?;
    let problem = TransportProblem::curriculum_uniform(cost, m, config.epsilon)?;
    let (q, report) = solve_csot_gcg(&problem, &ctx, &config.gcg)?;

    let pseudo = pseudo_labels(&q);
    let weights = confidence_weights(&q, &pseudo, m)?;
    let selected = select(&weights, m)?;
    let (clean_indices, corrupted_indices) =
        split(noisy_labels, &pseudo, &selected, config.gate_corrupted_by_selection)?;
    Ok((
        RelabelOutcome { pseudo_labels: pseudo, weights, selected, clean_indices, corrupted_indices },
        report,
    ))
}

/// Relabels a whole dataset in consecutive batches of `batch_size`, with
/// similarity computed from `features` inside each batch.
pub fn relabel_in_batches(
    predictions: &DenseMatrix,
    features: &DenseMatrix,
    noisy_labels: &[usize],
    m: f64,
    batch_size: usize,
    config: &RelabelConfig,
) -> Result<(RelabelOutcome, Vec<SolveReport>)> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if features.rows() != predictions.rows() {
        return Err(Error::dim(format!(
            "{} feature rows for {} prediction rows",
            features.rows(),
            predictions.rows()
        )));
    }
    let n = predictions.rows();
    let mut outcome = RelabelOutcome {
        pseudo_labels: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        selected: Vec::with_capacity(n),
        clean_indices: Vec::new(),
        corrupted_indices: Vec::new(),
    };
    let mut reports = Vec::new();
    for start in (0..n).step_by(batch_size) {
        let end = (start + batch_size).min(n);
        let rows = end - start;
        let slice = |m: &DenseMatrix| {
            DenseMatrix::new(rows, m.cols(), m.as_slice()[start * m.cols()..end * m.cols()].to_vec())
        };
        let p = slice(predictions)?;
        let s = cosine_similarity(&slice(features)?)?;
        let (batch, report) = denoise_relabel_batch(&p, &s, &noisy_labels[start..end], m, config)?;
        outcome.extend(batch);
        reports.push(report);
    }
    Ok((outcome, reports))
}

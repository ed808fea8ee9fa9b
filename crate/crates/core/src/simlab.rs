//! Synthetic noisy-label scenarios.
//!
//! Features are drawn from a Gaussian mixture whose class means sit on the
//! vertices of a regular simplex, so every pair of classes is equally far
//! apart. Labels are corrupted with symmetric or asymmetric noise, and a
//! prototype softmax stands in for classifier predictions. [`evaluate`]
//! scores a [`RelabelOutcome`] against the known true labels.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::relabel::RelabelOutcome;

const FEATURE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub ratio: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { kind: NoiseKind::Symmetric, ratio: 0.0 }
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    /// `sym:0.5` or `asym:0.4`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, ratio) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("noise spec {s:?} must look like sym:RATIO or asym:RATIO")))?;
        let kind = match kind {
            "sym" | "symmetric" => NoiseKind::Symmetric,
            "asym" | "asymmetric" => NoiseKind::Asymmetric,
            other => return Err(Error::invalid(format!("unknown noise kind {other:?}"))),
        };
        let ratio: f64 = ratio.parse().map_err(|_| Error::invalid(format!("bad noise ratio {ratio:?}")))?;
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::invalid(format!("noise ratio must lie in [0, 1], got {ratio}")));
        }
        Ok(Self { kind, ratio })
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            NoiseKind::Symmetric => "sym",
            NoiseKind::Asymmetric => "asym",
        };
        write!(f, "{kind}:{}", self.ratio)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub features: DenseMatrix,
    pub prototypes: DenseMatrix,
    pub true_labels: Vec<usize>,
    pub noisy_labels: Vec<usize>,
    pub num_classes: usize,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub flip_count: usize,
}

/// Vertices of a regular simplex with `num_classes` corners, unit norm,
/// centered at the origin, embedded in the first `num_classes − 1` of
/// `dim` coordinates.
pub fn simplex_prototypes(num_classes: usize, dim: usize, separation: f64) -> Result<DenseMatrix> {
    if num_classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if dim < num_classes - 1 {
        return Err(Error::invalid(format!(
            "dim {dim} is too small for {num_classes} equidistant prototypes (need {})",
            num_classes - 1
        )));
    }
    let c = num_classes as f64;
    let norm = ((c - 1.0) / c).sqrt();
    // Helmert basis of the sum-zero subspace: row k has k ones then −k.
    DenseMatrix::from_fn(num_classes, dim, |class, k| {
        if k >= num_classes - 1 {
            return 0.0;
        }
        let kk = (k + 1) as f64;
        let h = match class.cmp(&(k + 1)) {
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Equal => -kk,
            std::cmp::Ordering::Greater => 0.0,
        } / (kk * (kk + 1.0)).sqrt();
        separation * h / norm
    })
}

/// `n` samples with balanced true labels `i mod C` and unit-variance
/// Gaussian features around the class prototype. Noisy labels start equal
/// to the true labels.
pub fn generate_gaussian_mixture(
    n: usize,
    num_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<SimDataset> {
    if n < num_classes {
        return Err(Error::invalid(format!("need n >= num_classes, got {n} < {num_classes}")));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be positive, got {separation}")));
    }
    let prototypes = simplex_prototypes(num_classes, dim, separation)?;
    let mut rng = rng_for(seed, FEATURE_STREAM);
    let true_labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let mut values = Vec::with_capacity(n * dim);
    for &y in &true_labels {
        for &mu in prototypes.row(y) {
            let z: f64 = rng.sample(StandardNormal);
            values.push(mu + z);
        }
    }
    Ok(SimDataset {
        features: DenseMatrix::new(n, dim, values)?,
        prototypes,
        noisy_labels: true_labels.clone(),
        true_labels,
        num_classes,
        noise: NoiseSpec::none(),
        seed,
        flip_count: 0,
    })
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("noise ratio must lie in [0, 1], got {ratio}")));
    }
    Ok(())
}

/// Replaces the labels of exactly `⌊ratio·N⌋` uniformly chosen samples with
/// a uniform draw over all classes (the draw may repeat the old label).
pub fn inject_symmetric_noise(labels: &[usize], ratio: f64, num_classes: usize, seed: u64) -> Result<Vec<usize>> {
    check_ratio(ratio)?;
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be positive"));
    }
    let mut rng = rng_for(seed, NOISE_STREAM);
    let count = (ratio * labels.len() as f64).floor() as usize;
    let mut out = labels.to_vec();
    for i in sample(&mut rng, labels.len(), count) {
        out[i] = rng.random_range(0..num_classes);
    }
    Ok(out)
}

/// Flips each label to `mapping[label]` independently with probability `ratio`.
pub fn inject_asymmetric_noise(labels: &[usize], ratio: f64, mapping: &[usize], seed: u64) -> Result<Vec<usize>> {
    check_ratio(ratio)?;
    if let Some(c) = mapping.iter().position(|&t| t >= mapping.len()) {
        return Err(Error::invalid(format!(
            "mapping sends class {c} to {}, outside [0, {})",
            mapping[c],
            mapping.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= mapping.len()) {
        return Err(Error::invalid(format!("label {l} has no entry in the class mapping")));
    }
    let mut rng = rng_for(seed, NOISE_STREAM);
    Ok(labels
        .iter()
        .map(|&l| if rng.random_bool(ratio) { mapping[l] } else { l })
        .collect())
}

/// `c → (c + 1) mod C`.
pub fn circular_mapping(num_classes: usize) -> Vec<usize> {
    (0..num_classes).map(|c| (c + 1) % num_classes).collect()
}

impl SimDataset {
    /// Re-draws the noisy labels from the true labels.
    pub fn with_noise(mut self, noise: NoiseSpec) -> Result<Self> {
        self.noisy_labels = match noise.kind {
            NoiseKind::Symmetric => inject_symmetric_noise(&self.true_labels, noise.ratio, self.num_classes, self.seed)?,
            NoiseKind::Asymmetric => {
                inject_asymmetric_noise(&self.true_labels, noise.ratio, &circular_mapping(self.num_classes), self.seed)?
            }
        };
        self.flip_count = self.true_labels.iter().zip(&self.noisy_labels).filter(|(a, b)| a != b).count();
        self.noise = noise;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            n: self.len(),
            num_classes: self.num_classes,
            dim: self.dim(),
            noise_kind: self.noise.kind,
            ratio: self.noise.ratio,
            seed: self.seed,
            true_labels: self.true_labels.clone(),
            noisy_labels: self.noisy_labels.clone(),
        }
    }
}

/// JSON metadata written next to the feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub n: usize,
    pub num_classes: usize,
    pub dim: usize,
    #[serde(rename = "noise kind")]
    pub noise_kind: NoiseKind,
    pub ratio: f64,
    pub seed: u64,
    pub true_labels: Vec<usize>,
    pub noisy_labels: Vec<usize>,
}

/// Row-wise `softmax(−‖x − μ_c‖² / temperature)`.
pub fn prototype_predictions(features: &DenseMatrix, prototypes: &DenseMatrix, temperature: f64) -> Result<DenseMatrix> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if features.cols() != prototypes.cols() {
        return Err(Error::dim(format!(
            "features have dimension {} but prototypes have {}",
            features.cols(),
            prototypes.cols()
        )));
    }
    let c = prototypes.rows();
    let mut out = Vec::with_capacity(features.rows() * c);
    let mut logits = vec![0.0; c];
    for i in 0..features.rows() {
        let x = features.row(i);
        for (k, l) in logits.iter_mut().enumerate() {
            let d2: f64 = x.iter().zip(prototypes.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            *l = -d2 / temperature;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        out.extend(logits.iter().map(|l| (l - max).exp() / z));
    }
    DenseMatrix::new(features.rows(), c, out)
}

/// Per-class feature means; classes without samples get the zero vector.
pub fn class_means(features: &DenseMatrix, labels: &[usize], num_classes: usize) -> Result<DenseMatrix> {
    if labels.len() != features.rows() {
        return Err(Error::dim(format!("{} labels for {} feature rows", labels.len(), features.rows())));
    }
    let d = features.cols();
    let mut sums = vec![0.0; num_classes * d];
    let mut counts = vec![0usize; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::invalid(format!("label {y} out of range for {num_classes} classes")));
        }
        counts[y] += 1;
        for (s, x) in sums[y * d..(y + 1) * d].iter_mut().zip(features.row(i)) {
            *s += x;
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums[k * d..(k + 1) * d].iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    DenseMatrix::new(num_classes, d, sums)
}

/// Fraction of samples whose closest prototype is their true class.
pub fn nearest_prototype_accuracy(dataset: &SimDataset) -> f64 {
    let hits = (0..dataset.len())
        .filter(|&i| {
            let x = dataset.features.row(i);
            let dist = |k: usize| -> f64 { x.iter().zip(dataset.prototypes.row(k)).map(|(a, b)| (a - b) * (a - b)).sum() };
            let best = (1..dataset.num_classes).fold(0, |b, k| if dist(k) < dist(b) { k } else { b });
            best == dataset.true_labels[i]
        })
        .count();
    hits as f64 / dataset.len() as f64
}

/// Quality of an allocator run. Rates with an empty denominator are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelMetrics {
    /// Fraction of the clean set whose given label is the true label.
    pub clean_precision: Option<f64>,
    /// Fraction of truly clean samples that made it into the clean set.
    pub clean_recall: Option<f64>,
    /// Fraction of the corrupted set whose pseudo-label is the true label.
    pub corrected_accuracy: Option<f64>,
    /// `confusion[true][pseudo]` counts over all samples.
    pub confusion: Vec<Vec<usize>>,
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn evaluate(outcome: &RelabelOutcome, dataset: &SimDataset) -> Result<RelabelMetrics> {
    if outcome.len() != dataset.len() {
        return Err(Error::dim(format!(
            "outcome covers {} samples, dataset has {}",
            outcome.len(),
            dataset.len()
        )));
    }
    let (y, y_noisy) = (&dataset.true_labels, &dataset.noisy_labels);
    let clean_hits = outcome.clean_indices.iter().filter(|&&i| y_noisy[i] == y[i]).count();
    let truly_clean = (0..dataset.len()).filter(|&i| y_noisy[i] == y[i]).count();
    let corrected = outcome.corrupted_indices.iter().filter(|&&i| outcome.pseudo_labels[i] == y[i]).count();
    let c = dataset.num_classes;
    let mut confusion = vec![vec![0usize; c]; c];
    for (i, &p) in outcome.pseudo_labels.iter().enumerate() {
        if p >= c {
            return Err(Error::invalid(format!("pseudo-label {p} out of range for {c} classes")));
        }
        confusion[y[i]][p] += 1;
    }
    Ok(RelabelMetrics {
        clean_precision: rate(clean_hits, outcome.clean_indices.len()),
        clean_recall: rate(clean_hits, truly_clean),
        corrected_accuracy: rate(corrected, outcome.corrupted_indices.len()),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prototypes_are_equidistant_unit_scaled() {
        let p = simplex_prototypes(10, 12, 4.0).unwrap();
        let expect = 4.0 * (2.0f64 * 10.0 / 9.0).sqrt();
        for a in 0..10 {
            let n: f64 = p.row(a).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 4.0).abs() < 1e-12);
            for b in a + 1..10 {
                let d: f64 = p.row(a).iter().zip(p.row(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                assert!((d - expect).abs() < 1e-12);
            }
        }
        assert!(simplex_prototypes(10, 8, 1.0).is_err());
    }

    #[test]
    fn wide_separation_is_perfectly_classified() {
        let ds = generate_gaussian_mixture(10, 10, 9, 100.0, 1).unwrap();
        assert_eq!(nearest_prototype_accuracy(&ds), 1.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_gaussian_mixture(50, 5, 6, 2.0, 9).unwrap().with_noise("sym:0.4".parse().unwrap()).unwrap();
        let b = generate_gaussian_mixture(50, 5, 6, 2.0, 9).unwrap().with_noise("sym:0.4".parse().unwrap()).unwrap();
        assert_eq!(a, b);
        let c = generate_gaussian_mixture(50, 5, 6, 2.0, 10).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn separation_four_accuracy_meets_union_bound() {
        // Pairwise distance 4·sqrt(20/9) ≈ 5.96; each wrong class wins with
        // probability Φ(−2.98) ≈ 1.44e-3, so the error rate is at most 9× that.
        let ds = generate_gaussian_mixture(5000, 10, 16, 4.0, 2024).unwrap();
        let acc = nearest_prototype_accuracy(&ds);
        let bound: f64 = 9.0 * 1.44e-3;
        let sd = (bound * (1.0 - bound) / 5000.0).sqrt();
        assert!(acc >= 1.0 - bound - 3.0 * sd, "accuracy {acc}");
    }

    #[test]
    fn symmetric_noise_examples() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        assert_eq!(inject_symmetric_noise(&labels, 0.0, 10, 1).unwrap(), labels);
        assert_eq!(
            inject_symmetric_noise(&labels, 0.3, 10, 5).unwrap(),
            inject_symmetric_noise(&labels, 0.3, 10, 5).unwrap()
        );
    }

    #[test]
    fn full_symmetric_noise_disagreement_rate() {
        let n = 10_000;
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let noisy = inject_symmetric_noise(&labels, 1.0, 10, 3).unwrap();
        let flips = labels.iter().zip(&noisy).filter(|(a, b)| a != b).count() as f64;
        let (mean, sd) = (0.9 * n as f64, (n as f64 * 0.9 * 0.1).sqrt());
        assert!((flips - mean).abs() <= 3.0 * sd, "flips {flips}");
    }

    #[test]
    fn asymmetric_noise_examples() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let map = circular_mapping(3);
        assert_eq!(inject_asymmetric_noise(&labels, 0.0, &map, 1).unwrap(), labels);
        let all = inject_asymmetric_noise(&labels, 1.0, &map, 1).unwrap();
        assert!(labels.iter().zip(&all).all(|(&a, &b)| b == (a + 1) % 3));
        assert!(inject_asymmetric_noise(&labels, 0.5, &[1, 2, 3], 1).is_err());
    }

    #[test]
    fn asymmetric_flip_fraction() {
        let n = 10_000;
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let noisy = inject_asymmetric_noise(&labels, 0.4, &circular_mapping(10), 77).unwrap();
        let flips = labels.iter().zip(&noisy).filter(|(a, b)| a != b).count() as f64;
        let sd = (n as f64 * 0.4 * 0.6).sqrt();
        assert!((flips - 0.4 * n as f64).abs() <= 3.0 * sd);
    }

    #[test]
    fn prediction_examples() {
        let protos = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0]]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![5.0, 0.0]]).unwrap();
        let p = prototype_predictions(&x, &protos, 0.1).unwrap();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((p.get(1, 0) - 0.5).abs() < 1e-12 && (p.get(1, 1) - 0.5).abs() < 1e-12);
        assert!(prototype_predictions(&x, &protos, 0.0).is_err());
    }

    #[test]
    fn evaluate_hand_counted_fixture() {
        // true   0 1 2 0 1 2
        // noisy  0 1 0 0 2 2   (samples 2 and 4 corrupted)
        // pseudo 0 1 2 1 1 2
        let ds = SimDataset {
            features: DenseMatrix::zeros(6, 2).unwrap(),
            prototypes: DenseMatrix::zeros(3, 2).unwrap(),
            true_labels: vec![0, 1, 2, 0, 1, 2],
            noisy_labels: vec![0, 1, 0, 0, 2, 2],
            num_classes: 3,
            noise: NoiseSpec::none(),
            seed: 0,
            flip_count: 2,
        };
        let outcome = RelabelOutcome {
            pseudo_labels: vec![0, 1, 2, 1, 1, 2],
            weights: vec![1.0; 6],
            selected: vec![true, true, false, true, false, true],
            clean_indices: vec![0, 1, 5],
            corrupted_indices: vec![2, 3, 4],
        };
        let m = evaluate(&outcome, &ds).unwrap();
        assert_eq!(m.clean_precision, Some(1.0));
        assert_eq!(m.clean_recall, Some(3.0 / 4.0));
        assert_eq!(m.corrected_accuracy, Some(2.0 / 3.0));
        assert_eq!(m.confusion, vec![vec![1, 1, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn empty_selection_reports_undefined_precision() {
        let ds = generate_gaussian_mixture(4, 2, 1, 1.0, 0).unwrap();
        let outcome = RelabelOutcome {
            pseudo_labels: ds.true_labels.clone(),
            weights: vec![0.0; 4],
            selected: vec![false; 4],
            clean_indices: vec![],
            corrupted_indices: vec![],
        };
        let m = evaluate(&outcome, &ds).unwrap();
        assert_eq!(m.clean_precision, None);
        assert_eq!(m.clean_recall, Some(0.0));
        let perfect = RelabelOutcome { clean_indices: vec![0, 1, 2, 3], selected: vec![true; 4], ..outcome };
        let m = evaluate(&perfect, &ds).unwrap();
        assert_eq!((m.clean_precision, m.clean_recall), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn noise_spec_parsing() {
        let s: NoiseSpec = "asym:0.4".parse().unwrap();
        assert_eq!(s, NoiseSpec { kind: NoiseKind::Asymmetric, ratio: 0.4 });
        assert_eq!(s.to_string(), "asym:0.4");
        assert!("sym:1.5".parse::<NoiseSpec>().is_err());
        assert!("gauss:0.1".parse::<NoiseSpec>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetric_touches_exactly_floor_positions(n in 1usize..500, ratio in 0.0f64..=1.0, seed in 0u64..1000) {
            // Sentinel labels make every touched position visible.
            let labels = vec![usize::MAX; n];
            let count = (ratio * n as f64).floor() as usize;
            let noisy = inject_symmetric_noise(&labels, ratio, 3, seed).unwrap();
            prop_assert_eq!(noisy.iter().filter(|&&l| l != usize::MAX).count(), count);
        }

        #[test]
        fn predictions_on_simplex(seed in 0u64..1000, t in 0.05f64..10.0) {
            let ds = generate_gaussian_mixture(20, 4, 5, 2.0, seed).unwrap();
            let p = prototype_predictions(&ds.features, &ds.prototypes, t).unwrap();
            for i in 0..20 {
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

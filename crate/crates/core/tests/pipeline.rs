use csot_core::io::{load_matrix, save_matrix, MatrixFormat};
use csot_core::relabel::{relabel_in_batches, RelabelConfig};
use csot_core::simlab::{
    class_means, evaluate, generate_gaussian_mixture, prototype_predictions, DatasetSidecar, NoiseKind, NoiseSpec,
};
use csot_core::sinkhorn::{solve_sinkhorn, ScalingOptions};
use csot_core::{ConstraintKind, DenseMatrix, Marginal, SolveReport, TransportProblem};

#[test]
fn simulated_relabel_round() {
    let ds = generate_gaussian_mixture(600, 4, 6, 5.0, 11)
        .unwrap()
        .with_noise(NoiseSpec { kind: NoiseKind::Symmetric, ratio: 0.4 })
        .unwrap();
    assert_eq!(ds.flip_count, ds.true_labels.iter().zip(&ds.noisy_labels).filter(|(a, b)| a != b).count());
    let means = class_means(&ds.features, &ds.noisy_labels, 4).unwrap();
    let pred = prototype_predictions(&ds.features, &means, 4.0).unwrap();
    let (outcome, reports) =
        relabel_in_batches(&pred, &ds.features, &ds.noisy_labels, 0.5, 256, &RelabelConfig::default()).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(outcome.selected_count(), 128 + 128 + 44);
    let metrics = evaluate(&outcome, &ds).unwrap();
    assert!(metrics.clean_precision.unwrap() > 0.95);
    assert!(metrics.corrected_accuracy.unwrap() > 0.9);
    let total: usize = metrics.confusion.iter().flatten().sum();
    assert_eq!(total, 600);
}

#[test]
fn sidecar_json_round_trip() {
    let ds = generate_gaussian_mixture(20, 2, 3, 1.0, 5)
        .unwrap()
        .with_noise(NoiseSpec { kind: NoiseKind::Asymmetric, ratio: 0.3 })
        .unwrap();
    let text = serde_json::to_string(&ds.sidecar()).unwrap();
    let back: DatasetSidecar = serde_json::from_str(&text).unwrap();
    assert_eq!(back, ds.sidecar());
    assert!(text.contains("\"noise kind\":\"asymmetric\""));
}

#[test]
fn report_without_stall_count_still_parses() {
    let text = r#"{"iterations":3,"objective_trace":[1.0],"row_residual":0.0,"col_residual":0.0,
                   "wall_time_ms":0.0,"converged":true}"#;
    let r: SolveReport = serde_json::from_str(text).unwrap();
    assert_eq!(r.stalled_steps, 0);
}

#[test]
fn solve_from_saved_files() {
    let dir = tempfile::tempdir().unwrap();
    let cost = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    for name in ["c.csmat", "c.csv"] {
        let path = dir.path().join(name);
        let fmt = MatrixFormat::from_path(&path);
        save_matrix(&path, &cost, fmt).unwrap();
        assert_eq!(load_matrix(&path, fmt).unwrap(), cost);
    }
    let half = Marginal::uniform(2, 1.0).unwrap();
    let problem = TransportProblem::new(cost, half.clone(), half, 0.01, ConstraintKind::Equality).unwrap();
    let (q, report) = solve_sinkhorn(&problem, &ScalingOptions::default()).unwrap();
    assert!(report.converged);
    assert!((q.get(0, 0) - 0.5).abs() < 1e-8 && q.get(0, 1) < 1e-8);
}

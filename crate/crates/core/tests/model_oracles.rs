//! Monte-Carlo oracle for the MC-dropout ensemble mean and the loss-trace
//! export format.

use advdet::losses::{train, Schedule, TargetDirichletSpec, TrainConfig};
use advdet::models::{Classifier, Head};
use advdet::tensor::Tensor;

#[test]
fn mc_dropout_mean_matches_large_sample_estimate() {
    let net = Classifier::new(2, &[16], 3, Head::Softmax, 0.2, 0.6, 123);
    let x = Tensor::vector(&[0.3, -0.4]);
    let small = net.predict_mc_dropout(&x, 2000, 500).unwrap();
    let large = net.predict_mc_dropout(&x, 100_000, 501).unwrap();
    for (a, b) in small
        .expected()
        .probs()
        .iter()
        .zip(large.expected().probs())
    {
        assert!((a - b).abs() < 0.01, "{a} vs {b}");
    }
}

#[test]
fn loss_trace_csv_has_epoch_split_loss_lr_rows() {
    use advdet::datasets::{default_means, make_gaussian_classes, Split};
    let dir = tempfile::tempdir().unwrap();
    let means = default_means(2, 2, 0.5);
    let data = make_gaussian_classes(2, 2, &means, 0.08, 30, 3, Split::Train).unwrap();
    let mut net = Classifier::new(2, &[8], 2, Head::Softmax, 0.2, 1.0, 9);
    let cfg = TrainConfig {
        schedule: Schedule::Constant { lr: 0.1 },
        momentum: 0.9,
        batch_size: 16,
        epochs: 3,
        ood_weight: 0.0,
        adversarial: None,
        target: TargetDirichletSpec::default(),
        seed: 2,
    };
    let trace = train(&mut net, &data, None, &cfg).unwrap();
    let path = dir.path().join("trace.csv");
    trace.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epoch,split,loss,lr");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], i.to_string());
        assert_eq!(fields[1], "train");
        assert!(fields[2].parse::<f64>().unwrap().is_finite());
        assert_eq!(fields[3].parse::<f64>().unwrap(), 0.1);
    }
}

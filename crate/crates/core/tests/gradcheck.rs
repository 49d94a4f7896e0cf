use emorl::algos::{AlgoConfig, AlgoKind, Batch, FrozenLoss};
use emorl::dataset::sample_minibatch;
use emorl::mdp::ObservationEncoding;
use emorl::nn::{finite_diff_pairs, finite_diff_report, Activation, NetworkSpec, QModel};
use emorl::rng::{stream, Stream};
use emorl::sim::{SimConfig, SimModel};

fn relu_setup(seed: u64, kind: AlgoKind) -> (QModel, FrozenLoss) {
    let data = SimModel::new(SimConfig::default()).unwrap().generate_dataset(42);
    let spec = NetworkSpec {
        input_dim: 8,
        hidden_layers: 2,
        hidden_units: 16,
        activation: Activation::Relu,
        dropout_rate: 0.0,
        batch_norm: true,
        gen_head: false,
    };
    let model = QModel::init(spec, &mut stream(seed, Stream::Init)).unwrap();
    let trs = sample_minibatch(data.transitions(), 16, &mut stream(seed, Stream::Batch)).unwrap();
    let batch = Batch::from_transitions(&trs, ObservationEncoding::FactoredOnehot);
    let obj = FrozenLoss::new(&model, batch, AlgoConfig::new(kind)).unwrap();
    (model, obj)
}

fn raw_max_error(pairs: &[(f64, f64)]) -> f64 {
    pairs
        .iter()
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

// This init/batch pair has ReLU inputs within 1e-4 of zero: the raw central
// difference straddles the kink while the guarded check skips it.
#[test]
fn kinks_are_detected_and_skipped() {
    let (model, obj) = relu_setup(2, AlgoKind::Ddqn);
    let raw = raw_max_error(&finite_diff_pairs(&model, &obj, 1e-4));
    assert!(raw > 1e-2, "raw error {raw}");
    let report = finite_diff_report(&model, &obj, 1e-4);
    assert!(report.skipped_kinks > 0);
    assert!(report.skipped_kinks < 10);
    assert_eq!(report.compared + report.skipped_kinks, model.num_params());
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn kink_parameters_agree_at_a_finer_step() {
    let (model, obj) = relu_setup(2, AlgoKind::Ddqn);
    let coarse = finite_diff_pairs(&model, &obj, 1e-4);
    let fine = finite_diff_pairs(&model, &obj, 1e-7);
    let (i, _) = coarse
        .iter()
        .enumerate()
        .max_by(|x, y| raw_max_error(&[*x.1]).total_cmp(&raw_max_error(&[*y.1])))
        .unwrap();
    let (a, n) = fine[i];
    assert!((a - n).abs() <= 1e-6 * (a.abs() + n.abs()) + 1e-9, "{a} vs {n}");
}

#[test]
fn tanh_networks_report_no_kinks() {
    let data = SimModel::new(SimConfig::default()).unwrap().generate_dataset(1);
    let spec = NetworkSpec {
        input_dim: 8,
        hidden_layers: 3,
        hidden_units: 32,
        activation: Activation::Tanh,
        dropout_rate: 0.0,
        batch_norm: true,
        gen_head: true,
    };
    let model = QModel::init(spec, &mut stream(5, Stream::Init)).unwrap();
    let trs = sample_minibatch(data.transitions(), 8, &mut stream(5, Stream::Batch)).unwrap();
    let batch = Batch::from_transitions(&trs, ObservationEncoding::FactoredOnehot);
    let obj = FrozenLoss::new(&model, batch, AlgoConfig::new(AlgoKind::Bcq)).unwrap();
    let report = finite_diff_report(&model, &obj, 1e-4);
    assert_eq!(report.skipped_kinks, 0);
    assert!(report.max_rel_error < 1e-4);
}

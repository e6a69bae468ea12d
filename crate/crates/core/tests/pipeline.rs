use ndarray::{Array1, Array2};
use proptest::prelude::*;

use pricer::apps::experiments::{default_ring, run_experiment, Experiment, ExperimentConfig, SimulateSpec, TopologySpec};
use pricer::network::ring_topology;
use pricer::optimizer::{objective, BiasNorm};
use pricer::privacy::{local_link_dp, privacy_report, Epsilon, PrivacyBudget};
use pricer::scheme::check_feasibility;
use pricer::{bound, exact_mse, optimize, s_vector, CollaborationScheme, Dataset, NetworkModel, OptimizerConfig};

fn model_strategy(n: usize) -> impl Strategy<Value = NetworkModel> {
    (
        prop::collection::vec(0.0..=1.0f64, n),
        prop::collection::vec(0.0..=1.0f64, n * n),
    )
        .prop_map(move |(ps, p)| {
            let links = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { p[i * n + j] });
            NetworkModel::independent(Array1::from(ps), links).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_mse_within_bound_when_biases_share_sign(
        model in (1usize..=3).prop_flat_map(model_strategy),
        raw in prop::collection::vec(0.0..2.0f64, 18),
        xs in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        let n = model.n();
        let alpha = Array2::from_shape_fn((n, n), |(i, j)| if model.links()[[i, j]] > 0.0 { raw[i * n + j] } else { 0.0 });
        let sigma = Array2::from_shape_fn((n, n), |(i, j)| if model.links()[[i, j]] > 0.0 { raw[9 + i * n + j] / 2.0 } else { 0.0 });
        let scheme = CollaborationScheme::for_model(&model, alpha, sigma).unwrap();
        let s = s_vector(&model, &scheme).unwrap();
        prop_assume!(s.iter().all(|&v| v >= 1.0) || s.iter().all(|&v| v <= 1.0));
        let x = Array2::from_shape_fn((n, 2), |(i, k)| xs[2 * i + k] / std::f64::consts::SQRT_2);
        let data = Dataset::new(x, 1.0).unwrap();
        let exact = exact_mse(&data, &model, &scheme).unwrap();
        let b = bound(&model, &scheme, 1.0, 2).unwrap();
        prop_assert!(exact.total <= b.bound + 1e-12 * (1.0 + b.bound));
        prop_assert!((exact.privacy - b.piv).abs() <= 1e-12 * (1.0 + b.piv));
    }
}

#[test]
fn mixed_sign_biases_can_exceed_bound() {
    let model = NetworkModel::independent(Array1::from(vec![0.0, 1.0]), Array2::eye(2)).unwrap();
    let scheme = CollaborationScheme::for_model(&model, Array2::from_diag(&Array1::from(vec![0.0, 2.0])), Array2::zeros((2, 2))).unwrap();
    let b = bound(&model, &scheme, 1.0, 1).unwrap();
    let aligned = Dataset::new(Array2::from_shape_vec((2, 1), vec![1.0, 1.0]).unwrap(), 1.0).unwrap();
    let opposed = Dataset::new(Array2::from_shape_vec((2, 1), vec![-1.0, 1.0]).unwrap(), 1.0).unwrap();
    assert!((exact_mse(&aligned, &model, &scheme).unwrap().total - b.bound).abs() < 1e-12);
    assert!(b.bound.abs() < 1e-12);
    assert!((exact_mse(&opposed, &model, &scheme).unwrap().total - 1.0).abs() < 1e-12);
}

#[test]
fn optimizer_iterates_stay_feasible_and_improve() {
    let (model, trust) = ring_topology(&default_ring(0.5)).unwrap();
    let cfg = OptimizerConfig {
        lambda: 0.1,
        max_iters: 2000,
        ..OptimizerConfig::default()
    };
    let trace = optimize(&model, &trust, 1.0, 1, &cfg).unwrap();
    assert!(trace.records.iter().all(|r| r.feasible));
    let first = trace.records.first().unwrap().objective;
    let last = trace.final_record().unwrap().objective;
    assert!(last < first);
    assert!(check_feasibility(&trace.scheme, &trust, 1.0).unwrap().is_feasible());
    let direct = objective(&model, &trace.scheme, 1.0, 1, 0.1, BiasNorm::L2).unwrap();
    assert!((direct - last).abs() <= 1e-12 * last.abs().max(1.0));
}

#[test]
fn optimized_scheme_meets_link_requirements() {
    let (model, trust) = ring_topology(&default_ring(0.9)).unwrap();
    let trace = optimize(&model, &trust, 1.0, 1, &OptimizerConfig { max_iters: 1000, ..Default::default() }).unwrap();
    let dp = local_link_dp(&model, &trace.scheme, 1.0, trust.delta()).unwrap();
    for ((i, j), pair) in dp.indexed_iter() {
        if i != j {
            assert!(pair.eps.at_most(trust.eps()[[i, j]] * (1.0 + 1e-9)), "link ({i}, {j})");
        }
    }
    let report = privacy_report(&model, &trace.scheme, 1.0, trust.delta(), PrivacyBudget { delta_total: 0.1 }).unwrap();
    assert_eq!(report.local.len(), model.n());
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert!(json.get("local").is_some());
    assert!(matches!(report.local[0][0].eps, Epsilon::Finite(e) if e == 0.0));
}

#[test]
fn simulation_respects_bound_on_ring() {
    let cfg = ExperimentConfig {
        seed: 5,
        experiment: Experiment::Simulate(SimulateSpec {
            topology: TopologySpec::Ring(default_ring(0.5)),
            trials: 20_000,
            optimizer: OptimizerConfig {
                lambda: 0.1,
                max_iters: 3000,
                ..Default::default()
            },
            ..Default::default()
        }),
    };
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.summary["within_bound"], true);
    let csv = String::from_utf8(out.files["monte_carlo.csv"].clone()).unwrap();
    assert!(csv.starts_with("config_hash,trials,empirical_mse,se,bound,tiv,piv,bias"));
}

#[test]
fn config_round_trips_through_json() {
    let cfg = ExperimentConfig {
        seed: 9,
        experiment: Experiment::Simulate(SimulateSpec::default()),
    };
    let text = serde_json::to_string(&cfg).unwrap();
    assert!(text.contains("\"experiment\":\"simulate\""));
    let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let minimal: ExperimentConfig = serde_json::from_str(r#"{"seed": 1, "experiment": "tradeoff"}"#).unwrap();
    assert_eq!(minimal.experiment.name(), "tradeoff");
}

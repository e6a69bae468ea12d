//! Config-driven experiment pipelines.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::kmeans::{centralized_kmeans, kmeans_round, local_step, pool, relative_inertia, BlobSpec, KmeansState};
use super::{config_hash, csv_bytes, RunOutput};
use crate::analysis::bound;
use crate::erdos_renyi::{self, ErConfig, Lambda};
use crate::error::{Error, Result};
use crate::network::{ring_topology, scattered_topology, NetworkModel, PsConnectivity, RingSpec, ScatteredSpec};
use crate::optimizer::{optimize, OptimizerConfig, OptimizerTrace};
use crate::privacy::{privacy_report, PrivacyBudget};
use crate::protocol::{monte_carlo_mse, trial_rng};
use crate::scheme::{CollaborationScheme, Dataset, TrustMatrix};

/// PS connectivity of the ten-node ring used throughout the experiments.
pub const RING_PS: [f64; 10] = [0.1, 0.1, 0.8, 0.1, 0.1, 0.9, 0.1, 0.1, 0.9, 0.1];

/// A named experiment with its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(flatten)]
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    Optimize(OptimizeSpec),
    Simulate(SimulateSpec),
    PrivacyReport(PrivacySpec),
    Tradeoff(TradeoffSpec),
    NeighborSweep(NeighborSweepSpec),
    ErAnalytic(ErAnalyticSpec),
    Kmeans(KmeansSpec),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Optimize(_) => "optimize",
            Experiment::Simulate(_) => "simulate",
            Experiment::PrivacyReport(_) => "privacy-report",
            Experiment::Tradeoff(_) => "tradeoff",
            Experiment::NeighborSweep(_) => "neighbor-sweep",
            Experiment::ErAnalytic(_) => "er-analytic",
            Experiment::Kmeans(_) => "kmeans",
        }
    }

    /// Optimizer settings used by this experiment, if any.
    pub fn optimizer_mut(&mut self) -> Option<&mut OptimizerConfig> {
        match self {
            Experiment::Optimize(s) => Some(&mut s.optimizer),
            Experiment::Simulate(s) => Some(&mut s.optimizer),
            Experiment::PrivacyReport(s) => Some(&mut s.optimizer),
            Experiment::Tradeoff(s) => Some(&mut s.optimizer),
            Experiment::NeighborSweep(s) => Some(&mut s.optimizer),
            Experiment::Kmeans(s) => Some(&mut s.optimizer),
            Experiment::ErAnalytic(_) => None,
        }
    }
}

/// Network and trust matrix source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    Ring(RingSpec),
    Scattered(ScatteredSpec),
    Explicit { model: NetworkModel, trust: TrustMatrix },
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::Ring(default_ring(0.9))
    }
}

impl TopologySpec {
    pub fn build(&self) -> Result<(NetworkModel, TrustMatrix)> {
        match self {
            TopologySpec::Ring(r) => ring_topology(r),
            TopologySpec::Scattered(s) => scattered_topology(s),
            TopologySpec::Explicit { model, trust } => {
                if model.n() != trust.n() {
                    return Err(Error::Dimension(format!(
                        "model has {} nodes, trust {}",
                        model.n(),
                        trust.n()
                    )));
                }
                Ok((model.clone(), trust.clone()))
            }
        }
    }
}

/// Ten-node ring, each node trusting its two adjacent nodes.
pub fn default_ring(link_prob: f64) -> RingSpec {
    RingSpec {
        n: 10,
        k_hops: 1,
        ps: PsConnectivity::Explicit { p: RING_PS.to_vec() },
        link_prob,
        eps_trusted: 1e3,
        eps_untrusted: 1.0,
        delta: 1e-3,
    }
}

/// Ten nodes around a PS at the origin: four within reach of the PS and six
/// beyond it, each of the latter close to one of the former.
pub fn default_scattered_layout() -> ScatteredSpec {
    ScatteredSpec {
        nodes: vec![
            [160.0, 0.0],
            [0.0, 165.0],
            [-170.0, 0.0],
            [0.0, -175.0],
            [280.0, 40.0],
            [60.0, 290.0],
            [-290.0, -50.0],
            [-40.0, -300.0],
            [290.0, -100.0],
            [-150.0, 250.0],
        ],
        ps_position: [0.0, 0.0],
        scale: 30.0,
        offset: 5.2,
        trust_threshold: 0.5,
        eps_trusted: 1e3,
        eps_untrusted: 0.01,
        delta: 1e-3,
    }
}

fn derived_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
}

fn run_optimizer(
    model: &NetworkModel,
    trust: &TrustMatrix,
    radius: f64,
    dim: usize,
    config: &OptimizerConfig,
) -> Result<OptimizerTrace> {
    let trace = optimize(model, trust, radius, dim, config)?;
    if !trace.converged {
        log::warn!(
            "optimizer stopped at max_iters = {} before reaching tol = {}",
            config.max_iters,
            config.tol
        );
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeSpec {
    pub topology: TopologySpec,
    #[serde(rename = "R")]
    pub radius: f64,
    pub d: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for OptimizeSpec {
    fn default() -> Self {
        Self {
            topology: TopologySpec::default(),
            radius: 1.0,
            d: 1,
            optimizer: OptimizerConfig::default(),
        }
    }
}

fn run_optimize(seed: u64, spec: &OptimizeSpec, hash: &str) -> Result<RunOutput> {
    let (model, trust) = spec.topology.build()?;
    let cfg = OptimizerConfig {
        seed,
        ..spec.optimizer.clone()
    };
    let trace = run_optimizer(&model, &trust, spec.radius, spec.d, &cfg)?;
    let mut trace_csv = Vec::new();
    trace.write_csv(&mut trace_csv)?;
    let last = *trace.final_record().expect("trace has the initial record");
    let b = bound(&model, &trace.scheme, spec.radius, spec.d)?;
    let mut scheme_json = serde_json::to_vec_pretty(&trace.scheme)?;
    scheme_json.push(b'\n');
    Ok(RunOutput {
        files: BTreeMap::from([
            ("trace.csv".to_string(), trace_csv),
            ("scheme.json".to_string(), scheme_json),
        ]),
        summary: json!({
            "experiment": "optimize",
            "seed": seed,
            "config_hash": hash,
            "iterations": last.iter,
            "converged": trace.converged,
            "objective": last.objective,
            "tiv": b.tiv,
            "piv": b.piv,
            "bias_l1": b.bias_l1,
            "bias_l2": b.bias_l2,
            "all_iterates_feasible": trace.records.iter().all(|r| r.feasible),
        }),
    })
}

/// Local vectors used in a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// Every node holds `R e₁`, the worst case of the bound.
    Aligned {
        #[serde(rename = "R")]
        radius: f64,
        d: usize,
    },
    /// Independent uniform directions scaled to norm `R`.
    Sphere {
        #[serde(rename = "R")]
        radius: f64,
        d: usize,
    },
    /// Headerless CSV, one row per node.
    Csv {
        path: PathBuf,
        #[serde(rename = "R", default)]
        radius: Option<f64>,
    },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Aligned { radius: 1.0, d: 1 }
    }
}

impl DataSpec {
    pub fn build(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            DataSpec::Aligned { radius, d } => {
                let x = Array2::from_shape_fn((n, *d), |(_, k)| if k == 0 { *radius } else { 0.0 });
                Dataset::new(x, *radius)
            }
            DataSpec::Sphere { radius, d } => {
                let mut rng = trial_rng(seed, u64::MAX);
                let mut x = Array2::<f64>::zeros((n, *d));
                for mut row in x.outer_iter_mut() {
                    loop {
                        row.mapv_inplace(|_| StandardNormal.sample(&mut rng));
                        let norm = row.dot(&row).sqrt();
                        if norm > 0.0 {
                            row *= *radius / norm;
                            break;
                        }
                    }
                }
                Dataset::new(x, *radius * (1.0 + 1e-12))
            }
            DataSpec::Csv { path, radius } => Dataset::from_csv(path, *radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSpec {
    pub topology: TopologySpec,
    pub data: DataSpec,
    /// Fixed scheme; optimized from `optimizer` when absent.
    pub scheme: Option<CollaborationScheme>,
    pub optimizer: OptimizerConfig,
    pub trials: usize,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            topology: TopologySpec::default(),
            data: DataSpec::default(),
            scheme: None,
            optimizer: OptimizerConfig::default(),
            trials: 10_000,
        }
    }
}

/// One Monte-Carlo validation row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloRow {
    pub config_hash: String,
    pub trials: usize,
    pub empirical_mse: f64,
    pub se: f64,
    pub bound: f64,
    pub tiv: f64,
    pub piv: f64,
    pub bias: f64,
}

fn scheme_or_optimize(
    fixed: &Option<CollaborationScheme>,
    model: &NetworkModel,
    trust: &TrustMatrix,
    radius: f64,
    dim: usize,
    optimizer: &OptimizerConfig,
    seed: u64,
) -> Result<CollaborationScheme> {
    match fixed {
        Some(s) => {
            s.check_support(model)?;
            Ok(s.clone())
        }
        None => {
            let cfg = OptimizerConfig {
                seed,
                ..optimizer.clone()
            };
            Ok(run_optimizer(model, trust, radius, dim, &cfg)?.scheme)
        }
    }
}

fn run_simulate(seed: u64, spec: &SimulateSpec, hash: &str) -> Result<RunOutput> {
    let (model, trust) = spec.topology.build()?;
    let data = spec.data.build(model.n(), seed)?;
    let scheme = scheme_or_optimize(&spec.scheme, &model, &trust, data.radius(), data.dim(), &spec.optimizer, seed)?;
    let est = monte_carlo_mse(&data, &model, &scheme, spec.trials, seed)?;
    let b = bound(&model, &scheme, data.radius(), data.dim())?;
    let row = MonteCarloRow {
        config_hash: hash.to_string(),
        trials: est.trials,
        empirical_mse: est.mse,
        se: est.std_error,
        bound: b.bound,
        tiv: b.tiv,
        piv: b.piv,
        bias: b.bias_l1,
    };
    Ok(RunOutput {
        files: BTreeMap::from([("monte_carlo.csv".to_string(), csv_bytes(std::slice::from_ref(&row))?)]),
        summary: json!({
            "experiment": "simulate",
            "seed": seed,
            "config_hash": hash,
            "empirical_mse": est.mse,
            "se": est.std_error,
            "bound": b.bound,
            "within_bound": est.mse <= b.bound + 3.0 * est.std_error,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrivacySpec {
    pub topology: TopologySpec,
    #[serde(rename = "R")]
    pub radius: f64,
    pub d: usize,
    pub scheme: Option<CollaborationScheme>,
    pub optimizer: OptimizerConfig,
    /// Budget split between relay mechanisms and the Bernstein event.
    pub delta_total: f64,
}

impl Default for PrivacySpec {
    fn default() -> Self {
        Self {
            topology: TopologySpec::default(),
            radius: 1.0,
            d: 1,
            scheme: None,
            optimizer: OptimizerConfig::default(),
            delta_total: 0.1,
        }
    }
}

fn run_privacy(seed: u64, spec: &PrivacySpec, hash: &str) -> Result<RunOutput> {
    let (model, trust) = spec.topology.build()?;
    let scheme = scheme_or_optimize(&spec.scheme, &model, &trust, spec.radius, spec.d, &spec.optimizer, seed)?;
    let report = privacy_report(
        &model,
        &scheme,
        spec.radius,
        trust.delta(),
        PrivacyBudget {
            delta_total: spec.delta_total,
        },
    )?;
    let n = model.n();
    let certified = (0..n).all(|i| {
        (0..n).all(|j| i == j || report.local[i][j].eps.at_most(trust.eps()[[i, j]] * (1.0 + 1e-9)))
    });
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let mut json_bytes = report.to_json()?.into_bytes();
    json_bytes.push(b'\n');
    Ok(RunOutput {
        files: BTreeMap::from([
            ("privacy.csv".to_string(), csv),
            ("privacy.json".to_string(), json_bytes),
        ]),
        summary: json!({
            "experiment": "privacy-report",
            "seed": seed,
            "config_hash": hash,
            "local_requirements_met": certified,
            "uncertified": report.failures,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TradeoffSpec {
    pub p: Vec<f64>,
    pub link_probs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub k_hops: usize,
    pub eps_trusted: f64,
    pub eps_untrusted: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub d: usize,
    /// Independent initializations averaged per cell.
    pub seeds: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TradeoffSpec {
    fn default() -> Self {
        Self {
            p: RING_PS.to_vec(),
            link_probs: vec![0.1, 0.5],
            lambdas: vec![0.0, 0.1, 0.5],
            k_hops: 1,
            eps_trusted: 1e3,
            eps_untrusted: 1.0,
            delta: 1e-3,
            radius: 1.0,
            d: 1,
            seeds: 4,
            optimizer: OptimizerConfig {
                max_iters: 200_000,
                tol: 1e-10,
                ..OptimizerConfig::default()
            },
        }
    }
}

/// Averages over seeds of an optimizer outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub link_prob: f64,
    pub lambda: f64,
    pub bias_l1: f64,
    pub bias_l2: f64,
    pub mse: f64,
    pub tiv: f64,
    pub piv: f64,
    pub objective: f64,
    pub iterations: f64,
}

struct Outcome {
    bias_l1: f64,
    bias_l2: f64,
    tiv: f64,
    piv: f64,
    objective: f64,
    iterations: f64,
}

fn averaged_outcome(
    model: &NetworkModel,
    trust: &TrustMatrix,
    radius: f64,
    dim: usize,
    cfg: &OptimizerConfig,
    seeds: usize,
    seed: u64,
) -> Result<Outcome> {
    let runs: Vec<Outcome> = (0..seeds.max(1) as u64)
        .into_par_iter()
        .map(|s| {
            let c = OptimizerConfig {
                seed: derived_seed(seed, s),
                ..cfg.clone()
            };
            let trace = run_optimizer(model, trust, radius, dim, &c)?;
            let b = bound(model, &trace.scheme, radius, dim)?;
            let last = trace.final_record().expect("trace has the initial record");
            Ok(Outcome {
                bias_l1: b.bias_l1,
                bias_l2: b.bias_l2,
                tiv: b.tiv,
                piv: b.piv,
                objective: last.objective,
                iterations: last.iter as f64,
            })
        })
        .collect::<Result<_>>()?;
    let k = runs.len() as f64;
    let mean = |f: fn(&Outcome) -> f64| runs.iter().map(f).sum::<f64>() / k;
    Ok(Outcome {
        bias_l1: mean(|o| o.bias_l1),
        bias_l2: mean(|o| o.bias_l2),
        tiv: mean(|o| o.tiv),
        piv: mean(|o| o.piv),
        objective: mean(|o| o.objective),
        iterations: mean(|o| o.iterations),
    })
}

/// Optimizes the ring for every `(link probability, λ)` pair.
pub fn tradeoff_table(seed: u64, spec: &TradeoffSpec) -> Result<Vec<TradeoffRow>> {
    let mut rows = Vec::new();
    for &pc in &spec.link_probs {
        let (model, trust) = ring_topology(&RingSpec {
            n: spec.p.len(),
            k_hops: spec.k_hops,
            ps: PsConnectivity::Explicit { p: spec.p.clone() },
            link_prob: pc,
            eps_trusted: spec.eps_trusted,
            eps_untrusted: spec.eps_untrusted,
            delta: spec.delta,
        })?;
        for &lambda in &spec.lambdas {
            let cfg = OptimizerConfig {
                lambda,
                ..spec.optimizer.clone()
            };
            let o = averaged_outcome(&model, &trust, spec.radius, spec.d, &cfg, spec.seeds, seed)?;
            rows.push(TradeoffRow {
                link_prob: pc,
                lambda,
                bias_l1: o.bias_l1,
                bias_l2: o.bias_l2,
                mse: o.tiv + o.piv,
                tiv: o.tiv,
                piv: o.piv,
                objective: o.objective,
                iterations: o.iterations,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborSweepSpec {
    pub n: usize,
    pub k_values: Vec<usize>,
    pub p_good: f64,
    pub p_other: f64,
    pub link_prob: f64,
    pub eps_trusted: f64,
    pub eps_untrusted: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub d: usize,
    pub seeds: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for NeighborSweepSpec {
    fn default() -> Self {
        Self {
            n: 10,
            k_values: (0..=5).collect(),
            p_good: 0.9,
            p_other: 0.1,
            link_prob: 0.9,
            eps_trusted: 1e3,
            eps_untrusted: 1.0,
            delta: 1e-3,
            radius: 1.0,
            d: 1,
            seeds: 4,
            optimizer: OptimizerConfig {
                lambda: 0.1,
                max_iters: 200_000,
                tol: 1e-12,
                ..OptimizerConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborRow {
    pub k: usize,
    pub mse: f64,
    pub tiv: f64,
    pub piv: f64,
    pub bias_l1: f64,
    pub objective: f64,
}

/// Optimizes the sole-good-node ring for every number of trusted hops.
pub fn neighbor_sweep(seed: u64, spec: &NeighborSweepSpec) -> Result<Vec<NeighborRow>> {
    spec.k_values
        .iter()
        .map(|&k| {
            let (model, trust) = ring_topology(&RingSpec {
                n: spec.n,
                k_hops: k,
                ps: PsConnectivity::SoleGood {
                    good: spec.p_good,
                    other: spec.p_other,
                },
                link_prob: spec.link_prob,
                eps_trusted: spec.eps_trusted,
                eps_untrusted: spec.eps_untrusted,
                delta: spec.delta,
            })?;
            let o = averaged_outcome(&model, &trust, spec.radius, spec.d, &spec.optimizer, spec.seeds, seed)?;
            Ok(NeighborRow {
                k,
                mse: o.tiv + o.piv,
                tiv: o.tiv,
                piv: o.piv,
                bias_l1: o.bias_l1,
                objective: o.objective,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErPoint {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErAnalyticSpec {
    pub grid: Vec<ErPoint>,
    pub lambdas: Vec<Lambda>,
    pub eps: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub d: usize,
    /// PS probability of relayed nodes in the no-collaboration baseline.
    pub q_prime: f64,
}

impl Default for ErAnalyticSpec {
    fn default() -> Self {
        let mut grid = Vec::new();
        for (n, m) in [(10, 2), (20, 5), (50, 10)] {
            for (p, q) in [(0.5, 0.5), (0.9, 0.9)] {
                grid.push(ErPoint { n, m, p, q });
            }
        }
        Self {
            grid,
            lambdas: vec![
                Lambda::Finite(0.01),
                Lambda::Finite(0.1),
                Lambda::Finite(1.0),
                Lambda::Finite(10.0),
                Lambda::Infinite,
            ],
            eps: 1.0,
            delta: 1e-3,
            radius: 1.0,
            d: 1,
            q_prime: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErRow {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub q: f64,
    pub lambda: String,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub tiv: f64,
    pub piv: f64,
    pub bias: f64,
    pub mse: f64,
    pub mse_unbiased: f64,
    pub mse_no_collab: f64,
}

/// Closed-form scheme and MSE for every grid point and `λ`.
pub fn er_table(spec: &ErAnalyticSpec) -> Result<Vec<ErRow>> {
    let mut rows = Vec::new();
    for pt in &spec.grid {
        for &lambda in &spec.lambdas {
            let cfg = ErConfig {
                n: pt.n,
                m: pt.m,
                p: pt.p,
                q: pt.q,
                eps: spec.eps,
                delta: spec.delta,
                radius: spec.radius,
                d: spec.d,
                lambda,
            };
            let s = erdos_renyi::closed_form(&cfg)?;
            let obj = erdos_renyi::symmetric_objective(&cfg, &s)?;
            rows.push(ErRow {
                n: pt.n,
                m: pt.m,
                p: pt.p,
                q: pt.q,
                lambda: lambda.to_string(),
                alpha: s.alpha,
                gamma: s.gamma,
                sigma: s.sigma,
                tiv: obj.tiv,
                piv: obj.piv,
                bias: obj.bias,
                mse: obj.tiv + obj.piv,
                mse_unbiased: erdos_renyi::mse_at_lambda_inf(&cfg)?,
                mse_no_collab: erdos_renyi::no_collab_mse(&cfg, spec.q_prime)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KmeansSpec {
    pub topology: TopologySpec,
    pub blobs: BlobSpec,
    pub k: usize,
    pub rounds: usize,
    pub local_iters: usize,
    /// Multiplier on the largest round-0 centroid block norm.
    pub radius_factor: f64,
    pub optimizer: OptimizerConfig,
    /// Independent repetitions with fresh data.
    pub repeats: usize,
    pub centralized_restarts: usize,
    pub centralized_iters: usize,
}

impl Default for KmeansSpec {
    fn default() -> Self {
        Self {
            topology: TopologySpec::Scattered(default_scattered_layout()),
            blobs: BlobSpec::default(),
            k: 10,
            rounds: 10,
            local_iters: 5,
            radius_factor: 1.5,
            optimizer: OptimizerConfig {
                lambda: 1.0,
                max_iters: 20_000,
                tol: 1e-10,
                ..OptimizerConfig::default()
            },
            repeats: 5,
            centralized_restarts: 10,
            centralized_iters: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmeansRow {
    pub repeat: usize,
    pub setup: &'static str,
    pub inertia: f64,
    pub centralized_inertia: f64,
    pub relative_inertia: f64,
}

/// Runs distributed k-means with and without collaboration.
pub fn kmeans_experiment(seed: u64, spec: &KmeansSpec) -> Result<Vec<KmeansRow>> {
    let (model, trust) = spec.topology.build()?;
    let n = model.n();
    let alone = NetworkModel::new(model.ps().clone(), Array2::eye(n), None)?;
    let per_repeat: Vec<Vec<KmeansRow>> = (0..spec.repeats.max(1))
        .into_par_iter()
        .map(|rep| {
            let base = derived_seed(seed, rep as u64);
            let data = spec.blobs.sample(n, &mut trial_rng(base, 0))?;
            let pooled = pool(&data);
            let (_, central) = centralized_kmeans(
                &pooled,
                spec.k,
                spec.centralized_restarts,
                spec.centralized_iters,
                &mut trial_rng(base, 1),
            )?;
            let dim = spec.k * data[0].ncols();
            let round_rng = trial_rng(base, 2);
            let probe_seed: u64 = rand::Rng::random(&mut round_rng.clone());
            let probe = KmeansState::new(n, spec.k, data[0].ncols(), f64::INFINITY);
            let blocks = local_step(&probe, &data, spec.local_iters, probe_seed)?;
            let radius = spec.radius_factor
                * blocks
                    .iter()
                    .map(|b| b.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0, f64::max);
            let mut rows = Vec::new();
            for (setup, net) in [("pricer", &model), ("no_collab", &alone)] {
                let cfg = OptimizerConfig {
                    seed: base,
                    ..spec.optimizer.clone()
                };
                let scheme = run_optimizer(net, &trust, radius, dim, &cfg)?.scheme;
                let mut state = KmeansState::new(n, spec.k, data[0].ncols(), radius);
                let mut rng = round_rng.clone();
                for _ in 0..spec.rounds {
                    state = kmeans_round(&state, &data, net, &scheme, spec.local_iters, &mut rng)?;
                }
                rows.push(KmeansRow {
                    repeat: rep,
                    setup,
                    inertia: *state.inertia_history.last().unwrap_or(&f64::NAN),
                    centralized_inertia: central,
                    relative_inertia: relative_inertia(&state.global, &pooled, central)?,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_repeat.into_iter().flatten().collect())
}

fn mean_of(rows: &[KmeansRow], setup: &str) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.setup == setup).map(|r| r.relative_inertia).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Runs the configured experiment and returns its artifacts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let hash = config_hash(config)?;
    let seed = config.seed;
    match &config.experiment {
        Experiment::Optimize(spec) => run_optimize(seed, spec, &hash),
        Experiment::Simulate(spec) => run_simulate(seed, spec, &hash),
        Experiment::PrivacyReport(spec) => run_privacy(seed, spec, &hash),
        Experiment::Tradeoff(spec) => {
            let rows = tradeoff_table(seed, spec)?;
            Ok(RunOutput {
                files: BTreeMap::from([("tradeoff.csv".to_string(), csv_bytes(&rows)?)]),
                summary: json!({"experiment": "tradeoff", "seed": seed, "config_hash": hash, "rows": rows.len()}),
            })
        }
        Experiment::NeighborSweep(spec) => {
            let rows = neighbor_sweep(seed, spec)?;
            let non_increasing = |f: fn(&NeighborRow) -> f64| rows.windows(2).all(|w| f(&w[1]) <= f(&w[0]));
            Ok(RunOutput {
                files: BTreeMap::from([("neighbor_sweep.csv".to_string(), csv_bytes(&rows)?)]),
                summary: json!({
                    "experiment": "neighbor-sweep",
                    "seed": seed,
                    "config_hash": hash,
                    "mse_non_increasing": non_increasing(|r| r.mse),
                    "piv_non_increasing": non_increasing(|r| r.piv),
                }),
            })
        }
        Experiment::ErAnalytic(spec) => {
            let rows = er_table(spec)?;
            Ok(RunOutput {
                files: BTreeMap::from([("er.csv".to_string(), csv_bytes(&rows)?)]),
                summary: json!({"experiment": "er-analytic", "seed": seed, "config_hash": hash, "rows": rows.len()}),
            })
        }
        Experiment::Kmeans(spec) => {
            let rows = kmeans_experiment(seed, spec)?;
            Ok(RunOutput {
                files: BTreeMap::from([("kmeans.csv".to_string(), csv_bytes(&rows)?)]),
                summary: json!({
                    "experiment": "kmeans",
                    "seed": seed,
                    "config_hash": hash,
                    "mean_relative_inertia_pricer": mean_of(&rows, "pricer"),
                    "mean_relative_inertia_no_collab": mean_of(&rows, "no_collab"),
                }),
            })
        }
    }
}

//! Projected gradient descent over weights and noise levels.
//!
//! Minimizes `TIV + PIV + λ·bias` subject to the per-link privacy cone
//! `σ_ij ≥ β_ij α_ij`, `α_ij ≥ 0`. Each step moves along the analytic
//! gradient and projects every `(α_ij, σ_ij)` pair back onto its cone.

use std::io::Write;

use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{piv_raw, s_raw, tiv_terms_raw};
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::scheme::{check_feasibility_tol, CollaborationScheme, TrustMatrix};

/// Penalty on the per-node bias `S_i - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasNorm {
    /// `Σ_i |S_i - 1|`, with subgradient `0` at `S_i = 1`.
    L1,
    /// `Σ_i (S_i - 1)²`.
    #[default]
    L2,
}

impl std::str::FromStr for BiasNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(BiasNorm::L1),
            "l2" => Ok(BiasNorm::L2),
            _ => Err(Error::InvalidParameter(format!("unknown bias norm {s:?}"))),
        }
    }
}

/// Bias penalty of an `S` vector.
pub fn bias(s: &Array1<f64>, norm: BiasNorm) -> f64 {
    match norm {
        BiasNorm::L1 => s.iter().map(|v| (v - 1.0).abs()).sum(),
        BiasNorm::L2 => s.iter().map(|v| (v - 1.0).powi(2)).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Step size for weights, applied to the objective scaled by `n²/R²`.
    pub eta_alpha: f64,
    /// Step size for noise levels, same scaling.
    pub eta_sigma: f64,
    pub lambda: f64,
    pub bias_norm: BiasNorm,
    pub max_iters: usize,
    /// Stop once the objective moves less than this over `window` iterations.
    pub tol: f64,
    pub window: usize,
    /// Seeds the random jitter of the initial weights.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta_alpha: 0.01,
            eta_sigma: 0.01,
            lambda: 0.0,
            bias_norm: BiasNorm::L2,
            max_iters: 50_000,
            tol: 1e-8,
            window: 10,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eta_alpha > 0.0 && self.eta_sigma > 0.0) {
            return Err(Error::InvalidParameter("step sizes must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda = {}", self.lambda)));
        }
        if self.max_iters == 0 || self.window == 0 {
            return Err(Error::InvalidParameter("max_iters and window must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("tol = {}", self.tol)));
        }
        Ok(())
    }
}

/// One iteration of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub tiv: f64,
    pub piv: f64,
    pub bias: f64,
    pub feasible: bool,
}

/// Objective history and the final scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerTrace {
    pub records: Vec<TraceRecord>,
    pub scheme: CollaborationScheme,
    pub converged: bool,
    /// Step actually applied to weights and noise levels.
    pub step: (f64, f64),
}

impl OptimizerTrace {
    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// CSV with columns `iter, objective, tiv, piv, bias`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "objective", "tiv", "piv", "bias"])?;
        for r in &self.records {
            out.write_record([
                r.iter.to_string(),
                r.objective.to_string(),
                r.tiv.to_string(),
                r.piv.to_string(),
                r.bias.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Objective value split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveParts {
    pub tiv: f64,
    pub piv: f64,
    pub bias: f64,
    pub total: f64,
}

/// Precomputed coefficients of the objective for one network.
struct Problem<'a> {
    n: usize,
    ps: &'a Array1<f64>,
    links: &'a Array2<f64>,
    corr: &'a Array2<f64>,
    /// `p_j p_ij`.
    w: Array2<f64>,
    /// `p_i p_j (E_ij - p_ij p_ji)`.
    pair: Array2<f64>,
    radius: f64,
    dim: usize,
    lambda: f64,
    norm: BiasNorm,
}

impl<'a> Problem<'a> {
    fn new(model: &'a NetworkModel, radius: f64, dim: usize, lambda: f64, norm: BiasNorm) -> Self {
        let (ps, links, corr) = (model.ps(), model.links(), model.corr());
        let n = model.n();
        let w = Array2::from_shape_fn((n, n), |(i, j)| ps[j] * links[[i, j]]);
        let pair = Array2::from_shape_fn((n, n), |(i, j)| {
            ps[i] * ps[j] * (corr[[i, j]] - links[[i, j]] * links[[j, i]])
        });
        Self {
            n,
            ps,
            links,
            corr,
            w,
            pair,
            radius,
            dim,
            lambda,
            norm,
        }
    }

    fn parts(&self, alpha: &Array2<f64>, sigma: &Array2<f64>) -> ObjectiveParts {
        let nn = (self.n * self.n) as f64;
        let tiv = self.radius * self.radius / nn
            * tiv_terms_raw(self.ps, self.links, self.corr, alpha).iter().sum::<f64>();
        let piv = piv_raw(self.ps, self.links, sigma, self.dim);
        let b = bias(&s_raw(self.ps, self.links, alpha), self.norm);
        ObjectiveParts {
            tiv,
            piv,
            bias: b,
            total: tiv + piv + self.lambda * b,
        }
    }

    /// Analytic gradient; with `smooth_only` the L1 bias is left out.
    fn gradient(&self, alpha: &Array2<f64>, sigma: &Array2<f64>, smooth_only: bool) -> (Array2<f64>, Array2<f64>) {
        let n = self.n;
        let nn = (n * n) as f64;
        let scale = self.radius * self.radius / nn;
        let s = s_raw(self.ps, self.links, alpha);
        let total_bias = s.sum() - n as f64;
        let col: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| self.links[[i, j]] * alpha[[i, j]]).sum())
            .collect();
        let bias_coef: Vec<f64> = s
            .iter()
            .map(|&si| match self.norm {
                BiasNorm::L2 => 2.0 * self.lambda * (si - 1.0),
                BiasNorm::L1 if smooth_only => 0.0,
                BiasNorm::L1 => self.lambda * sign0(si - 1.0),
            })
            .collect();
        let mut ga = Array2::zeros((n, n));
        let mut gs = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let (pj, pij, w) = (self.ps[j], self.links[[i, j]], self.w[[i, j]]);
                let t1 = 2.0 * w * (1.0 - pij) * alpha[[i, j]];
                let t2 = 2.0 * pj * (1.0 - pj) * pij * col[j];
                let t3 = 2.0 * self.pair[[i, j]] * alpha[[j, i]];
                let t4 = 2.0 * total_bias * w;
                ga[[i, j]] = scale * (t1 + t2 + t3 + t4) + bias_coef[i] * w;
                gs[[i, j]] = 2.0 * self.dim as f64 * w * sigma[[i, j]] / nn;
            }
        }
        (ga, gs)
    }

    /// Largest curvature of the smooth part over the free entries.
    fn lipschitz(&self, free: &Array2<bool>) -> f64 {
        let n = self.n;
        let zero = Array2::<f64>::zeros((n, n));
        let (g0a, g0s) = self.gradient(&zero, &zero, true);
        let mask = |m: &mut Array2<f64>| Zip::from(m).and(free).for_each(|v, &f| if !f { *v = 0.0 });
        let mut va = Array2::<f64>::from_elem((n, n), 1.0);
        let mut vs = Array2::<f64>::from_elem((n, n), 1.0);
        mask(&mut va);
        mask(&mut vs);
        let mut estimate = 0.0;
        for _ in 0..200 {
            let norm = (va.iter().chain(vs.iter()).map(|v| v * v).sum::<f64>()).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            va /= norm;
            vs /= norm;
            let (mut ha, mut hs) = self.gradient(&va, &vs, true);
            ha -= &g0a;
            hs -= &g0s;
            mask(&mut ha);
            mask(&mut hs);
            let next: f64 = (ha.iter().zip(va.iter()).chain(hs.iter().zip(vs.iter())))
                .map(|(h, v)| h * v)
                .sum();
            va = ha;
            vs = hs;
            if (next - estimate).abs() <= 1e-12 * next.abs() {
                estimate = next;
                break;
            }
            estimate = next;
        }
        estimate
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_inputs(model: &NetworkModel, scheme: &CollaborationScheme) -> Result<()> {
    if model.n() != scheme.n() {
        return Err(Error::Dimension(format!(
            "model has {} nodes, scheme has {}",
            model.n(),
            scheme.n()
        )));
    }
    Ok(())
}

/// `TIV + PIV + λ·bias` with its parts.
pub fn objective_parts(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    dim: usize,
    lambda: f64,
    norm: BiasNorm,
) -> Result<ObjectiveParts> {
    check_inputs(model, scheme)?;
    Ok(Problem::new(model, radius, dim, lambda, norm).parts(scheme.alpha(), scheme.sigma()))
}

pub fn objective(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    dim: usize,
    lambda: f64,
    norm: BiasNorm,
) -> Result<f64> {
    Ok(objective_parts(model, scheme, radius, dim, lambda, norm)?.total)
}

/// Partial derivatives of the objective with respect to every `α_ij` and `σ_ij`.
pub fn gradient(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    dim: usize,
    lambda: f64,
    norm: BiasNorm,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_inputs(model, scheme)?;
    Ok(Problem::new(model, radius, dim, lambda, norm).gradient(scheme.alpha(), scheme.sigma(), false))
}

/// Euclidean projection of `(α, σ)` onto `{α ≥ 0, σ ≥ slope·α}`.
pub fn project_cone(alpha: f64, sigma: f64, slope: f64) -> (f64, f64) {
    if alpha >= 0.0 && sigma >= slope * alpha {
        (alpha, sigma)
    } else if alpha < 0.0 && sigma >= 0.0 {
        (0.0, sigma)
    } else {
        let t = (alpha + slope * sigma) / (1.0 + slope * slope);
        if t > 0.0 {
            (t, slope * t)
        } else {
            (0.0, 0.0)
        }
    }
}

/// Entries the optimizer may change: links with `p_ij > 0`.
fn free_entries(model: &NetworkModel) -> Array2<bool> {
    model.links().mapv(|p| p > 0.0)
}

/// Boundary-feasible starting point.
///
/// `α_ij = u_ij · min(1, 1/(n·max(p_j p_ij, 10⁻³)))` with `u_ij` uniform on
/// `[0.5, 1.5)` drawn from `seed`, `σ_ij = β_ij α_ij` and `σ_ii = 0`. Links with
/// `p_ij = 0` start and stay at zero.
pub fn initial_scheme(model: &NetworkModel, trust: &TrustMatrix, radius: f64, seed: u64) -> Result<CollaborationScheme> {
    let n = model.n();
    if trust.n() != n {
        return Err(Error::Dimension(format!("trust has {} nodes, model {n}", trust.n())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alpha = Array2::zeros((n, n));
    let mut sigma = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let u: f64 = rng.random_range(0.5..1.5);
            let pij = model.links()[[i, j]];
            if pij == 0.0 {
                continue;
            }
            let w = (model.ps()[j] * pij).max(1e-3);
            let mut a = u * (1.0 / (n as f64 * w)).min(1.0);
            if i != j {
                let slope = trust.cone_slope(radius, i, j);
                a /= 1.0 + slope / radius;
                sigma[[i, j]] = slope * a;
            }
            alpha[[i, j]] = a;
        }
    }
    CollaborationScheme::new(alpha, sigma)
}

/// Runs projected gradient descent from the default initialization.
pub fn optimize(
    model: &NetworkModel,
    trust: &TrustMatrix,
    radius: f64,
    dim: usize,
    config: &OptimizerConfig,
) -> Result<OptimizerTrace> {
    let init = initial_scheme(model, trust, radius, config.seed)?;
    optimize_from(model, trust, radius, dim, config, init)
}

/// Runs projected gradient descent from a given feasible scheme.
///
/// The step applied to the raw objective is `η·n²/R²`, capped at the inverse
/// curvature of the smooth part so the iteration cannot overshoot.
pub fn optimize_from(
    model: &NetworkModel,
    trust: &TrustMatrix,
    radius: f64,
    dim: usize,
    config: &OptimizerConfig,
    init: CollaborationScheme,
) -> Result<OptimizerTrace> {
    config.validate()?;
    check_inputs(model, &init)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("radius {radius}")));
    }
    let feas = check_feasibility_tol(&init, trust, radius, 1e-12)?;
    if !feas.is_feasible() {
        return Err(Error::InfeasibleStart(feas.violations.len()));
    }
    let n = model.n();
    let problem = Problem::new(model, radius, dim, config.lambda, config.bias_norm);
    let free = free_entries(model);
    let slopes = trust.slopes(radius);
    let curvature = problem.lipschitz(&free);
    let scale = (n * n) as f64 / (radius * radius);
    let cap = if curvature > 0.0 { 1.0 / curvature } else { f64::INFINITY };
    let step_a = (config.eta_alpha * scale).min(cap);
    let step_s = (config.eta_sigma * scale).min(cap);
    log::debug!("curvature {curvature:.4e}, steps ({step_a:.4e}, {step_s:.4e})");

    let (mut alpha, mut sigma) = init.into_parts();
    Zip::from(&mut alpha)
        .and(&mut sigma)
        .and(&free)
        .for_each(|a, s, &f| {
            if !f {
                *a = 0.0;
                *s = 0.0;
            }
        });
    let record = |iter: usize, alpha: &Array2<f64>, sigma: &Array2<f64>| {
        let p = problem.parts(alpha, sigma);
        let feasible = (0..n).all(|i| {
            (0..n).all(|j| alpha[[i, j]] >= 0.0 && sigma[[i, j]] >= slopes[[i, j]] * alpha[[i, j]] - 1e-12)
        });
        TraceRecord {
            iter,
            objective: p.total,
            tiv: p.tiv,
            piv: p.piv,
            bias: p.bias,
            feasible,
        }
    };
    let mut records = vec![record(0, &alpha, &sigma)];
    let mut converged = false;
    for iter in 1..=config.max_iters {
        let (ga, gs) = problem.gradient(&alpha, &sigma, false);
        for i in 0..n {
            for j in 0..n {
                if !free[[i, j]] {
                    continue;
                }
                let a = alpha[[i, j]] - step_a * ga[[i, j]];
                if i == j {
                    alpha[[i, j]] = a.max(0.0);
                    sigma[[i, j]] = 0.0;
                } else {
                    let s = sigma[[i, j]] - step_s * gs[[i, j]];
                    let (pa, ps) = project_cone(a, s, slopes[[i, j]]);
                    alpha[[i, j]] = pa;
                    sigma[[i, j]] = ps;
                }
            }
        }
        let rec = record(iter, &alpha, &sigma);
        records.push(rec);
        if !rec.objective.is_finite() {
            let scheme = CollaborationScheme::new(alpha.mapv(|v| if v.is_finite() { v } else { 0.0 }), sigma.mapv(|v| if v.is_finite() { v } else { 0.0 }))?;
            return Err(Error::Diverged {
                iteration: iter,
                trace: Box::new(OptimizerTrace {
                    records,
                    scheme,
                    converged: false,
                    step: (step_a, step_s),
                }),
            });
        }
        if iter >= config.window {
            let past = records[iter - config.window].objective;
            if (rec.objective - past).abs() < config.tol {
                converged = true;
                break;
            }
        }
    }
    Ok(OptimizerTrace {
        records,
        scheme: CollaborationScheme::new(alpha, sigma)?,
        converged,
        step: (step_a, step_s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    #[test]
    fn projection_cases() {
        assert_eq!(project_cone(1.0, 2.0, 1.0), (1.0, 2.0));
        assert_eq!(project_cone(-1.0, 1.0, 1.0), (0.0, 1.0));
        assert_eq!(project_cone(2.0, 0.0, 1.0), (1.0, 1.0));
        assert_eq!(project_cone(-1.0, -1.0, 2.0), (0.0, 0.0));
        assert_eq!(project_cone(3.0, -1.0, 0.0), (3.0, 0.0));
    }

    #[test]
    fn sigma_gradient_vanishes_at_zero_noise() {
        let model = NetworkModel::independent(Array1::from(vec![0.3, 0.7]), arr2(&[[1.0, 0.4], [0.6, 1.0]])).unwrap();
        let s = CollaborationScheme::new(Array2::from_elem((2, 2), 0.5), Array2::zeros((2, 2))).unwrap();
        let (_, gs) = gradient(&model, &s, 1.0, 3, 0.2, BiasNorm::L2).unwrap();
        assert!(gs.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_weight_gradient_is_total_bias_term() {
        let model = NetworkModel::independent(Array1::from(vec![0.3, 0.7]), arr2(&[[1.0, 0.4], [0.6, 1.0]])).unwrap();
        let zero = CollaborationScheme::new(Array2::zeros((2, 2)), Array2::zeros((2, 2))).unwrap();
        let r = 1.7;
        let (ga, _) = gradient(&model, &zero, r, 1, 0.0, BiasNorm::L2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = 2.0 * r * r / 4.0 * (0.0 - 2.0) * model.ps()[j] * model.links()[[i, j]];
                assert!((ga[[i, j]] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lambda_zero_objective_is_bound() {
        let model = NetworkModel::independent(Array1::from(vec![0.3, 0.7, 0.9]), Array2::from_elem((3, 3), 1.0)).unwrap();
        let s = CollaborationScheme::new(Array2::from_elem((3, 3), 0.4), Array2::from_elem((3, 3), 0.2)).unwrap();
        let b = crate::analysis::bound(&model, &s, 2.0, 2).unwrap();
        let f = objective(&model, &s, 2.0, 2, 0.0, BiasNorm::L1).unwrap();
        assert!((f - b.bound).abs() < 1e-14);
    }

    #[test]
    fn perfect_network_reaches_zero() {
        let model = NetworkModel::perfect(4);
        let trust = TrustMatrix::uniform(4, 1.0, 1e-3).unwrap();
        let cfg = OptimizerConfig {
            lambda: 0.1,
            tol: 0.0,
            max_iters: 5000,
            ..Default::default()
        };
        let trace = optimize(&model, &trust, 1.0, 1, &cfg).unwrap();
        let last = trace.final_record().unwrap();
        assert!(last.objective <= 1e-6, "objective {}", last.objective);
        assert!(trace.records.iter().all(|r| r.feasible));
    }

    #[test]
    fn infeasible_start_rejected() {
        let model = NetworkModel::perfect(2);
        let trust = TrustMatrix::uniform(2, 1.0, 1e-3).unwrap();
        let bad = CollaborationScheme::new(Array2::ones((2, 2)), Array2::zeros((2, 2))).unwrap();
        assert!(matches!(
            optimize_from(&model, &trust, 1.0, 1, &OptimizerConfig::default(), bad),
            Err(Error::InfeasibleStart(2))
        ));
    }

    #[test]
    fn trace_csv_header() {
        let model = NetworkModel::perfect(2);
        let trust = TrustMatrix::uniform(2, 1.0, 1e-3).unwrap();
        let cfg = OptimizerConfig {
            max_iters: 3,
            ..Default::default()
        };
        let trace = optimize(&model, &trust, 1.0, 1, &cfg).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,objective,tiv,piv,bias\n"));
        assert_eq!(text.lines().count(), 1 + trace.records.len());
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_feasible(a in -5.0..5.0f64, s in -5.0..5.0f64, b in 0.0..10.0f64) {
            let (pa, ps) = project_cone(a, s, b);
            prop_assert!(pa >= 0.0 && ps >= b * pa);
            prop_assert_eq!(project_cone(pa, ps, b), (pa, ps));
        }
    }
}

//! The two-stage relaying protocol and Monte-Carlo estimation of its MSE.
//!
//! Stage 1: node `j` sends `α_ji x_j + n_ji` to every node `i`, and `i` sums
//! what arrives into `x̃_i`. Stage 2: every node forwards `x̃_i` to the PS,
//! which averages what it receives.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{LinkRealization, NetworkModel};
use crate::scheme::{CollaborationScheme, Dataset};

/// One sampled execution of the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub links: LinkRealization,
    /// Row `i` is the local aggregate `x̃_i`.
    pub node_aggregates: Array2<f64>,
    pub ps_estimate: Array1<f64>,
    pub true_mean: Array1<f64>,
    pub squared_error: f64,
}

fn check_dims(data: &Dataset, model: &NetworkModel, scheme: &CollaborationScheme) -> Result<()> {
    if data.n() != model.n() || scheme.n() != model.n() {
        return Err(Error::Dimension(format!(
            "dataset has {} nodes, model {}, scheme {}",
            data.n(),
            model.n(),
            scheme.n()
        )));
    }
    Ok(())
}

/// Runs one round on a fresh link realization drawn from `rng`.
///
/// Links are drawn first, then noise for every live link in row-major `(j, i)`
/// order; dead links consume no randomness.
pub fn run_round<R: Rng + ?Sized>(
    data: &Dataset,
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    rng: &mut R,
) -> Result<RoundOutcome> {
    check_dims(data, model, scheme)?;
    let links = model.sample_links(rng);
    Ok(run_round_with_links(data, scheme, links, rng))
}

/// Runs one round on a given link realization.
pub fn run_round_with_links<R: Rng + ?Sized>(
    data: &Dataset,
    scheme: &CollaborationScheme,
    links: LinkRealization,
    rng: &mut R,
) -> RoundOutcome {
    let (n, d) = (data.n(), data.dim());
    let x = data.x();
    let (alpha, sigma) = (scheme.alpha(), scheme.sigma());
    let mut agg = Array2::<f64>::zeros((n, d));
    for j in 0..n {
        for i in 0..n {
            if !links.tau[[j, i]] {
                continue;
            }
            let (a, s) = (alpha[[j, i]], sigma[[j, i]]);
            let mut row = agg.row_mut(i);
            for k in 0..d {
                let noise = if s > 0.0 {
                    s * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                row[k] += a * x[[j, k]] + noise;
            }
        }
    }
    let mut estimate = Array1::<f64>::zeros(d);
    for i in 0..n {
        if links.tau_ps[i] {
            estimate += &agg.row(i);
        }
    }
    if n > 0 {
        estimate /= n as f64;
    }
    let true_mean = data.mean();
    let diff = &estimate - &true_mean;
    let squared_error = diff.dot(&diff);
    RoundOutcome {
        links,
        node_aggregates: agg,
        ps_estimate: estimate,
        true_mean,
        squared_error,
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sample mean and standard error of a sequence, summed in order.
pub(crate) fn mean_and_se(values: impl IntoIterator<Item = f64>) -> (f64, f64, usize) {
    let (mut s, mut s2, mut count) = (CompensatedSum::default(), CompensatedSum::default(), 0usize);
    let values: Vec<f64> = values.into_iter().collect();
    for &v in &values {
        s.add(v);
        count += 1;
    }
    if count == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = s.value() / count as f64;
    for &v in &values {
        s2.add((v - mean) * (v - mean));
    }
    let se = if count > 1 {
        (s2.value() / (count - 1) as f64 / count as f64).sqrt()
    } else {
        0.0
    };
    (mean, se, count)
}

/// Empirical MSE over independent rounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub trials: usize,
    pub mse: f64,
    pub std_error: f64,
    /// Componentwise mean of the PS estimate.
    pub mean_estimate: Vec<f64>,
    /// Standard error of each component of `mean_estimate`.
    pub mean_estimate_se: Vec<f64>,
}

/// Random stream dedicated to one trial of a seeded experiment.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Runs `trials` independent rounds in parallel.
///
/// Trial `t` draws from `trial_rng(seed, t)` and results are reduced in trial
/// order, so the estimate does not depend on the number of worker threads.
pub fn monte_carlo_mse(
    data: &Dataset,
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    check_dims(data, model, scheme)?;
    let outcomes: Vec<(f64, Array1<f64>)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let out = run_round(data, model, scheme, &mut rng).expect("dimensions checked");
            (out.squared_error, out.ps_estimate)
        })
        .collect();
    let (mse, std_error, _) = mean_and_se(outcomes.iter().map(|(e, _)| *e));
    let (mean_estimate, mean_estimate_se) = (0..data.dim())
        .map(|k| {
            let (m, se, _) = mean_and_se(outcomes.iter().map(|(_, v)| v[k]));
            (m, se)
        })
        .unzip();
    Ok(MonteCarloEstimate {
        trials,
        mse,
        std_error,
        mean_estimate,
        mean_estimate_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn lone_perfect_node() {
        let data = Dataset::new(arr2(&[[7.0]]), 7.0).unwrap();
        let model = NetworkModel::perfect(1);
        let mut rng = trial_rng(0, 0);
        let out = run_round(&data, &model, &CollaborationScheme::identity(1), &mut rng).unwrap();
        assert_eq!(out.ps_estimate.to_vec(), vec![7.0]);
        assert_eq!(out.squared_error, 0.0);
    }

    #[test]
    fn perfect_network_identity_is_exact() {
        let data = Dataset::with_computed_radius(arr2(&[[1.0, 2.0], [-3.0, 0.5], [0.0, 4.0]])).unwrap();
        let est = monte_carlo_mse(&data, &NetworkModel::perfect(3), &CollaborationScheme::identity(3), 100, 1).unwrap();
        assert_eq!(est.mse, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn hand_traced_two_node_round() {
        let data = Dataset::new(arr2(&[[1.0], [3.0]]), 3.0).unwrap();
        let model = NetworkModel::independent(
            Array1::from(vec![1.0, 0.0]),
            arr2(&[[1.0, 0.0], [1.0, 1.0]]),
        )
        .unwrap();
        let scheme = CollaborationScheme::new(arr2(&[[2.0, 0.0], [2.0, 0.0]]), Array2::zeros((2, 2))).unwrap();
        let out = run_round(&data, &model, &scheme, &mut trial_rng(3, 0)).unwrap();
        assert_eq!(out.ps_estimate.to_vec(), vec![4.0]);
        assert_eq!(out.true_mean.to_vec(), vec![2.0]);
        assert_eq!(out.squared_error, 4.0);
    }

    #[test]
    fn squared_error_matches_definition() {
        let data = Dataset::with_computed_radius(arr2(&[[1.0, -1.0], [0.5, 2.0]])).unwrap();
        let model = NetworkModel::independent(
            Array1::from(vec![0.7, 0.4]),
            arr2(&[[1.0, 0.6], [0.3, 1.0]]),
        )
        .unwrap();
        let scheme = CollaborationScheme::new(arr2(&[[1.0, 0.4], [0.8, 1.2]]), arr2(&[[0.0, 0.5], [0.2, 0.0]])).unwrap();
        for t in 0..50 {
            let out = run_round(&data, &model, &scheme, &mut trial_rng(9, t)).unwrap();
            let diff = &out.ps_estimate - &out.true_mean;
            assert_eq!(out.squared_error, diff.dot(&diff));
        }
    }

    #[test]
    fn monte_carlo_is_deterministic_across_thread_counts() {
        let data = Dataset::with_computed_radius(arr2(&[[1.0], [2.0], [-1.0]])).unwrap();
        let model = NetworkModel::independent(
            Array1::from(vec![0.5, 0.6, 0.7]),
            Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 1.0 } else { 0.5 }),
        )
        .unwrap();
        let scheme = CollaborationScheme::new(Array2::from_elem((3, 3), 0.5), Array2::from_elem((3, 3), 0.3)).unwrap();
        let a = monte_carlo_mse(&data, &model, &scheme, 2000, 42).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| monte_carlo_mse(&data, &model, &scheme, 2000, 42).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }
}

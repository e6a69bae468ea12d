//! Worst-case MSE decomposition and an exact enumeration oracle.
//!
//! The MSE of the PS estimate is bounded by the sum of a topology-induced
//! variance (TIV), caused by random link failures, and a privacy-induced
//! variance (PIV), caused by the injected noise. The oracle computes the exact
//! expectation for small networks by enumerating every link realization.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::scheme::{CollaborationScheme, Dataset};

/// Largest network the exact oracle accepts.
pub const ORACLE_MAX_NODES: usize = 5;

/// Bound components for one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseBreakdown {
    pub tiv: f64,
    pub piv: f64,
    pub bias_l1: f64,
    pub bias_l2: f64,
    pub s: Vec<f64>,
    pub bound: f64,
}

fn check_dims(model: &NetworkModel, scheme: &CollaborationScheme) -> Result<()> {
    if model.n() != scheme.n() {
        return Err(Error::Dimension(format!(
            "model has {} nodes, scheme has {}",
            model.n(),
            scheme.n()
        )));
    }
    Ok(())
}

/// `S_i = Σ_j p_j p_ij α_ij`, the expected weight of `x_i` reaching the PS.
pub fn s_vector(model: &NetworkModel, scheme: &CollaborationScheme) -> Result<Array1<f64>> {
    check_dims(model, scheme)?;
    Ok(s_raw(model.ps(), model.links(), scheme.alpha()))
}

pub(crate) fn s_raw(ps: &Array1<f64>, links: &Array2<f64>, alpha: &Array2<f64>) -> Array1<f64> {
    let n = ps.len();
    Array1::from_shape_fn(n, |i| (0..n).map(|j| ps[j] * links[[i, j]] * alpha[[i, j]]).sum())
}

/// The four sums of the TIV before scaling by `R²/n²`.
///
/// In order: per-link failures, relay-to-PS failures, pair correlation, and
/// the squared total bias.
pub fn tiv_terms(model: &NetworkModel, scheme: &CollaborationScheme) -> Result<[f64; 4]> {
    check_dims(model, scheme)?;
    Ok(tiv_terms_raw(model.ps(), model.links(), model.corr(), scheme.alpha()))
}

pub(crate) fn tiv_terms_raw(
    ps: &Array1<f64>,
    links: &Array2<f64>,
    corr: &Array2<f64>,
    alpha: &Array2<f64>,
) -> [f64; 4] {
    let n = ps.len();
    let mut t1 = 0.0;
    let mut t3 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (pij, a) = (links[[i, j]], alpha[[i, j]]);
            t1 += ps[j] * pij * (1.0 - pij) * a * a;
            t3 += ps[i] * ps[j] * (corr[[i, j]] - pij * links[[j, i]]) * a * alpha[[j, i]];
        }
    }
    let t2 = (0..n)
        .map(|j| {
            let c: f64 = (0..n).map(|i| links[[i, j]] * alpha[[i, j]]).sum();
            ps[j] * (1.0 - ps[j]) * c * c
        })
        .sum();
    let s = s_raw(ps, links, alpha);
    let t4 = (s.sum() - n as f64).powi(2);
    [t1, t2, t3, t4]
}

/// Topology-induced variance.
pub fn tiv(model: &NetworkModel, scheme: &CollaborationScheme, radius: f64) -> Result<f64> {
    let n = model.n() as f64;
    let terms = tiv_terms(model, scheme)?;
    Ok(radius * radius / (n * n) * terms.iter().sum::<f64>())
}

/// Privacy-induced variance `(d/n²) Σ p_j p_ij σ_ij²`.
pub fn piv(model: &NetworkModel, scheme: &CollaborationScheme, dim: usize) -> Result<f64> {
    check_dims(model, scheme)?;
    Ok(piv_raw(model.ps(), model.links(), scheme.sigma(), dim))
}

pub(crate) fn piv_raw(ps: &Array1<f64>, links: &Array2<f64>, sigma: &Array2<f64>, dim: usize) -> f64 {
    let n = ps.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += ps[j] * links[[i, j]] * sigma[[i, j]].powi(2);
        }
    }
    dim as f64 * acc / (n * n) as f64
}

/// Assembles TIV, PIV and both bias functionals.
pub fn bound(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    dim: usize,
) -> Result<MseBreakdown> {
    let tiv = tiv(model, scheme, radius)?;
    let piv = piv(model, scheme, dim)?;
    let s = s_vector(model, scheme)?;
    Ok(MseBreakdown {
        tiv,
        piv,
        bias_l1: s.iter().map(|v| (v - 1.0).abs()).sum(),
        bias_l2: s.iter().map(|v| (v - 1.0).powi(2)).sum(),
        s: s.to_vec(),
        bound: tiv + piv,
    })
}

/// Exact expectation split by source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactMse {
    /// `E‖(1/n) Σ_i (c_i - 1) x_i‖²` where `c_i` is the realized weight of `x_i`.
    pub topology: f64,
    /// Expected noise energy at the PS.
    pub privacy: f64,
    pub total: f64,
}

/// Exact MSE by enumerating every link realization with its probability.
///
/// Each unordered node pair is enumerated over its four joint outcomes, so
/// correlated directions are handled exactly. Noise enters analytically.
pub fn exact_mse(data: &Dataset, model: &NetworkModel, scheme: &CollaborationScheme) -> Result<ExactMse> {
    let n = model.n();
    if n > ORACLE_MAX_NODES {
        return Err(Error::OracleTooLarge {
            n,
            max: ORACLE_MAX_NODES,
        });
    }
    check_dims(model, scheme)?;
    if data.n() != n {
        return Err(Error::Dimension(format!("dataset has {} nodes, model {n}", data.n())));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let joints: Vec<[f64; 4]> = pairs.iter().map(|&(i, j)| model.pair_joint(i, j)).collect();
    let ctx = Enumeration {
        n,
        dim: data.dim(),
        x: data.x(),
        alpha: scheme.alpha(),
        sigma: scheme.sigma(),
        pairs: &pairs,
        joints: &joints,
    };
    let per_mask: Vec<(f64, f64)> = (0..1u32 << n)
        .into_par_iter()
        .map(|mask| {
            let tau_ps: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let prob: f64 = (0..n)
                .map(|i| if tau_ps[i] { model.ps()[i] } else { 1.0 - model.ps()[i] })
                .product();
            if prob <= 0.0 {
                return (0.0, 0.0);
            }
            let mut tau = Array2::from_elem((n, n), false);
            for i in 0..n {
                tau[[i, i]] = true;
            }
            let mut acc = (0.0, 0.0);
            ctx.descend(0, prob, &tau_ps, &mut tau, &mut acc);
            acc
        })
        .collect();
    let topology: f64 = per_mask.iter().map(|a| a.0).sum();
    let privacy: f64 = per_mask.iter().map(|a| a.1).sum();
    Ok(ExactMse {
        topology,
        privacy,
        total: topology + privacy,
    })
}

struct Enumeration<'a> {
    n: usize,
    dim: usize,
    x: &'a Array2<f64>,
    alpha: &'a Array2<f64>,
    sigma: &'a Array2<f64>,
    pairs: &'a [(usize, usize)],
    joints: &'a [[f64; 4]],
}

impl Enumeration<'_> {
    fn descend(&self, k: usize, prob: f64, tau_ps: &[bool], tau: &mut Array2<bool>, acc: &mut (f64, f64)) {
        if k == self.pairs.len() {
            let (topo, noise) = self.leaf(tau_ps, tau);
            acc.0 += prob * topo;
            acc.1 += prob * noise;
            return;
        }
        let (i, j) = self.pairs[k];
        for (cell, (fwd, bwd)) in [(true, true), (true, false), (false, true), (false, false)]
            .into_iter()
            .enumerate()
        {
            let w = self.joints[k][cell];
            if w <= 0.0 {
                continue;
            }
            tau[[i, j]] = fwd;
            tau[[j, i]] = bwd;
            self.descend(k + 1, prob * w, tau_ps, tau, acc);
        }
    }

    fn leaf(&self, tau_ps: &[bool], tau: &Array2<bool>) -> (f64, f64) {
        let n = self.n;
        let nn = (n * n) as f64;
        let mut v = vec![0.0; self.dim];
        let mut noise = 0.0;
        for i in 0..n {
            let mut c = 0.0;
            for j in 0..n {
                if tau_ps[j] && tau[[i, j]] {
                    c += self.alpha[[i, j]];
                    noise += self.sigma[[i, j]].powi(2);
                }
            }
            for (k, vk) in v.iter_mut().enumerate() {
                *vk += (c - 1.0) * self.x[[i, k]];
            }
        }
        let topo = v.iter().map(|a| a * a).sum::<f64>() / nn;
        (topo, self.dim as f64 * noise / nn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    fn two_node_full() -> NetworkModel {
        NetworkModel::independent(Array1::from(vec![1.0, 1.0]), Array2::ones((2, 2))).unwrap()
    }

    #[test]
    fn s_vector_examples() {
        let id = CollaborationScheme::identity(3);
        assert_eq!(s_vector(&NetworkModel::perfect(3), &id).unwrap().to_vec(), vec![1.0; 3]);
        let half = CollaborationScheme::new(Array2::from_elem((2, 2), 0.5), Array2::zeros((2, 2))).unwrap();
        assert_eq!(s_vector(&two_node_full(), &half).unwrap().to_vec(), vec![1.0, 1.0]);
        let zero = CollaborationScheme::new(Array2::zeros((2, 2)), Array2::zeros((2, 2))).unwrap();
        assert_eq!(s_vector(&two_node_full(), &zero).unwrap().to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn perfect_network_bound_vanishes() {
        let b = bound(&NetworkModel::perfect(4), &CollaborationScheme::identity(4), 3.0, 2).unwrap();
        assert_eq!(b.tiv, 0.0);
        assert_eq!(b.piv, 0.0);
        assert_eq!(b.bias_l1, 0.0);
    }

    #[test]
    fn piv_examples() {
        let s = CollaborationScheme::new(Array2::ones((2, 2)), Array2::ones((2, 2))).unwrap();
        assert_eq!(piv(&two_node_full(), &s, 1).unwrap(), 1.0);
        assert_eq!(piv(&two_node_full(), &s, 2).unwrap(), 2.0);
    }

    #[test]
    fn independence_kills_correlation_term() {
        let model = NetworkModel::independent(
            Array1::from(vec![0.3, 0.8, 0.5]),
            arr2(&[[1.0, 0.4, 0.7], [0.2, 1.0, 0.9], [0.6, 0.5, 1.0]]),
        )
        .unwrap();
        let s = CollaborationScheme::new(Array2::from_elem((3, 3), 0.7), Array2::zeros((3, 3))).unwrap();
        assert!(tiv_terms(&model, &s).unwrap()[2].abs() < 1e-15);
    }

    #[test]
    fn oracle_examples() {
        let data = Dataset::with_computed_radius(arr2(&[[1.0], [-1.0]])).unwrap();
        let model = NetworkModel::independent(
            Array1::from(vec![1.0, 1.0]),
            arr2(&[[1.0, 0.0], [0.0, 1.0]]),
        )
        .unwrap();
        let e = exact_mse(&data, &model, &CollaborationScheme::identity(2)).unwrap();
        assert_eq!(e.total, 0.0);
        let big = Dataset::with_computed_radius(Array2::zeros((6, 1))).unwrap();
        assert!(matches!(
            exact_mse(&big, &NetworkModel::perfect(6), &CollaborationScheme::identity(6)),
            Err(Error::OracleTooLarge { n: 6, max: 5 })
        ));
    }

    #[test]
    fn oracle_single_node_bernoulli() {
        // One node, p = 0.3, weight a: error (τ a - 1) x, E = x²(0.3 (a-1)² + 0.7).
        let data = Dataset::new(arr2(&[[2.0]]), 2.0).unwrap();
        let model = NetworkModel::independent(Array1::from(vec![0.3]), arr2(&[[1.0]])).unwrap();
        let s = CollaborationScheme::new(arr2(&[[1.5]]), arr2(&[[0.0]])).unwrap();
        let e = exact_mse(&data, &model, &s).unwrap();
        assert!((e.topology - 4.0 * (0.3 * 0.25 + 0.7)).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn tiv_is_relabeling_invariant(
            ps in proptest::collection::vec(0.0..1.0f64, 3),
            off in proptest::collection::vec(0.0..1.0f64, 6),
            a in proptest::collection::vec(0.0..2.0f64, 9),
        ) {
            let mut k = 0;
            let links = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 1.0 } else { k += 1; off[k - 1] });
            let model = NetworkModel::independent(Array1::from(ps), links).unwrap();
            let s = CollaborationScheme::new(Array2::from_shape_vec((3, 3), a).unwrap(), Array2::zeros((3, 3))).unwrap();
            let perm = [2, 0, 1];
            let t0 = tiv(&model, &s, 1.3).unwrap();
            let t1 = tiv(&model.permuted(&perm).unwrap(), &s.permuted(&perm).unwrap(), 1.3).unwrap();
            prop_assert!((t0 - t1).abs() <= 1e-12 * (1.0 + t0.abs()));
            prop_assert!(t0 >= -1e-12);
        }

        #[test]
        fn piv_linear_in_dim_and_variance(
            sig in proptest::collection::vec(0.0..3.0f64, 4),
            d in 1usize..6,
            c in 0.1..4.0f64,
        ) {
            let model = NetworkModel::independent(Array1::from(vec![0.4, 0.9]), arr2(&[[1.0, 0.3], [0.8, 1.0]])).unwrap();
            let sigma = Array2::from_shape_vec((2, 2), sig).unwrap();
            let mk = |s: Array2<f64>| CollaborationScheme::new(Array2::zeros((2, 2)), s).unwrap();
            let base = piv(&model, &mk(sigma.clone()), d).unwrap();
            let one = piv(&model, &mk(sigma.clone()), 1).unwrap();
            prop_assert!((base - d as f64 * one).abs() <= 1e-12 * (1.0 + base));
            let scaled = piv(&model, &mk(sigma.mapv(|s| s * c.sqrt())), d).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-10 * (1.0 + scaled));
        }
    }
}

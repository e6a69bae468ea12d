//! Stochastic topology of an intermittently connected network.
//!
//! Every node reaches the parameter server (PS) over a Bernoulli link and
//! every ordered node pair `i -> j` is a Bernoulli link as well. The two
//! directions of a pair may be positively correlated; the pair is sampled
//! from its explicit 2x2 joint table, while distinct pairs and all PS links
//! are independent.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::TrustMatrix;
use crate::serde_matrix;

/// Slack allowed when validating probabilities that were computed in floating point.
const PROB_TOL: f64 = 1e-12;

/// Node-to-PS probabilities `p`, node-to-node probabilities `P` and pair
/// correlations `E[τ_ij τ_ji]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    ps: Array1<f64>,
    links: Array2<f64>,
    corr: Array2<f64>,
}

/// One realization of every link in the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkRealization {
    /// `tau_ps[i]` is true when node `i` reached the PS.
    pub tau_ps: Vec<bool>,
    /// `tau[[i, j]]` is true when the transmission `i -> j` succeeded.
    pub tau: Array2<bool>,
}

impl LinkRealization {
    pub fn n(&self) -> usize {
        self.tau_ps.len()
    }
}

impl NetworkModel {
    /// Builds a model; `corr = None` selects independent directions,
    /// `E_{i,j} = p_ij p_ji`.
    pub fn new(ps: Array1<f64>, links: Array2<f64>, corr: Option<Array2<f64>>) -> Result<Self> {
        let n = ps.len();
        if links.dim() != (n, n) {
            return Err(Error::Dimension(format!(
                "link matrix is {:?}, expected ({n}, {n})",
                links.dim()
            )));
        }
        let corr = match corr {
            Some(c) => c,
            None => independent_correlation(&links),
        };
        if corr.dim() != (n, n) {
            return Err(Error::Dimension(format!(
                "correlation matrix is {:?}, expected ({n}, {n})",
                corr.dim()
            )));
        }
        let model = Self { ps, links, corr };
        model.validate()?;
        Ok(model)
    }

    pub fn independent(ps: Array1<f64>, links: Array2<f64>) -> Result<Self> {
        Self::new(ps, links, None)
    }

    /// Every link succeeds surely.
    pub fn perfect(n: usize) -> Self {
        Self::independent(Array1::ones(n), Array2::ones((n, n))).expect("perfect network is valid")
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let in_unit = |x: f64| x.is_finite() && (-PROB_TOL..=1.0 + PROB_TOL).contains(&x);
        for (i, &p) in self.ps.iter().enumerate() {
            if !in_unit(p) {
                return Err(Error::InvalidModel(format!("p[{i}] = {p} is not a probability")));
            }
        }
        for i in 0..n {
            if (self.links[[i, i]] - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidModel(format!(
                    "self link p[{i}][{i}] = {} must be 1",
                    self.links[[i, i]]
                )));
            }
            if (self.corr[[i, i]] - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidModel(format!(
                    "self correlation E[{i}][{i}] = {} must be 1",
                    self.corr[[i, i]]
                )));
            }
            for j in 0..n {
                let (pij, eij) = (self.links[[i, j]], self.corr[[i, j]]);
                if !in_unit(pij) {
                    return Err(Error::InvalidModel(format!(
                        "P[{i}][{j}] = {pij} is not a probability"
                    )));
                }
                if !in_unit(eij) {
                    return Err(Error::InvalidModel(format!(
                        "E[{i}][{j}] = {eij} is not a probability"
                    )));
                }
                if (eij - self.corr[[j, i]]).abs() > PROB_TOL {
                    return Err(Error::InvalidModel(format!(
                        "correlation matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (pij, pji, eij) = (self.links[[i, j]], self.links[[j, i]], self.corr[[i, j]]);
                if eij < pij * pji - PROB_TOL {
                    return Err(Error::InvalidModel(format!(
                        "E[{i}][{j}] = {eij} is below p_ij * p_ji = {}",
                        pij * pji
                    )));
                }
                if let Some((cell, value)) = self
                    .pair_joint(i, j)
                    .iter()
                    .zip(["(1,1)", "(1,0)", "(0,1)", "(0,0)"])
                    .find(|(v, _)| **v < -PROB_TOL)
                    .map(|(v, c)| (c, *v))
                {
                    return Err(Error::InvalidModel(format!(
                        "pair ({i}, {j}) has negative joint probability {value} at cell {cell}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.ps.len()
    }

    /// Node-to-PS success probabilities.
    pub fn ps(&self) -> &Array1<f64> {
        &self.ps
    }

    /// Node-to-node success probabilities, `links()[[i, j]]` for `i -> j`.
    pub fn links(&self) -> &Array2<f64> {
        &self.links
    }

    /// Pair correlations `E[τ_ij τ_ji]`.
    pub fn corr(&self) -> &Array2<f64> {
        &self.corr
    }

    /// Joint law of `(τ_ij, τ_ji)` as `[P(1,1), P(1,0), P(0,1), P(0,0)]`.
    pub fn pair_joint(&self, i: usize, j: usize) -> [f64; 4] {
        let (pij, pji, e) = (self.links[[i, j]], self.links[[j, i]], self.corr[[i, j]]);
        [e, pij - e, pji - e, 1.0 - pij - pji + e]
    }

    /// Draws one realization of every link.
    ///
    /// Draw order is fixed (PS links by node, then pairs `i < j` row-major),
    /// so a seeded stream reproduces the same realization bit for bit.
    pub fn sample_links<R: Rng + ?Sized>(&self, rng: &mut R) -> LinkRealization {
        let n = self.n();
        let tau_ps = self
            .ps
            .iter()
            .map(|&p| rng.random::<f64>() < p)
            .collect();
        let mut tau = Array2::from_elem((n, n), false);
        for i in 0..n {
            tau[[i, i]] = true;
            for j in (i + 1)..n {
                let [p11, p10, p01, _] = self.pair_joint(i, j);
                let u: f64 = rng.random();
                let (fwd, bwd) = if u < p11 {
                    (true, true)
                } else if u < p11 + p10 {
                    (true, false)
                } else if u < p11 + p10 + p01 {
                    (false, true)
                } else {
                    (false, false)
                };
                tau[[i, j]] = fwd;
                tau[[j, i]] = bwd;
            }
        }
        LinkRealization { tau_ps, tau }
    }

    /// Relabels nodes: node `k` of the result is node `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n())?;
        let n = self.n();
        let ps = Array1::from_shape_fn(n, |k| self.ps[perm[k]]);
        let links = Array2::from_shape_fn((n, n), |(a, b)| self.links[[perm[a], perm[b]]]);
        let corr = Array2::from_shape_fn((n, n), |(a, b)| self.corr[[perm[a], perm[b]]]);
        Self::new(ps, links, Some(corr))
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&k| k >= n || std::mem::replace(&mut seen[k], true)) {
        return Err(Error::InvalidParameter(format!(
            "{perm:?} is not a permutation of 0..{n}"
        )));
    }
    Ok(())
}

fn independent_correlation(links: &Array2<f64>) -> Array2<f64> {
    let (n, _) = links.dim();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            1.0
        } else {
            links[[i, j]] * links[[j, i]]
        }
    })
}

/// JSON form of [`NetworkModel`]: keys `n`, `p`, `P`, and optional `E`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkModelConfig {
    pub n: usize,
    pub p: Vec<f64>,
    #[serde(rename = "P", with = "serde_matrix::matrix")]
    pub links: Array2<f64>,
    #[serde(
        rename = "E",
        default,
        skip_serializing_if = "Option::is_none",
        with = "serde_matrix::option_matrix"
    )]
    pub corr: Option<Array2<f64>>,
}

impl TryFrom<NetworkModelConfig> for NetworkModel {
    type Error = Error;

    fn try_from(c: NetworkModelConfig) -> Result<Self> {
        if c.p.len() != c.n {
            return Err(Error::Dimension(format!(
                "n = {} but p has {} entries",
                c.n,
                c.p.len()
            )));
        }
        NetworkModel::new(Array1::from(c.p), c.links, c.corr)
    }
}

impl From<&NetworkModel> for NetworkModelConfig {
    fn from(m: &NetworkModel) -> Self {
        Self {
            n: m.n(),
            p: m.ps.to_vec(),
            links: m.links.clone(),
            corr: Some(m.corr.clone()),
        }
    }
}

impl Serialize for NetworkModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetworkModelConfig::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for NetworkModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = NetworkModelConfig::deserialize(d)?;
        NetworkModel::try_from(c).map_err(serde::de::Error::custom)
    }
}

/// Node-to-PS connectivity of a ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PsConnectivity {
    /// One probability per node.
    Explicit { p: Vec<f64> },
    /// Node 0 has `good` connectivity, every other node has `other`.
    SoleGood { good: f64, other: f64 },
}

/// Ring of nodes where each node trusts the nodes within `k_hops` positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub n: usize,
    pub k_hops: usize,
    pub ps: PsConnectivity,
    /// Node-to-node success probability for every ordered pair `i != j`.
    pub link_prob: f64,
    pub eps_trusted: f64,
    pub eps_untrusted: f64,
    pub delta: f64,
}

/// Builds a ring network with independent link directions and its trust matrix.
///
/// `ε̲_ij = eps_trusted` when `j` is within `k_hops` of `i` (mod `n`),
/// including `j = i`, and `eps_untrusted` otherwise.
pub fn ring_topology(spec: &RingSpec) -> Result<(NetworkModel, TrustMatrix)> {
    let n = spec.n;
    if n == 0 {
        return Err(Error::InvalidParameter("ring needs at least one node".into()));
    }
    if 2 * spec.k_hops > n {
        return Err(Error::InvalidParameter(format!(
            "k_hops = {} exceeds n / 2 for n = {n}",
            spec.k_hops
        )));
    }
    let ps = match &spec.ps {
        PsConnectivity::Explicit { p } => {
            if p.len() != n {
                return Err(Error::Dimension(format!(
                    "ring of {n} nodes given {} PS probabilities",
                    p.len()
                )));
            }
            Array1::from(p.clone())
        }
        PsConnectivity::SoleGood { good, other } => {
            Array1::from_shape_fn(n, |i| if i == 0 { *good } else { *other })
        }
    };
    let links = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { spec.link_prob });
    let model = NetworkModel::independent(ps, links)?;
    let eps = Array2::from_shape_fn((n, n), |(i, j)| {
        if ring_distance(i, j, n) <= spec.k_hops {
            spec.eps_trusted
        } else {
            spec.eps_untrusted
        }
    });
    let trust = TrustMatrix::new(eps, Array2::from_elem((n, n), spec.delta))?;
    Ok((model, trust))
}

fn ring_distance(i: usize, j: usize, n: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(n - d)
}

/// Outage-based link probability `min(1, exp(-distance / scale + offset))`.
pub fn outage_probability(distance: f64, scale: f64, offset: f64) -> f64 {
    (-distance / scale + offset).exp().min(1.0)
}

/// Nodes scattered in the plane with distance-driven link probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteredSpec {
    pub nodes: Vec<[f64; 2]>,
    pub ps_position: [f64; 2],
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Nodes trust each other when their link probability exceeds this.
    #[serde(default = "default_trust_threshold")]
    pub trust_threshold: f64,
    pub eps_trusted: f64,
    pub eps_untrusted: f64,
    pub delta: f64,
}

fn default_scale() -> f64 {
    30.0
}

fn default_offset() -> f64 {
    5.2
}

fn default_trust_threshold() -> f64 {
    0.5
}

/// Link probabilities from pairwise distances; directions are independent.
pub fn scattered_topology(spec: &ScatteredSpec) -> Result<(NetworkModel, TrustMatrix)> {
    let n = spec.nodes.len();
    let finite = |q: &[f64; 2]| q.iter().all(|c| c.is_finite());
    if !spec.nodes.iter().all(finite) || !finite(&spec.ps_position) {
        return Err(Error::InvalidParameter("positions must be finite".into()));
    }
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let ps = Array1::from_shape_fn(n, |i| {
        outage_probability(dist(spec.nodes[i], spec.ps_position), spec.scale, spec.offset)
    });
    let links = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            1.0
        } else {
            outage_probability(dist(spec.nodes[i], spec.nodes[j]), spec.scale, spec.offset)
        }
    });
    let eps = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j || links[[i, j]] > spec.trust_threshold {
            spec.eps_trusted
        } else {
            spec.eps_untrusted
        }
    });
    let trust = TrustMatrix::new(eps, Array2::from_elem((n, n), spec.delta))?;
    Ok((NetworkModel::independent(ps, links)?, trust))
}

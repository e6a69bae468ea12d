//! Distributed k-means with private relayed centroid averaging.
//!
//! Every round each node runs a few Lloyd iterations on its own points,
//! starting from the current global centroids (k-means++ in the first round).
//! The `K x d` centroid block of every node is flattened into one vector and
//! averaged at the PS through the relaying protocol.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::protocol::run_round;
use crate::scheme::{CollaborationScheme, Dataset};

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansState {
    /// Local centroids of every node after the latest round.
    pub local: Vec<Array2<f64>>,
    pub global: Array2<f64>,
    pub round: usize,
    /// Inertia of the global centroids on the pooled data after each round.
    pub inertia_history: Vec<f64>,
    /// Norm bound applied to each flattened centroid block.
    pub radius: f64,
}

impl KmeansState {
    pub fn new(n: usize, k: usize, dim: usize, radius: f64) -> Self {
        Self {
            local: vec![Array2::zeros((k, dim)); n],
            global: Array2::zeros((k, dim)),
            round: 0,
            inertia_history: Vec::new(),
            radius,
        }
    }

    pub fn k(&self) -> usize {
        self.global.nrows()
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    centroids
        .outer_iter()
        .enumerate()
        .map(|(c, row)| (c, sq_dist(point, row)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Sum of squared distances from every point to its nearest centroid.
pub fn inertia(data: &Array2<f64>, centroids: &Array2<f64>) -> f64 {
    data.outer_iter().map(|x| nearest(x, centroids).1).sum()
}

/// k-means++ seeding.
pub fn kmeans_pp<R: Rng + ?Sized>(data: &Array2<f64>, k: usize, rng: &mut R) -> Result<Array2<f64>> {
    let npts = data.nrows();
    if npts == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!("k-means++ with {npts} points and k = {k}")));
    }
    let mut centroids = Array2::zeros((k, data.ncols()));
    centroids.row_mut(0).assign(&data.row(rng.random_range(0..npts)));
    let mut d2: Vec<f64> = data.outer_iter().map(|x| sq_dist(x, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = npts - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..npts)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, x) in data.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, centroids.row(c)));
        }
    }
    Ok(centroids)
}

/// Runs up to `iters` Lloyd steps; returns the centroids and whether the
/// assignment stopped changing. Empty clusters are re-seeded from a random point.
pub fn lloyd<R: Rng + ?Sized>(
    data: &Array2<f64>,
    init: &Array2<f64>,
    iters: usize,
    rng: &mut R,
) -> (Array2<f64>, bool) {
    let (k, dim) = init.dim();
    let mut centroids = init.clone();
    let mut assign: Vec<usize> = vec![usize::MAX; data.nrows()];
    for _ in 0..iters {
        let mut changed = false;
        for (i, x) in data.outer_iter().enumerate() {
            let c = nearest(x, &centroids).0;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            return (centroids, true);
        }
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, x) in data.outer_iter().enumerate() {
            sums.row_mut(assign[i]).scaled_add(1.0, &x);
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                centroids.row_mut(c).assign(&data.row(rng.random_range(0..data.nrows())));
            }
        }
    }
    (centroids, false)
}

/// Orders centroid rows lexicographically so independently seeded nodes align.
pub fn sort_centroids(c: &Array2<f64>) -> Array2<f64> {
    let mut rows: Vec<Array1<f64>> = c.outer_iter().map(|r| r.to_owned()).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let views: Vec<ArrayView1<f64>> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(Axis(0), &views).expect("rows share a length")
}

/// Best of `restarts` k-means++ runs to convergence on `data`.
pub fn centralized_kmeans<R: Rng + ?Sized>(
    data: &Array2<f64>,
    k: usize,
    restarts: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<(Array2<f64>, f64)> {
    let mut best: Option<(Array2<f64>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let init = kmeans_pp(data, k, rng)?;
        let (c, _) = lloyd(data, &init, max_iters, rng);
        let value = inertia(data, &c);
        if best.as_ref().is_none_or(|b| value < b.1) {
            best = Some((c, value));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// `Inertia(distributed) / Inertia(centralized)`.
pub fn relative_inertia(centroids: &Array2<f64>, data: &Array2<f64>, baseline: f64) -> Result<f64> {
    if baseline <= 0.0 {
        return Err(Error::Undefined("relative inertia with zero baseline inertia".into()));
    }
    Ok(inertia(data, centroids) / baseline)
}

/// Shared stream used by every node for seeding in a given round.
fn round_stream(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    rng
}

/// Reorders the rows of `c` to match `reference` by greedy nearest pairing.
pub fn align_centroids(reference: &Array2<f64>, c: &Array2<f64>) -> Array2<f64> {
    let k = reference.nrows();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for (a, r) in reference.outer_iter().enumerate() {
        for (b, row) in c.outer_iter().enumerate() {
            pairs.push((sq_dist(r, row), a, b));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut out = c.clone();
    let (mut ref_used, mut c_used) = (vec![false; k], vec![false; k]);
    for (_, a, b) in pairs {
        if !ref_used[a] && !c_used[b] {
            out.row_mut(a).assign(&c.row(b));
            ref_used[a] = true;
            c_used[b] = true;
        }
    }
    out
}

/// Local centroids of every node for the next round, without aggregation.
///
/// In the first round every node seeds with k-means++ from a shared stream;
/// the resulting blocks are aligned to node 0's sorted centroids so that
/// matching rows describe the same cluster.
pub fn local_step(state: &KmeansState, node_data: &[Array2<f64>], local_iters: usize, round_seed: u64) -> Result<Vec<Array2<f64>>> {
    let k = state.k();
    let blocks = node_data
        .iter()
        .map(|data| {
            if data.nrows() == 0 {
                return Err(Error::InvalidParameter("node without data".into()));
            }
            let mut rng = round_stream(round_seed, state.round);
            if state.round == 0 {
                let init = kmeans_pp(data, k, &mut rng)?;
                let (c, _) = lloyd(data, &init, local_iters, &mut rng);
                Ok(sort_centroids(&c))
            } else {
                Ok(lloyd(data, &state.global, local_iters, &mut rng).0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if state.round > 0 || blocks.is_empty() {
        return Ok(blocks);
    }
    let anchor = blocks[0].clone();
    Ok(blocks.iter().map(|b| align_centroids(&anchor, b)).collect())
}

fn flatten_clipped(blocks: &[Array2<f64>], radius: f64) -> Array2<f64> {
    let width = blocks.first().map_or(0, |b| b.len());
    let mut x = Array2::zeros((blocks.len(), width));
    for (i, b) in blocks.iter().enumerate() {
        let flat = Array1::from_iter(b.iter().copied());
        let norm = flat.dot(&flat).sqrt();
        let scale = if norm > radius && norm > 0.0 { radius / norm } else { 1.0 };
        x.row_mut(i).assign(&(flat * scale));
    }
    x
}

/// One PS round: local Lloyd steps, then private averaging of centroid blocks.
///
/// Blocks whose norm exceeds `state.radius` are scaled down to it first.
pub fn kmeans_round<R: Rng + ?Sized>(
    state: &KmeansState,
    node_data: &[Array2<f64>],
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    local_iters: usize,
    rng: &mut R,
) -> Result<KmeansState> {
    if node_data.len() != model.n() {
        return Err(Error::Dimension(format!(
            "{} node datasets for {} nodes",
            node_data.len(),
            model.n()
        )));
    }
    let round_seed: u64 = rng.random();
    let local = local_step(state, node_data, local_iters, round_seed)?;
    let x = flatten_clipped(&local, state.radius);
    let ds = Dataset::new(x, state.radius)?;
    let out = run_round(&ds, model, scheme, rng)?;
    let global = Array2::from_shape_vec(state.global.dim(), out.ps_estimate.to_vec())
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let pooled = pool(node_data);
    let mut history = state.inertia_history.clone();
    history.push(inertia(&pooled, &global));
    Ok(KmeansState {
        local,
        global,
        round: state.round + 1,
        inertia_history: history,
        radius: state.radius,
    })
}

/// All nodes' points stacked.
pub fn pool(node_data: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = node_data.iter().map(|d| d.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("nodes share a feature dimension")
}

/// Isotropic Gaussian blobs, sampled independently for every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub centers: Vec<Vec<f64>>,
    pub std: f64,
    pub points_per_node: usize,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            centers: vec![vec![5.0, 5.0], vec![5.0, -5.0], vec![-5.0, 5.0], vec![-5.0, -5.0]],
            std: 1.0,
            points_per_node: 100,
        }
    }
}

impl BlobSpec {
    pub fn sample<R: Rng + ?Sized>(&self, nodes: usize, rng: &mut R) -> Result<Vec<Array2<f64>>> {
        let dim = self.centers.first().map_or(0, Vec::len);
        if dim == 0 || self.centers.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidParameter("blob centers must be nonempty and equal length".into()));
        }
        let noise = Normal::new(0.0, self.std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut out = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            let mut x = Array2::zeros((self.points_per_node, dim));
            for mut row in x.outer_iter_mut() {
                let c = &self.centers[rng.random_range(0..self.centers.len())];
                for (v, &ck) in row.iter_mut().zip(c) {
                    *v = ck + noise.sample(rng);
                }
            }
            out.push(x);
        }
        Ok(out)
    }
}

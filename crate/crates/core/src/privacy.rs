//! Privacy accounting at link, relay and PS level.
//!
//! Every release in the protocol is a Gaussian mechanism. A single link leaks
//! `α_ij x_i + n_ij` to node `j`. A relay's aggregate hides each contributor
//! behind the noise of the others, which is random because links fail; a
//! Bernstein bound keeps that aggregate variance near its mean with
//! probability `1 - δ′`. The PS sees every relay, so its guarantee composes
//! the relay terms.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Serialize, Serializer};

use crate::error::{Error, RelayFailure, Result};
use crate::network::NetworkModel;
use crate::scheme::CollaborationScheme;

/// A privacy loss that may be unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Finite(f64),
    /// Data is released without noise.
    Infinite,
}

impl Epsilon {
    pub fn finite(self) -> Option<f64> {
        match self {
            Epsilon::Finite(e) => Some(e),
            Epsilon::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Epsilon::Infinite)
    }

    /// True when `self ≤ bound` (an infinite loss never satisfies a finite bound).
    pub fn at_most(self, bound: f64) -> bool {
        match self {
            Epsilon::Finite(e) => e <= bound,
            Epsilon::Infinite => bound == f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Epsilon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Epsilon::Finite(e) => write!(f, "{e}"),
            Epsilon::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Epsilon::Finite(e) => s.serialize_f64(*e),
            Epsilon::Infinite => s.serialize_str("inf"),
        }
    }
}

/// An `(ε, δ)` guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpPair {
    pub eps: Epsilon,
    pub delta: f64,
}

impl DpPair {
    pub const ZERO: DpPair = DpPair {
        eps: Epsilon::Finite(0.0),
        delta: 0.0,
    };
}

fn check_delta(delta: f64, name: &str) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {delta} not in (0, 1]")))
    }
}

/// `sqrt(2 ln(1.25/δ))`.
fn log_factor(delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt()
}

/// Privacy loss of the Gaussian mechanism: `ε = (Δ/σ) sqrt(2 ln(1.25/δ))`.
pub fn gaussian_mechanism_eps(sensitivity: f64, sigma: f64, delta: f64) -> Result<Epsilon> {
    check_delta(delta, "delta")?;
    if !(sensitivity >= 0.0 && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sensitivity {sensitivity} and sigma {sigma} must be nonnegative"
        )));
    }
    Ok(ratio_eps(sensitivity * log_factor(delta), sigma))
}

fn ratio_eps(numerator: f64, std: f64) -> Epsilon {
    if numerator == 0.0 {
        Epsilon::Finite(0.0)
    } else if std == 0.0 {
        Epsilon::Infinite
    } else {
        Epsilon::Finite(numerator / std)
    }
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

/// Link-level guarantee `(ε_ij, p_ij δ_ij)` for every directed link.
///
/// Self links carry no information to another party and report `(0, 0)`.
pub fn local_link_dp(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    delta: &Array2<f64>,
) -> Result<Array2<DpPair>> {
    check_dims(model, scheme)?;
    let n = model.n();
    if delta.dim() != (n, n) {
        return Err(Error::Dimension(format!("delta matrix is {:?}", delta.dim())));
    }
    let mut out = Array2::from_elem((n, n), DpPair::ZERO);
    for i in 0..n {
        for j in 0..n {
            let pij = model.links()[[i, j]];
            if i == j || pij == 0.0 {
                continue;
            }
            check_delta(delta[[i, j]], "delta")?;
            let eps = gaussian_mechanism_eps(
                2.0 * scheme.alpha()[[i, j]] * radius,
                scheme.sigma()[[i, j]],
                delta[[i, j]],
            )?;
            out[[i, j]] = DpPair {
                eps,
                delta: pij * delta[[i, j]],
            };
        }
    }
    Ok(out)
}

/// Deviation radius for the aggregated noise variance at a relay.
///
/// `r = (L/2)(M/3 + sqrt(M²/9 + 4V/L))` with `L = ln(2/δ′)`, `M = max σ²` and
/// `V = Σ p(1-p)σ⁴`.
pub fn bernstein_r(sigmas_sq: &[f64], probs: &[f64], delta_prime: f64) -> Result<f64> {
    let (l, m, v) = bernstein_inputs(sigmas_sq, probs, delta_prime)?;
    Ok(l / 2.0 * (m / 3.0 + (m * m / 9.0 + 4.0 * v / l).sqrt()))
}

/// Deviation radius from the textbook Bernstein inequality
/// `P(|Z - EZ| ≥ t) ≤ 2 exp(-t² / (2(V + Mt/3)))`, which gives
/// `r = LM/3 + sqrt(L²M²/9 + 2LV)`.
pub fn bernstein_r_standard(sigmas_sq: &[f64], probs: &[f64], delta_prime: f64) -> Result<f64> {
    let (l, m, v) = bernstein_inputs(sigmas_sq, probs, delta_prime)?;
    Ok(l * m / 3.0 + (l * l * m * m / 9.0 + 2.0 * l * v).sqrt())
}

fn bernstein_inputs(sigmas_sq: &[f64], probs: &[f64], delta_prime: f64) -> Result<(f64, f64, f64)> {
    check_delta(delta_prime, "delta_prime")?;
    if sigmas_sq.len() != probs.len() {
        return Err(Error::Dimension(format!(
            "{} variances but {} probabilities",
            sigmas_sq.len(),
            probs.len()
        )));
    }
    if sigmas_sq.iter().any(|s| !(*s >= 0.0)) || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidParameter("variances must be >= 0 and probabilities in [0, 1]".into()));
    }
    if !sigmas_sq.iter().zip(probs).any(|(s, p)| s * p > 0.0) {
        return Err(Error::InvalidParameter(
            "no contributor has positive participation probability and variance".into(),
        ));
    }
    let l = (2.0 / delta_prime).ln();
    let m = sigmas_sq.iter().copied().fold(0.0, f64::max);
    let v = sigmas_sq.iter().zip(probs).map(|(s, p)| p * (1.0 - p) * s * s).sum();
    Ok((l, m, v))
}

/// Bernstein parameters of one relay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernsteinParams {
    /// Mean aggregated noise variance `ζ̄_j = Σ_{k≠j} p_kj σ_kj²`.
    pub zeta_bar: f64,
    pub r: f64,
    pub delta_prime: f64,
}

/// Bernstein parameters for relay `j` over the contributors `k ≠ j`.
pub fn relay_bernstein(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    j: usize,
    delta_prime: f64,
) -> Result<BernsteinParams> {
    check_dims(model, scheme)?;
    let n = model.n();
    if j >= n {
        return Err(Error::InvalidParameter(format!("relay {j} out of range")));
    }
    let others = (0..n).filter(|&k| k != j);
    let sig: Vec<f64> = others.clone().map(|k| scheme.sigma()[[k, j]].powi(2)).collect();
    let prob: Vec<f64> = others.map(|k| model.links()[[k, j]]).collect();
    let zeta_bar = sig.iter().zip(&prob).map(|(s, p)| s * p).sum();
    let r = match bernstein_r(&sig, &prob, delta_prime) {
        Ok(r) => r,
        Err(Error::InvalidParameter(_)) if zeta_bar == 0.0 => 0.0,
        Err(e) => return Err(e),
    };
    Ok(BernsteinParams {
        zeta_bar,
        r,
        delta_prime,
    })
}

/// Relay-level guarantees for every contributor `i` of relay `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayGuarantee {
    pub relay: usize,
    pub bernstein: BernsteinParams,
    /// Indexed by contributor `i`; the relay itself reports `(0, 0)`.
    pub per_node: Vec<DpPair>,
}

fn relay_dp(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    j: usize,
    delta_mech: f64,
    delta_prime: f64,
    sensitivity_scale: f64,
) -> Result<RelayGuarantee> {
    check_delta(delta_mech, "relay delta")?;
    let bernstein = relay_bernstein(model, scheme, j, delta_prime)?;
    let gap = bernstein.zeta_bar - bernstein.r;
    if !(gap > 0.0) {
        return Err(Error::NoRelayGuarantee {
            relay: j,
            mean_variance: bernstein.zeta_bar,
            radius: bernstein.r,
        });
    }
    let std = gap.sqrt();
    let factor = log_factor(delta_mech);
    let per_node = (0..model.n())
        .map(|i| {
            let pij = model.links()[[i, j]];
            if i == j || pij == 0.0 {
                return DpPair::ZERO;
            }
            let sensitivity = sensitivity_scale * (scheme.alpha()[[i, j]] * radius);
            DpPair {
                eps: ratio_eps(sensitivity * factor, std),
                delta: pij * (delta_mech + delta_prime),
            }
        })
        .collect();
    Ok(RelayGuarantee {
        relay: j,
        bernstein,
        per_node,
    })
}

/// Identity protection at relay `j`: `ε_ij^(p) = sqrt(2 ln(1.25/δ^(p))) α_ij R / sqrt(ζ̄_j - r)`.
pub fn relay_identity_dp(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    j: usize,
    delta_p: f64,
    delta_prime: f64,
) -> Result<RelayGuarantee> {
    relay_dp(model, scheme, radius, j, delta_p, delta_prime, 1.0)
}

/// Data protection at relay `j`; twice the identity loss at equal `δ`.
pub fn relay_data_dp(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    j: usize,
    delta_d: f64,
    delta_prime: f64,
) -> Result<RelayGuarantee> {
    relay_dp(model, scheme, radius, j, delta_d, delta_prime, 2.0)
}

/// One relay's share of a PS-level guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompositionTerm {
    pub relay: usize,
    pub eps_identity: Epsilon,
    pub eps_data: Epsilon,
    pub r: f64,
    pub delta_prime: f64,
}

/// PS-level guarantee for one protected node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsGuarantee {
    pub node: usize,
    pub identity: DpPair,
    pub data: DpPair,
    pub terms: Vec<CompositionTerm>,
}

fn sum_eps(terms: impl Iterator<Item = Epsilon>) -> Epsilon {
    let mut total = 0.0;
    for t in terms {
        match t {
            Epsilon::Finite(e) => total += e,
            Epsilon::Infinite => return Epsilon::Infinite,
        }
    }
    Epsilon::Finite(total)
}

/// Guarantee for node `i` against a PS that observes every relay aggregate.
///
/// Relays are all `j` with `p_ij > 0`, including `i` itself; the loss is the
/// basic composition of the per-relay terms. Relays that put zero weight on
/// `x_i` contribute nothing and are not checked.
pub fn ps_composed_dp(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    i: usize,
    delta: f64,
    delta_primes: &[f64],
) -> Result<PsGuarantee> {
    check_dims(model, scheme)?;
    let n = model.n();
    if i >= n {
        return Err(Error::InvalidParameter(format!("node {i} out of range")));
    }
    if delta_primes.len() != n {
        return Err(Error::Dimension(format!(
            "{} relay deltas for {n} nodes",
            delta_primes.len()
        )));
    }
    let relays: Vec<usize> = (0..n).filter(|&j| model.links()[[i, j]] > 0.0).collect();
    let min_p = relays
        .iter()
        .map(|&j| model.links()[[i, j]])
        .fold(1.0, f64::min);
    if !(delta > 0.0 && delta <= min_p) {
        return Err(Error::CompositionPrecondition {
            node: i,
            failures: vec![RelayFailure {
                relay: i,
                inequality: format!("0 < delta <= min_j p_ij = {min_p}"),
                slack: min_p - delta,
            }],
        });
    }
    let mut failures = Vec::new();
    let mut terms = Vec::new();
    for &j in &relays {
        let a = scheme.alpha()[[i, j]];
        if a == 0.0 {
            continue;
        }
        let pij = model.links()[[i, j]];
        let b = relay_bernstein(model, scheme, j, delta_primes[j])?;
        let log_slack = delta - pij * delta_primes[j];
        let gap = b.zeta_bar + scheme.sigma()[[j, j]].powi(2) - b.r;
        if !(log_slack > 0.0) {
            failures.push(RelayFailure {
                relay: j,
                inequality: "delta - p_ij * delta_prime_j > 0".into(),
                slack: log_slack,
            });
        }
        if !(gap > 0.0) {
            failures.push(RelayFailure {
                relay: j,
                inequality: "zeta_bar_j + sigma_jj^2 - r_j > 0".into(),
                slack: gap,
            });
        }
        if log_slack > 0.0 && gap > 0.0 {
            let factor = (2.0 * (1.25 * pij / log_slack).ln()).sqrt();
            let std = gap.sqrt();
            let sens = a * radius;
            terms.push(CompositionTerm {
                relay: j,
                eps_identity: ratio_eps(sens * factor, std),
                eps_data: ratio_eps(2.0 * sens * factor, std),
                r: b.r,
                delta_prime: delta_primes[j],
            });
        }
    }
    if !failures.is_empty() {
        return Err(Error::CompositionPrecondition { node: i, failures });
    }
    let delta_total = delta * model.ps().sum();
    Ok(PsGuarantee {
        node: i,
        identity: DpPair {
            eps: sum_eps(terms.iter().map(|t| t.eps_identity)),
            delta: delta_total,
        },
        data: DpPair {
            eps: sum_eps(terms.iter().map(|t| t.eps_data)),
            delta: delta_total,
        },
        terms,
    })
}

/// Central identity privacy in the symmetric Erdős–Rényi setting at `λ = ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErCentralPrivacy {
    /// Relayed noise level `σ* = ξR/(mpqε)`.
    pub sigma_star: f64,
    pub delta_prime: f64,
    /// Lower bound on `ζ̄_j - r`.
    pub zeta_gap: f64,
    pub eps_identity: f64,
    /// Admissible range of `σ*`.
    pub sigma_window: (f64, f64),
}

/// Evaluates the PS-level identity loss of a relay in the symmetric setting.
///
/// Requires `n > m`, `p > 7/8` and `σ*` inside
/// `[sqrt(ln 2 / (12(n-m)p(1-p))), 1/sqrt(2(1-p)) - 2]`.
pub fn er_central_privacy_scaling(
    n: usize,
    m: usize,
    p: f64,
    q: f64,
    radius: f64,
    eps: f64,
    delta: f64,
) -> Result<ErCentralPrivacy> {
    check_delta(delta, "delta")?;
    if n <= m || m == 0 {
        return Err(Error::InvalidRegime(format!("need n > m >= 1, got n = {n}, m = {m}")));
    }
    if !(p > 7.0 / 8.0 && p < 1.0) {
        return Err(Error::InvalidRegime(format!("need 7/8 < p < 1, got p = {p}")));
    }
    if !(q > 0.0 && q <= 1.0 && eps > 0.0 && radius > 0.0) {
        return Err(Error::InvalidParameter("need q in (0, 1], eps > 0, R > 0".into()));
    }
    let relayed = (n - m) as f64;
    let mf = m as f64;
    let xi = 2.0 * log_factor(delta);
    let sigma_star = xi * radius / (mf * p * q * eps);
    let lo = (2f64.ln() / (12.0 * relayed * p * (1.0 - p))).sqrt();
    let hi = 1.0 / (2.0 * (1.0 - p)).sqrt() - 2.0;
    if !(sigma_star >= lo && sigma_star <= hi) {
        return Err(Error::InvalidRegime(format!(
            "sigma* = {sigma_star} outside [{lo}, {hi}]"
        )));
    }
    let delta_prime = 2.0 * (-12.0 * relayed * p * (1.0 - p) * sigma_star * sigma_star).exp();
    let zeta_gap = relayed * p * sigma_star * sigma_star
        * (1.0 - 2.0 * sigma_star * (sigma_star + 2.0) * (1.0 - p));
    if !(zeta_gap > 0.0) {
        return Err(Error::InvalidRegime(format!("aggregate variance gap {zeta_gap} <= 0")));
    }
    Ok(ErCentralPrivacy {
        sigma_star,
        delta_prime,
        zeta_gap,
        eps_identity: xi * radius / (2.0 * mf * p * q) / zeta_gap.sqrt(),
        sigma_window: (lo, hi),
    })
}

/// Range of peer `ε` for which [`er_central_privacy_scaling`] applies.
pub fn er_eps_window(n: usize, m: usize, p: f64, q: f64, radius: f64, delta: f64) -> Option<(f64, f64)> {
    if n <= m || m == 0 || !(p > 7.0 / 8.0 && p < 1.0) {
        return None;
    }
    let xi = 2.0 * log_factor(delta);
    let scale = xi * radius / (m as f64 * p * q);
    let lo_sigma = (2f64.ln() / (12.0 * (n - m) as f64 * p * (1.0 - p))).sqrt();
    let hi_sigma = 1.0 / (2.0 * (1.0 - p)).sqrt() - 2.0;
    (hi_sigma >= lo_sigma && hi_sigma > 0.0).then(|| (scale / hi_sigma, scale / lo_sigma))
}

/// How the total `δ` budget is split across mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct PrivacyBudget {
    pub delta_total: f64,
}

impl PrivacyBudget {
    /// Relay mechanism `δ^(p) = δ^(d)`, half the budget.
    pub fn relay_delta(&self) -> f64 {
        self.delta_total / 2.0
    }

    /// Bernstein failure probability `δ′`, the other half.
    pub fn delta_prime(&self) -> f64 {
        self.delta_total / 2.0
    }
}

/// Every guarantee of a scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyReport {
    pub local: Vec<Vec<DpPair>>,
    pub relay_identity: Vec<Vec<Option<DpPair>>>,
    pub relay_data: Vec<Vec<Option<DpPair>>>,
    pub ps_identity: Vec<Option<DpPair>>,
    pub ps_data: Vec<Option<DpPair>>,
    pub bernstein: Vec<BernsteinParams>,
    /// Guarantees that could not be certified, with the reason.
    pub failures: Vec<String>,
}

/// Builds the full report.
///
/// Links use `link_delta` for the mechanism term. Relays split `delta_total`
/// evenly between the mechanism and the Bernstein event. The PS level uses
/// `δ = min(delta_total, min_j p_ij)` and `δ′_j = δ/2`.
pub fn privacy_report(
    model: &NetworkModel,
    scheme: &CollaborationScheme,
    radius: f64,
    link_delta: &Array2<f64>,
    budget: PrivacyBudget,
) -> Result<PrivacyReport> {
    check_delta(budget.delta_total, "delta_total")?;
    let n = model.n();
    let local = local_link_dp(model, scheme, radius, link_delta)?;
    let mut failures = Vec::new();
    let mut relay_identity = vec![vec![None; n]; n];
    let mut relay_data = vec![vec![None; n]; n];
    let mut bernstein = Vec::with_capacity(n);
    for j in 0..n {
        bernstein.push(relay_bernstein(model, scheme, j, budget.delta_prime())?);
        let rd = budget.relay_delta();
        match (
            relay_identity_dp(model, scheme, radius, j, rd, budget.delta_prime()),
            relay_data_dp(model, scheme, radius, j, rd, budget.delta_prime()),
        ) {
            (Ok(id), Ok(data)) => {
                for i in 0..n {
                    relay_identity[i][j] = Some(id.per_node[i]);
                    relay_data[i][j] = Some(data.per_node[i]);
                }
            }
            (Err(e), _) | (_, Err(e)) => failures.push(format!("relay {j}: {e}")),
        }
    }
    let mut ps_identity = vec![None; n];
    let mut ps_data = vec![None; n];
    for i in 0..n {
        let min_p = (0..n)
            .map(|j| model.links()[[i, j]])
            .filter(|&p| p > 0.0)
            .fold(1.0, f64::min);
        let delta = budget.delta_total.min(min_p);
        let primes = vec![delta / 2.0; n];
        match ps_composed_dp(model, scheme, radius, i, delta, &primes) {
            Ok(g) => {
                ps_identity[i] = Some(g.identity);
                ps_data[i] = Some(g.data);
            }
            Err(e) => failures.push(format!("node {i}: {e}")),
        }
    }
    Ok(PrivacyReport {
        local: local.rows().into_iter().map(|r| r.to_vec()).collect(),
        relay_identity,
        relay_data,
        ps_identity,
        ps_data,
        bernstein,
        failures,
    })
}

#[derive(Serialize)]
struct ReportRow {
    level: &'static str,
    i: usize,
    j: Option<usize>,
    eps: Option<f64>,
    delta: Option<f64>,
    status: &'static str,
}

impl ReportRow {
    fn new(level: &'static str, i: usize, j: Option<usize>, g: Option<DpPair>) -> Self {
        let (eps, delta, status) = match g {
            Some(DpPair {
                eps: Epsilon::Finite(e),
                delta,
            }) => (Some(e), Some(delta), "ok"),
            Some(DpPair {
                eps: Epsilon::Infinite,
                delta,
            }) => (None, Some(delta), "infinite"),
            None => (None, None, "uncertified"),
        };
        Self {
            level,
            i,
            j,
            eps,
            delta,
            status,
        }
    }
}

impl PrivacyReport {
    /// One CSV row per `(level, i, j)`; PS-level rows leave `j` empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.local.len();
        for i in 0..n {
            for j in 0..n {
                out.serialize(ReportRow::new("local", i, Some(j), Some(self.local[i][j])))?;
            }
        }
        for (level, m) in [("relay_identity", &self.relay_identity), ("relay_data", &self.relay_data)] {
            for i in 0..n {
                for j in 0..n {
                    out.serialize(ReportRow::new(level, i, Some(j), m[i][j]))?;
                }
            }
        }
        for (level, v) in [("ps_identity", &self.ps_identity), ("ps_data", &self.ps_data)] {
            for (i, g) in v.iter().enumerate() {
                out.serialize(ReportRow::new(level, i, None, *g))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

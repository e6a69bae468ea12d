//! Closed-form collaboration in a symmetric Erdős–Rényi network.
//!
//! `m` nodes (the set `M`, indices `0..m`) reach the PS with probability `q`;
//! the remaining `n - m` nodes never do and relay through `M`, each link
//! succeeding with probability `p`. By symmetry the optimal scheme has three
//! values: the self weight `γ` of nodes in `M`, the relay weight `α` from every
//! node outside `M` to every node in `M`, and the relay noise `σ`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::optimizer::project_cone;
use crate::scheme::{CollaborationScheme, TrustMatrix};

/// Bias regularization weight, possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Finite(f64),
    /// The unbiased limit.
    Infinite,
}

impl Serialize for Lambda {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lambda::Finite(v) => s.serialize_f64(*v),
            Lambda::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Lambda::Finite(v)),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Infinity") => Ok(Lambda::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid lambda {t:?}"))),
        }
    }
}

impl std::fmt::Display for Lambda {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Lambda::Finite(v) => write!(f, "{v}"),
            Lambda::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErConfig {
    pub n: usize,
    pub m: usize,
    /// Node-to-node link probability.
    pub p: f64,
    /// PS link probability of nodes in `M`.
    pub q: f64,
    pub eps: f64,
    pub delta: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub d: usize,
    pub lambda: Lambda,
}

impl ErConfig {
    fn validate(&self) -> Result<()> {
        if !(1 <= self.m && self.m <= self.n) {
            return Err(Error::InvalidParameter(format!("need 1 <= m <= n, got m = {}, n = {}", self.m, self.n)));
        }
        if !(self.p > 0.0 && self.p <= 1.0 && self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidParameter(format!("p = {}, q = {} must be in (0, 1]", self.p, self.q)));
        }
        if !(self.eps > 0.0 && self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidParameter(format!("eps = {}, delta = {}", self.eps, self.delta)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("R = {}", self.radius)));
        }
        if let Lambda::Finite(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!("lambda = {l} must be positive")));
            }
        }
        Ok(())
    }

    /// `ξ = 2 sqrt(2 ln(1.25/δ))`.
    pub fn xi(&self) -> f64 {
        2.0 * (2.0 * (1.25 / self.delta).ln()).sqrt()
    }

    /// Cone slope `ξR/ε` shared by every relay link.
    pub fn slope(&self) -> f64 {
        self.xi() * self.radius / self.eps
    }
}

/// The three free values of a symmetric scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetricScheme {
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
}

/// Optimal symmetric scheme for the configured `λ`.
pub fn closed_form(config: &ErConfig) -> Result<SymmetricScheme> {
    config.validate()?;
    let (n, m) = (config.n as f64, config.m as f64);
    let (p, q, r2) = (config.p, config.q, config.radius * config.radius);
    let slope = config.slope();
    let (alpha, gamma) = match config.lambda {
        Lambda::Infinite => (1.0 / (m * p * q), 1.0 / q),
        Lambda::Finite(lambda) => {
            let k = 1.0 + (m - 1.0) * q;
            let a = r2 / (lambda * n * n);
            let noise = 1.0 - p + config.d as f64 * config.xi().powi(2) / config.eps.powi(2);
            let denom = a * noise * (a * k + q) + m * p * q * (r2 / (lambda * m * n) * k + q);
            let alpha = q / denom * (r2 / (lambda * n) + 1.0);
            let gamma = (r2 / (n * n) * (n - k * (n - m) * p * alpha) + lambda) / (r2 / (n * n) * k + lambda * q);
            (alpha, gamma)
        }
    };
    Ok(SymmetricScheme {
        alpha,
        gamma,
        sigma: slope * alpha,
    })
}

/// MSE of the unbiased (`λ = ∞`) symmetric scheme,
/// `R²[(n-m)/(n²pq)·((1-p)/m + ξ²d/(mε²)) + (1-q)/(mq)]`.
pub fn mse_at_lambda_inf(config: &ErConfig) -> Result<f64> {
    config.validate()?;
    let (n, m) = (config.n as f64, config.m as f64);
    let (p, q) = (config.p, config.q);
    let noise = config.xi().powi(2) * config.d as f64 / config.eps.powi(2);
    Ok(config.radius.powi(2)
        * ((n - m) / (n * n * p * q) * ((1.0 - p) / m + noise / m) + (1.0 - q) / (m * q)))
}

/// MSE of inverse-probability weighting without collaboration, where nodes
/// outside `M` reach the PS with probability `q_prime`.
pub fn no_collab_mse(config: &ErConfig, q_prime: f64) -> Result<f64> {
    config.validate()?;
    if q_prime == 0.0 {
        return Err(Error::Unbounded("no-collaboration MSE with q' = 0".into()));
    }
    if !(q_prime > 0.0 && q_prime <= 1.0) {
        return Err(Error::InvalidParameter(format!("q' = {q_prime}")));
    }
    let (n, m) = (config.n as f64, config.m as f64);
    Ok(config.radius.powi(2) / (n * n) * (m / config.q + (n - m) / q_prime - n))
}

/// Objective of a symmetric scheme split into its parts (L2 bias).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetricObjective {
    pub tiv: f64,
    pub piv: f64,
    pub bias: f64,
    pub total: f64,
}

/// `TIV + PIV + λ·Σ(S_i - 1)²` evaluated in the three symmetric variables.
///
/// For `λ = ∞` the penalty is dropped and `total = tiv + piv`.
pub fn symmetric_objective(config: &ErConfig, s: &SymmetricScheme) -> Result<SymmetricObjective> {
    config.validate()?;
    let (n, m) = (config.n as f64, config.m as f64);
    let (p, q) = (config.p, config.q);
    let relayed = n - m;
    let u = s.gamma + relayed * p * s.alpha;
    let tiv = config.radius.powi(2) / (n * n)
        * (m * relayed * q * p * (1.0 - p) * s.alpha.powi(2)
            + m * q * (1.0 - q) * u * u
            + (m * q * u - n).powi(2));
    let piv = config.d as f64 / (n * n) * q * p * m * relayed * s.sigma.powi(2);
    let bias = m * (q * s.gamma - 1.0).powi(2) + relayed * (m * q * p * s.alpha - 1.0).powi(2);
    let total = match config.lambda {
        Lambda::Finite(l) => tiv + piv + l * bias,
        Lambda::Infinite => tiv + piv,
    };
    Ok(SymmetricObjective { tiv, piv, bias, total })
}

fn symmetric_gradient(config: &ErConfig, s: &SymmetricScheme) -> [f64; 3] {
    let (n, m) = (config.n as f64, config.m as f64);
    let (p, q) = (config.p, config.q);
    let relayed = n - m;
    let k = config.radius.powi(2) / (n * n);
    let lambda = match config.lambda {
        Lambda::Finite(l) => l,
        Lambda::Infinite => 0.0,
    };
    let u = s.gamma + relayed * p * s.alpha;
    let du = 2.0 * m * q * (1.0 - q) * u + 2.0 * (m * q * u - n) * m * q;
    let ga = k * (2.0 * m * relayed * q * p * (1.0 - p) * s.alpha + du * relayed * p)
        + lambda * 2.0 * relayed * (m * q * p * s.alpha - 1.0) * m * q * p;
    let gg = k * du + lambda * 2.0 * m * (q * s.gamma - 1.0) * q;
    let gs = 2.0 * config.d as f64 / (n * n) * q * p * m * relayed * s.sigma;
    [ga, gg, gs]
}

/// Stationary point of the symmetric objective by projected gradient descent.
///
/// `α` and `σ` are projected onto the privacy cone and `γ` onto `γ ≥ 0`. The
/// objective is quadratic, so the step is the inverse of a bound on its
/// curvature. Stops once no coordinate moves by more than `tol` relative.
pub fn symmetric_pgd(config: &ErConfig, max_iters: usize, tol: f64) -> Result<(SymmetricScheme, usize)> {
    config.validate()?;
    if matches!(config.lambda, Lambda::Infinite) {
        return Err(Error::InvalidParameter("symmetric PGD needs a finite lambda".into()));
    }
    let slope = config.slope();
    let zero = SymmetricScheme {
        alpha: 0.0,
        gamma: 0.0,
        sigma: 0.0,
    };
    let g0 = symmetric_gradient(config, &zero);
    let units = [
        SymmetricScheme { alpha: 1.0, ..zero },
        SymmetricScheme { gamma: 1.0, ..zero },
        SymmetricScheme { sigma: 1.0, ..zero },
    ];
    let frob: f64 = units
        .iter()
        .flat_map(|e| {
            let g = symmetric_gradient(config, e);
            (0..3).map(move |k| (g[k] - g0[k]).powi(2))
        })
        .sum::<f64>()
        .sqrt();
    let step = 1.0 / frob;
    let mut s = SymmetricScheme {
        alpha: 0.0,
        gamma: 1.0,
        sigma: 0.0,
    };
    for iter in 1..=max_iters {
        let g = symmetric_gradient(config, &s);
        let (a, sg) = project_cone(s.alpha - step * g[0], s.sigma - step * g[2], slope);
        let next = SymmetricScheme {
            alpha: a,
            gamma: (s.gamma - step * g[1]).max(0.0),
            sigma: sg,
        };
        let moved = [
            (next.alpha - s.alpha, next.alpha),
            (next.gamma - s.gamma, next.gamma),
            (next.sigma - s.sigma, next.sigma),
        ]
        .iter()
        .all(|(dx, x)| dx.abs() <= tol * x.abs().max(1e-300));
        s = next;
        if moved {
            return Ok((s, iter));
        }
    }
    Ok((s, max_iters))
}

/// Network, trust and scheme matrices of a symmetric configuration.
///
/// Nodes outside `M` get PS probability `q_prime`, every off-diagonal link
/// probability `p`. `α_jj = γ` for every node, `α_ij = α` and `σ_ij = σ` for
/// `i ∉ M`, `j ∈ M`, all other entries zero.
pub fn expand(
    config: &ErConfig,
    scheme: &SymmetricScheme,
    q_prime: f64,
) -> Result<(NetworkModel, TrustMatrix, CollaborationScheme)> {
    config.validate()?;
    let (n, m) = (config.n, config.m);
    let ps = Array1::from_shape_fn(n, |i| if i < m { config.q } else { q_prime });
    let links = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { config.p });
    let model = NetworkModel::independent(ps, links)?;
    let trust = TrustMatrix::uniform(n, config.eps, config.delta)?;
    let relay = |i: usize, j: usize| i >= m && j < m;
    let alpha = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            scheme.gamma
        } else if relay(i, j) {
            scheme.alpha
        } else {
            0.0
        }
    });
    let sigma = Array2::from_shape_fn((n, n), |(i, j)| if relay(i, j) { scheme.sigma } else { 0.0 });
    Ok((model, trust, CollaborationScheme::new(alpha, sigma)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{bound, s_vector};
    use crate::optimizer::{objective, BiasNorm};
    use crate::scheme::check_feasibility_tol;

    fn cfg(lambda: Lambda) -> ErConfig {
        ErConfig {
            n: 6,
            m: 2,
            p: 0.5,
            q: 0.5,
            eps: 1.0,
            delta: 1e-3,
            radius: 1.0,
            d: 2,
            lambda,
        }
    }

    #[test]
    fn unbiased_limit() {
        let c = ErConfig { n: 4, ..cfg(Lambda::Infinite) };
        let s = closed_form(&c).unwrap();
        assert_eq!(s.alpha, 2.0);
        assert_eq!(s.gamma, 2.0);
        assert_eq!(s.sigma / s.alpha, c.slope());
    }

    #[test]
    fn large_lambda_approaches_limit() {
        let s = closed_form(&cfg(Lambda::Finite(1e8))).unwrap();
        let inf = closed_form(&cfg(Lambda::Infinite)).unwrap();
        assert!((s.alpha / inf.alpha - 1.0).abs() <= 1e-3);
        assert!((s.gamma / inf.gamma - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn closed_form_matches_pgd() {
        let c = cfg(Lambda::Finite(1.0));
        let exact = closed_form(&c).unwrap();
        let (num, _) = symmetric_pgd(&c, 2_000_000, 1e-13).unwrap();
        assert!((num.alpha / exact.alpha - 1.0).abs() < 1e-4, "{num:?} vs {exact:?}");
        assert!((num.gamma / exact.gamma - 1.0).abs() < 1e-4);
    }

    #[test]
    fn mse_limit_special_cases() {
        let c = ErConfig {
            p: 1.0,
            eps: 1e12,
            ..cfg(Lambda::Infinite)
        };
        let v = mse_at_lambda_inf(&c).unwrap();
        assert!((v - 0.5 / (2.0 * 0.5)).abs() < 1e-12);
        let c = ErConfig { n: 2, m: 2, ..cfg(Lambda::Infinite) };
        assert!((mse_at_lambda_inf(&c).unwrap() - 0.5 / 1.0).abs() < 1e-15);
    }

    #[test]
    fn mse_limit_equals_bound_of_expanded_scheme() {
        let c = ErConfig {
            n: 4,
            d: 1,
            ..cfg(Lambda::Infinite)
        };
        let s = closed_form(&c).unwrap();
        let (model, trust, scheme) = expand(&c, &s, 0.0).unwrap();
        let b = bound(&model, &scheme, c.radius, c.d).unwrap();
        assert!((b.bound - mse_at_lambda_inf(&c).unwrap()).abs() < 1e-10);
        assert!(s_vector(&model, &scheme).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(check_feasibility_tol(&scheme, &trust, c.radius, 1e-12).unwrap().is_feasible());
    }

    #[test]
    fn symmetric_objective_matches_full_objective() {
        let c = cfg(Lambda::Finite(0.7));
        let s = SymmetricScheme {
            alpha: 0.8,
            gamma: 1.3,
            sigma: 2.1,
        };
        let (model, _, scheme) = expand(&c, &s, 0.0).unwrap();
        let full = objective(&model, &scheme, c.radius, c.d, 0.7, BiasNorm::L2).unwrap();
        let sym = symmetric_objective(&c, &s).unwrap().total;
        assert!((full - sym).abs() < 1e-12 * full);
    }

    #[test]
    fn no_collaboration_baseline() {
        let c = ErConfig {
            n: 10,
            m: 2,
            q: 0.9,
            ..cfg(Lambda::Infinite)
        };
        let v = no_collab_mse(&c, 1e-3).unwrap();
        assert!((v - (2.0 / 0.9 + 8000.0 - 10.0) / 100.0).abs() < 1e-9);
        assert!((v - 79.92).abs() < 0.01);
        let c1 = ErConfig { q: 1.0, ..c.clone() };
        assert_eq!(no_collab_mse(&c1, 1.0).unwrap(), 0.0);
        assert!(matches!(no_collab_mse(&c, 0.0), Err(Error::Unbounded(_))));
        assert!(mse_at_lambda_inf(&c).unwrap().is_finite());
    }

    #[test]
    fn lambda_json() {
        let l: Lambda = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(l, Lambda::Infinite);
        let l: Lambda = serde_json::from_str("0.5").unwrap();
        assert_eq!(l, Lambda::Finite(0.5));
        assert_eq!(serde_json::to_string(&Lambda::Infinite).unwrap(), "\"inf\"");
    }
}

//! Observation models and their Gaussian expectations.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gauss–Hermite order used for training-time expectations.
pub const TRAIN_QUADRATURE_ORDER: usize = 20;
/// Gauss–Hermite order used for predictive densities.
pub const EVAL_QUADRATURE_ORDER: usize = 100;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gauss–Hermite rule for the weight `e^{−x²}`: `Σ wᵢ g(xᵢ) ≈ ∫ e^{−x²} g(x) dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Nodes by Newton iteration on the orthonormal Hermite recurrence.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Domain("quadrature order must be positive".into()));
        }
        let n = order;
        let pim4 = PI.powf(-0.25);
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => {
                    let t = (2 * n + 1) as f64;
                    t.sqrt() - 1.85575 * t.powf(-0.16667)
                }
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..200 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        Ok(Self { nodes: x, weights: w })
    }

    /// Shared, lazily built rule of the given order.
    pub fn cached(order: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<QuadratureRule>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(r) = cache.lock().expect("quadrature cache").get(&order) {
            return Ok(r.clone());
        }
        let rule = Arc::new(Self::gauss_hermite(order)?);
        cache.lock().expect("quadrature cache").insert(order, rule.clone());
        Ok(rule)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `E[g(f)]` for `f ~ N(m, v)`.
    pub fn expectation(&self, m: f64, v: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        let s = (2.0 * v).sqrt();
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(m + s * x))
            .sum();
        total / PI.sqrt()
    }

    /// `log E[exp(h(f))]` for `f ~ N(m, v)`, by log-sum-exp.
    pub fn log_expectation_exp(&self, m: f64, v: f64, mut h: impl FnMut(f64) -> f64) -> f64 {
        let s = (2.0 * v).sqrt();
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w.ln() + h(m + s * x))
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return max;
        }
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln() - 0.5 * PI.ln()
    }
}

/// Observation model `p(y | f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub enum Likelihood<T> {
    Gaussian { variance: T },
    /// Counts with rate `area · e^f`.
    Poisson { area: T },
    /// Binary labels `y ∈ {0, 1}` with `p(y = 1 | f) = Φ(f)`. Experimental.
    Bernoulli,
}

fn log_norm_cdf(u: f64) -> f64 {
    if u > -35.0 {
        (0.5 * erfc(-u / std::f64::consts::SQRT_2)).ln()
    } else {
        let u2 = u * u;
        -0.5 * u2 - (-u).ln() - 0.5 * LN_2PI + (1.0 - 1.0 / u2 + 3.0 / (u2 * u2) - 15.0 / (u2 * u2 * u2)).ln()
    }
}

/// `φ(u)/Φ(u)`.
fn inverse_mills(u: f64) -> f64 {
    if u > -35.0 {
        (-0.5 * u * u - 0.5 * LN_2PI - log_norm_cdf(u)).exp()
    } else {
        let u2 = u * u;
        -u / (1.0 - 1.0 / u2 + 3.0 / (u2 * u2) - 15.0 / (u2 * u2 * u2))
    }
}

fn check_var(v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("marginal variance must be positive, got {v}")))
    }
}

impl<T: Scalar> Likelihood<T> {
    pub fn gaussian(variance: T) -> Result<Self> {
        if variance > T::zero() && variance.as_f64().is_finite() {
            Ok(Likelihood::Gaussian { variance })
        } else {
            Err(Error::Domain(format!("Gaussian noise variance must be positive, got {variance:?}")))
        }
    }

    pub fn poisson(area: T) -> Result<Self> {
        let a = area.as_f64();
        if a >= 0.0 && a.is_finite() {
            Ok(Likelihood::Poisson { area })
        } else {
            Err(Error::Domain(format!("Poisson offset must be finite and non-negative, got {a}")))
        }
    }

    pub fn is_conjugate(&self) -> bool {
        matches!(self, Likelihood::Gaussian { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Gaussian { .. } => "gaussian",
            Likelihood::Poisson { .. } => "poisson",
            Likelihood::Bernoulli => "bernoulli",
        }
    }

    /// `log p(y | f)`.
    pub fn log_density(&self, y: f64, f: f64) -> f64 {
        match *self {
            Likelihood::Gaussian { variance } => {
                let s2 = variance.as_f64();
                -0.5 * (LN_2PI + s2.ln()) - (y - f) * (y - f) / (2.0 * s2)
            }
            Likelihood::Poisson { area } => {
                let a = area.as_f64();
                let yf = if y == 0.0 { 0.0 } else { y * (f + a.ln()) };
                yf - a * f.exp() - ln_gamma(y + 1.0)
            }
            Likelihood::Bernoulli => log_norm_cdf(if y > 0.5 { f } else { -f }),
        }
    }

    /// First and second derivatives of `log p(y | f)` in `f`.
    pub fn log_density_derivatives(&self, y: f64, f: f64) -> (f64, f64) {
        match *self {
            Likelihood::Gaussian { variance } => {
                let s2 = variance.as_f64();
                ((y - f) / s2, -1.0 / s2)
            }
            Likelihood::Poisson { area } => {
                let rate = area.as_f64() * f.exp();
                (y - rate, -rate)
            }
            Likelihood::Bernoulli => {
                let z = if y > 0.5 { 1.0 } else { -1.0 };
                let u = z * f;
                let r = inverse_mills(u);
                (z * r, -u * r - r * r)
            }
        }
    }

    /// `E_{N(f|m,v)}[log p(y|f)]`; closed form for Gaussian, Gauss–Hermite
    /// of order 20 otherwise.
    pub fn expected_log_lik(&self, y: T, m: T, v: T) -> Result<T> {
        self.expected_log_lik_order(y, m, v, TRAIN_QUADRATURE_ORDER)
    }

    pub fn expected_log_lik_order(&self, y: T, m: T, v: T, order: usize) -> Result<T> {
        let (y, m, v) = (y.as_f64(), m.as_f64(), v.as_f64());
        check_var(v)?;
        let out = match *self {
            Likelihood::Gaussian { variance } => {
                let s2 = variance.as_f64();
                -0.5 * (LN_2PI + s2.ln()) - ((y - m) * (y - m) + v) / (2.0 * s2)
            }
            _ => {
                let rule = QuadratureRule::cached(order)?;
                rule.expectation(m, v, |f| self.log_density(y, f))
            }
        };
        Ok(T::lit(out))
    }

    /// Quadrature for every family, including Gaussian.
    pub fn expected_log_lik_quadrature(&self, y: T, m: T, v: T, rule: &QuadratureRule) -> Result<T> {
        let (y, m, v) = (y.as_f64(), m.as_f64(), v.as_f64());
        check_var(v)?;
        Ok(T::lit(rule.expectation(m, v, |f| self.log_density(y, f))))
    }

    /// `(∂E/∂m, ∂E/∂v)` of [`Self::expected_log_lik`].
    pub fn elik_grads(&self, y: T, m: T, v: T) -> Result<(T, T)> {
        self.elik_grads_order(y, m, v, TRAIN_QUADRATURE_ORDER)
    }

    pub fn elik_grads_order(&self, y: T, m: T, v: T, order: usize) -> Result<(T, T)> {
        match *self {
            Likelihood::Gaussian { variance } => {
                check_var(v.as_f64())?;
                Ok(((y - m) / variance, -T::lit(0.5) / variance))
            }
            _ => {
                let rule = QuadratureRule::cached(order)?;
                self.elik_grads_quadrature(y, m, v, &rule)
            }
        }
    }

    pub fn elik_grads_quadrature(&self, y: T, m: T, v: T, rule: &QuadratureRule) -> Result<(T, T)> {
        let (y, m, v) = (y.as_f64(), m.as_f64(), v.as_f64());
        check_var(v)?;
        let (mut gm, mut gv) = (0.0, 0.0);
        let s = (2.0 * v).sqrt();
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let (d1, d2) = self.log_density_derivatives(y, m + s * x);
            gm += w * d1;
            gv += w * d2;
        }
        let norm = PI.sqrt();
        Ok((T::lit(gm / norm), T::lit(0.5 * gv / norm)))
    }

    /// `E[y]` under `f ~ N(m, v)`.
    pub fn predictive_mean(&self, m: T, v: T) -> T {
        let (m, v) = (m.as_f64(), v.as_f64().max(0.0));
        T::lit(match *self {
            Likelihood::Gaussian { .. } => m,
            Likelihood::Poisson { area } => area.as_f64() * (m + 0.5 * v).exp(),
            Likelihood::Bernoulli => log_norm_cdf(m / (1.0 + v).sqrt()).exp(),
        })
    }

    /// Negative log predictive density `−log ∫ p(y|f) N(f|m,v) df`.
    pub fn nlpd(&self, y: T, m: T, v: T) -> Result<T> {
        self.nlpd_order(y, m, v, EVAL_QUADRATURE_ORDER)
    }

    pub fn nlpd_order(&self, y: T, m: T, v: T, order: usize) -> Result<T> {
        match *self {
            Likelihood::Gaussian { variance } => {
                let (y, m, v) = (y.as_f64(), m.as_f64(), v.as_f64());
                check_var(v)?;
                let s = variance.as_f64() + v;
                Ok(T::lit(0.5 * (LN_2PI + s.ln()) + (y - m) * (y - m) / (2.0 * s)))
            }
            _ => {
                let rule = QuadratureRule::cached(order)?;
                self.nlpd_quadrature(y, m, v, &rule)
            }
        }
    }

    pub fn nlpd_quadrature(&self, y: T, m: T, v: T, rule: &QuadratureRule) -> Result<T> {
        let (y, m, v) = (y.as_f64(), m.as_f64(), v.as_f64());
        check_var(v)?;
        Ok(T::lit(-rule.log_expectation_exp(m, v, |f| self.log_density(y, f))))
    }
}

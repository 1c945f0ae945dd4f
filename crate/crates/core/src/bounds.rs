//! Information-preservation calculators: covering numbers, the domination
//! constant between MMD and total variation, and minimal sketch sizes.
//!
//! Every quantity is evaluated in natural-log space. [`LogValue::linear`] yields
//! the plain value only when it is below 1e300.

use std::f64::consts::{LN_2, SQRT_2};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest linear value reported alongside a log-space result.
pub const LINEAR_LIMIT: f64 = 1e300;

/// Compact parameter set for a single diagonal Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamDomain {
    pub d: usize,
    pub sigma2_min: f64,
    pub sigma2_max: f64,
    /// Bound on the Euclidean norm of the means.
    pub mean_bound: f64,
    /// Chebyshev radius of the parameter set.
    pub radius: f64,
}

impl ParamDomain {
    pub fn new(
        d: usize,
        sigma2_min: f64,
        sigma2_max: f64,
        mean_bound: f64,
        radius: f64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(sigma2_min > 0.0 && sigma2_min <= sigma2_max && sigma2_max.is_finite()) {
            return Err(Error::invalid(format!(
                "variance bounds must satisfy 0 < sigma2_min <= sigma2_max, got [{sigma2_min}, {sigma2_max}]"
            )));
        }
        if !(mean_bound >= 0.0 && mean_bound.is_finite()) {
            return Err(Error::invalid(format!(
                "mean bound must be finite and >= 0, got {mean_bound}"
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!(
                "radius must be finite and > 0, got {radius}"
            )));
        }
        Ok(ParamDomain {
            d,
            sigma2_min,
            sigma2_max,
            mean_bound,
            radius,
        })
    }

    /// `max(σ_min⁻¹, σ_min⁻²/√2)`.
    pub fn scale_factor(&self) -> f64 {
        let s = self.sigma2_min.sqrt();
        (1.0 / s).max(1.0 / (self.sigma2_min * SQRT_2))
    }

    /// The constant `B = 8·max(σ_min⁻¹, σ_min⁻²/√2)·radius` of the covering bound.
    pub fn covering_constant(&self) -> f64 {
        8.0 * self.scale_factor() * self.radius
    }
}

/// A positive quantity held as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogValue {
    pub log: f64,
}

impl LogValue {
    pub fn from_log(log: f64) -> Self {
        LogValue { log }
    }

    pub fn linear(&self) -> Option<f64> {
        let v = self.log.exp();
        (v < LINEAR_LIMIT).then_some(v)
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.linear() {
            Some(v) => write!(f, "{v:.17e} (log {:.17e})", self.log),
            None => write!(f, "exp({:.17e})", self.log),
        }
    }
}

fn require_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must be finite and > 0, got {x}"
        )))
    }
}

fn require_eta_rho(eta: f64, rho: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    Ok(())
}

/// Log of the covering number of single Gaussians in total variation:
/// `N ≤ (B/ε)^{2d}`.
pub fn covering_bound_gauss(dom: &ParamDomain, eps: f64) -> Result<LogValue> {
    require_positive("eps", eps)?;
    Ok(LogValue::from_log(
        2.0 * dom.d as f64 * (dom.covering_constant().ln() - eps.ln()),
    ))
}

/// Log covering bound of K-sparse mixtures given the log covering bound of the
/// base set as a function of ε:
/// `K·[log(8C) + log N_G(τε) − log((1−τ)ε)]`.
pub fn covering_bound_mixture<F>(
    base_log_bound: F,
    c: f64,
    k: usize,
    eps: f64,
    tau: f64,
) -> Result<LogValue>
where
    F: Fn(f64) -> f64,
{
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")));
    }
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::invalid(format!(
            "C must be finite and >= 1, got {c}"
        )));
    }
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    require_positive("eps", eps)?;
    let per = (8.0 * c).ln() + base_log_bound(tau * eps) - ((1.0 - tau) * eps).ln();
    Ok(LogValue::from_log(k as f64 * per))
}

/// Closed-form GMM covering bound `(2(B+1)/ε)^{(2d+1)K}` in log form.
pub fn covering_bound_gmm(dom: &ParamDomain, k: usize, eps: f64) -> Result<LogValue> {
    require_positive("eps", eps)?;
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    let b = dom.covering_constant();
    let dof = ((2 * dom.d + 1) * k) as f64;
    Ok(LogValue::from_log(dof * (LN_2 + (b + 1.0).ln() - eps.ln())))
}

/// Constant `D` such that the MMD under an isotropic Gaussian frequency law of
/// scale `a` dominates total variation on the domain.
pub fn domination_constant(dom: &ParamDomain, a: f64) -> Result<LogValue> {
    require_positive("a", a)?;
    let d = dom.d as f64;
    let d1 = dom.sigma2_max * a * (1.0 + 2.0 * dom.mean_bound.powi(2) / d);
    // log(1 − e^{−D₁}) without cancellation for small D₁.
    let log_denom = a.ln() + (-(-d1).exp_m1()).ln();
    let log_inner = (2.0 * d * d1).ln() + 3.0 * a * dom.sigma2_max - log_denom;
    Ok(LogValue::from_log(
        dom.scale_factor().ln() + 0.5 * log_inner,
    ))
}

/// Which argument of `A = min(D, 2/η)` is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstantBranch {
    Domination,
    TwoOverEta,
}

impl ConstantBranch {
    pub fn name(self) -> &'static str {
        match self {
            ConstantBranch::Domination => "D",
            ConstantBranch::TwoOverEta => "2/eta",
        }
    }
}

/// A sketch-size lower bound: unrounded value and its ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SketchSize {
    pub value: f64,
    pub m: u64,
    /// log of the constant `A` used in the bound.
    pub log_a: f64,
    pub branch: ConstantBranch,
}

fn size_from(value: f64, log_a: f64, branch: ConstantBranch) -> Result<SketchSize> {
    if !value.is_finite() || value >= u64::MAX as f64 {
        return Err(Error::Numerical(format!(
            "sketch size bound {value} is not representable"
        )));
    }
    Ok(SketchSize {
        value,
        m: value.ceil().max(0.0) as u64,
        log_a,
        branch,
    })
}

/// Sketch size for single Gaussians with an isotropic Gaussian frequency law:
/// `m ≥ 12A²(4d·log(C/η) + log(2/ρ))`, `A = min(D, 2/η)`, `C = √(24B)`.
pub fn sketch_size_single_gauss(
    dom: &ParamDomain,
    a: f64,
    eta: f64,
    rho: f64,
) -> Result<SketchSize> {
    require_eta_rho(eta, rho)?;
    let log_d = domination_constant(dom, a)?.log;
    let log_two_over_eta = (2.0 / eta).ln();
    let (log_a, branch) = if log_d <= log_two_over_eta {
        (log_d, ConstantBranch::Domination)
    } else {
        (log_two_over_eta, ConstantBranch::TwoOverEta)
    };
    let log_c = 0.5 * (24.0 * dom.covering_constant()).ln();
    let inner = 4.0 * dom.d as f64 * (log_c - eta.ln()) + (2.0 / rho).ln();
    size_from(12.0 * (2.0 * log_a).exp() * inner, log_a, branch)
}

/// Sketch size for K-component GMMs under any frequency law:
/// `m ≥ 48η⁻²(2K(2d+1)·log(C/η) + log(2/ρ))`, `C = √(48(B+1))`.
pub fn sketch_size_gmm(dom: &ParamDomain, k: usize, eta: f64, rho: f64) -> Result<SketchSize> {
    require_eta_rho(eta, rho)?;
    if k == 0 {
        return Err(Error::invalid("K must be positive"));
    }
    let log_c = 0.5 * (48.0 * (dom.covering_constant() + 1.0)).ln();
    let dof = (2 * k * (2 * dom.d + 1)) as f64;
    let inner = dof * (log_c - eta.ln()) + (2.0 / rho).ln();
    size_from(
        48.0 / (eta * eta) * inner,
        (2.0 / eta).ln(),
        ConstantBranch::TwoOverEta,
    )
}

/// Failure probability guaranteed by `m` frequencies: `ρ = 2·N(η²/24)·exp(−m/(12A²))`,
/// given `log N(η²/24)` and `log A`.
pub fn implied_failure_prob(log_covering: f64, log_a: f64, m: f64) -> LogValue {
    LogValue::from_log(LN_2 + log_covering - m / (12.0 * (2.0 * log_a).exp()))
}

/// [`implied_failure_prob`] for GMMs, using the closed-form covering bound and `A = 2/η`.
pub fn implied_failure_prob_gmm(dom: &ParamDomain, k: usize, eta: f64, m: f64) -> Result<LogValue> {
    require_eta_rho(eta, 0.5)?;
    let log_n = covering_bound_gmm(dom, k, eta * eta / 24.0)?.log;
    Ok(implied_failure_prob(log_n, (2.0 / eta).ln(), m))
}

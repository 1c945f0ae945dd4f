//! Diagonal Gaussians, Gaussian mixtures and datasets.
//!
//! Besides densities this module holds the closed-form characteristic function
//! `psi(w) = exp(-i w.mu) exp(-1/2 sum_l var_l w_l^2)` and its partial
//! derivatives, which every sketch and recovery routine builds on.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Smallest admissible per-dimension variance.
pub const VARIANCE_FLOOR: f64 = 1e-15;

/// Tolerance on `sum(weights) == 1` for a finalized mixture.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One diagonal-covariance Gaussian atom.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianParams {
    /// Variances below [`VARIANCE_FLOOR`] are clamped up to it.
    pub fn new(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("gaussian dimension must be at least 1"));
        }
        check_dim(mean.len(), variances.len())?;
        if mean.iter().chain(&variances).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        let variances = variances
            .into_iter()
            .map(|v| v.max(VARIANCE_FLOOR))
            .collect();
        Ok(GaussianParams { mean, variances })
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, vec![variance; d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Parameters stacked as `[mean; variances]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.mean.clone();
        v.extend_from_slice(&self.variances);
        v
    }

    /// Inverse of [`GaussianParams::to_vector`]; clamps variances.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if !v.len().is_multiple_of(2) || v.is_empty() {
            return Err(Error::invalid(
                "parameter vector must have even, nonzero length",
            ));
        }
        let d = v.len() / 2;
        Self::new(v[..d].to_vec(), v[d..].to_vec())
    }
}

/// Weighted set of Gaussians sharing one dimension.
///
/// Weights may be unnormalized while a recovery is in progress; call
/// [`Mixture::normalized`] to finalize.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    components: Vec<GaussianParams>,
    weights: Vec<f64>,
}

impl Mixture {
    pub fn new(components: Vec<GaussianParams>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        check_dim(components.len(), weights.len())?;
        let d = components[0].dim();
        for c in &components {
            check_dim(d, c.dim())?;
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("mixture weights"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        Ok(Mixture {
            components,
            weights,
        })
    }

    pub fn single(component: GaussianParams) -> Self {
        Mixture {
            components: vec![component],
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianParams] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_normalized(&self) -> bool {
        (self.weights.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOL
    }

    /// Rescales weights to sum to one.
    pub fn normalized(mut self) -> Result<Self> {
        let total: f64 = self.weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Numerical("mixture weights sum to zero".into()));
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(self)
    }

    fn require_normalized(&self) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::invalid("mixture weights must sum to 1"))
        }
    }

    /// Average per-dimension variance over components (unweighted).
    pub fn mean_variance(&self) -> f64 {
        let total: f64 = self.components.iter().flat_map(|c| c.variances()).sum();
        total / (self.len() * self.dim()) as f64
    }
}

/// Row-major `n x d` sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dataset dimension must be at least 1"));
        }
        if values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "dataset needs a nonzero multiple of {dim} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Dataset { dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_dim(dim, r.len())?;
            values.extend_from_slice(r);
        }
        Self::new(dim, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// First `n` rows (or all of them if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            dim: self.dim,
            values: self.values[..n * self.dim].to_vec(),
        }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// `log N(x; mu, diag(var))`.
pub fn gauss_logpdf(p: &GaussianParams, x: &[f64]) -> Result<f64> {
    check_dim(p.dim(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density argument"));
    }
    Ok(logpdf_unchecked(p, x))
}

pub(crate) fn logpdf_unchecked(p: &GaussianParams, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&xl, &mu), &var) in x.iter().zip(&p.mean).zip(&p.variances) {
        let diff = xl - mu;
        acc += (2.0 * PI * var).ln() + diff * diff / var;
    }
    -0.5 * acc
}

/// `log sum_k alpha_k N(x; theta_k)` via the max-shift trick.
pub fn mixture_logpdf(mix: &Mixture, x: &[f64]) -> Result<f64> {
    mix.require_normalized()?;
    check_dim(mix.dim(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density argument"));
    }
    Ok(mixture_logpdf_unchecked(mix, x))
}

pub(crate) fn mixture_logpdf_unchecked(mix: &Mixture, x: &[f64]) -> f64 {
    let mut terms = [0.0f64; 16];
    let mut heap;
    let terms: &mut [f64] = if mix.len() <= terms.len() {
        &mut terms[..mix.len()]
    } else {
        heap = vec![0.0; mix.len()];
        &mut heap
    };
    let mut max = f64::NEG_INFINITY;
    for (t, (c, &w)) in terms
        .iter_mut()
        .zip(mix.components.iter().zip(&mix.weights))
    {
        *t = if w > 0.0 {
            w.ln() + logpdf_unchecked(c, x)
        } else {
            f64::NEG_INFINITY
        };
        max = max.max(*t);
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Characteristic function `E[exp(-i w.x)]` of a diagonal Gaussian.
pub fn gauss_charfn(p: &GaussianParams, omega: &[f64]) -> Result<Complex64> {
    check_dim(p.dim(), omega.len())?;
    Ok(charfn_unchecked(p.mean(), p.variances(), omega))
}

#[inline]
pub(crate) fn charfn_unchecked(mean: &[f64], variances: &[f64], omega: &[f64]) -> Complex64 {
    let mut phase = 0.0;
    let mut quad = 0.0;
    for ((&w, &mu), &var) in omega.iter().zip(mean).zip(variances) {
        phase += w * mu;
        quad += var * w * w;
    }
    let amp = (-0.5 * quad).exp();
    let (s, c) = phase.sin_cos();
    Complex64::new(amp * c, -amp * s)
}

/// Value of the characteristic function and its partials in mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CharFnGrad {
    pub value: Complex64,
    pub dmean: Vec<Complex64>,
    pub dvar: Vec<Complex64>,
}

pub fn gauss_charfn_grad(p: &GaussianParams, omega: &[f64]) -> Result<CharFnGrad> {
    let value = gauss_charfn(p, omega)?;
    let dmean = omega
        .iter()
        .map(|&w| Complex64::new(0.0, -w) * value)
        .collect();
    let dvar = omega.iter().map(|&w| -0.5 * w * w * value).collect();
    Ok(CharFnGrad { value, dmean, dvar })
}

/// Characteristic function of a mixture; weights are used as given.
pub fn mixture_charfn(mix: &Mixture, omega: &[f64]) -> Result<Complex64> {
    check_dim(mix.dim(), omega.len())?;
    Ok(mix
        .components
        .iter()
        .zip(&mix.weights)
        .map(|(c, &w)| w * charfn_unchecked(c.mean(), c.variances(), omega))
        .sum())
}

/// Closed-form `KL(p1 || p2)` between diagonal Gaussians.
pub fn gauss_kl(p1: &GaussianParams, p2: &GaussianParams) -> Result<f64> {
    check_dim(p1.dim(), p2.dim())?;
    let mut acc = 0.0;
    for l in 0..p1.dim() {
        let (v1, v2) = (p1.variances[l], p2.variances[l]);
        let dm = p2.mean[l] - p1.mean[l];
        acc += (v2 / v1).ln() + v1 / v2 - 1.0 + dm * dm / v2;
    }
    Ok(0.5 * acc)
}

/// Draws a component label from nonnegative (not necessarily normalized) weights.
pub(crate) fn draw_label<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = k;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

/// `n` i.i.d. draws from a finalized mixture.
pub fn mixture_sample<R: Rng + ?Sized>(mix: &Mixture, n: usize, rng: &mut R) -> Result<Dataset> {
    mix.require_normalized()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let d = mix.dim();
    let stds: Vec<Vec<f64>> = mix
        .components
        .iter()
        .map(|c| c.variances.iter().map(|v| v.sqrt()).collect())
        .collect();
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        let k = draw_label(&mix.weights, rng);
        let c = &mix.components[k];
        for (&mu, &s) in c.mean.iter().zip(&stds[k]) {
            let z: f64 = rng.sample(StandardNormal);
            values.push(mu + s * z);
        }
    }
    Dataset::new(d, values)
}

//! Greedy mixture recovery from a sketch.
//!
//! [`cl_omp`] runs CL-OMP (`T = K` iterations) or CL-OMPR (`T = 2K`, with hard
//! thresholding). [`cl_split`] starts from a single atom and repeatedly splits
//! every Gaussian along its widest axis.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::freqdesign::FrequencySet;
use crate::model::{GaussianParams, Mixture, VARIANCE_FLOOR};
use crate::nnls::nnls;
use crate::optim::{box_minimize, BoxConfig};
use crate::rng::{SeedStream, StreamRng};
use crate::sketch::Sketch;
use crate::Complex64;

/// Atoms with a smaller norm are rejected during the atom search.
pub const MIN_ATOM_NORM: f64 = 1e-150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    ClOmp,
    ClOmpr,
    Split,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ClOmp => "clomp",
            Algorithm::ClOmpr => "clompr",
            Algorithm::Split => "split",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clomp" => Ok(Algorithm::ClOmp),
            "clompr" => Ok(Algorithm::ClOmpr),
            "split" => Ok(Algorithm::Split),
            other => Err(Error::invalid(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    pub k: usize,
    pub algorithm: Algorithm,
    pub max_inner_iters: usize,
    pub grad_tol: f64,
    pub step1_restarts: usize,
    pub seed: u64,
}

/// Optimizer iteration cap per call. In d = 20 the atom search from the origin needs
/// roughly a thousand quasi-Newton steps to leave the anti-correlated region.
pub const DEFAULT_MAX_INNER_ITERS: usize = 1000;

impl RecoveryConfig {
    pub fn new(k: usize, algorithm: Algorithm) -> Self {
        RecoveryConfig {
            k,
            algorithm,
            max_inner_iters: DEFAULT_MAX_INNER_ITERS,
            grad_tol: 1e-8,
            step1_restarts: 1,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Number of greedy iterations implied by the algorithm.
    pub fn iterations(&self) -> usize {
        match self.algorithm {
            Algorithm::ClOmp => self.k,
            Algorithm::ClOmpr => 2 * self.k,
            Algorithm::Split => (usize::BITS - (self.k.max(1) - 1).leading_zeros()) as usize,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("number of components must be at least 1"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("gradient tolerance must be positive"));
        }
        if self.step1_restarts == 0 {
            return Err(Error::invalid("atom search needs at least one start"));
        }
        Ok(())
    }

    fn box_config(&self, max_step: f64) -> BoxConfig {
        BoxConfig {
            max_iters: self.max_inner_iters,
            grad_tol: self.grad_tol,
            max_step,
            ..BoxConfig::default()
        }
    }
}

/// Current support, unnormalized weights and residual `z - sum_k alpha_k A(theta_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportState {
    pub support: Vec<GaussianParams>,
    pub weights: Vec<f64>,
    pub residual: Vec<Complex64>,
}

impl SupportState {
    pub fn empty(sketch: &[Complex64]) -> Self {
        SupportState {
            support: Vec::new(),
            weights: Vec::new(),
            residual: sketch.to_vec(),
        }
    }

    pub fn residual_norm(&self) -> f64 {
        norm(&self.residual)
    }

    /// Recomputes the residual from scratch.
    pub fn refresh_residual(&mut self, sketch: &[Complex64], fs: &FrequencySet) {
        self.residual = residual_of(&self.support, &self.weights, sketch, fs);
    }
}

/// Residual norms observed in one greedy iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationTrace {
    pub thresholded: bool,
    pub before_projection: f64,
    pub after_projection: f64,
    pub after_adjustment: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecoveryTrace {
    pub atom_searches: usize,
    pub thresholdings: usize,
    pub iterations: Vec<IterationTrace>,
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
}

/// Writes `psi_theta(w_j) / sqrt(m)` into `out`.
fn atom_into(mean: &[f64], var: &[f64], fs: &FrequencySet, out: &mut [Complex64]) {
    let scale = 1.0 / (fs.len() as f64).sqrt();
    for (w, o) in fs.rows().zip(out.iter_mut()) {
        let mut phase = 0.0;
        let mut quad = 0.0;
        for ((&wl, &mu), &v) in w.iter().zip(mean).zip(var) {
            phase += wl * mu;
            quad += v * wl * wl;
        }
        let amp = scale * (-0.5 * quad).exp();
        let (s, c) = phase.sin_cos();
        *o = Complex64::new(amp * c, -amp * s);
    }
}

fn atom(p: &GaussianParams, fs: &FrequencySet) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); fs.len()];
    atom_into(p.mean(), p.variances(), fs, &mut out);
    out
}

fn residual_of(
    support: &[GaussianParams],
    weights: &[f64],
    sketch: &[Complex64],
    fs: &FrequencySet,
) -> Vec<Complex64> {
    let mut r = sketch.to_vec();
    let mut buf = vec![Complex64::new(0.0, 0.0); fs.len()];
    for (p, &w) in support.iter().zip(weights) {
        atom_into(p.mean(), p.variances(), fs, &mut buf);
        for (ri, a) in r.iter_mut().zip(&buf) {
            *ri -= a * w;
        }
    }
    r
}

/// Negated normalized correlation `-Re<A(theta)/||A(theta)||, r>` and its gradient.
///
/// `x` holds `[mean; variances]`. Returns `+inf` for atoms below [`MIN_ATOM_NORM`].
pub fn correlation_objective(
    x: &[f64],
    residual: &[Complex64],
    fs: &FrequencySet,
    grad: &mut [f64],
) -> f64 {
    let d = fs.dim();
    let (mean, var) = x.split_at(d);
    let scale = 1.0 / (fs.len() as f64).sqrt();
    let mut corr = 0.0;
    let mut norm_sq = 0.0;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let (g_mean, g_var) = grad.split_at_mut(d);
    // g_var temporarily holds d corr / d var; norm derivative kept separately.
    let mut dnorm_sq = vec![0.0; d];
    for (w, r) in fs.rows().zip(residual) {
        let mut phase = 0.0;
        let mut quad = 0.0;
        for ((&wl, &mu), &v) in w.iter().zip(mean).zip(var) {
            phase += wl * mu;
            quad += v * wl * wl;
        }
        let amp = scale * (-0.5 * quad).exp();
        let (s, c) = phase.sin_cos();
        let a = Complex64::new(amp * c, -amp * s);
        let prod = a.conj() * r;
        corr += prod.re;
        let a2 = amp * amp;
        norm_sq += a2;
        for l in 0..d {
            let wl = w[l];
            g_mean[l] -= wl * prod.im;
            g_var[l] -= 0.5 * wl * wl * prod.re;
            dnorm_sq[l] -= wl * wl * a2;
        }
    }
    let n = norm_sq.sqrt();
    if !(n >= MIN_ATOM_NORM) {
        return f64::INFINITY;
    }
    let value = corr / n;
    for l in 0..d {
        g_mean[l] = -g_mean[l] / n;
        // d n / d var = dnorm_sq / (2 n)
        g_var[l] = -(g_var[l] / n - corr * dnorm_sq[l] / (2.0 * n * n * n));
    }
    -value
}

/// Step 1: atom maximizing the normalized correlation with the residual.
pub fn find_atom<R: Rng + ?Sized>(
    residual: &[Complex64],
    fs: &FrequencySet,
    sigma2_bar: f64,
    cfg: &RecoveryConfig,
    rng: &mut R,
) -> Result<GaussianParams> {
    check_dim(fs.len(), residual.len())?;
    let d = fs.dim();
    let lower: Vec<f64> = std::iter::repeat_n(f64::NEG_INFINITY, d)
        .chain(std::iter::repeat_n(VARIANCE_FLOOR, d))
        .collect();
    // Steps are capped at one design standard deviation so the ascent stays near its start.
    let box_cfg = cfg.box_config(sigma2_bar.sqrt());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..cfg.step1_restarts.max(1) {
        let v = rng
            .random_range(0.5 * sigma2_bar..=1.5 * sigma2_bar)
            .max(VARIANCE_FLOOR);
        let init: Vec<f64> = std::iter::repeat_n(0.0, d)
            .chain(std::iter::repeat_n(v, d))
            .collect();
        let result = box_minimize(
            |x, g| correlation_objective(x, residual, fs, g),
            &init,
            &lower,
            &box_cfg,
        );
        match result {
            Ok(r) => {
                if best.as_ref().is_none_or(|(v, _)| r.value < *v) {
                    best = Some((r.value, r.x));
                }
            }
            Err(Error::NonFinite(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let (_, x) = best.ok_or(Error::DegenerateAtom)?;
    GaussianParams::from_vector(&x)
}

/// Step 3: keeps the `k` atoms with the largest coefficients over normalized atoms.
pub fn hard_threshold(
    state: &SupportState,
    sketch: &[Complex64],
    fs: &FrequencySet,
    k: usize,
) -> Result<SupportState> {
    if state.support.len() <= k {
        return Err(Error::invalid(format!(
            "hard thresholding needs more than {k} atoms, got {}",
            state.support.len()
        )));
    }
    let normalized: Vec<Vec<Complex64>> = state
        .support
        .iter()
        .map(|p| {
            let a = atom(p, fs);
            let n = norm(&a);
            if n >= MIN_ATOM_NORM {
                a.into_iter().map(|z| z / n).collect()
            } else {
                vec![Complex64::new(0.0, 0.0); a.len()]
            }
        })
        .collect();
    let cols: Vec<&[Complex64]> = normalized.iter().map(Vec::as_slice).collect();
    let beta = nnls(&cols, sketch)?;
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| beta[b].total_cmp(&beta[a]));
    let mut keep: Vec<usize> = order[..k].to_vec();
    keep.sort_unstable();
    let support: Vec<GaussianParams> = keep.iter().map(|&i| state.support[i].clone()).collect();
    let weights: Vec<f64> = keep.iter().map(|&i| state.weights[i]).collect();
    let residual = residual_of(&support, &weights, sketch, fs);
    Ok(SupportState {
        support,
        weights,
        residual,
    })
}

/// Step 4: nonnegative least squares on the unnormalized atoms.
pub fn project_weights(
    state: &SupportState,
    sketch: &[Complex64],
    fs: &FrequencySet,
) -> Result<SupportState> {
    let atoms: Vec<Vec<Complex64>> = state.support.iter().map(|p| atom(p, fs)).collect();
    let cols: Vec<&[Complex64]> = atoms.iter().map(Vec::as_slice).collect();
    let weights = nnls(&cols, sketch)?;
    let residual = residual_of(&state.support, &weights, sketch, fs);
    Ok(SupportState {
        support: state.support.clone(),
        weights,
        residual,
    })
}

/// Squared residual `||z - sum_k alpha_k A(theta_k)||^2` and its gradient.
///
/// `x` stacks `[mean_k; variances_k]` for every atom followed by the `k` weights.
pub fn fit_objective(
    x: &[f64],
    sketch: &[Complex64],
    fs: &FrequencySet,
    k: usize,
    grad: &mut [f64],
) -> f64 {
    let d = fs.dim();
    let m = fs.len();
    let params = &x[..2 * d * k];
    let alphas = &x[2 * d * k..];
    let mut atoms = vec![Complex64::new(0.0, 0.0); k * m];
    let mut r = sketch.to_vec();
    for (kk, chunk) in atoms.chunks_exact_mut(m).enumerate() {
        let theta = &params[2 * d * kk..2 * d * (kk + 1)];
        atom_into(&theta[..d], &theta[d..], fs, chunk);
        for (ri, a) in r.iter_mut().zip(chunk.iter()) {
            *ri -= a * alphas[kk];
        }
    }
    let value = norm(&r).powi(2);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let (g_params, g_alpha) = grad.split_at_mut(2 * d * k);
    for kk in 0..k {
        let alpha = alphas[kk];
        let chunk = &atoms[kk * m..(kk + 1) * m];
        let (g_mean, g_var) = g_params[2 * d * kk..2 * d * (kk + 1)].split_at_mut(d);
        let mut ga = 0.0;
        for ((w, a), ri) in fs.rows().zip(chunk).zip(&r) {
            let c = a.conj() * ri;
            ga += c.re;
            for l in 0..d {
                g_mean[l] += w[l] * c.im;
                g_var[l] += w[l] * w[l] * c.re;
            }
        }
        g_alpha[kk] = -2.0 * ga;
        g_mean.iter_mut().for_each(|g| *g *= 2.0 * alpha);
        g_var.iter_mut().for_each(|g| *g *= alpha);
    }
    value
}

/// Step 5: joint descent over all atoms and weights from the current state.
pub fn global_adjust(
    state: &SupportState,
    sketch: &[Complex64],
    fs: &FrequencySet,
    cfg: &RecoveryConfig,
) -> Result<SupportState> {
    let d = fs.dim();
    let k = state.support.len();
    if k == 0 {
        return Ok(state.clone());
    }
    let mut init = Vec::with_capacity((2 * d + 1) * k);
    let mut lower = Vec::with_capacity((2 * d + 1) * k);
    for p in &state.support {
        check_dim(d, p.dim())?;
        init.extend_from_slice(p.mean());
        init.extend_from_slice(p.variances());
        lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, d));
        lower.extend(std::iter::repeat_n(VARIANCE_FLOOR, d));
    }
    init.extend(state.weights.iter().map(|w| w.max(0.0)));
    lower.extend(std::iter::repeat_n(0.0, k));
    let result = box_minimize(
        |x, g| fit_objective(x, sketch, fs, k, g),
        &init,
        &lower,
        &cfg.box_config(f64::INFINITY),
    )?;
    let x = result.x;
    let support = x[..2 * d * k]
        .chunks_exact(2 * d)
        .map(GaussianParams::from_vector)
        .collect::<Result<Vec<_>>>()?;
    let weights = x[2 * d * k..].to_vec();
    let residual = residual_of(&support, &weights, sketch, fs);
    Ok(SupportState {
        support,
        weights,
        residual,
    })
}

/// Splits every Gaussian in two along its dimension of largest variance.
pub fn split_support(support: &[GaussianParams]) -> Result<Vec<GaussianParams>> {
    if support.is_empty() {
        return Err(Error::invalid("cannot split an empty support"));
    }
    let mut out = Vec::with_capacity(2 * support.len());
    for p in support {
        let var = p.variances();
        let l = (0..var.len()).fold(0, |b, i| if var[i] > var[b] { i } else { b });
        let step = var[l].sqrt();
        for sign in [-1.0, 1.0] {
            let mut mean = p.mean().to_vec();
            mean[l] += sign * step;
            out.push(GaussianParams::new(mean, var.to_vec())?);
        }
    }
    Ok(out)
}

/// Normalizes α to sum 1. If every weight collapsed to zero the sketch carries no
/// usable signal for this support, and the support is returned with uniform weights.
fn finish(state: SupportState) -> Result<Mixture> {
    let mut weights = state.weights;
    if weights.iter().sum::<f64>() <= 0.0 {
        let n = weights.len() as f64;
        weights.iter_mut().for_each(|w| *w = 1.0 / n);
    }
    Mixture::new(state.support, weights)?.normalized()
}

fn project_and_adjust(
    state: SupportState,
    sketch: &[Complex64],
    fs: &FrequencySet,
    cfg: &RecoveryConfig,
    thresholded: bool,
    before: f64,
    trace: &mut RecoveryTrace,
) -> Result<SupportState> {
    let state = project_weights(&state, sketch, fs)?;
    let after_projection = state.residual_norm();
    let state = global_adjust(&state, sketch, fs, cfg)?;
    trace.iterations.push(IterationTrace {
        thresholded,
        before_projection: before,
        after_projection,
        after_adjustment: state.residual_norm(),
    });
    Ok(state)
}

fn check_inputs(sketch: &Sketch, fs: &FrequencySet, cfg: &RecoveryConfig) -> Result<()> {
    cfg.validate()?;
    sketch.check_frequencies(fs)
}

/// CL-OMP or CL-OMPR, returning the mixture and a per-iteration trace.
pub fn cl_omp_traced(
    sketch: &Sketch,
    fs: &FrequencySet,
    cfg: &RecoveryConfig,
) -> Result<(Mixture, RecoveryTrace)> {
    check_inputs(sketch, fs, cfg)?;
    if cfg.algorithm == Algorithm::Split {
        return Err(Error::invalid("cl_omp runs clomp or clompr, not split"));
    }
    let z = sketch.values();
    let mut rng: StreamRng = SeedStream::new(cfg.seed).rng();
    let mut trace = RecoveryTrace::default();
    let mut state = SupportState::empty(z);
    for _ in 0..cfg.iterations() {
        let before = state.residual_norm();
        let theta = find_atom(&state.residual, fs, fs.sigma2_bar(), cfg, &mut rng)?;
        trace.atom_searches += 1;
        state.support.push(theta);
        state.weights.push(0.0);
        let mut thresholded = false;
        if state.support.len() > cfg.k {
            state = hard_threshold(&state, z, fs, cfg.k)?;
            trace.thresholdings += 1;
            thresholded = true;
        }
        state = project_and_adjust(state, z, fs, cfg, thresholded, before, &mut trace)?;
    }
    Ok((finish(state)?, trace))
}

pub fn cl_omp(sketch: &Sketch, fs: &FrequencySet, cfg: &RecoveryConfig) -> Result<Mixture> {
    cl_omp_traced(sketch, fs, cfg).map(|(m, _)| m)
}

/// Hierarchical splitting recovery with a trace.
pub fn cl_split_traced(
    sketch: &Sketch,
    fs: &FrequencySet,
    cfg: &RecoveryConfig,
) -> Result<(Mixture, RecoveryTrace)> {
    check_inputs(sketch, fs, cfg)?;
    if cfg.algorithm != Algorithm::Split {
        return Err(Error::invalid("cl_split requires the split algorithm"));
    }
    let z = sketch.values();
    let mut rng: StreamRng = SeedStream::new(cfg.seed).rng();
    let mut trace = RecoveryTrace::default();
    let mut state = SupportState::empty(z);
    let theta = find_atom(z, fs, fs.sigma2_bar(), cfg, &mut rng)?;
    trace.atom_searches += 1;
    state.support.push(theta);
    state.weights.push(0.0);
    let rounds = cfg.iterations();
    if rounds == 0 {
        let before = state.residual_norm();
        state = project_and_adjust(state, z, fs, cfg, false, before, &mut trace)?;
    }
    for _ in 0..rounds {
        let before = state.residual_norm();
        let support = split_support(&state.support)?;
        let weights = vec![0.0; support.len()];
        state = SupportState {
            support,
            weights,
            residual: z.to_vec(),
        };
        let mut thresholded = false;
        if state.support.len() > cfg.k {
            state = hard_threshold(&state, z, fs, cfg.k)?;
            trace.thresholdings += 1;
            thresholded = true;
        }
        state = project_and_adjust(state, z, fs, cfg, thresholded, before, &mut trace)?;
    }
    Ok((finish(state)?, trace))
}

pub fn cl_split(sketch: &Sketch, fs: &FrequencySet, cfg: &RecoveryConfig) -> Result<Mixture> {
    cl_split_traced(sketch, fs, cfg).map(|(m, _)| m)
}

/// Runs whichever algorithm `cfg` names.
pub fn recover(sketch: &Sketch, fs: &FrequencySet, cfg: &RecoveryConfig) -> Result<Mixture> {
    match cfg.algorithm {
        Algorithm::Split => cl_split(sketch, fs, cfg),
        _ => cl_omp(sketch, fs, cfg),
    }
}

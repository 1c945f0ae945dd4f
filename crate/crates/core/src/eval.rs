//! Evaluation protocol: synthetic problems, divergence estimators and an EM baseline.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::freqdesign::{draw_raw, FrequencyKind};
use crate::model::{
    charfn_unchecked, mixture_logpdf_unchecked, mixture_sample, Dataset, GaussianParams, Mixture,
    VARIANCE_FLOOR,
};
use crate::rng::SeedStream;

/// Log-densities are clamped to this floor in the KL estimator.
pub const LOG_DENSITY_FLOOR: f64 = -745.0;
/// Default Monte-Carlo sample count for the KL estimator.
pub const DEFAULT_KL_SAMPLES: usize = 500_000;
const MC_CHUNK: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Uniform,
    FlatDirichlet,
}

/// Ground truth for one synthetic experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub truth: Mixture,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
}

impl SyntheticProblem {
    /// Standard deviation of the component means, `K^(1/d)`.
    pub fn mean_scale(d: usize, k: usize) -> f64 {
        (k as f64).powf(1.0 / d as f64)
    }
}

/// Variances uniform on `[0.25, 1.75]`, means `N(0, K^(2/d) I)`, uniform weights.
pub fn gen_synthetic(d: usize, k: usize, seed: u64) -> Result<SyntheticProblem> {
    gen_synthetic_with(d, k, seed, WeightMode::Uniform)
}

pub fn gen_synthetic_with(
    d: usize,
    k: usize,
    seed: u64,
    weights: WeightMode,
) -> Result<SyntheticProblem> {
    if d == 0 || k == 0 {
        return Err(Error::invalid(
            "dimension and component count must be at least 1",
        ));
    }
    let mut rng = SeedStream::new(seed).rng();
    let scale = SyntheticProblem::mean_scale(d, k);
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let mean: Vec<f64> = (0..d)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let var: Vec<f64> = (0..d).map(|_| rng.random_range(0.25..=1.75)).collect();
        components.push(GaussianParams::new(mean, var)?);
    }
    let w = match weights {
        WeightMode::Uniform => vec![1.0 / k as f64; k],
        WeightMode::FlatDirichlet => {
            let raw: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|g| g / total).collect()
        }
    };
    let truth = Mixture::new(components, w)?.normalized()?;
    Ok(SyntheticProblem { truth, d, k, seed })
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Number of log-densities raised to [`LOG_DENSITY_FLOOR`].
    pub clamped: u64,
}

#[derive(Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
    clamped: u64,
}

impl Moments {
    fn add(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(mut self, other: Moments) -> Moments {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.clamped += other.clamped;
        self
    }

    fn mean_and_stderr(&self) -> (f64, f64) {
        let mean = self.sum / self.n;
        let var =
            ((self.sum_sq / self.n - mean * mean) * self.n / (self.n - 1.0).max(1.0)).max(0.0);
        (mean, (var / self.n).sqrt())
    }
}

/// Symmetric KL divergence `KL(p||q) + KL(q||p)` estimated from draws of `truth`.
pub fn kl_sym_mc(truth: &Mixture, est: &Mixture, n_mc: usize, seed: u64) -> Result<KlEstimate> {
    if !truth.is_normalized() || !est.is_normalized() {
        return Err(Error::invalid("mixture weights must sum to 1"));
    }
    check_dim(truth.dim(), est.dim())?;
    if n_mc < 2 {
        return Err(Error::invalid("need at least two Monte-Carlo samples"));
    }
    let stream = SeedStream::new(seed);
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let parts: Vec<Result<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let ys = mixture_sample(truth, count, &mut stream.child(c as u64).rng())?;
            let mut acc = Moments::default();
            for y in ys.rows() {
                let mut lp = mixture_logpdf_unchecked(truth, y);
                let mut lq = mixture_logpdf_unchecked(est, y);
                for l in [&mut lp, &mut lq] {
                    if !(*l >= LOG_DENSITY_FLOOR) {
                        *l = LOG_DENSITY_FLOOR;
                        acc.clamped += 1;
                    }
                }
                let ratio = lp - lq;
                acc.add(ratio - ratio * (-ratio).exp());
            }
            Ok(acc)
        })
        .collect();
    let mut total = Moments::default();
    for p in parts {
        total = total.merge(p?);
    }
    let (value, stderr) = total.mean_and_stderr();
    Ok(KlEstimate {
        value,
        stderr,
        clamped: total.clamped,
    })
}

/// Characteristic-function distance `sqrt(mean_j |psi_p(w_j) - psi_q(w_j)|^2)`.
///
/// Frequencies are drawn from the isotropic law of `kind` at scale `sigma2`.
pub fn mmd_mc(
    p: &Mixture,
    q: &Mixture,
    sigma2: f64,
    kind: FrequencyKind,
    m_mc: usize,
    seed: u64,
) -> Result<Estimate> {
    check_dim(p.dim(), q.dim())?;
    if m_mc < 2 {
        return Err(Error::invalid("need at least two Monte-Carlo frequencies"));
    }
    let d = p.dim();
    let mut rng = SeedStream::new(seed).rng();
    let draw = draw_raw(&[vec![sigma2; d]], &[1.0], m_mc, kind, &mut rng)?;
    let charfn = |mix: &Mixture, w: &[f64]| {
        mix.components()
            .iter()
            .zip(mix.weights())
            .map(|(c, &a)| a * charfn_unchecked(c.mean(), c.variances(), w))
            .sum::<crate::Complex64>()
    };
    let mut acc = Moments::default();
    for w in draw.freqs.chunks_exact(d) {
        acc.add((charfn(p, w) - charfn(q, w)).norm_sqr());
    }
    let (mean, se) = acc.mean_and_stderr();
    let value = mean.sqrt();
    let stderr = if value > 0.0 { se / (2.0 * value) } else { 0.0 };
    Ok(Estimate { value, stderr })
}

/// Outcome of the EM baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub mixture: Mixture,
    /// Average log-likelihood per item of the returned mixture.
    pub log_likelihood: f64,
    /// Average log-likelihood after each iteration of the winning run.
    pub trace: Vec<f64>,
    /// Number of components re-seeded after becoming empty, over all runs.
    pub reseeds: usize,
}

pub const EM_DEFAULT_INITS: usize = 10;
pub const EM_DEFAULT_ITERS: usize = 100;

struct EmStats {
    ll: f64,
    resp_sum: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Diagonal-covariance EM with random data-point initializations.
pub fn em_baseline(
    data: &Dataset,
    k: usize,
    n_init: usize,
    max_iter: usize,
    seed: u64,
) -> Result<EmFit> {
    let n = data.len();
    if k == 0 || n < k {
        return Err(Error::invalid(format!(
            "EM needs 1 <= K <= n, got K={k}, n={n}"
        )));
    }
    if n_init == 0 {
        return Err(Error::invalid("EM needs at least one initialization"));
    }
    let d = data.dim();
    let mean: Vec<f64> = (0..d)
        .map(|l| data.rows().map(|x| x[l]).sum::<f64>() / n as f64)
        .collect();
    let global_var: Vec<f64> = (0..d)
        .map(|l| {
            (data.rows().map(|x| (x[l] - mean[l]).powi(2)).sum::<f64>() / n as f64)
                .max(VARIANCE_FLOOR)
        })
        .collect();
    let stream = SeedStream::new(seed);
    let mut best: Option<EmFit> = None;
    let mut reseeds = 0;
    for run in 0..n_init {
        let mut rng = stream.child(run as u64).rng();
        let mut means: Vec<Vec<f64>> = sample(&mut rng, n, k)
            .into_iter()
            .map(|i| data.row(i).to_vec())
            .collect();
        let mut vars = vec![global_var.clone(); k];
        let mut weights = vec![1.0 / k as f64; k];
        let mut trace = Vec::new();
        let mut ll = f64::NEG_INFINITY;
        for _ in 0..max_iter {
            let stats = em_statistics(data, &means, &vars, &weights);
            let prev = ll;
            ll = stats.ll / n as f64;
            trace.push(ll);
            for c in 0..k {
                let r = stats.resp_sum[c];
                if r <= 1e-12 * n as f64 {
                    means[c] = data.row(rng.random_range(0..n)).to_vec();
                    vars[c] = global_var.clone();
                    weights[c] = 1.0 / k as f64;
                    reseeds += 1;
                    continue;
                }
                weights[c] = r / n as f64;
                for l in 0..d {
                    let mu = stats.first[c * d + l] / r;
                    means[c][l] = mu;
                    vars[c][l] = (stats.second[c * d + l] / r - mu * mu).max(VARIANCE_FLOOR);
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            if (ll - prev).abs() <= 1e-10 * ll.abs().max(1.0) {
                break;
            }
        }
        let components = means
            .iter()
            .zip(&vars)
            .map(|(m, v)| GaussianParams::new(m.clone(), v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mixture = Mixture::new(components, weights)?.normalized()?;
        let final_ll = em_statistics(data, &means, &vars, mixture.weights()).ll / n as f64;
        trace.push(final_ll);
        if best.as_ref().is_none_or(|b| final_ll > b.log_likelihood) {
            best = Some(EmFit {
                mixture,
                log_likelihood: final_ll,
                trace,
                reseeds: 0,
            });
        }
    }
    let mut fit = best.expect("at least one run");
    fit.reseeds = reseeds;
    Ok(fit)
}

fn em_statistics(
    data: &Dataset,
    means: &[Vec<f64>],
    vars: &[Vec<f64>],
    weights: &[f64],
) -> EmStats {
    let k = means.len();
    let d = data.dim();
    let consts: Vec<f64> = vars
        .iter()
        .zip(weights)
        .map(|(v, &w)| {
            let logdet: f64 = v
                .iter()
                .map(|s| (2.0 * std::f64::consts::PI * s).ln())
                .sum();
            if w > 0.0 {
                w.ln() - 0.5 * logdet
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let inv: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| v.iter().map(|s| 1.0 / s).collect())
        .collect();
    let parts: Vec<EmStats> = data
        .as_slice()
        .par_chunks(MC_CHUNK * d)
        .map(|chunk| {
            let mut st = EmStats {
                ll: 0.0,
                resp_sum: vec![0.0; k],
                first: vec![0.0; k * d],
                second: vec![0.0; k * d],
            };
            let mut logs = vec![0.0; k];
            for x in chunk.chunks_exact(d) {
                let mut max = f64::NEG_INFINITY;
                for c in 0..k {
                    let q: f64 = (0..d)
                        .map(|l| (x[l] - means[c][l]).powi(2) * inv[c][l])
                        .sum();
                    logs[c] = consts[c] - 0.5 * q;
                    max = max.max(logs[c]);
                }
                let total: f64 = logs.iter().map(|v| (v - max).exp()).sum();
                st.ll += max + total.ln();
                for (c, &lc) in logs.iter().enumerate() {
                    let r = (lc - max).exp() / total;
                    st.resp_sum[c] += r;
                    let block = c * d..(c + 1) * d;
                    for ((f, s), &xl) in st.first[block.clone()]
                        .iter_mut()
                        .zip(&mut st.second[block])
                        .zip(x)
                    {
                        *f += r * xl;
                        *s += r * xl * xl;
                    }
                }
            }
            st
        })
        .collect();
    let mut out = EmStats {
        ll: 0.0,
        resp_sum: vec![0.0; k],
        first: vec![0.0; k * d],
        second: vec![0.0; k * d],
    };
    for p in parts {
        out.ll += p.ll;
        for (a, b) in out.resp_sum.iter_mut().zip(&p.resp_sum) {
            *a += b;
        }
        for (a, b) in out.first.iter_mut().zip(&p.first) {
            *a += b;
        }
        for (a, b) in out.second.iter_mut().zip(&p.second) {
            *a += b;
        }
    }
    out
}

/// Pairs estimated with true components greedily by ascending parameter distance.
///
/// Returns `(true_index, estimated_index, distance)` triples.
pub fn match_components(truth: &Mixture, est: &Mixture) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, t) in truth.components().iter().enumerate() {
        for (j, e) in est.components().iter().enumerate() {
            let dist = t
                .to_vector()
                .iter()
                .zip(e.to_vector())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            pairs.push((dist, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = vec![false; truth.len()];
    let mut used_e = vec![false; est.len()];
    let mut out = Vec::new();
    for (dist, i, j) in pairs {
        if !used_t[i] && !used_e[j] {
            used_t[i] = true;
            used_e[j] = true;
            out.push((i, j, dist));
        }
    }
    out
}

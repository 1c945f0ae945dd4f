//! Frequency sampling patterns.
//!
//! Three laws are available: Gaussian frequencies `w ~ N(0, S^-1)` and two
//! radial laws `w = R S^(-1/2) rho` where `rho` is uniform on the unit sphere and
//! `R` is either half-normal or drawn from the adapted density
//! `p(R) ~ sqrt(R^2 + R^4/4) exp(-R^2/2)`.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::model::{draw_label, Dataset};
use crate::quadrature::simpson;
use crate::rng::SeedStream;
use crate::sketch::add_phasors;
use crate::Complex64;

/// Number of grid points in the default adapted-radius table.
pub const RADIUS_GRID_POINTS: usize = 10_000;
/// Upper end of the default adapted-radius table.
pub const RADIUS_MAX: f64 = 10.0;
/// Lower clamp applied to estimated mean variances.
pub const SIGMA2_BAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrequencyKind {
    Gaussian,
    FoldedGaussianRadius,
    AdaptedRadius,
}

impl FrequencyKind {
    pub fn code(self) -> u8 {
        match self {
            FrequencyKind::Gaussian => 0,
            FrequencyKind::FoldedGaussianRadius => 1,
            FrequencyKind::AdaptedRadius => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(FrequencyKind::Gaussian),
            1 => Ok(FrequencyKind::FoldedGaussianRadius),
            2 => Ok(FrequencyKind::AdaptedRadius),
            other => Err(Error::format(
                "frequency file",
                format!("unknown kind byte {other}"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrequencyKind::Gaussian => "gauss",
            FrequencyKind::FoldedGaussianRadius => "fgr",
            FrequencyKind::AdaptedRadius => "ar",
        }
    }
}

impl fmt::Display for FrequencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrequencyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss" | "gaussian" => Ok(FrequencyKind::Gaussian),
            "fgr" => Ok(FrequencyKind::FoldedGaussianRadius),
            "ar" => Ok(FrequencyKind::AdaptedRadius),
            other => Err(Error::invalid(format!("unknown frequency kind '{other}'"))),
        }
    }
}

/// FNV-1a 64-bit hash of the little-endian bytes of `values`.
pub fn fingerprint(values: &[f64]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    values
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// `m` frequencies in `R^d` plus the metadata of their design.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySet {
    dim: usize,
    freqs: Vec<f64>,
    kind: FrequencyKind,
    sigma2_bar: f64,
    seed: u64,
    fingerprint: u64,
}

impl FrequencySet {
    pub fn new(
        dim: usize,
        freqs: Vec<f64>,
        kind: FrequencyKind,
        sigma2_bar: f64,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || freqs.is_empty() || !freqs.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "frequency matrix must be a nonempty m x d block",
            ));
        }
        if freqs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frequencies"));
        }
        if !(sigma2_bar > 0.0 && sigma2_bar.is_finite()) {
            return Err(Error::invalid("sigma2_bar must be positive and finite"));
        }
        let fingerprint = fingerprint(&freqs);
        Ok(FrequencySet {
            dim,
            freqs,
            kind,
            sigma2_bar,
            seed,
            fingerprint,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.freqs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.freqs[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.freqs.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.freqs
    }

    pub fn kind(&self) -> FrequencyKind {
        self.kind
    }

    pub fn sigma2_bar(&self) -> f64 {
        self.sigma2_bar
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Euclidean norm of every frequency.
    pub fn norms(&self) -> Vec<f64> {
        self.rows()
            .map(|w| w.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }
}

/// Tabulated CDF of the adapted radius density.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusTable {
    grid: Vec<f64>,
    cdf: Vec<f64>,
    mass: f64,
}

fn adapted_density(r: f64) -> f64 {
    let r2 = r * r;
    (r2 + 0.25 * r2 * r2).sqrt() * (-0.5 * r2).exp()
}

impl RadiusTable {
    /// Tabulates the CDF on `grid_points` equispaced radii covering `[0, r_max]`.
    pub fn build(grid_points: usize, r_max: f64) -> Result<Self> {
        if grid_points < 100 {
            return Err(Error::invalid(
                "radius table needs at least 100 grid points",
            ));
        }
        if !(r_max >= 8.0 && r_max.is_finite()) {
            return Err(Error::invalid("radius table upper end must be at least 8"));
        }
        let cells = grid_points - 1;
        let h = r_max / cells as f64;
        let grid: Vec<f64> = (0..grid_points).map(|i| i as f64 * h).collect();
        let mut cum = Vec::with_capacity(grid_points);
        cum.push(0.0);
        let mut acc = 0.0;
        for w in grid.windows(2) {
            acc += simpson(adapted_density, w[0], w[1], 2);
            cum.push(acc);
        }
        let tail = simpson(adapted_density, r_max, r_max + 20.0, 2000);
        let mass = acc + tail;
        let mut cdf: Vec<f64> = cum.iter().map(|c| c / mass).collect();
        cdf[cells] = 1.0;
        Ok(RadiusTable { grid, cdf, mass })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Integral of the unnormalized density over `[0, inf)`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Inverse CDF with linear interpolation inside each cell.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (r0, r1) = (self.grid[i - 1], self.grid[i]);
        if c1 <= c0 {
            return r0;
        }
        r0 + (u - c0) / (c1 - c0) * (r1 - r0)
    }

    /// Linear interpolation of the tabulated CDF.
    pub fn cdf_at(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let last = *self.grid.last().unwrap_or(&0.0);
        if r >= last {
            return 1.0;
        }
        let h = self.grid[1];
        let i = ((r / h) as usize).min(self.grid.len() - 2);
        let t = (r - self.grid[i]) / h;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }
}

/// Table with the default resolution, built on first use.
pub fn default_radius_table() -> &'static RadiusTable {
    static TABLE: OnceLock<RadiusTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        RadiusTable::build(RADIUS_GRID_POINTS, RADIUS_MAX)
            .expect("default table parameters are valid")
    })
}

pub fn sample_radius<R: Rng + ?Sized>(
    kind: FrequencyKind,
    table: &RadiusTable,
    rng: &mut R,
) -> Result<f64> {
    match kind {
        FrequencyKind::Gaussian => Err(Error::invalid(
            "gaussian frequencies are not drawn through a radius",
        )),
        FrequencyKind::FoldedGaussianRadius => Ok(rng.sample::<f64, _>(StandardNormal).abs()),
        FrequencyKind::AdaptedRadius => Ok(table.quantile(rng.random::<f64>())),
    }
}

/// Frequencies together with the radius drawn for each (0 for the Gaussian kind).
pub(crate) struct Draw {
    pub freqs: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub radii: Vec<f64>,
}

pub(crate) fn draw_raw<R: Rng + ?Sized>(
    variances: &[Vec<f64>],
    weights: &[f64],
    m: usize,
    kind: FrequencyKind,
    rng: &mut R,
) -> Result<Draw> {
    if variances.is_empty() || m == 0 {
        return Err(Error::invalid(
            "need at least one component and one frequency",
        ));
    }
    check_dim(variances.len(), weights.len())?;
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid(
            "frequency weights must be nonnegative with positive sum",
        ));
    }
    let d = variances[0].len();
    let mut inv_std = Vec::with_capacity(variances.len());
    for v in variances {
        check_dim(d, v.len())?;
        if v.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(
                "frequency design variances must be positive",
            ));
        }
        inv_std.push(v.iter().map(|s| 1.0 / s.sqrt()).collect::<Vec<_>>());
    }
    let table = default_radius_table();
    let mut freqs = Vec::with_capacity(m * d);
    let mut radii = Vec::with_capacity(m);
    let mut dir = vec![0.0; d];
    for _ in 0..m {
        let k = draw_label(weights, rng);
        let scale = &inv_std[k];
        match kind {
            FrequencyKind::Gaussian => {
                for s in scale {
                    freqs.push(rng.sample::<f64, _>(StandardNormal) * s);
                }
                radii.push(0.0);
            }
            _ => {
                let norm = loop {
                    for x in dir.iter_mut() {
                        *x = rng.sample(StandardNormal);
                    }
                    let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n > 0.0 {
                        break n;
                    }
                };
                let r = sample_radius(kind, table, rng)?;
                freqs.extend(dir.iter().zip(scale).map(|(x, s)| r * x / norm * s));
                radii.push(r);
            }
        }
    }
    Ok(Draw { freqs, radii })
}

/// Draws `m` frequencies for a mixture with the given variances and weights.
///
/// The recorded design variance is the weighted average per-dimension variance.
pub fn draw_freq(
    variances: &[Vec<f64>],
    weights: &[f64],
    m: usize,
    kind: FrequencyKind,
    seed: u64,
) -> Result<FrequencySet> {
    let mut rng = SeedStream::new(seed).rng();
    let draw = draw_raw(variances, weights, m, kind, &mut rng)?;
    let d = variances[0].len();
    let total: f64 = weights.iter().sum();
    let sigma2_bar = variances
        .iter()
        .zip(weights)
        .map(|(v, w)| w * v.iter().sum::<f64>() / d as f64)
        .sum::<f64>()
        / total;
    FrequencySet::new(d, draw.freqs, kind, sigma2_bar, seed)
}

/// Tuning of the mean-variance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimParams {
    /// Number of leading data items used for the small sketch.
    pub n0: usize,
    /// Frequencies drawn per round.
    pub m0: usize,
    /// Number of blocks the sorted sketch is split into.
    pub blocks: usize,
    /// Refinement rounds.
    pub rounds: usize,
}

impl EstimParams {
    pub fn defaults_for(n: usize) -> Self {
        EstimParams {
            n0: n.min(5000),
            m0: 500,
            blocks: 30,
            rounds: 5,
        }
    }
}

/// Result of the mean-variance estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaEstimate {
    pub sigma2_bar: f64,
    /// Sum of squared regression residuals in the final round.
    pub residual: f64,
}

/// Estimates the average per-dimension component variance from raw data.
pub fn estim_mean_sigma(data: &Dataset, params: EstimParams, seed: u64) -> Result<SigmaEstimate> {
    let EstimParams {
        n0,
        m0,
        blocks,
        rounds,
    } = params;
    if data.is_empty() {
        return Err(Error::invalid("cannot estimate variance of empty data"));
    }
    if n0 == 0 || n0 > data.len() {
        return Err(Error::invalid(format!("n0 must lie in 1..={}", data.len())));
    }
    if blocks == 0 || m0 < blocks || rounds == 0 {
        return Err(Error::invalid(
            "need m0 >= blocks >= 1 and at least one round",
        ));
    }
    let d = data.dim();
    let head = &data.as_slice()[..n0 * d];
    let mut rng = SeedStream::new(seed).rng();
    let mut sigma2 = 1.0;
    let mut residual = 0.0;
    let s = m0 / blocks;
    for _ in 0..rounds {
        let draw = draw_raw(
            &[vec![sigma2; d]],
            &[1.0],
            m0,
            FrequencyKind::AdaptedRadius,
            &mut rng,
        )?;
        let mut order: Vec<(f64, usize)> = draw
            .freqs
            .chunks_exact(d)
            .enumerate()
            .map(|(j, w)| (w.iter().map(|x| x * x).sum::<f64>().sqrt(), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let sorted: Vec<f64> = order
            .iter()
            .flat_map(|&(_, j)| draw.freqs[j * d..(j + 1) * d].iter().copied())
            .collect();
        let mut sums = vec![Complex64::new(0.0, 0.0); m0];
        add_phasors(&sorted, d, head, &mut sums);
        let moduli: Vec<f64> = sums.iter().map(|z| z.norm() / n0 as f64).collect();

        let mut radii = Vec::with_capacity(blocks);
        let mut peaks = Vec::with_capacity(blocks);
        for q in 0..blocks {
            let block = &moduli[q * s..(q + 1) * s];
            let (best, &peak) =
                block
                    .iter()
                    .enumerate()
                    .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| {
                        if *v > *acc.1 {
                            (i, v)
                        } else {
                            acc
                        }
                    });
            radii.push(order[q * s + best].0);
            peaks.push(peak.clamp(f64::MIN_POSITIVE, 1.0));
        }
        let fit = fit_envelope(&radii, &peaks);
        sigma2 = fit.0.max(SIGMA2_BAR_FLOOR);
        residual = fit.1;
    }
    Ok(SigmaEstimate {
        sigma2_bar: sigma2,
        residual,
    })
}

fn envelope_loss(radii: &[f64], peaks: &[f64], s: f64) -> f64 {
    radii
        .iter()
        .zip(peaks)
        .map(|(r, e)| (e - (-0.5 * r * r * s).exp()).powi(2))
        .sum()
}

/// Returns the first and second derivative of the envelope loss in `s`.
fn envelope_derivs(radii: &[f64], peaks: &[f64], s: f64) -> (f64, f64) {
    let mut g = 0.0;
    let mut h = 0.0;
    for (r, e) in radii.iter().zip(peaks) {
        let a = 0.5 * r * r;
        let ex = (-a * s).exp();
        g += 2.0 * (e - ex) * a * ex;
        h += 2.0 * a * a * ex * ex - 2.0 * (e - ex) * a * a * ex;
    }
    (g, h)
}

/// Least-squares fit of `peaks ~ exp(-r^2 s / 2)` over `s` in `[1e-8, 1e8]`.
///
/// Returns the minimizer and the residual sum of squares.
pub fn fit_envelope(radii: &[f64], peaks: &[f64]) -> (f64, f64) {
    const LO: f64 = -8.0;
    const HI: f64 = 8.0;
    const STEPS: usize = 640;
    let grid: Vec<f64> = (0..=STEPS)
        .map(|i| 10f64.powf(LO + (HI - LO) * i as f64 / STEPS as f64))
        .collect();
    let losses: Vec<f64> = grid
        .iter()
        .map(|&s| envelope_loss(radii, peaks, s))
        .collect();
    let best = (0..grid.len()).fold(0, |b, i| if losses[i] < losses[b] { i } else { b });
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(STEPS)];
    let mut s = grid[best];
    let (glo, ghi) = (
        envelope_derivs(radii, peaks, lo).0,
        envelope_derivs(radii, peaks, hi).0,
    );
    if glo < 0.0 && ghi > 0.0 {
        // Safeguarded Newton on the derivative inside a sign-changing bracket.
        for _ in 0..200 {
            let (g, h) = envelope_derivs(radii, peaks, s);
            if g == 0.0 {
                break;
            }
            if g < 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let newton = s - g / h;
            let next = if h > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - s).abs() <= 1e-15 * s.abs() || hi - lo <= 1e-15 * hi {
                s = next;
                break;
            }
            s = next;
        }
    }
    let loss = envelope_loss(radii, peaks, s);
    if loss <= losses[best] {
        (s, loss)
    } else {
        (grid[best], losses[best])
    }
}

/// Estimates the mean variance, then draws `m` isotropic frequencies of `kind`.
pub fn design_frequencies(
    data: &Dataset,
    m: usize,
    kind: FrequencyKind,
    params: EstimParams,
    seed: u64,
) -> Result<FrequencySet> {
    if m == 0 {
        return Err(Error::invalid("need at least one frequency"));
    }
    let stream = SeedStream::new(seed);
    let est = estim_mean_sigma(data, params, stream.child(0).seed())?;
    let mut rng = stream.child(1).rng();
    let d = data.dim();
    let draw = draw_raw(&[vec![est.sigma2_bar; d]], &[1.0], m, kind, &mut rng)?;
    FrequencySet::new(d, draw.freqs, kind, est.sigma2_bar, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mixture_sample, GaussianParams, Mixture};
    use crate::quadrature::adaptive_simpson;

    // Integral of sqrt(r^2 + r^4/4) exp(-r^2/2) over [0, inf), 40-digit quadrature.
    const ADAPTED_MASS: f64 = 1.210_684_614_644_027;
    // Radius whose adapted CDF equals 1/2, quadrature plus root finding.
    const ADAPTED_MEDIAN: f64 = 1.279_026_097_517_754_7;

    fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
        let n = sorted.len() as f64;
        sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn table_endpoints_and_mass() {
        let t = default_radius_table();
        assert_eq!(t.cdf()[0], 0.0);
        assert_eq!(*t.cdf().last().unwrap(), 1.0);
        assert_eq!(t.grid().len(), RADIUS_GRID_POINTS);
        assert!(((t.mass() - ADAPTED_MASS) / ADAPTED_MASS).abs() < 1e-6);
        assert!(t.cdf().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn table_median_matches_oracle() {
        let t = default_radius_table();
        let (mut lo, mut hi) = (0.0, RADIUS_MAX);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if t.cdf_at(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - ADAPTED_MEDIAN).abs() < 1e-4);
        assert!((t.quantile(0.5) - ADAPTED_MEDIAN).abs() < 1e-4);
        assert!((t.quantile(0.5) - lo).abs() < 1e-9);
    }

    #[test]
    fn table_rejects_small_grids() {
        assert!(RadiusTable::build(10, 10.0).is_err());
        assert!(RadiusTable::build(1000, 5.0).is_err());
    }

    #[test]
    fn folded_radius_mean() {
        let mut rng = SeedStream::new(11).rng();
        let t = default_radius_table();
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| sample_radius(FrequencyKind::FoldedGaussianRadius, t, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - expected).abs() < 0.01 * expected);
    }

    #[test]
    fn adapted_radius_ks_against_quadrature() {
        let mut rng = SeedStream::new(5).rng();
        let t = default_radius_table();
        let mut draws: Vec<f64> = (0..100_000)
            .map(|_| sample_radius(FrequencyKind::AdaptedRadius, t, &mut rng).unwrap())
            .collect();
        draws.sort_by(f64::total_cmp);
        // Oracle CDF accumulated between consecutive sorted draws.
        let mut cdf_vals = Vec::with_capacity(draws.len());
        let mut prev = 0.0;
        let mut acc = 0.0;
        for &x in &draws {
            acc += adaptive_simpson(adapted_density, prev, x, 1e-13, 30);
            prev = x;
            cdf_vals.push(acc / ADAPTED_MASS);
        }
        let n = draws.len() as f64;
        let ks = cdf_vals
            .iter()
            .enumerate()
            .map(|(i, &f)| (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.005, "ks = {ks}");
    }

    #[test]
    fn gaussian_kind_has_no_radius() {
        let mut rng = SeedStream::new(0).rng();
        assert!(sample_radius(FrequencyKind::Gaussian, default_radius_table(), &mut rng).is_err());
    }

    #[test]
    fn gaussian_frequency_second_moment() {
        let fs = draw_freq(&[vec![1.0; 5]], &[1.0], 100_000, FrequencyKind::Gaussian, 3).unwrap();
        let mean_sq = fs.as_slice().iter().map(|x| x * x).sum::<f64>() / fs.len() as f64;
        assert!((mean_sq - 5.0).abs() < 0.02 * 5.0);
    }

    #[test]
    fn folded_frequency_norm_is_half_normal() {
        let fs = draw_freq(
            &[vec![1.0; 3]],
            &[1.0],
            100_000,
            FrequencyKind::FoldedGaussianRadius,
            4,
        )
        .unwrap();
        let mean = fs.norms().iter().sum::<f64>() / fs.len() as f64;
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - expected).abs() < 0.01 * expected);
    }

    #[test]
    fn zero_weight_component_is_never_used() {
        for kind in [FrequencyKind::Gaussian, FrequencyKind::AdaptedRadius] {
            let one = draw_freq(&[vec![2.0, 0.5]], &[1.0], 500, kind, 9).unwrap();
            let two = draw_freq(
                &[vec![2.0, 0.5], vec![1e-6, 1e-6]],
                &[1.0, 0.0],
                500,
                kind,
                9,
            )
            .unwrap();
            assert_eq!(one.as_slice(), two.as_slice());
        }
    }

    #[test]
    fn radial_structure_is_exact() {
        let var = vec![0.5, 2.0, 3.0, 0.1];
        let mut rng = SeedStream::new(21).rng();
        for kind in [
            FrequencyKind::AdaptedRadius,
            FrequencyKind::FoldedGaussianRadius,
        ] {
            let draw = draw_raw(std::slice::from_ref(&var), &[1.0], 2000, kind, &mut rng).unwrap();
            for (w, r) in draw.freqs.chunks_exact(4).zip(&draw.radii) {
                let back = w
                    .iter()
                    .zip(&var)
                    .map(|(x, s)| x * x * s)
                    .sum::<f64>()
                    .sqrt();
                assert!((back - r).abs() <= 1e-12 * r.max(1.0));
            }
        }
    }

    #[test]
    fn directions_are_centered() {
        let d = 10;
        let fs = draw_freq(
            &[vec![1.0; d]],
            &[1.0],
            100_000,
            FrequencyKind::AdaptedRadius,
            8,
        )
        .unwrap();
        let mut mean = vec![0.0; d];
        for w in fs.rows() {
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (m, x) in mean.iter_mut().zip(w) {
                *m += x / n;
            }
        }
        let norm = mean
            .iter()
            .map(|m| (m / fs.len() as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(norm < 0.02);
    }

    #[test]
    fn draw_freq_rejects_nonpositive_variances() {
        assert!(draw_freq(&[vec![1.0, 0.0]], &[1.0], 5, FrequencyKind::Gaussian, 0).is_err());
        assert!(draw_freq(
            &[vec![1.0, -1.0]],
            &[1.0],
            5,
            FrequencyKind::AdaptedRadius,
            0
        )
        .is_err());
    }

    fn golden_fit(radii: &[f64], peaks: &[f64]) -> f64 {
        // Dense log scan then golden-section refinement in the linear domain.
        let n = 20_000;
        let scan: Vec<f64> = (0..=n)
            .map(|i| 10f64.powf(-8.0 + 16.0 * i as f64 / n as f64))
            .collect();
        let best = (0..=n)
            .min_by(|&a, &b| {
                envelope_loss(radii, peaks, scan[a])
                    .total_cmp(&envelope_loss(radii, peaks, scan[b]))
            })
            .unwrap();
        let (mut a, mut b) = (scan[best.saturating_sub(1)], scan[(best + 1).min(n)]);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if envelope_loss(radii, peaks, c) < envelope_loss(radii, peaks, d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn envelope_fit_matches_golden_section() {
        let mut rng = SeedStream::new(99).rng();
        for _ in 0..20 {
            let truth = 10f64.powf(rng.random_range(-1.0..1.0));
            let radii: Vec<f64> = (0..30)
                .map(|_| rng.random_range(0.1..4.0) / truth.sqrt())
                .collect();
            let peaks: Vec<f64> = radii
                .iter()
                .map(|r| {
                    ((-0.5 * r * r * truth).exp() + rng.random_range(-0.05..0.05))
                        .clamp(1e-300, 1.0)
                })
                .collect();
            let (s, _) = fit_envelope(&radii, &peaks);
            let oracle = golden_fit(&radii, &peaks);
            assert!(
                (s - oracle).abs() <= 1e-6 * oracle.max(1.0),
                "{s} vs {oracle}"
            );
        }
    }

    #[test]
    fn repeated_point_hits_the_floor() {
        let data = Dataset::new(3, [0.7, -1.0, 2.0].repeat(200)).unwrap();
        let est = estim_mean_sigma(&data, EstimParams::defaults_for(200), 1).unwrap();
        assert_eq!(est.sigma2_bar, SIGMA2_BAR_FLOOR);
    }

    #[test]
    fn estimate_on_isotropic_data() {
        let mix = Mixture::single(GaussianParams::isotropic(vec![0.0; 5], 2.0).unwrap());
        for seed in 0..3 {
            let data = mixture_sample(&mix, 5000, &mut SeedStream::new(seed).rng()).unwrap();
            let est = estim_mean_sigma(&data, EstimParams::defaults_for(5000), seed + 100).unwrap();
            assert!((1.0..=4.0).contains(&est.sigma2_bar), "{}", est.sigma2_bar);
            assert!(est.residual.is_finite());
        }
    }

    #[test]
    fn estimator_validates_arguments() {
        let data = Dataset::new(1, vec![0.0, 1.0]).unwrap();
        let bad = EstimParams {
            n0: 5,
            m0: 10,
            blocks: 2,
            rounds: 1,
        };
        assert!(estim_mean_sigma(&data, bad, 0).is_err());
        let bad = EstimParams {
            n0: 2,
            m0: 1,
            blocks: 2,
            rounds: 1,
        };
        assert!(estim_mean_sigma(&data, bad, 0).is_err());
    }

    #[test]
    fn design_is_deterministic_and_handles_one_frequency() {
        let mix = Mixture::single(GaussianParams::isotropic(vec![0.0; 2], 1.0).unwrap());
        let data = mixture_sample(&mix, 2000, &mut SeedStream::new(0).rng()).unwrap();
        let p = EstimParams::defaults_for(data.len());
        let a = design_frequencies(&data, 50, FrequencyKind::AdaptedRadius, p, 7).unwrap();
        let b = design_frequencies(&data, 50, FrequencyKind::AdaptedRadius, p, 7).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a, b);
        let one = design_frequencies(&data, 1, FrequencyKind::Gaussian, p, 7).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.dim(), 2);
        assert!(design_frequencies(&data, 0, FrequencyKind::Gaussian, p, 7).is_err());
    }

    #[test]
    fn designed_norms_match_direct_draw() {
        let mix = Mixture::single(GaussianParams::isotropic(vec![0.0; 3], 1.0).unwrap());
        let data = mixture_sample(&mix, 5000, &mut SeedStream::new(2).rng()).unwrap();
        let p = EstimParams::defaults_for(data.len());
        let fs = design_frequencies(&data, 20_000, FrequencyKind::AdaptedRadius, p, 3).unwrap();
        // Norms of designed frequencies are radii / sqrt(sigma2_bar); compare to the table law.
        let scale = fs.sigma2_bar().sqrt();
        let mut r: Vec<f64> = fs.norms().iter().map(|n| n * scale).collect();
        r.sort_by(f64::total_cmp);
        let t = default_radius_table();
        assert!(ks_statistic(&r, |x| t.cdf_at(x)) < 0.02);
        assert!((fs.sigma2_bar() - 1.0).abs() < 0.5);
    }

    #[test]
    fn fingerprint_tracks_bytes() {
        assert_eq!(fingerprint(&[]), 0xcbf2_9ce4_8422_2325);
        assert_ne!(fingerprint(&[0.0]), fingerprint(&[-0.0]));
        let fs = FrequencySet::new(1, vec![1.0, 2.0], FrequencyKind::Gaussian, 1.0, 0).unwrap();
        assert_eq!(fs.fingerprint(), fingerprint(&[1.0, 2.0]));
    }

    #[test]
    fn kind_codes_round_trip() {
        for k in [
            FrequencyKind::Gaussian,
            FrequencyKind::FoldedGaussianRadius,
            FrequencyKind::AdaptedRadius,
        ] {
            assert_eq!(FrequencyKind::from_code(k.code()).unwrap(), k);
            assert_eq!(k.name().parse::<FrequencyKind>().unwrap(), k);
        }
        assert!(FrequencyKind::from_code(7).is_err());
    }
}

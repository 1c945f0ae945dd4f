//! Sketches: normalized averages of `exp(-i w_j . x)` over a dataset.
//!
//! Partial sums are combined with a binary reduction tree whose shape depends
//! only on chunk indices, so results are bit-identical across thread counts and
//! between in-memory and streaming use.

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::freqdesign::FrequencySet;
use crate::model::{charfn_unchecked, Dataset, GaussianParams, Mixture};
use crate::Complex64;

/// Rows per chunk when none is given.
pub const DEFAULT_CHUNK_SIZE: usize = 65_536;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Adds `sum_i exp(-i w_j . x_i)` to `sums[j]` for every row `x_i` of `rows`.
pub(crate) fn add_phasors(freqs: &[f64], dim: usize, rows: &[f64], sums: &mut [Complex64]) {
    for x in rows.chunks_exact(dim) {
        for (w, s) in freqs.chunks_exact(dim).zip(sums.iter_mut()) {
            let phase: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            let (sin, cos) = phase.sin_cos();
            s.re += cos;
            s.im -= sin;
        }
    }
}

/// Finalized sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    values: Vec<Complex64>,
    count: u64,
    fingerprint: u64,
    analytic: bool,
}

impl Sketch {
    pub fn new(
        values: Vec<Complex64>,
        count: u64,
        fingerprint: u64,
        analytic: bool,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sketch must have at least one entry"));
        }
        if values
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite("sketch values"));
        }
        if analytic && count != 0 {
            return Err(Error::invalid("analytic sketches carry no item count"));
        }
        if !analytic && count == 0 && values.iter().any(|z| *z != ZERO) {
            return Err(Error::invalid("an empty sketch must be zero"));
        }
        Ok(Sketch {
            values,
            count,
            fingerprint,
            analytic,
        })
    }

    /// Sketch of no data.
    pub fn empty(m: usize, fingerprint: u64) -> Self {
        Sketch {
            values: vec![ZERO; m],
            count: 0,
            fingerprint,
            analytic: false,
        }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn is_analytic(&self) -> bool {
        self.analytic
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(Complex64::norm_sqr)
            .sum::<f64>()
            .sqrt()
    }

    /// Fails unless the sketch was computed with `fs`.
    pub fn check_frequencies(&self, fs: &FrequencySet) -> Result<()> {
        if self.fingerprint != fs.fingerprint() {
            return Err(Error::FingerprintMismatch);
        }
        check_dim(fs.len(), self.len())
    }
}

/// Unnormalized running sums for one frequency set.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchAccumulator {
    sums: Vec<Complex64>,
    count: u64,
    fingerprint: u64,
}

impl SketchAccumulator {
    pub fn new(fs: &FrequencySet) -> Self {
        SketchAccumulator {
            sums: vec![ZERO; fs.len()],
            count: 0,
            fingerprint: fs.fingerprint(),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn partial_sums(&self) -> &[Complex64] {
        &self.sums
    }

    /// Absorbs row-major samples of dimension `fs.dim()`.
    pub fn absorb(&mut self, fs: &FrequencySet, rows: &[f64]) -> Result<()> {
        if fs.fingerprint() != self.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        if !rows.len().is_multiple_of(fs.dim()) {
            return Err(Error::DimensionMismatch {
                expected: fs.dim(),
                found: rows.len() % fs.dim(),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("samples"));
        }
        add_phasors(fs.as_slice(), fs.dim(), rows, &mut self.sums);
        self.count += (rows.len() / fs.dim()) as u64;
        Ok(())
    }

    /// Entrywise sum; `self` is the left operand.
    pub fn combine(mut self, other: &SketchAccumulator) -> Result<Self> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        check_dim(self.sums.len(), other.sums.len())?;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.count += other.count;
        Ok(self)
    }

    /// `values = sums / (n sqrt(m))`.
    pub fn finalize(&self) -> Sketch {
        if self.count == 0 {
            return Sketch::empty(self.sums.len(), self.fingerprint);
        }
        let scale = self.count as f64 * (self.sums.len() as f64).sqrt();
        Sketch {
            values: self.sums.iter().map(|s| s / scale).collect(),
            count: self.count,
            fingerprint: self.fingerprint,
            analytic: false,
        }
    }
}

/// Binary-counter reduction: chunk partials are merged pairwise level by level,
/// and leftovers are folded right to left at the end.
#[derive(Debug, Default)]
pub struct TreeReducer {
    stack: Vec<(u32, SketchAccumulator)>,
}

impl TreeReducer {
    pub fn new() -> Self {
        TreeReducer::default()
    }

    /// Adds the partial of the next chunk in index order.
    pub fn push(&mut self, mut acc: SketchAccumulator) -> Result<()> {
        let mut level = 0;
        while let Some((top, _)) = self.stack.last() {
            if *top != level {
                break;
            }
            let (_, left) = self.stack.pop().expect("stack is nonempty");
            acc = left.combine(&acc)?;
            level += 1;
        }
        self.stack.push((level, acc));
        Ok(())
    }

    pub fn finish(mut self) -> Result<Option<SketchAccumulator>> {
        let Some((_, mut acc)) = self.stack.pop() else {
            return Ok(None);
        };
        while let Some((_, left)) = self.stack.pop() {
            acc = left.combine(&acc)?;
        }
        Ok(Some(acc))
    }
}

/// Sums the chunks of `rows` in parallel and pushes them into `reducer` in order.
pub fn reduce_chunks(
    fs: &FrequencySet,
    rows: &[f64],
    chunk_size: usize,
    reducer: &mut TreeReducer,
) -> Result<()> {
    if chunk_size == 0 {
        return Err(Error::invalid("chunk size must be at least 1"));
    }
    let partials: Vec<Result<SketchAccumulator>> = rows
        .par_chunks(chunk_size * fs.dim())
        .map(|chunk| {
            let mut acc = SketchAccumulator::new(fs);
            acc.absorb(fs, chunk)?;
            Ok(acc)
        })
        .collect();
    for p in partials {
        reducer.push(p?)?;
    }
    Ok(())
}

/// Empirical sketch of `data`.
pub fn sketch_empirical(data: &Dataset, fs: &FrequencySet, chunk_size: usize) -> Result<Sketch> {
    check_dim(fs.dim(), data.dim())?;
    let mut reducer = TreeReducer::new();
    reduce_chunks(fs, data.as_slice(), chunk_size, &mut reducer)?;
    let acc = reducer
        .finish()?
        .unwrap_or_else(|| SketchAccumulator::new(fs));
    Ok(acc.finalize())
}

/// Count-weighted average of two sketches over the same frequencies.
pub fn sketch_merge(a: &Sketch, b: &Sketch) -> Result<Sketch> {
    if a.fingerprint != b.fingerprint {
        return Err(Error::FingerprintMismatch);
    }
    check_dim(a.len(), b.len())?;
    if a.analytic || b.analytic {
        return Err(Error::invalid("analytic sketches cannot be merged"));
    }
    if a.count == 0 {
        return Ok(b.clone());
    }
    if b.count == 0 {
        return Ok(a.clone());
    }
    let total = a.count + b.count;
    let (wa, wb) = (a.count as f64 / total as f64, b.count as f64 / total as f64);
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * wa + y * wb)
        .collect();
    Ok(Sketch {
        values,
        count: total,
        fingerprint: a.fingerprint,
        analytic: false,
    })
}

/// Closed-form sketch of a finalized mixture.
pub fn sketch_gmm(mix: &Mixture, fs: &FrequencySet) -> Result<Sketch> {
    if !mix.is_normalized() {
        return Err(Error::invalid("mixture weights must sum to 1"));
    }
    check_dim(fs.dim(), mix.dim())?;
    let scale = 1.0 / (fs.len() as f64).sqrt();
    let values = fs
        .rows()
        .map(|w| {
            mix.components()
                .iter()
                .zip(mix.weights())
                .map(|(c, &a)| a * charfn_unchecked(c.mean(), c.variances(), w))
                .sum::<Complex64>()
                * scale
        })
        .collect();
    Ok(Sketch {
        values,
        count: 0,
        fingerprint: fs.fingerprint(),
        analytic: true,
    })
}

/// Atom `psi_theta(w_j) / sqrt(m)` and its Euclidean norm.
pub fn sketch_atom(p: &GaussianParams, fs: &FrequencySet) -> Result<(Vec<Complex64>, f64)> {
    check_dim(fs.dim(), p.dim())?;
    let scale = 1.0 / (fs.len() as f64).sqrt();
    let values: Vec<Complex64> = fs
        .rows()
        .map(|w| charfn_unchecked(p.mean(), p.variances(), w) * scale)
        .collect();
    let norm = values.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
    Ok((values, norm))
}

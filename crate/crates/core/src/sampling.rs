//! Seeded streams, categorical and Poisson variates, and the multi-source draw schemes.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{Distribution, SourceFamily};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("Poisson mean must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("index {index} is outside the domain of size {n}")]
    IndexOutOfDomain { index: usize, n: usize },
}

/// A ChaCha8 stream identified by `(seed, stream)`.
///
/// The same pair always yields the same variates; different stream ids give
/// independent streams, so trial `t` of an experiment uses stream `t`.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngHandle {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `0..n`; `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Vose alias table for O(1) categorical draws.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    pub fn new(p: &Distribution) -> Self {
        Self::from_weights(p.probs())
    }

    /// Builds from non-negative weights summing to one.
    pub(crate) fn from_weights(w: &[f64]) -> Self {
        let n = w.len();
        assert!(n > 0 && n <= u32::MAX as usize, "alias table size out of range");
        let mut scaled: Vec<f64> = w.iter().map(|&v| v * n as f64).collect();
        let mut prob = vec![0.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small = Vec::new();
        let mut large = Vec::new();
        for (i, &v) in scaled.iter().enumerate() {
            if v < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        let mut last_large = large.last().copied();
        while let (Some(&l), Some(&g)) = (small.last(), large.last()) {
            small.pop();
            prob[l] = scaled[l];
            alias[l] = g as u32;
            scaled[g] = (scaled[g] + scaled[l]) - 1.0;
            if scaled[g] < 1.0 {
                large.pop();
                small.push(g);
                last_large = Some(g);
            }
        }
        for g in large {
            prob[g] = 1.0;
        }
        // Leftover small columns hold rounding residue; only columns with real mass keep themselves.
        let fallback = last_large.unwrap_or_else(|| argmax(w));
        for l in small {
            if w[l] > 0.0 {
                prob[l] = 1.0;
            } else {
                prob[l] = 0.0;
                alias[l] = fallback as u32;
            }
        }
        Self { prob, alias }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngHandle) -> usize {
        let i = rng.below(self.prob.len());
        if rng.uniform() < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}

fn argmax(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in w.iter().enumerate() {
        if v > w[best] {
            best = i;
        }
    }
    best
}

/// One draw from `p` by inversion; O(n). Use an [`AliasTable`] for repeated draws.
pub fn draw_categorical(p: &Distribution, rng: &mut RngHandle) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (x, &v) in p.probs().iter().enumerate() {
        if v > 0.0 {
            acc += v;
            last_positive = x;
            if u < acc {
                return x;
            }
        }
    }
    last_positive
}

/// Poisson variate: sequential inversion below λ = 30, PTRS transformed rejection above.
pub fn draw_poisson(lambda: f64, rng: &mut RngHandle) -> Result<u64, SamplingError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(SamplingError::InvalidLambda(lambda));
    }
    Ok(poisson(lambda, rng))
}

const PTRS_CUTOFF: f64 = 30.0;

#[inline]
pub(crate) fn poisson(lambda: f64, rng: &mut RngHandle) -> u64 {
    if lambda == 0.0 {
        0
    } else if lambda < PTRS_CUTOFF {
        poisson_inversion(lambda, rng)
    } else {
        poisson_ptrs(lambda, rng)
    }
}

fn poisson_inversion(lambda: f64, rng: &mut RngHandle) -> u64 {
    let u = rng.uniform();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u >= cdf {
        k += 1;
        p *= lambda / k as f64;
        if p == 0.0 {
            break;
        }
        cdf += p;
    }
    k
}

/// Hörmann's PTRS.
fn poisson_ptrs(lambda: f64, rng: &mut RngHandle) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let invalpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.uniform() - 0.5;
        let v = rng.uniform();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + invalpha.ln() - (a / (us * us) + b).ln() <= -lambda + k * loglam - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

/// `ln Γ(x)` for `x > 0` via a shifted Stirling series.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const A: [f64; 10] = [
        8.333333333333333e-02,
        -2.777777777777778e-03,
        7.936507936507937e-04,
        -5.952380952380952e-04,
        8.417508417508418e-04,
        -1.917526917526918e-03,
        6.41025641025641e-03,
        -2.955065359477124e-02,
        1.796443723688307e-01,
        -1.39243221690590e+00,
    ];
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut x0 = x;
    let mut shift = 0u32;
    if x <= 7.0 {
        shift = (7.0 - x) as u32;
        x0 = x + shift as f64;
    }
    let x2 = 1.0 / (x0 * x0);
    let mut gl0 = A[9];
    for &c in A[..9].iter().rev() {
        gl0 = gl0 * x2 + c;
    }
    let mut gl = gl0 / x0 + 0.5 * (2.0 * std::f64::consts::PI).ln() + (x0 - 0.5) * x0.ln() - x0;
    for _ in 0..shift {
        x0 -= 1.0;
        gl -= x0.ln();
    }
    gl
}

/// Occurrence counts over a domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountVector {
    counts: Vec<u64>,
    total: u64,
}

impl CountVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            counts: vec![0; n],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    #[inline]
    pub fn add(&mut self, x: usize) {
        self.counts[x] += 1;
        self.total += 1;
    }

    pub fn add_many(&mut self, x: usize, k: u64) {
        self.counts[x] += k;
        self.total += k;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Zeroes every entry and resizes to `n`.
    pub fn reset(&mut self, n: usize) {
        self.counts.clear();
        self.counts.resize(n, 0);
        self.total = 0;
    }
}

/// Alias tables for every source of a family. Runs of identical sources share one table.
#[derive(Debug, Clone)]
pub struct FamilySampler {
    n: usize,
    tables: Vec<AliasTable>,
    table_of: Vec<usize>,
}

impl FamilySampler {
    pub fn new(family: &SourceFamily) -> Self {
        let mut tables = Vec::new();
        let mut table_of = Vec::with_capacity(family.s());
        let mut prev: Option<&Distribution> = None;
        for p in family.sources() {
            if prev != Some(p) {
                tables.push(AliasTable::new(p));
                prev = Some(p);
            }
            table_of.push(tables.len() - 1);
        }
        Self {
            n: family.n(),
            tables,
            table_of,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.table_of.len()
    }

    #[inline]
    pub fn draw(&self, source: usize, rng: &mut RngHandle) -> usize {
        self.tables[self.table_of[source]].sample(rng)
    }
}

/// One independent draw from each source, in source order.
pub fn draw_one_per_source(sampler: &FamilySampler, rng: &mut RngHandle) -> Vec<usize> {
    let mut out = Vec::with_capacity(sampler.s());
    draw_one_per_source_into(sampler, rng, &mut out);
    out
}

/// Buffer-reusing form of [`draw_one_per_source`].
pub fn draw_one_per_source_into(sampler: &FamilySampler, rng: &mut RngHandle, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..sampler.s()).map(|j| sampler.draw(j, rng)));
}

/// Per-draw bookkeeping of a poissonized draw.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SourceLog {
    /// Total samples over all sources.
    pub total: u64,
    /// Largest number of samples any one source provided.
    pub max_per_source: u64,
}

/// `Poi(1)` samples from each source, aggregated into counts `T_x`.
pub fn draw_poissonized_counts(sampler: &FamilySampler, rng: &mut RngHandle) -> CountVector {
    let mut counts = CountVector::zeros(sampler.n());
    draw_poissonized_counts_into(sampler, rng, &mut counts, |x, _| x);
    counts
}

/// Poissonized draw with each sample passed through `map` before counting
/// (used to lift samples onto a flattened domain). `counts` must already have
/// the target length; it is added to, not cleared.
pub fn draw_poissonized_counts_into<F>(
    sampler: &FamilySampler,
    rng: &mut RngHandle,
    counts: &mut CountVector,
    mut map: F,
) -> SourceLog
where
    F: FnMut(usize, &mut RngHandle) -> usize,
{
    let mut log = SourceLog::default();
    for j in 0..sampler.s() {
        let k = poisson_inversion(1.0, rng);
        log.total += k;
        log.max_per_source = log.max_per_source.max(k);
        for _ in 0..k {
            let x = sampler.draw(j, rng);
            let y = map(x, rng);
            counts.add(y);
        }
    }
    log
}

/// `N ~ Poi(s_expected)` i.i.d. draws from `q`, as counts `Y_x`.
pub fn draw_iid_counts(q: &AliasTable, s_expected: f64, rng: &mut RngHandle) -> Result<CountVector, SamplingError> {
    let mut counts = CountVector::zeros(q.len());
    draw_iid_counts_into(q, s_expected, rng, &mut counts, |x, _| x)?;
    Ok(counts)
}

/// Mapped, accumulating form of [`draw_iid_counts`]; returns the number of draws.
pub fn draw_iid_counts_into<F>(
    q: &AliasTable,
    s_expected: f64,
    rng: &mut RngHandle,
    counts: &mut CountVector,
    mut map: F,
) -> Result<u64, SamplingError>
where
    F: FnMut(usize, &mut RngHandle) -> usize,
{
    let total = draw_poisson(s_expected, rng)?;
    for _ in 0..total {
        let x = q.sample(rng);
        let y = map(x, rng);
        counts.add(y);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> Distribution {
        Distribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn same_stream_same_sequence() {
        let mut a = RngHandle::new(7, 3);
        let mut b = RngHandle::new(7, 3);
        let mut c = RngHandle::new(7, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn point_mass_is_deterministic() {
        let p = d(&[0.0, 1.0, 0.0]);
        let t = AliasTable::new(&p);
        let mut rng = RngHandle::new(1, 0);
        for _ in 0..1000 {
            assert_eq!(t.sample(&mut rng), 1);
            assert_eq!(draw_categorical(&p, &mut rng), 1);
        }
    }

    #[test]
    fn alias_never_returns_zero_mass() {
        let p = d(&[0.0, 0.3, 0.0, 0.7, 0.0]);
        let t = AliasTable::new(&p);
        let mut rng = RngHandle::new(2, 0);
        for _ in 0..20_000 {
            let x = t.sample(&mut rng);
            assert!(x == 1 || x == 3);
        }
    }

    #[test]
    fn uniform_four_frequencies() {
        let p = Distribution::uniform(4).unwrap();
        let t = AliasTable::new(&p);
        let mut rng = RngHandle::new(3, 0);
        let mut c = [0u64; 4];
        let draws = 1_000_000;
        for _ in 0..draws {
            c[t.sample(&mut rng)] += 1;
        }
        for v in c {
            assert!((v as f64 / draws as f64 - 0.25).abs() < 0.002);
        }
    }

    #[test]
    fn poisson_degenerate_and_invalid() {
        let mut rng = RngHandle::new(4, 0);
        assert_eq!(draw_poisson(0.0, &mut rng), Ok(0));
        assert!(draw_poisson(-1.0, &mut rng).is_err());
        assert!(draw_poisson(f64::INFINITY, &mut rng).is_err());
    }

    #[test]
    fn poisson_mean_and_zero_mass_at_one() {
        let mut rng = RngHandle::new(5, 0);
        let n = 1_000_000;
        let mut sum = 0u64;
        let mut zeros = 0u64;
        for _ in 0..n {
            let k = draw_poisson(1.0, &mut rng).unwrap();
            sum += k;
            zeros += (k == 0) as u64;
        }
        assert!((sum as f64 / n as f64 - 1.0).abs() < 0.005);
        assert!((zeros as f64 / n as f64 - (-1.0f64).exp()).abs() < 0.002);
    }

    #[test]
    fn poisson_dispersion_at_hundred() {
        let mut rng = RngHandle::new(6, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| draw_poisson(100.0, &mut rng).unwrap() as f64)
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var / mean - 1.0).abs() < 0.05);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut f = 1.0f64;
        for k in 1..30u32 {
            f *= k as f64;
            let lg = ln_gamma(k as f64 + 1.0);
            assert!((lg - f.ln()).abs() < 1e-10 * f.ln().max(1.0), "k={k}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn one_per_source_point_masses() {
        let f = SourceFamily::new(
            Distribution::uniform(5).unwrap(),
            vec![Distribution::point_mass(5, 3).unwrap(); 4],
        )
        .unwrap();
        let s = FamilySampler::new(&f);
        let mut rng = RngHandle::new(7, 0);
        assert_eq!(draw_one_per_source(&s, &mut rng), vec![3; 4]);
    }

    #[test]
    fn two_uniform_sources_collide_half_the_time() {
        let u = Distribution::uniform(2).unwrap();
        let f = SourceFamily::new(u.clone(), vec![u.clone(), u]).unwrap();
        let s = FamilySampler::new(&f);
        let mut rng = RngHandle::new(8, 0);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| {
                let v = draw_one_per_source(&s, &mut rng);
                v[0] == v[1]
            })
            .count();
        assert!((hits as f64 / trials as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn poissonized_means_follow_lambda() {
        let f = SourceFamily::new(d(&[0.5, 0.5]), vec![d(&[0.7, 0.3]), d(&[0.9, 0.1])]).unwrap();
        let s = FamilySampler::new(&f);
        let mut rng = RngHandle::new(9, 0);
        let trials = 100_000;
        let mut sums = [0u64; 2];
        for _ in 0..trials {
            let c = draw_poissonized_counts(&s, &mut rng);
            assert_eq!(c.total(), c.counts().iter().sum::<u64>());
            sums[0] += c.counts()[0];
            sums[1] += c.counts()[1];
        }
        assert!((sums[0] as f64 / trials as f64 - 1.6).abs() < 0.02);
        assert!((sums[1] as f64 / trials as f64 - 0.4).abs() < 0.01);
    }

    #[test]
    fn iid_counts_thin_evenly() {
        let q = AliasTable::new(&Distribution::uniform(10).unwrap());
        let mut rng = RngHandle::new(10, 0);
        let trials = 10_000;
        let mut sums = vec![0u64; 10];
        for _ in 0..trials {
            let c = draw_iid_counts(&q, 100.0, &mut rng).unwrap();
            for (a, b) in sums.iter_mut().zip(c.counts()) {
                *a += b;
            }
        }
        for v in sums {
            assert!((v as f64 / trials as f64 - 10.0).abs() < 0.3);
        }
        let tiny = draw_iid_counts(&q, 1e-9, &mut rng).unwrap();
        assert_eq!(tiny.total(), 0);
    }

    #[test]
    fn identical_sources_share_a_table() {
        let u = Distribution::uniform(3).unwrap();
        let p = d(&[0.5, 0.25, 0.25]);
        let f = SourceFamily::new(u.clone(), vec![u.clone(), u.clone(), p, u]).unwrap();
        let s = FamilySampler::new(&f);
        assert_eq!(s.tables.len(), 3);
        assert_eq!(s.table_of, vec![0, 0, 1, 2]);
    }
}

//! Witness events for the exchangeable sequence built from the multi-source
//! construction: `E₁` (two samples coincide inside `{2, …, s+1}`) and `E₂`
//! (at least `⌊s(1 − δ²/2)⌋` samples equal element 1).
//!
//! Domain indices are 0-based here, so element 1 is index 0 and the small set
//! is `1..=s`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Distribution;
use crate::families::{make_definetti_family_with, FamilyError};
use crate::numeric::{binomial_ci99, compensated_sum};
use crate::sampling::{draw_one_per_source_into, AliasTable, FamilySampler, RngHandle};

/// Proof-level ceiling on `P(E₁)` under the exchangeable law.
pub const E1_BOUND: f64 = 1.0 / 9.0;
/// Proof-level ceiling on `P(E₂)` under the exchangeable law.
pub const E2_BOUND: f64 = 1.0 / 100.0;
/// Floor on the witness probabilities under any product law.
pub const PRODUCT_FLOOR: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("distribution puts mass on index {index}, outside {{0, …, {s}}}")]
    UnsupportedSupport { index: usize, s: usize },
    #[error("invalid probe parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WitnessEvent {
    E1,
    E2,
}

/// Monte Carlo estimate of an event probability with its 99% binomial radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventEstimate {
    pub event: WitnessEvent,
    pub probability: f64,
    pub trials: u64,
    pub ci_radius: f64,
}

impl EventEstimate {
    pub fn from_hits(event: WitnessEvent, hits: u64, trials: u64) -> Self {
        let probability = hits as f64 / trials as f64;
        Self {
            event,
            probability,
            trials,
            ci_radius: binomial_ci99(probability, trials),
        }
    }
}

/// Evaluates both events for sequences of length `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRule {
    pub s: usize,
    /// `⌊s(1 − δ²/2)⌋`.
    pub e2_threshold: usize,
}

impl EventRule {
    pub fn new(s: usize, delta: f64) -> Self {
        let e2_threshold = (s as f64 * (1.0 - delta * delta / 2.0)).floor() as usize;
        Self { s, e2_threshold }
    }

    /// `(E₁, E₂)` on one sequence. Both depend only on the multiset of values.
    pub fn evaluate(&self, samples: &[usize]) -> (bool, bool) {
        let mut seen = vec![false; self.s + 1];
        let mut e1 = false;
        let mut ones = 0usize;
        for &x in samples {
            if x == 0 {
                ones += 1;
            } else if x <= self.s {
                if seen[x] {
                    e1 = true;
                }
                seen[x] = true;
            }
        }
        (e1, ones >= self.e2_threshold)
    }
}

/// Result of sampling the exchangeable sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeableProbe {
    pub n: usize,
    pub c: f64,
    pub delta: f64,
    pub s: usize,
    pub e2_threshold: usize,
    pub e1: EventEstimate,
    pub e2: EventEstimate,
    /// `p̂(E₁) − ci ≤ 1/9`.
    pub e1_within_bound: bool,
    /// `p̂(E₂) − ci ≤ 1/100`; a `false` here is reported, not raised.
    pub e2_within_bound: bool,
}

/// Draws `Y_i ~ q_i` for each source, permutes uniformly at random, and
/// records `E₁` and `E₂`. Trial `t` uses stream `t` of `master_seed`.
pub fn probe_exchangeable(n: usize, c: f64, trials: u64, master_seed: u64) -> Result<ExchangeableProbe, ProbeError> {
    probe_exchangeable_with(n, c, trials, master_seed, true)
}

/// [`probe_exchangeable`] with the permutation step optional.
pub fn probe_exchangeable_with(
    n: usize,
    c: f64,
    trials: u64,
    master_seed: u64,
    permute: bool,
) -> Result<ExchangeableProbe, ProbeError> {
    if trials == 0 {
        return Err(ProbeError::InvalidParameter("trials must be positive".into()));
    }
    let fam = make_definetti_family_with(n, c)?;
    let sampler = FamilySampler::new(&fam.family);
    let rule = EventRule::new(fam.s, fam.delta);
    let (h1, h2) = (0..trials)
        .into_par_iter()
        .map_init(Vec::new, |buf, t| {
            let mut rng = RngHandle::new(master_seed, t);
            draw_one_per_source_into(&sampler, &mut rng, buf);
            if permute {
                buf.shuffle(&mut rng);
            }
            let (a, b) = rule.evaluate(buf);
            (a as u64, b as u64)
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    let e1 = EventEstimate::from_hits(WitnessEvent::E1, h1, trials);
    let e2 = EventEstimate::from_hits(WitnessEvent::E2, h2, trials);
    Ok(ExchangeableProbe {
        n,
        c,
        delta: fam.delta,
        s: fam.s,
        e2_threshold: rule.e2_threshold,
        e1_within_bound: e1.probability - e1.ci_radius <= E1_BOUND,
        e2_within_bound: e2.probability - e2.ci_radius <= E2_BOUND,
        e1,
        e2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProductCase {
    /// `p({2, …, s+1}) ≥ δ²`: `E₁` should be likely.
    SmallSetHeavy,
    /// `p({2, …, s+1}) < δ²`: `E₂` should be likely.
    SmallSetLight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductProbe {
    pub case: ProductCase,
    /// Mass on the small set.
    pub small_mass: f64,
    pub estimate: EventEstimate,
    /// `estimate + ci ≥ 0.99`.
    pub meets_floor: bool,
}

/// Estimates the case-relevant event for `s` i.i.d. draws from `p`.
///
/// `p` must live on `{0, …, s}`. The case split compares the small-set mass
/// with `δ²` using a relative tolerance of `1e-9` so that masses built as
/// `1 − (1 − δ²)` land on the intended side.
pub fn probe_product_case(
    p: &Distribution,
    s: usize,
    delta: f64,
    trials: u64,
    master_seed: u64,
) -> Result<ProductProbe, ProbeError> {
    if trials == 0 || s == 0 {
        return Err(ProbeError::InvalidParameter("trials and s must be positive".into()));
    }
    if let Some(index) = p
        .probs()
        .iter()
        .enumerate()
        .skip(s + 1)
        .find(|(_, &v)| v > 0.0)
        .map(|(i, _)| i)
    {
        return Err(ProbeError::UnsupportedSupport { index, s });
    }
    let upper = p.len().min(s + 1);
    let small_mass = compensated_sum(p.probs()[1.min(upper)..upper].iter().copied());
    let case = if small_mass >= delta * delta * (1.0 - 1e-9) {
        ProductCase::SmallSetHeavy
    } else {
        ProductCase::SmallSetLight
    };
    let rule = EventRule::new(s, delta);
    let table = AliasTable::new(p);
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map_init(Vec::new, |buf: &mut Vec<usize>, t| {
            let mut rng = RngHandle::new(master_seed, t);
            buf.clear();
            buf.extend((0..s).map(|_| table.sample(&mut rng)));
            let (e1, e2) = rule.evaluate(buf);
            match case {
                ProductCase::SmallSetHeavy => e1 as u64,
                ProductCase::SmallSetLight => e2 as u64,
            }
        })
        .sum();
    let event = match case {
        ProductCase::SmallSetHeavy => WitnessEvent::E1,
        ProductCase::SmallSetLight => WitnessEvent::E2,
    };
    let estimate = EventEstimate::from_hits(event, hits, trials);
    Ok(ProductProbe {
        case,
        small_mass,
        meets_floor: estimate.probability + estimate.ci_radius >= PRODUCT_FLOOR,
        estimate,
    })
}

/// Lower bound on the ℓ₁ distance from the exchangeable law to any mixture of
/// products: `min(0.99, e1_prod_min, e2_prod_min) − e1_exch − e2_exch`, clamped at 0.
pub fn witness_gap(e1_exch: f64, e2_exch: f64, e1_prod_min: f64, e2_prod_min: f64) -> f64 {
    let floor = PRODUCT_FLOOR.min(e1_prod_min).min(e2_prod_min);
    (floor - e1_exch - e2_exch).max(0.0)
}

/// Exact probability that the randomly permuted sequence equals `pattern`:
/// the average over permutations `π` of `Π_i dists[π(i)](pattern[i])`.
pub fn exchangeable_pattern_probability(dists: &[Distribution], pattern: &[usize]) -> f64 {
    assert_eq!(dists.len(), pattern.len(), "one pattern entry per source");
    let s = dists.len();
    let mut perm: Vec<usize> = (0..s).collect();
    let mut total = 0.0;
    let mut count = 0u64;
    loop {
        total += (0..s).map(|i| dists[perm[i]].probs()[pattern[i]]).product::<f64>();
        count += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    total / count as f64
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len())
        .rev()
        .find(|&j| v[j] > v[i - 1])
        .expect("a larger element exists");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::make_definetti_family_with;

    #[test]
    fn event_examples() {
        let rule = EventRule::new(400, 1.0 / 16.0);
        assert_eq!(rule.e2_threshold, 399);
        assert_eq!(rule.evaluate(&[0; 400]), (false, true));
        let mut v = vec![0usize; 400];
        v[0] = 1;
        v[1] = 1;
        assert_eq!(rule.evaluate(&v), (true, false));
        v[1] = 401;
        assert_eq!(rule.evaluate(&v), (false, false));
    }

    #[test]
    fn events_ignore_order() {
        let rule = EventRule::new(6, 0.5);
        let mut rng = RngHandle::new(3, 0);
        for _ in 0..200 {
            let mut v: Vec<usize> = (0..6).map(|_| rng.below(8)).collect();
            let before = rule.evaluate(&v);
            v.shuffle(&mut rng);
            assert_eq!(rule.evaluate(&v), before);
        }
    }

    #[test]
    fn permutation_does_not_change_estimates() {
        let a = probe_exchangeable_with(400, 16.0, 2000, 5, true).unwrap();
        let b = probe_exchangeable_with(400, 16.0, 2000, 5, false).unwrap();
        assert_eq!(a.e1, b.e1);
        assert_eq!(a.e2, b.e2);
    }

    #[test]
    fn ci_radius_formula() {
        let e = EventEstimate::from_hits(WitnessEvent::E1, 25, 100);
        assert!((e.ci_radius - 2.576 * (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn product_extremes() {
        let s = 400;
        let delta = 1.0 / 16.0;
        let n = 10_000;
        let mut p = vec![0.0; n];
        for v in p.iter_mut().take(s + 1).skip(1) {
            *v = 1.0 / s as f64;
        }
        let uniform_small = Distribution::new(p).unwrap();
        let r = probe_product_case(&uniform_small, s, delta, 2000, 1).unwrap();
        assert_eq!(r.case, ProductCase::SmallSetHeavy);
        assert_eq!(r.estimate.probability, 1.0);

        let point = Distribution::point_mass(n, 0).unwrap();
        let r = probe_product_case(&point, s, delta, 500, 1).unwrap();
        assert_eq!(r.case, ProductCase::SmallSetLight);
        assert_eq!(r.estimate.probability, 1.0);
        assert!(r.meets_floor);
    }

    #[test]
    fn boundary_mass_is_the_small_set_heavy_case_and_falls_short_at_this_size() {
        let s = 400;
        let delta = 1.0 / 16.0;
        let mut p = vec![0.0; 10_000];
        p[0] = 1.0 - delta * delta;
        for v in p.iter_mut().take(s + 1).skip(1) {
            *v = delta * delta / s as f64;
        }
        let r = probe_product_case(&Distribution::new(p).unwrap(), s, delta, 4000, 2).unwrap();
        assert_eq!(r.case, ProductCase::SmallSetHeavy);
        assert!(r.estimate.probability < 0.05);
        assert!(!r.meets_floor);
    }

    #[test]
    fn unsupported_support() {
        let p = Distribution::uniform(10).unwrap();
        assert!(matches!(
            probe_product_case(&p, 3, 0.25, 10, 0),
            Err(ProbeError::UnsupportedSupport { index: 4, s: 3 })
        ));
    }

    #[test]
    fn witness_gap_examples() {
        assert!((witness_gap(1.0 / 9.0, 0.01, 1.0, 1.0) - (0.99 - 1.0 / 9.0 - 0.01)).abs() < 1e-15);
        assert_eq!(witness_gap(0.0, 0.0, 1.0, 1.0), 0.99);
        assert_eq!(witness_gap(1.0, 0.0, 1.0, 1.0), 0.0);
        assert!((witness_gap(0.1, 0.0, 0.95, 1.0) - 0.85).abs() < 1e-15);
    }

    #[test]
    fn permuted_law_is_exchangeable() {
        let fam = make_definetti_family_with(9, 1.0).unwrap();
        assert_eq!(fam.s, 3);
        let dists = fam.family.sources().to_vec();
        let n = fam.family.n();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let base = exchangeable_pattern_probability(&dists, &[a, b, c]);
                    for perm in [[b, a, c], [c, b, a], [a, c, b], [b, c, a], [c, a, b]] {
                        let other = exchangeable_pattern_probability(&dists, &perm);
                        assert!((base - other).abs() < 1e-15);
                    }
                }
            }
        }
        let total: f64 = (0..n)
            .flat_map(|a| (0..n).flat_map(move |b| (0..n).map(move |c| [a, b, c])))
            .map(|pat| exchangeable_pattern_probability(&dists, &pat))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_patterns_match_exact_law() {
        let fam = make_definetti_family_with(9, 1.0).unwrap();
        let dists = fam.family.sources().to_vec();
        let sampler = FamilySampler::new(&fam.family);
        let trials = 200_000u64;
        let mut counts = std::collections::HashMap::new();
        let mut buf = Vec::new();
        for t in 0..trials {
            let mut rng = RngHandle::new(17, t);
            draw_one_per_source_into(&sampler, &mut rng, &mut buf);
            buf.shuffle(&mut rng);
            *counts.entry(buf.clone()).or_insert(0u64) += 1;
        }
        for (pat, &k) in &counts {
            let p = exchangeable_pattern_probability(&dists, pat);
            let sd = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((k as f64 / trials as f64 - p).abs() <= 5.0 * sd + 1e-12, "{pat:?}");
        }
    }
}

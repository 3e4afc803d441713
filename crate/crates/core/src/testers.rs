//! The collision-based uniformity tester and the chi-square style identity and
//! closeness testers, each split into sizing, statistic and verdict.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{lp_norm, Distribution};
use crate::numeric::{ceil_snapped, choose2, pairwise_sum_by};
use crate::sampling::CountVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TesterError {
    #[error("invalid tester configuration: {0}")]
    InvalidConfig(String),
    #[error("sample size {s} is below the minimum of 2")]
    TooFewSamples { s: u64 },
    #[error("expected {expected} samples, got {got}")]
    SampleCountMismatch { expected: usize, got: usize },
    #[error("index {index} is outside the domain of size {n}")]
    IndexOutOfDomain { index: usize, n: usize },
    #[error("domain sizes differ: {left} vs {right}")]
    DomainMismatch { left: usize, right: usize },
}

/// Parameters shared by the three testers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TesterConfig {
    /// Domain size (after flattening, when the tester runs on a flattened domain).
    pub n: usize,
    pub epsilon: f64,
    pub c1: f64,
    /// Closeness flattening budget; defaults to `min(⌈n^{2/3}/ε^{4/3}⌉, n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl TesterConfig {
    pub fn new(n: usize, epsilon: f64, c1: f64) -> Result<Self, TesterError> {
        let cfg = Self {
            n,
            epsilon,
            c1,
            k: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_k(mut self, k: usize) -> Result<Self, TesterError> {
        self.k = Some(k);
        self.validate()?;
        Ok(self)
    }

    /// Same parameters on a domain of a different size.
    pub fn on_domain(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn validate(&self) -> Result<(), TesterError> {
        if self.n == 0 {
            return Err(TesterError::InvalidConfig("n must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 2.0) {
            return Err(TesterError::InvalidConfig(format!(
                "epsilon must lie in (0, 2], got {}",
                self.epsilon
            )));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(TesterError::InvalidConfig(format!(
                "c1 must be positive and finite, got {}",
                self.c1
            )));
        }
        if let Some(k) = self.k {
            if k == 0 || k > self.n {
                return Err(TesterError::InvalidConfig(format!(
                    "k must lie in [1, n = {}], got {k}",
                    self.n
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Samples consumed by one run of a tester.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub sources: u64,
    pub reference: u64,
    pub flattening: u64,
}

/// Outcome of a test. `decision` is `Reject` exactly when `statistic ≥ threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub statistic: f64,
    pub threshold: f64,
    pub sample_counts: SampleCounts,
}

impl Verdict {
    pub fn new(statistic: f64, threshold: f64, sample_counts: SampleCounts) -> Self {
        let decision = if statistic >= threshold {
            Decision::Reject
        } else {
            Decision::Accept
        };
        Self {
            decision,
            statistic,
            threshold,
            sample_counts,
        }
    }

    pub fn rejects(&self) -> bool {
        self.decision == Decision::Reject
    }
}

fn to_count(x: f64) -> Result<usize, TesterError> {
    if !x.is_finite() || x > (usize::MAX / 2) as f64 {
        return Err(TesterError::InvalidConfig(format!(
            "sample size {x} is not representable"
        )));
    }
    Ok(x as usize)
}

/// `s = ⌈c₁·√n/ε²⌉`.
pub fn uniformity_sample_size(cfg: &TesterConfig) -> Result<usize, TesterError> {
    cfg.validate()?;
    let s = to_count(ceil_snapped(
        cfg.c1 * (cfg.n as f64).sqrt() / (cfg.epsilon * cfg.epsilon),
    ))?;
    if s < 2 {
        return Err(TesterError::TooFewSamples { s: s as u64 });
    }
    Ok(s)
}

/// `τ = (1 + ε²/16)/n`.
pub fn uniformity_threshold(cfg: &TesterConfig) -> f64 {
    (1.0 + cfg.epsilon * cfg.epsilon / 16.0) / cfg.n as f64
}

/// Number of equal pairs among the samples.
pub fn collision_pairs(samples: &[usize]) -> u64 {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let mut pairs = 0u64;
    let mut run = 0u64;
    for w in 0..sorted.len() {
        if w > 0 && sorted[w] == sorted[w - 1] {
            run += 1;
        } else {
            pairs += run * (run + 1) / 2;
            run = 0;
        }
    }
    pairs + run * (run + 1) / 2
}

/// Fraction of colliding pairs, `Z = #{i<j : X_i = X_j} / C(s,2)`.
pub fn collision_statistic(samples: &[usize]) -> Result<f64, TesterError> {
    if samples.len() < 2 {
        return Err(TesterError::TooFewSamples {
            s: samples.len() as u64,
        });
    }
    Ok(collision_pairs(samples) as f64 / choose2(samples.len()))
}

/// Rejects iff the collision statistic reaches `(1 + ε²/16)/n`.
pub fn uniformity_test(cfg: &TesterConfig, samples: &[usize]) -> Result<Verdict, TesterError> {
    let s = uniformity_sample_size(cfg)?;
    if samples.len() != s {
        return Err(TesterError::SampleCountMismatch {
            expected: s,
            got: samples.len(),
        });
    }
    if let Some(&index) = samples.iter().find(|&&x| x >= cfg.n) {
        return Err(TesterError::IndexOutOfDomain { index, n: cfg.n });
    }
    let z = collision_statistic(samples)?;
    Ok(Verdict::new(
        z,
        uniformity_threshold(cfg),
        SampleCounts {
            sources: s as u64,
            ..Default::default()
        },
    ))
}

fn check_domain(a: usize, b: usize) -> Result<(), TesterError> {
    if a == b {
        Ok(())
    } else {
        Err(TesterError::DomainMismatch { left: a, right: b })
    }
}

/// `s = ⌈c₁·n·‖q‖₂/ε²⌉`, with `n = cfg.n = |q|`.
pub fn identity_sample_size(cfg: &TesterConfig, q: &Distribution) -> Result<usize, TesterError> {
    cfg.validate()?;
    check_domain(cfg.n, q.len())?;
    let norm = lp_norm(q.probs(), 2).expect("order 2 is supported");
    let s = to_count(ceil_snapped(cfg.c1 * cfg.n as f64 * norm / (cfg.epsilon * cfg.epsilon)))?;
    Ok(s.max(1))
}

/// `τ = 5s²ε²/(8n)`, shared by identity and closeness.
pub fn chi_square_threshold(cfg: &TesterConfig, s: usize) -> f64 {
    let s = s as f64;
    5.0 * s * s * cfg.epsilon * cfg.epsilon / (8.0 * cfg.n as f64)
}

/// `Z = Σ_x (T_x − s·q(x))² − T_x`.
pub fn identity_statistic(counts: &CountVector, q: &Distribution, s: usize) -> Result<f64, TesterError> {
    check_domain(counts.len(), q.len())?;
    let t = counts.counts();
    let qp = q.probs();
    let s = s as f64;
    Ok(pairwise_sum_by(t.len(), |x| {
        let tx = t[x] as f64;
        let d = tx - s * qp[x];
        d * d - tx
    }))
}

/// Rejects iff the identity statistic reaches `5s²ε²/(8n)`.
pub fn identity_test(
    cfg: &TesterConfig,
    q: &Distribution,
    counts: &CountVector,
    s: usize,
) -> Result<Verdict, TesterError> {
    cfg.validate()?;
    check_domain(cfg.n, q.len())?;
    let z = identity_statistic(counts, q, s)?;
    Ok(Verdict::new(
        z,
        chi_square_threshold(cfg, s),
        SampleCounts {
            sources: counts.total(),
            ..Default::default()
        },
    ))
}

/// Default flattening budget `min(⌈n^{2/3}/ε^{4/3}⌉, n)`.
pub fn closeness_budget(n: usize, epsilon: f64) -> usize {
    let k = ceil_snapped((n as f64).powf(2.0 / 3.0) / epsilon.powf(4.0 / 3.0));
    (k.max(1.0) as usize).min(n)
}

/// `(k, s)` with `k` from the config (or the default budget) and `s = ⌈c₁·n/(ε²√k)⌉`.
pub fn closeness_sizes(cfg: &TesterConfig) -> Result<(usize, usize), TesterError> {
    cfg.validate()?;
    let k = cfg.k.unwrap_or_else(|| closeness_budget(cfg.n, cfg.epsilon));
    let s = to_count(ceil_snapped(
        cfg.c1 * cfg.n as f64 / (cfg.epsilon * cfg.epsilon * (k as f64).sqrt()),
    ))?;
    Ok((k, s.max(1)))
}

/// Source count when the reference stream supplies only `k1` flattening samples:
/// `s = ⌈c₁·(n/(√k₁·ε²) + √n/ε²)⌉`.
pub fn closeness_sizes_unequal(cfg: &TesterConfig, k1: usize) -> Result<usize, TesterError> {
    cfg.validate()?;
    if k1 == 0 || k1 > cfg.n {
        return Err(TesterError::InvalidConfig(format!(
            "k1 must lie in [1, n = {}], got {k1}",
            cfg.n
        )));
    }
    let e2 = cfg.epsilon * cfg.epsilon;
    let n = cfg.n as f64;
    let s = to_count(ceil_snapped(cfg.c1 * (n / ((k1 as f64).sqrt() * e2) + n.sqrt() / e2)))?;
    Ok(s.max(1))
}

/// `Z = Σ_x (T_x − Y_x)² − T_x − Y_x`.
pub fn closeness_statistic(t: &CountVector, y: &CountVector) -> Result<f64, TesterError> {
    check_domain(t.len(), y.len())?;
    let (t, y) = (t.counts(), y.counts());
    Ok(pairwise_sum_by(t.len(), |x| {
        let (a, b) = (t[x] as f64, y[x] as f64);
        let d = a - b;
        d * d - a - b
    }))
}

/// Rejects iff the closeness statistic reaches `5s²ε²/(8n)`, `n` being the
/// domain the counts live on.
pub fn closeness_test(cfg: &TesterConfig, t: &CountVector, y: &CountVector, s: usize) -> Result<Verdict, TesterError> {
    cfg.validate()?;
    check_domain(cfg.n, t.len())?;
    let z = closeness_statistic(t, y)?;
    Ok(Verdict::new(
        z,
        chi_square_threshold(cfg, s),
        SampleCounts {
            sources: t.total(),
            reference: y.total(),
            flattening: 0,
        },
    ))
}

/// Repetitions for majority voting to reach failure probability `delta` from
/// per-run error at most 1/3: `⌈18·ln(1/δ)⌉`, rounded up to odd.
pub fn repetitions_for(delta: f64) -> usize {
    let r = (18.0 * (1.0 / delta.clamp(1e-300, 0.5)).ln()).ceil().max(1.0) as usize;
    r | 1
}

/// Majority vote over `repetitions` independent runs.
pub fn majority_vote<F>(repetitions: usize, mut run: F) -> Result<(Decision, usize), TesterError>
where
    F: FnMut(usize) -> Result<Verdict, TesterError>,
{
    let mut rejects = 0;
    for i in 0..repetitions {
        if run(i)?.rejects() {
            rejects += 1;
        }
    }
    let decision = if 2 * rejects > repetitions {
        Decision::Reject
    } else {
        Decision::Accept
    };
    Ok((decision, rejects))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, eps: f64, c1: f64) -> TesterConfig {
        TesterConfig::new(n, eps, c1).unwrap()
    }

    #[test]
    fn uniformity_sizes() {
        assert_eq!(uniformity_sample_size(&cfg(10_000, 0.5, 1.0)).unwrap(), 400);
        assert_eq!(uniformity_sample_size(&cfg(100, 1.0, 1.0)).unwrap(), 10);
        assert_eq!(
            uniformity_sample_size(&cfg(4, 2.0, 0.1)),
            Err(TesterError::TooFewSamples { s: 1 })
        );
    }

    #[test]
    fn config_validation() {
        assert!(TesterConfig::new(10, 0.0, 1.0).is_err());
        assert!(TesterConfig::new(10, 2.5, 1.0).is_err());
        assert!(TesterConfig::new(10, 0.5, -1.0).is_err());
        assert!(TesterConfig::new(0, 0.5, 1.0).is_err());
        assert!(cfg(10, 0.5, 1.0).with_k(11).is_err());
        assert!(cfg(10, 0.5, 1.0).with_k(10).is_ok());
    }

    #[test]
    fn collision_examples() {
        assert!((collision_statistic(&[1, 1, 2, 3]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(collision_statistic(&[1, 2, 3, 4]).unwrap(), 0.0);
        assert_eq!(collision_statistic(&[5, 5, 5]).unwrap(), 1.0);
        assert!(collision_statistic(&[5]).is_err());
    }

    #[test]
    fn uniformity_threshold_and_verdicts() {
        let c = cfg(100, 0.5, 1.0);
        assert!((uniformity_threshold(&c) - 0.01015625).abs() < 1e-17);
        let s = uniformity_sample_size(&c).unwrap();
        let distinct: Vec<usize> = (0..s).map(|i| i % 100).collect();
        let v = uniformity_test(&c, &distinct).unwrap();
        assert_eq!(v.decision, Decision::Accept);
        assert!(matches!(
            uniformity_test(&c, &distinct[1..]),
            Err(TesterError::SampleCountMismatch { .. })
        ));
        let mut bad = distinct.clone();
        bad[0] = 100;
        assert!(matches!(
            uniformity_test(&c, &bad),
            Err(TesterError::IndexOutOfDomain { index: 100, .. })
        ));
    }

    #[test]
    fn verdict_boundary_is_inclusive() {
        let v = Verdict::new(1.0, 1.0, SampleCounts::default());
        assert_eq!(v.decision, Decision::Reject);
        let v = Verdict::new(1.0 - f64::EPSILON, 1.0, SampleCounts::default());
        assert_eq!(v.decision, Decision::Accept);
    }

    #[test]
    fn identity_sizes_and_threshold() {
        let u = Distribution::uniform(400).unwrap();
        assert_eq!(identity_sample_size(&cfg(400, 0.5, 1.0), &u).unwrap(), 80);
        let pm = Distribution::point_mass(100, 0).unwrap();
        assert_eq!(identity_sample_size(&cfg(100, 1.0, 1.0), &pm).unwrap(), 100);
        assert!((chi_square_threshold(&cfg(100, 0.5, 1.0), 100) - 15.625).abs() < 1e-12);
    }

    #[test]
    fn identity_statistic_examples() {
        let q = Distribution::uniform(3).unwrap();
        let t = CountVector::from_counts(vec![2, 0, 1]);
        assert!((identity_statistic(&t, &q, 3).unwrap() + 1.0).abs() < 1e-12);

        let q = Distribution::new(vec![0.5, 0.25, 0.25]).unwrap();
        let t = CountVector::from_counts(vec![4, 2, 2]);
        assert_eq!(identity_statistic(&t, &q, 8).unwrap(), -8.0);

        let q = Distribution::new(vec![0.1, 0.2, 0.7]).unwrap();
        let z = identity_statistic(&CountVector::zeros(3), &q, 10).unwrap();
        assert!((z - 100.0 * (0.01 + 0.04 + 0.49)).abs() < 1e-12);

        assert!(identity_statistic(&CountVector::zeros(2), &q, 10).is_err());
    }

    #[test]
    fn closeness_size_examples() {
        let (k, s) = closeness_sizes(&cfg(1000, 1.0, 1.0)).unwrap();
        assert_eq!((k, s), (100, 100));
        let (k, s) = closeness_sizes(&cfg(1000, 1.0, 2.5)).unwrap();
        assert_eq!((k, s), (100, 250));
        let (k, _) = closeness_sizes(&cfg(50, 0.1, 1.0)).unwrap();
        assert_eq!(k, 50);
        assert_eq!(closeness_sizes(&cfg(64, 1.0, 1.0)).unwrap(), (16, 16));
        let s1 = closeness_sizes_unequal(&cfg(64, 1.0, 1.0), 16).unwrap();
        assert_eq!(s1, 16 + 8);
    }

    #[test]
    fn closeness_statistic_examples() {
        let t = CountVector::from_counts(vec![2, 0]);
        let y = CountVector::from_counts(vec![1, 1]);
        assert_eq!(closeness_statistic(&t, &y).unwrap(), -2.0);
        let t = CountVector::from_counts(vec![3, 1, 4]);
        assert_eq!(closeness_statistic(&t, &t).unwrap(), -16.0);
        let z = CountVector::zeros(2);
        assert_eq!(closeness_statistic(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn majority_vote_counts() {
        let (d, r) = majority_vote(5, |i| {
            Ok(Verdict::new(
                if i < 3 { 1.0 } else { 0.0 },
                0.5,
                SampleCounts::default(),
            ))
        })
        .unwrap();
        assert_eq!((d, r), (Decision::Reject, 3));
        assert_eq!(repetitions_for(0.5) % 2, 1);
        assert!(repetitions_for(1e-3) >= 125);
    }
}

//! Exact expectations and variances of the three statistics, the upper bounds
//! they are known to satisfy, and the algebraic identities behind them.
//!
//! Variances of the chi-square statistics use the per-cell forms
//! `Var Z_x = 2λ² + 4λ(λ−c)²` (identity) and `2(c+λ)² + 4(c+λ)(λ−c)²`
//! (closeness), with `c = s·q(x)`. They equal `E[Z_x²] − E[Z_x]²` computed from
//! the raw Poisson moment polynomials ([`identity_cell_second_moment`],
//! [`closeness_cell_second_moment`]) but avoid the cancellation of the quartic terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{error_vectors, lp_norm, lp_power_sum, DistError, SourceFamily};
use crate::flattening::{flatten_values, FlattenError, FlatteningPlan};
use crate::numeric::{choose2, compensated_sum, elementary_symmetric4, pairwise_sum_by, CompensatedSum};

/// Relative slack for every inequality check.
pub const RELATIVE_SLACK: f64 = 1e-9;
/// Largest source count for the exact collision variance.
pub const EXACT_COLLISION_SOURCES: usize = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("need at least {needed} sources, family has {s}")]
    TooFewSources { s: usize, needed: usize },
    #[error("family has no verified sign partition")]
    MissingPartition,
    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),
    #[error("the reference distribution is not uniform")]
    ReferenceNotUniform,
    #[error("matrix entry ({row}, {col}) is negative")]
    NegativeEntry { row: usize, col: usize },
    #[error("matrix rows have unequal lengths")]
    RaggedMatrix,
    #[error("unsupported moment order {0}; expected 1, 2, 3 or 4")]
    UnsupportedOrder(u32),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Flatten(#[from] FlattenError),
}

/// `a ≤ b` up to the relative slack.
#[inline]
pub fn within_bound(a: f64, b: f64) -> bool {
    a <= b + RELATIVE_SLACK * b.abs().max(f64::MIN_POSITIVE)
}

fn pair_sum(family: &SourceFamily) -> f64 {
    let n = family.n();
    let sources = family.sources();
    compensated_sum((0..n).map(|x| elementary_symmetric4(sources.iter().map(|p| p.probs()[x]))[1]))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    pairwise_sum_by(a.len(), |x| a[x] * b[x])
}

/// Expected collision statistic and, when a partition is known, the same value
/// rebuilt from the reference and error vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionExpectation {
    /// `E[Z] = Σ_{i<j} Σ_x p_i(x)p_j(x) / C(s,2)`.
    pub expectation: f64,
    /// `Σ_{i<j} E[σ_ij]`.
    pub pair_sum: f64,
    /// `E[Z]` from `C(s,2)‖q‖₂² + (s−1)Σ_x q(x)Σ_j σ_x e_j(x) + Σ_{i<j}Σ_x e_i e_j`, over `C(s,2)`.
    pub decomposed: Option<f64>,
}

/// `E[Z]` of the collision statistic.
pub fn collision_expectation(family: &SourceFamily) -> Result<CollisionExpectation, OracleError> {
    let s = family.s();
    if s < 2 {
        return Err(OracleError::TooFewSources { s, needed: 2 });
    }
    let pairs = choose2(s);
    let pair_sum = pair_sum(family);
    let decomposed = match family.partition() {
        Some(part) => {
            let ev = error_vectors(family)?;
            let q = family.reference().probs();
            let q2 = lp_power_sum(q, 2)?;
            let mut cross = CompensatedSum::new();
            let mut ee = CompensatedSum::new();
            for x in 0..family.n() {
                let col = elementary_symmetric4(ev.e.iter().map(|row| row[x]));
                cross.add(q[x] * part.side(x).sign() * col[0]);
                ee.add(col[1]);
            }
            Some((pairs * q2 + (s as f64 - 1.0) * cross.value() + ee.value()) / pairs)
        }
        None => None,
    };
    Ok(CollisionExpectation {
        expectation: pair_sum / pairs,
        pair_sum,
        decomposed,
    })
}

/// Moments of the collision statistic and the variance bound on the pair count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionMoments {
    /// `E[Z]`.
    pub expectation: f64,
    /// `α` with `E[Z] = (1+α)/n`.
    pub alpha: f64,
    /// Exact `Var(Σ_{i<j} σ_ij)`; `None` when `s` exceeds [`EXACT_COLLISION_SOURCES`].
    pub variance_exact: Option<f64>,
    /// `18αs/n²·C(s,2) + 3(α/n·C(s,2))^{3/2} + Σ E[σ_ij]`, with `α` floored at 0.
    pub variance_bound: f64,
    /// Number of sources.
    pub s: usize,
}

impl CollisionMoments {
    /// Exact variance of `Z` itself, `Var(Σσ)/C(s,2)²`.
    pub fn statistic_variance(&self) -> Option<f64> {
        let p = choose2(self.s);
        self.variance_exact.map(|v| v / (p * p))
    }

    pub fn bound_holds(&self) -> Option<bool> {
        self.variance_exact.map(|v| within_bound(v, self.variance_bound))
    }
}

/// Exact variance of the number of colliding pairs and the bound it should respect.
///
/// The exact value sums `E[σ_ij](1 − E[σ_ij])` over pairs and twice the
/// covariances of pairs sharing one index, `Σ_x p_i p_j p_k − E[σ_ij]E[σ_ik]`;
/// disjoint pairs are independent.
pub fn collision_variance(family: &SourceFamily) -> Result<CollisionMoments, OracleError> {
    let e = collision_expectation(family)?;
    let s = family.s();
    let n = family.n() as f64;
    let pairs = choose2(s);
    let alpha = n * e.expectation - 1.0;
    let a = alpha.max(0.0);
    let variance_bound = 18.0 * a * s as f64 / (n * n) * pairs + 3.0 * (a / n * pairs).powf(1.5) + e.pair_sum;
    let variance_exact = (s <= EXACT_COLLISION_SOURCES).then(|| exact_pair_count_variance(family));
    Ok(CollisionMoments {
        expectation: e.expectation,
        alpha,
        variance_exact,
        variance_bound,
        s,
    })
}

fn exact_pair_count_variance(family: &SourceFamily) -> f64 {
    let sources = family.sources();
    let s = sources.len();
    let mut m = vec![0.0; s * s];
    for i in 0..s {
        for j in i + 1..s {
            let v = dot(sources[i].probs(), sources[j].probs());
            m[i * s + j] = v;
            m[j * s + i] = v;
        }
    }
    let mut diag = CompensatedSum::new();
    for i in 0..s {
        for j in i + 1..s {
            let v = m[i * s + j];
            diag.add(v * (1.0 - v));
        }
    }
    let triples =
        compensated_sum((0..family.n()).map(|x| elementary_symmetric4(sources.iter().map(|p| p.probs()[x]))[2]));
    let mut centred = CompensatedSum::new();
    for i in 0..s {
        let row = (0..s).filter(|&j| j != i).map(|j| m[i * s + j]);
        centred.add(elementary_symmetric4(row)[1]);
    }
    diag.value() + 2.0 * (3.0 * triples - centred.value())
}

/// Result of the soundness lower-bound check `E[Z] ≥ (1 + ε²/8)/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoundnessCheck {
    pub bound: f64,
    pub expectation: f64,
    pub holds: bool,
}

/// Checks `E[Z] ≥ (1 + ε²/8)/n` for a uniform-reference family whose sources
/// are all at least `eps` from uniform and whose gaps sum to at least 4.
pub fn collision_soundness_lower_bound(family: &SourceFamily, eps: f64) -> Result<SoundnessCheck, OracleError> {
    if !family.reference().is_uniform(1e-15) {
        return Err(OracleError::ReferenceNotUniform);
    }
    let ev = error_vectors(family).map_err(|e| match e {
        DistError::MissingPartition => OracleError::MissingPartition,
        other => other.into(),
    })?;
    let total = compensated_sum(ev.l1_gaps.iter().copied());
    if total < 4.0 {
        return Err(OracleError::PreconditionUnmet(format!(
            "sum of source gaps is {total}, below 4"
        )));
    }
    if let Some((j, g)) = ev
        .l1_gaps
        .iter()
        .enumerate()
        .find(|(_, &g)| g < eps * (1.0 - RELATIVE_SLACK))
    {
        return Err(OracleError::PreconditionUnmet(format!(
            "source {j} is only {g} from the reference, below epsilon {eps}"
        )));
    }
    let expectation = collision_expectation(family)?.expectation;
    let bound = (1.0 + eps * eps / 8.0) / family.n() as f64;
    Ok(SoundnessCheck {
        bound,
        expectation,
        holds: within_bound(bound, expectation),
    })
}

/// Both sides of `(2·Σ_x Σ_{i<j<k} e_i e_j e_k)² ≤ (Σ_x Σ_{i<j} e_i e_j)³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaclaurinCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks the strengthened Maclaurin inequality on an `s × n` non-negative matrix (rows are sources).
pub fn maclaurin_check(e: &[Vec<f64>]) -> Result<MaclaurinCheck, OracleError> {
    let s = e.len();
    if s < 3 {
        return Err(OracleError::TooFewSources { s, needed: 3 });
    }
    let n = e[0].len();
    for (row, r) in e.iter().enumerate() {
        if r.len() != n {
            return Err(OracleError::RaggedMatrix);
        }
        if let Some(col) = r.iter().position(|&v| v.is_nan() || v < 0.0) {
            return Err(OracleError::NegativeEntry { row, col });
        }
    }
    let mut e2 = CompensatedSum::new();
    let mut e3 = CompensatedSum::new();
    for x in 0..n {
        let col = elementary_symmetric4(e.iter().map(|r| r[x]));
        e2.add(col[1]);
        e3.add(col[2]);
    }
    let t = 2.0 * e3.value();
    let lhs = t * t;
    let rhs = e2.value().powi(3);
    Ok(MaclaurinCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12 * rhs,
    })
}

/// Classical Maclaurin chain `S₁ ≥ S₂^{1/2} ≥ S₃^{1/3} ≥ S₄^{1/4}` on the
/// normalised elementary symmetric means of non-negative values.
pub fn maclaurin_chain(values: &[f64]) -> bool {
    let m = values.len();
    if m == 0 || values.iter().any(|&v| v.is_nan() || v < 0.0) {
        return false;
    }
    let e = elementary_symmetric4(values.iter().copied());
    let mut prev = f64::INFINITY;
    for k in 1..=m.min(4) {
        let binom = (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64);
        let mean = (e[k - 1] / binom).powf(1.0 / k as f64);
        if mean > prev * (1.0 + 1e-12) {
            return false;
        }
        prev = mean;
    }
    true
}

/// Per-cell inputs shared by the identity and closeness oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSqParts {
    /// Number of sources.
    pub s: usize,
    pub q: Vec<f64>,
    /// `λ_x = Σ_j p_j(x)`.
    pub lambda: Vec<f64>,
    /// `Σ_j e_j(x)`, non-negative.
    pub e_sum: Vec<f64>,
    /// `+1` on `A`, `−1` on `B`.
    pub sign: Vec<f64>,
}

impl ChiSqParts {
    pub fn from_family(family: &SourceFamily) -> Result<Self, OracleError> {
        let part = family.partition().ok_or(OracleError::MissingPartition)?;
        let ev = error_vectors(family)?;
        Ok(Self {
            s: family.s(),
            q: family.reference().probs().to_vec(),
            lambda: family.lambda(),
            e_sum: ev.column_sums(),
            sign: part.sides().iter().map(|s| s.sign()).collect(),
        })
    }

    /// The same quantities on a flattened domain.
    pub fn flattened(&self, plan: &FlatteningPlan) -> Result<Self, OracleError> {
        let mut sign = Vec::with_capacity(plan.flat_size());
        for (x, &b) in plan.b().iter().enumerate() {
            sign.extend(std::iter::repeat_n(self.sign[x], b as usize));
        }
        Ok(Self {
            s: self.s,
            q: flatten_values(&self.q, plan)?,
            lambda: flatten_values(&self.lambda, plan)?,
            e_sum: flatten_values(&self.e_sum, plan)?,
            sign,
        })
    }

    fn norms(&self) -> Norms {
        Norms {
            q2: lp_norm(&self.q, 2).expect("order 2"),
            q2_sq: lp_power_sum(&self.q, 2).expect("order 2"),
            e4_sq: lp_norm(&self.e_sum, 4).expect("order 4").powi(2),
            e3_cube: lp_power_sum(&self.e_sum, 3).expect("order 3"),
            lambda2_sq: lp_power_sum(&self.lambda, 2).expect("order 2"),
        }
    }
}

struct Norms {
    q2: f64,
    q2_sq: f64,
    e4_sq: f64,
    e3_cube: f64,
    lambda2_sq: f64,
}

/// Moments of the identity or closeness statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSqMoments {
    /// `E[Z] = ‖Σ_j e_j‖₂²`.
    pub expectation: f64,
    pub variance_exact: f64,
    /// The stated upper bound on the variance.
    pub variance_bound: f64,
    /// Closeness only: a bound valid for every reference, see [`closeness_moments`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_bound_general: Option<f64>,
    pub lambda: Vec<f64>,
}

impl ChiSqMoments {
    pub fn bound_holds(&self) -> bool {
        within_bound(self.variance_exact, self.variance_bound)
    }
}

/// Identity statistic `Σ_x (T_x − s·q(x))² − T_x` with `T_x ~ Poi(λ_x)`.
///
/// Bound: `4s‖q‖₂‖Σe‖₄² + 2‖λ‖₂² + 4‖Σe‖₃³`.
pub fn identity_moments(family: &SourceFamily) -> Result<ChiSqMoments, OracleError> {
    identity_moments_from_parts(&ChiSqParts::from_family(family)?)
}

pub fn identity_moments_from_parts(parts: &ChiSqParts) -> Result<ChiSqMoments, OracleError> {
    let s = parts.s as f64;
    let mut mean = CompensatedSum::new();
    let mut var = CompensatedSum::new();
    for x in 0..parts.q.len() {
        let l = parts.lambda[x];
        let d2 = parts.e_sum[x] * parts.e_sum[x];
        mean.add(d2);
        var.add(2.0 * l * l + 4.0 * l * d2);
    }
    let nm = parts.norms();
    Ok(ChiSqMoments {
        expectation: mean.value(),
        variance_exact: var.value(),
        variance_bound: 4.0 * s * nm.q2 * nm.e4_sq + 2.0 * nm.lambda2_sq + 4.0 * nm.e3_cube,
        variance_bound_general: None,
        lambda: parts.lambda.clone(),
    })
}

/// Closeness statistic `Σ_x (T_x − Y_x)² − T_x − Y_x` with `T_x ~ Poi(λ_x)`, `Y_x ~ Poi(s·q(x))`.
///
/// `variance_bound` is the stated `8s‖q‖₂‖Σe‖₄² + 8‖λ‖₂² + 4‖Σe‖₃³`, which can
/// fail when `q` concentrates on cells where the sources sit below it and `s`
/// is small. `variance_bound_general` is
/// `8s‖q‖₂‖Σe‖₄² + 4s²‖q‖₂² + 4‖λ‖₂² + 4‖Σe‖₃³`, which always holds because
/// `2(c+λ)² ≤ 4c² + 4λ²`.
pub fn closeness_moments(family: &SourceFamily) -> Result<ChiSqMoments, OracleError> {
    closeness_moments_from_parts(&ChiSqParts::from_family(family)?)
}

pub fn closeness_moments_from_parts(parts: &ChiSqParts) -> Result<ChiSqMoments, OracleError> {
    let s = parts.s as f64;
    let mut mean = CompensatedSum::new();
    let mut var = CompensatedSum::new();
    for x in 0..parts.q.len() {
        let l = parts.lambda[x];
        let c = s * parts.q[x];
        let d2 = parts.e_sum[x] * parts.e_sum[x];
        mean.add(d2);
        var.add(2.0 * (c + l) * (c + l) + 4.0 * (c + l) * d2);
    }
    let nm = parts.norms();
    let shared = 8.0 * s * nm.q2 * nm.e4_sq + 4.0 * nm.e3_cube;
    Ok(ChiSqMoments {
        expectation: mean.value(),
        variance_exact: var.value(),
        variance_bound: shared + 8.0 * nm.lambda2_sq,
        variance_bound_general: Some(shared + 4.0 * s * s * nm.q2_sq + 4.0 * nm.lambda2_sq),
        lambda: parts.lambda.clone(),
    })
}

/// `E[Z_x²]` for `Z_x = (T − c)² − T`, `T ~ Poi(λ)`.
pub fn identity_cell_second_moment(lambda: f64, c: f64) -> f64 {
    let l = lambda;
    l.powi(4)
        + 4.0 * l.powi(3) * (1.0 - c)
        + 2.0 * l * l * (1.0 - 4.0 * c + 3.0 * c * c)
        + 4.0 * c * c * l * (1.0 - c)
        + c.powi(4)
}

/// `E[Z_x²]` for `Z_x = (T − Y)² − T − Y`, `T ~ Poi(λ)`, `Y ~ Poi(c)`.
pub fn closeness_cell_second_moment(lambda: f64, c: f64) -> f64 {
    let l = lambda;
    l.powi(4)
        + 4.0 * l.powi(3) * (1.0 - c)
        + 2.0 * l * l * (3.0 * c * c - 2.0 * c + 1.0)
        + 4.0 * c * l * (1.0 - c - c * c)
        + c.powi(4)
        + 4.0 * c.powi(3)
        + 2.0 * c * c
}

/// `Σ_x λ_x^k` computed directly and from the reference/error decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSums {
    pub k: u32,
    pub direct: f64,
    pub expanded: f64,
    /// Terms of the expansion, `terms[m] = C(k,m)·s^{k−m}·Σ_x q(x)^{k−m}·σ_x^m·E_m(x)`,
    /// with `E_m(x)` the degree-`m` expansion of `(Σ_j e_j(x))^m` over distinct-index products.
    pub terms: Vec<f64>,
}

impl MomentSums {
    pub fn relative_gap(&self) -> f64 {
        (self.direct - self.expanded).abs() / self.direct.abs().max(1.0)
    }
}

/// Per-cell symmetric sums of the error column needed up to degree 4.
#[derive(Default, Clone, Copy)]
struct ColumnSums {
    p: [f64; 5],
    e: [f64; 5],
    d21: f64,
    d31: f64,
    d22: f64,
    m211: f64,
}

impl ColumnSums {
    fn push(&mut self, v: f64) {
        let v2 = v * v;
        let v3 = v2 * v;
        let prev = *self;
        self.d21 += prev.p[2] * v + v2 * prev.p[1];
        self.d31 += prev.p[3] * v + v3 * prev.p[1];
        self.d22 += 2.0 * prev.p[2] * v2;
        self.m211 += v2 * prev.e[2] + v * prev.d21;
        self.e[4] += prev.e[3] * v;
        self.e[3] += prev.e[2] * v;
        self.e[2] += prev.e[1] * v;
        self.e[1] += v;
        self.p[1] += v;
        self.p[2] += v2;
        self.p[3] += v3;
        self.p[4] += v2 * v2;
    }

    /// `(Σ_j e_j)^m` written over distinct-index products.
    fn power(&self, m: u32) -> f64 {
        match m {
            0 => 1.0,
            1 => self.p[1],
            2 => self.p[2] + 2.0 * self.e[2],
            3 => self.p[3] + 3.0 * self.d21 + 6.0 * self.e[3],
            _ => self.p[4] + 4.0 * self.d31 + 3.0 * self.d22 + 12.0 * self.m211 + 24.0 * self.e[4],
        }
    }
}

/// `Σ_x λ_x^k` two ways, for `k ∈ {1,2,3,4}`; needs a verified partition.
pub fn moment_sums(family: &SourceFamily, k: u32) -> Result<MomentSums, OracleError> {
    if !(1..=4).contains(&k) {
        return Err(OracleError::UnsupportedOrder(k));
    }
    let part = family.partition().ok_or(OracleError::MissingPartition)?;
    let q = family.reference().probs();
    let s = family.s() as f64;
    let lambda = family.lambda();
    let direct = compensated_sum(lambda.iter().map(|l| l.powi(k as i32)));

    let mut acc = vec![CompensatedSum::new(); k as usize + 1];
    #[allow(clippy::needless_range_loop)]
    for x in 0..family.n() {
        let mut col = ColumnSums::default();
        for p in family.sources() {
            col.push((p.probs()[x] - q[x]).abs());
        }
        let sigma = part.side(x).sign();
        for m in 0..=k {
            let sign = if m % 2 == 1 { sigma } else { 1.0 };
            acc[m as usize].add(q[x].powi((k - m) as i32) * sign * col.power(m));
        }
    }
    let terms: Vec<f64> = (0..=k)
        .map(|m| binomial(k, m) * s.powi((k - m) as i32) * acc[m as usize].value())
        .collect();
    Ok(MomentSums {
        k,
        direct,
        expanded: compensated_sum(terms.iter().copied()),
        terms,
    })
}

fn binomial(k: u32, m: u32) -> f64 {
    (0..m).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64)
}

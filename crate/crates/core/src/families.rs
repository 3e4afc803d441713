//! Generators for completeness families, shared-sign soundness families, the
//! moment-matching counterexample and the exchangeable-sequence construction.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{l1_distance, DistError, Distribution, Partition, Side, SourceFamily};
use crate::numeric::{ceil_snapped, compensated_sum, CompensatedSum};
use crate::sampling::RngHandle;

/// Stream id reserved for family generation, disjoint from trial streams.
pub const GENERATOR_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FamilyError {
    #[error("invalid family sizes: {0}")]
    InvalidSizes(String),
    #[error("invalid family parameter: {0}")]
    InvalidParameter(String),
    #[error("no partition moves at least {needed} mass: {reason}")]
    InfeasibleEpsilon { needed: f64, reason: String },
    #[error("domain of size {n} is too small: {reason}")]
    DomainTooSmall { n: usize, reason: String },
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Every source equals the reference.
    Uniform,
    IdenticalFar,
    SharedSign,
    MomentMatching,
    Definetti,
}

/// How the reference distribution `q` is built.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReferenceSpec {
    #[default]
    Uniform,
    /// `q(x) ∝ (x+1)^{−exponent}`.
    Zipf {
        #[serde(default = "default_zipf_exponent")]
        exponent: f64,
    },
    /// `mass` on element 0, the rest spread evenly.
    PointMassHeavy {
        #[serde(default = "default_heavy_mass")]
        mass: f64,
    },
    Explicit {
        probs: Vec<f64>,
    },
}

fn default_zipf_exponent() -> f64 {
    1.0
}

fn default_heavy_mass() -> f64 {
    0.5
}

impl ReferenceSpec {
    pub fn build(&self, n: usize) -> Result<Distribution, FamilyError> {
        if n == 0 {
            return Err(FamilyError::InvalidSizes("n must be at least 1".into()));
        }
        match self {
            ReferenceSpec::Uniform => Ok(Distribution::uniform(n)?),
            ReferenceSpec::Zipf { exponent } => {
                if !exponent.is_finite() || *exponent < 0.0 {
                    return Err(FamilyError::InvalidParameter(format!("zipf exponent {exponent}")));
                }
                let w: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-exponent)).collect();
                let total = compensated_sum(w.iter().copied());
                Ok(Distribution::new(w.into_iter().map(|v| v / total).collect())?)
            }
            ReferenceSpec::PointMassHeavy { mass } => {
                if !(0.0..=1.0).contains(mass) {
                    return Err(FamilyError::InvalidParameter(format!("heavy mass {mass}")));
                }
                if n == 1 {
                    return Ok(Distribution::uniform(1)?);
                }
                let rest = (1.0 - mass) / (n - 1) as f64;
                let mut v = vec![rest; n];
                v[0] = *mass;
                Ok(Distribution::new(v)?)
            }
            ReferenceSpec::Explicit { probs } => {
                if probs.len() != n {
                    return Err(FamilyError::InvalidSizes(format!(
                        "explicit reference has {} entries, n = {n}",
                        probs.len()
                    )));
                }
                Ok(Distribution::new(probs.clone())?)
            }
        }
    }
}

/// Kind-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyExtra {
    /// Exchangeable construction constant `C` (`s = ⌈√(Cn)⌉`, `δ = 1/C`).
    #[serde(default = "default_c")]
    pub c: f64,
    /// Caps the mass each soundness source moves; `ε/2` gives sources exactly `ε` from `q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_mass: Option<f64>,
}

fn default_c() -> f64 {
    DEFINETTI_C
}

impl Default for FamilyExtra {
    fn default() -> Self {
        Self {
            c: DEFINETTI_C,
            max_mass: None,
        }
    }
}

/// Everything needed to regenerate a family bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub n: usize,
    pub s: usize,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub extra: FamilyExtra,
}

impl FamilySpec {
    pub fn new(kind: FamilyKind, n: usize, s: usize) -> Self {
        Self {
            kind,
            n,
            s,
            epsilon: 0.0,
            seed: 0,
            reference: ReferenceSpec::Uniform,
            extra: FamilyExtra::default(),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_reference(mut self, reference: ReferenceSpec) -> Self {
        self.reference = reference;
        self
    }

    pub fn with_max_mass(mut self, max_mass: f64) -> Self {
        self.extra.max_mass = Some(max_mass);
        self
    }

    /// Builds the family. Definetti specs ignore `s` and use `⌈√(Cn)⌉`.
    pub fn generate(&self) -> Result<SourceFamily, FamilyError> {
        match self.kind {
            FamilyKind::Uniform => make_completeness_family(self.reference.build(self.n)?, self.s),
            FamilyKind::SharedSign => make_shared_sign_family_capped(
                &self.reference.build(self.n)?,
                self.s,
                self.epsilon,
                self.extra.max_mass,
                self.seed,
            ),
            FamilyKind::IdenticalFar => make_identical_far_family_capped(
                &self.reference.build(self.n)?,
                self.s,
                self.epsilon,
                self.extra.max_mass,
                self.seed,
            ),
            FamilyKind::MomentMatching => make_moment_matching_family(self.n, self.s),
            FamilyKind::Definetti => Ok(make_definetti_family_with(self.n, self.extra.c)?.family),
        }
    }
}

/// All sources uniform over `n`, partition `A = [n]`.
pub fn make_uniform_family(n: usize, s: usize) -> Result<SourceFamily, FamilyError> {
    if n < 2 || s < 2 {
        return Err(FamilyError::InvalidSizes(format!(
            "need n ≥ 2 and s ≥ 2, got n = {n}, s = {s}"
        )));
    }
    make_completeness_family(Distribution::uniform(n)?, s)
}

/// All sources equal to `q`.
pub fn make_completeness_family(q: Distribution, s: usize) -> Result<SourceFamily, FamilyError> {
    if s == 0 {
        return Err(FamilyError::InvalidSizes("need at least one source".into()));
    }
    Ok(SourceFamily::verified(q.clone(), vec![q; s])?)
}

/// Soundness family sharing one sign pattern; every source is `2m_j ≥ ε` from `q`.
pub fn make_shared_sign_family(
    q: &Distribution,
    s: usize,
    epsilon: f64,
    seed: u64,
) -> Result<SourceFamily, FamilyError> {
    make_shared_sign_family_capped(q, s, epsilon, None, seed)
}

/// [`make_shared_sign_family`] with the moved mass `m_j` capped at `max_mass`.
pub fn make_shared_sign_family_capped(
    q: &Distribution,
    s: usize,
    epsilon: f64,
    max_mass: Option<f64>,
    seed: u64,
) -> Result<SourceFamily, FamilyError> {
    if s == 0 {
        return Err(FamilyError::InvalidSizes("need at least one source".into()));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(FamilyError::InvalidParameter(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let needed = epsilon / 2.0;
    let mut rng = RngHandle::new(seed, GENERATOR_STREAM);
    let sides = choose_partition(q, needed, &mut rng)?;
    let qp = q.probs();
    let q_b = compensated_sum((0..q.len()).filter(|&x| sides[x] == Side::B).map(|x| qp[x]));
    let a_cells: Vec<usize> = (0..q.len()).filter(|&x| sides[x] == Side::A).collect();
    let hi = match max_mass {
        Some(m) if m < needed => {
            return Err(FamilyError::InvalidParameter(format!(
                "max_mass {m} is below epsilon/2 = {needed}"
            )))
        }
        Some(m) => m.min(q_b),
        None => q_b,
    };
    let mut sources = Vec::with_capacity(s);
    for _ in 0..s {
        let m = needed + (hi - needed) * rng.uniform();
        let keep = 1.0 - m / q_b;
        let add = m / a_cells.len() as f64;
        let p: Vec<f64> = (0..q.len())
            .map(|x| match sides[x] {
                Side::B => qp[x] * keep,
                Side::A => qp[x] + add,
            })
            .collect();
        sources.push(Distribution::new(p)?);
    }
    let family = SourceFamily::new(q.clone(), sources)?.with_partition(Partition::from_sides(sides))?;
    Ok(family)
}

/// Random `B` among positive-mass cells with `q(B) ≥ needed`, leaving `A` non-empty.
fn choose_partition(q: &Distribution, needed: f64, rng: &mut RngHandle) -> Result<Vec<Side>, FamilyError> {
    let qp = q.probs();
    let n = q.len();
    if n < 2 {
        return Err(FamilyError::InfeasibleEpsilon {
            needed,
            reason: "a single-element domain has no room to move mass".into(),
        });
    }
    let mut order: Vec<usize> = (0..n).filter(|&x| qp[x] > 0.0).collect();
    order.shuffle(rng);
    let zero_cells = n - order.len();
    // A must keep at least one cell.
    let max_b = if zero_cells > 0 { order.len() } else { order.len() - 1 };
    if max_b == 0 {
        return Err(FamilyError::InfeasibleEpsilon {
            needed,
            reason: "the reference is a point mass on the whole domain".into(),
        });
    }
    let target = 1 + rng.below(max_b);
    let (mut sides, mut mass) = greedy_sides(n, qp, &order, target, max_b, needed);
    if mass < needed {
        // The random order may have left the heavy cells in A; retry heaviest first.
        order.sort_by(|&a, &b| qp[b].total_cmp(&qp[a]));
        (sides, mass) = greedy_sides(n, qp, &order, 1, max_b, needed);
    }
    if mass < needed {
        return Err(FamilyError::InfeasibleEpsilon {
            needed,
            reason: format!("largest admissible B carries only {mass}"),
        });
    }
    Ok(sides)
}

fn greedy_sides(n: usize, qp: &[f64], order: &[usize], target: usize, max_b: usize, needed: f64) -> (Vec<Side>, f64) {
    let mut sides = vec![Side::A; n];
    let mut mass = CompensatedSum::new();
    for (used, &x) in order.iter().enumerate() {
        if used >= max_b || (used >= target && mass.value() >= needed) {
            break;
        }
        sides[x] = Side::B;
        mass.add(qp[x]);
    }
    (sides, mass.value())
}

/// One soundness source replicated `s` times.
pub fn make_identical_far_family(
    q: &Distribution,
    s: usize,
    epsilon: f64,
    seed: u64,
) -> Result<SourceFamily, FamilyError> {
    make_identical_far_family_capped(q, s, epsilon, None, seed)
}

pub fn make_identical_far_family_capped(
    q: &Distribution,
    s: usize,
    epsilon: f64,
    max_mass: Option<f64>,
    seed: u64,
) -> Result<SourceFamily, FamilyError> {
    if s == 0 {
        return Err(FamilyError::InvalidSizes("need at least one source".into()));
    }
    let single = make_shared_sign_family_capped(q, 1, epsilon, max_mass, seed)?;
    let p = single.sources()[0].clone();
    let partition = single.partition().cloned().expect("generator attaches a partition");
    Ok(SourceFamily::new(q.clone(), vec![p; s])?.with_partition(partition)?)
}

/// `p_i(x) = 1/n` for `x < i`, `1 − (i−1)/n` at `x = i`, `0` beyond (1-based `i`, `x`).
///
/// Every pair of sources collides with probability exactly `1/n`, yet the
/// family has no sign partition against the uniform reference.
pub fn make_moment_matching_family(n: usize, s: usize) -> Result<SourceFamily, FamilyError> {
    if s < 2 || s > n {
        return Err(FamilyError::InvalidSizes(format!(
            "need 2 ≤ s ≤ n, got s = {s}, n = {n}"
        )));
    }
    let nf = n as f64;
    let sources = (1..=s)
        .map(|i| {
            let mut p = vec![0.0; n];
            for v in p.iter_mut().take(i - 1) {
                *v = 1.0 / nf;
            }
            p[i - 1] = 1.0 - (i - 1) as f64 / nf;
            Distribution::new(p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SourceFamily::new(Distribution::uniform(n)?, sources)?)
}

/// Default construction constant.
pub const DEFINETTI_C: f64 = 16.0;

/// The exchangeable construction and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DefinettiFamily {
    pub family: SourceFamily,
    pub c: f64,
    pub delta: f64,
    pub s: usize,
}

/// The family with `C = 16`.
pub fn make_definetti_family(n: usize) -> Result<DefinettiFamily, FamilyError> {
    make_definetti_family_with(n, DEFINETTI_C)
}

/// `s = ⌈√(Cn)⌉`, `δ = 1/C`; source `i` (1-based) puts `1 − δ/20 − (s−1)/n` on element 1,
/// `1/n` on each of `{2, …, s+1} ∖ {i+1}` and `δ/20` on `i+1`.
pub fn make_definetti_family_with(n: usize, c: f64) -> Result<DefinettiFamily, FamilyError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(FamilyError::InvalidParameter(format!("C must be positive, got {c}")));
    }
    let s = ceil_snapped((c * n as f64).sqrt()) as usize;
    if s + 1 > n {
        return Err(FamilyError::DomainTooSmall {
            n,
            reason: format!("s + 1 = {} exceeds n", s + 1),
        });
    }
    let delta = 1.0 / c;
    let nf = n as f64;
    let head = 1.0 - delta / 20.0 - (s - 1) as f64 / nf;
    if head <= 0.0 {
        return Err(FamilyError::DomainTooSmall {
            n,
            reason: format!("mass on the first element would be {head}"),
        });
    }
    let mut sources = Vec::with_capacity(s);
    for i in 1..=s {
        let mut p = vec![0.0; n];
        p[0] = head;
        for v in p.iter_mut().take(s + 1).skip(1) {
            *v = 1.0 / nf;
        }
        p[i] = delta / 20.0;
        sources.push(Distribution::new(p)?);
    }
    let family = SourceFamily::verified(Distribution::uniform(n)?, sources)?;
    Ok(DefinettiFamily { family, c, delta, s })
}

/// `‖p_j − q‖₁` for every source.
pub fn source_gaps(family: &SourceFamily) -> Vec<f64> {
    family
        .sources()
        .iter()
        .map(|p| l1_distance(p, family.reference()).expect("same domain by construction"))
        .collect()
}

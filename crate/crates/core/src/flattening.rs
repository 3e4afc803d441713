//! Domain flattening: element `x` is split into `b_x` equal cells so the
//! reference's ℓ₂ norm drops while ℓ₁ distances and signs are preserved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, Distribution, Partition, SourceFamily};
use crate::numeric::compensated_sum;
use crate::sampling::{draw_iid_counts_into, AliasTable, CountVector, RngHandle, SamplingError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlattenError {
    #[error("plan covers {plan} elements but the distribution has {dist}")]
    DomainMismatch { plan: usize, dist: usize },
    #[error("index {index} is outside the domain of size {n}")]
    IndexOutOfDomain { index: usize, n: usize },
    #[error("invalid flattening plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlanKind {
    /// `b_x = ⌊n·q(x)⌋ + 1` from a known reference.
    Deterministic,
    /// `b_x = 1 +` occurrences of `x` among `Poi(k)` reference samples.
    Randomized { k: u64 },
}

/// Multiplicities `b_x` and the prefix offsets that number flat cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PlanFile", into = "PlanFile")]
pub struct FlatteningPlan {
    b: Vec<u64>,
    offsets: Vec<usize>,
    flat_size: usize,
    kind: PlanKind,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    #[serde(flatten)]
    kind: PlanKind,
    b: Vec<u64>,
}

impl TryFrom<PlanFile> for FlatteningPlan {
    type Error = FlattenError;

    fn try_from(f: PlanFile) -> Result<Self, Self::Error> {
        FlatteningPlan::from_multiplicities(f.b, f.kind)
    }
}

impl From<FlatteningPlan> for PlanFile {
    fn from(p: FlatteningPlan) -> Self {
        PlanFile { kind: p.kind, b: p.b }
    }
}

/// Plans beyond this many flat cells are refused.
pub const MAX_FLAT_SIZE: usize = 1 << 32;

impl FlatteningPlan {
    /// Builds a plan from explicit multiplicities, each at least 1.
    pub fn from_multiplicities(b: Vec<u64>, kind: PlanKind) -> Result<Self, FlattenError> {
        if b.is_empty() {
            return Err(FlattenError::InvalidPlan("plan has no elements".into()));
        }
        let mut offsets = Vec::with_capacity(b.len() + 1);
        let mut acc: usize = 0;
        for (x, &bx) in b.iter().enumerate() {
            if bx == 0 {
                return Err(FlattenError::InvalidPlan(format!("b_{x} is zero")));
            }
            offsets.push(acc);
            acc = usize::try_from(bx)
                .ok()
                .and_then(|bx| acc.checked_add(bx))
                .filter(|&a| a <= MAX_FLAT_SIZE)
                .ok_or_else(|| FlattenError::InvalidPlan("flat domain is too large".into()))?;
        }
        offsets.push(acc);
        Ok(Self {
            b,
            offsets,
            flat_size: acc,
            kind,
        })
    }

    pub fn b(&self) -> &[u64] {
        &self.b
    }

    /// First flat cell of element `x`; `offset(n)` is the flat size.
    pub fn offset(&self, x: usize) -> usize {
        self.offsets[x]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Original domain size `n`.
    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// `|𝒟| = Σ_x b_x`.
    pub fn flat_size(&self) -> usize {
        self.flat_size
    }

    pub fn kind(&self) -> PlanKind {
        self.kind
    }

    /// Flat cell of `x` chosen uniformly among its `b_x` copies, without bounds checks on `x`.
    #[inline]
    pub fn lift(&self, x: usize, rng: &mut RngHandle) -> usize {
        let bx = self.b[x];
        if bx == 1 {
            self.offsets[x]
        } else {
            self.offsets[x] + rng.below(bx as usize)
        }
    }

    /// Element of the original domain that flat cell `cell` belongs to.
    pub fn element_of(&self, cell: usize) -> usize {
        self.offsets.partition_point(|&o| o <= cell) - 1
    }
}

/// `b_x = ⌊n·q(x)⌋ + 1`.
pub fn flatten_plan_deterministic(q: &Distribution) -> FlatteningPlan {
    let n = q.len() as f64;
    let b = q.probs().iter().map(|&p| (n * p).floor() as u64 + 1).collect();
    FlatteningPlan::from_multiplicities(b, PlanKind::Deterministic)
        .expect("deterministic multiplicities are positive and at most 2n in total")
}

/// `b_x = 1 +` the number of times `x` occurs among `Poi(k)` draws from `q`.
pub fn flatten_plan_randomized(q: &AliasTable, k: u64, rng: &mut RngHandle) -> Result<FlatteningPlan, FlattenError> {
    let mut counts = CountVector::zeros(q.len());
    draw_iid_counts_into(q, k as f64, rng, &mut counts, |x, _| x)?;
    let b = counts.counts().iter().map(|&c| c + 1).collect();
    FlatteningPlan::from_multiplicities(b, PlanKind::Randomized { k })
}

/// `p′(x, y) = p(x)/b_x` for each of the `b_x` cells of `x`.
pub fn flatten_distribution(p: &Distribution, plan: &FlatteningPlan) -> Result<Distribution, FlattenError> {
    Ok(Distribution::new(flatten_values(p.probs(), plan)?)?)
}

/// Flattens an arbitrary vector (masses, error vectors, λ) cell by cell.
pub fn flatten_values(v: &[f64], plan: &FlatteningPlan) -> Result<Vec<f64>, FlattenError> {
    if v.len() != plan.n() {
        return Err(FlattenError::DomainMismatch {
            plan: plan.n(),
            dist: v.len(),
        });
    }
    let mut out = Vec::with_capacity(plan.flat_size());
    for (&px, &bx) in v.iter().zip(&plan.b) {
        let share = px / bx as f64;
        out.extend(std::iter::repeat_n(share, bx as usize));
    }
    Ok(out)
}

/// Lifts a sample `x` to a uniformly chosen cell among its `b_x` copies.
pub fn flatten_sample(x: usize, plan: &FlatteningPlan, rng: &mut RngHandle) -> Result<usize, FlattenError> {
    if x >= plan.n() {
        return Err(FlattenError::IndexOutOfDomain { index: x, n: plan.n() });
    }
    Ok(plan.lift(x, rng))
}

/// Flattens the reference and every source; a stored partition is carried to the flat cells.
pub fn flatten_family(family: &SourceFamily, plan: &FlatteningPlan) -> Result<SourceFamily, FlattenError> {
    let reference = flatten_distribution(family.reference(), plan)?;
    let sources = family
        .sources()
        .iter()
        .map(|p| flatten_distribution(p, plan))
        .collect::<Result<Vec<_>, _>>()?;
    let flat = SourceFamily::new(reference, sources)?;
    match family.partition() {
        Some(part) => {
            let mut sides = Vec::with_capacity(plan.flat_size());
            for (x, &bx) in plan.b.iter().enumerate() {
                sides.extend(std::iter::repeat_n(part.side(x), bx as usize));
            }
            Ok(flat.with_partition(Partition::from_sides(sides))?)
        }
        None => Ok(flat),
    }
}

/// `‖q′‖₂² = Σ_x q(x)²/b_x`.
pub fn flattened_sq_norm(q: &Distribution, plan: &FlatteningPlan) -> Result<f64, FlattenError> {
    if q.len() != plan.n() {
        return Err(FlattenError::DomainMismatch {
            plan: plan.n(),
            dist: q.len(),
        });
    }
    Ok(compensated_sum(
        q.probs().iter().zip(&plan.b).map(|(&p, &bx)| p * p / bx as f64),
    ))
}
